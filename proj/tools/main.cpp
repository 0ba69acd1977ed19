#include "stoneseg/cli.hpp"

int main(int argc, char** argv) { return stoneseg::cli::dispatch(argc, argv); }
