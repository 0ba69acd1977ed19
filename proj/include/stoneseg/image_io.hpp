#pragma once

#include <filesystem>

#include "stoneseg/image.hpp"

namespace stoneseg {

// Format is chosen by extension: .png, .ppm (P6), .pgm (P5).
// Grayscale files read as RGB get replicated channels, and vice versa
// RGB files read as gray are converted with BT.601 luma.

RgbImage read_rgb(const std::filesystem::path& path);
GrayImage read_gray(const std::filesystem::path& path);

void write_rgb(const std::filesystem::path& path, const RgbImage& img);
void write_gray(const std::filesystem::path& path, const GrayImage& img);

/// Masks are stored as 0 / 255; anything nonzero reads back as 1.
BinaryMask read_mask(const std::filesystem::path& path);
void write_mask(const std::filesystem::path& path, const BinaryMask& mask);

}  // namespace stoneseg
