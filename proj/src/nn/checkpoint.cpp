#include "stoneseg/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

namespace stoneseg::nn {
namespace {

constexpr char kMagic[4] = {'S', 'S', 'C', 'K'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(CheckpointError::Reason::truncated,
                            "truncated checkpoint: needed " + std::to_string(n) + " bytes at offset " +
                                std::to_string(pos_));
    }
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> save_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(kCheckpointVersion);
  const nlohmann::json header{{"config", to_json(ckpt.config)},
                              {"training_steps_completed", ckpt.training_steps_completed}};
  w.str(header.dump());
  w.u32(static_cast<std::uint32_t>(ckpt.parameters.size()));
  for (const auto& [name, t] : ckpt.parameters) {
    w.str(name);
    w.u32(4);
    for (Index d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (Index k = 0; k < t.size(); ++k) w.f32(t.values()[k]);
  }
  return w.take();
}

Checkpoint load_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.need(4);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError(CheckpointError::Reason::bad_magic, "not a checkpoint: magic mismatch");
  }
  r.skip(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Reason::malformed, "unsupported checkpoint version " + std::to_string(version));
  }

  Checkpoint ckpt;
  const std::string header_text = r.str();
  try {
    const nlohmann::json header = nlohmann::json::parse(header_text);
    ckpt.config = model_config_from_json(header.at("config"));
    ckpt.training_steps_completed = header.at("training_steps_completed").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointError::Reason::malformed, std::string("checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(CheckpointError::Reason::malformed, std::string("checkpoint header: ") + e.what());
  }

  const std::uint32_t count = r.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = r.str();
    const std::uint32_t ndim = r.u32();
    if (ndim < 1 || ndim > 4) {
      throw CheckpointError(CheckpointError::Reason::malformed, "tensor '" + name + "' has " + std::to_string(ndim) + " dims");
    }
    Shape shape{1, 1, 1, 1};
    for (std::uint32_t d = 0; d < ndim; ++d) shape[d] = r.u32();
    const Index n = Tensor<float>::count(shape);
    r.need(static_cast<std::size_t>(n) * 4);
    Tensor<float> t(shape);
    for (Index i = 0; i < n; ++i) t.values()[i] = r.f32();
    ckpt.parameters.emplace(name, std::move(t));
  }
  validate_parameters(ckpt.config, ckpt.parameters);
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::vector<std::uint8_t> bytes = save_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return load_checkpoint(bytes);
}

std::uint64_t parameter_hash(const Parameters<float>& params) {
  std::uint64_t h = 1469598103934665603ULL;
  const auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, t] : params) {
    mix(name.data(), name.size());
    mix(t.data(), static_cast<std::size_t>(t.size()) * sizeof(float));
  }
  return h;
}

}  // namespace stoneseg::nn
