#include "snf/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "snf/error.hpp"

namespace snf {

namespace {

constexpr char kMagic[4] = {'S', 'N', 'F', 'G'};

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    U out;
    auto* src = reinterpret_cast<const unsigned char*>(&v);
    auto* dst = reinterpret_cast<unsigned char*>(&out);
    for (std::size_t i = 0; i < sizeof(U); ++i) dst[i] = src[sizeof(U) - 1 - i];
    return out;
  } else {
    return v;
  }
}

void put_u32(std::string& out, std::uint32_t v) {
  v = to_little(v);
  out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_floats(std::string& out, const std::vector<float>& data) {
  if constexpr (std::endian::native == std::endian::little) {
    out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(float));
  } else {
    for (float f : data) {
      auto bits = to_little(std::bit_cast<std::uint32_t>(f));
      out.append(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw DataError("checkpoint: truncated data");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, bytes_.data() + pos_, 4);
    pos_ += 4;
    return to_little(v);
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void floats(std::vector<float>& dst) {
    need(dst.size() * 4);
    std::memcpy(dst.data(), bytes_.data() + pos_, dst.size() * 4);
    pos_ += dst.size() * 4;
    if constexpr (std::endian::native == std::endian::big)
      for (auto& f : dst) f = std::bit_cast<float>(to_little(std::bit_cast<std::uint32_t>(f)));
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const ModelBundle& model) {
  std::string out(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  const std::string cfg = config_to_json(model.config);
  put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  model.params.for_each([&](TensorId, const Matrix<float>& m) {
    put_u32(out, 2);
    put_u32(out, static_cast<std::uint32_t>(m.rows));
    put_u32(out, static_cast<std::uint32_t>(m.cols));
    put_floats(out, m.data);
  });
  return out;
}

ModelBundle deserialize_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.str(4) != std::string(kMagic, 4)) throw DataError("checkpoint: bad magic");
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion)
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t cfg_len = in.u32();
  ModelConfig cfg;
  try {
    cfg = config_from_json(in.str(cfg_len));
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
  ModelBundle model{cfg, ModelParams<float>::zeros(cfg)};
  model.params.for_each([&](TensorId id, Matrix<float>& m) {
    const std::uint32_t rank = in.u32();
    const std::uint32_t rows = in.u32();
    const std::uint32_t cols = in.u32();
    if (rank != 2 || rows != m.rows || cols != m.cols)
      throw DataError("checkpoint: shape mismatch for " + tensor_name(id));
    in.floats(m.data);
  });
  if (!in.done()) throw DataError("checkpoint: trailing bytes");
  return model;
}

void save_checkpoint(const ModelBundle& model, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_checkpoint(model));
}

ModelBundle load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file_bytes(path));
}

void Fnv1a::update(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    state_ ^= p[i];
    state_ *= 0x100000001b3ULL;
  }
}

std::uint64_t fingerprint(const ModelBundle& model) {
  Fnv1a h;
  h.update(config_to_json(model.config));
  model.params.for_each([&](TensorId, const Matrix<float>& m) {
    std::string buf;
    put_floats(buf, m.data);
    h.update(buf);
  });
  return h.digest();
}

std::string fingerprint_hex(std::uint64_t fp) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fp));
  return buf;
}

std::uint64_t parse_fingerprint_hex(const std::string& text) {
  if (text.size() != 16) throw DataError("malformed fingerprint '" + text + "'");
  std::uint64_t v = 0;
  for (char c : text) {
    v <<= 4;
    if (c >= '0' && c <= '9') v |= std::uint64_t(c - '0');
    else if (c >= 'a' && c <= 'f') v |= std::uint64_t(c - 'a' + 10);
    else throw DataError("malformed fingerprint '" + text + "'");
  }
  return v;
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace snf
