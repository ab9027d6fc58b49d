#pragma once
// Binary checkpoint format:
//   "SNFG" | u32 version | u32 n | n bytes of ModelConfig JSON |
//   per tensor in declaration order: u32 rank (=2) | u32 rows | u32 cols |
//   rows*cols little-endian float32.

#include <cstdint>
#include <filesystem>
#include <string>

#include "snf/model.hpp"

namespace snf {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const ModelBundle& model);
// Throws DataError on a malformed or truncated buffer.
ModelBundle deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const ModelBundle& model, const std::filesystem::path& path);
ModelBundle load_checkpoint(const std::filesystem::path& path);

// 64-bit FNV-1a over the canonical config JSON followed by the raw tensor
// bytes. Identifies a model for spec/checkpoint pairing.
std::uint64_t fingerprint(const ModelBundle& model);
std::string fingerprint_hex(std::uint64_t fp);
std::uint64_t parse_fingerprint_hex(const std::string& text);

class Fnv1a {
 public:
  void update(const void* data, std::size_t n);
  void update(const std::string& s) { update(s.data(), s.size()); }
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::string& bytes);

}  // namespace snf
