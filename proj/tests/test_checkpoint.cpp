#include <cstring>

#include "doctest.h"
#include "snf/checkpoint.hpp"
#include "snf/error.hpp"
#include "test_util.hpp"

using namespace snf;
using namespace snf::testing;

namespace {

std::uint32_t read_u32(const std::string& s, std::size_t at) {
  return std::uint32_t(std::uint8_t(s[at])) | std::uint32_t(std::uint8_t(s[at + 1])) << 8 |
         std::uint32_t(std::uint8_t(s[at + 2])) << 16 | std::uint32_t(std::uint8_t(s[at + 3])) << 24;
}

}  // namespace

TEST_CASE("checkpoint round-trip is byte exact") {
  const auto model = lively_model<float>(tiny_config());
  const std::string bytes = serialize_checkpoint(model);
  const auto back = deserialize_checkpoint(bytes);
  CHECK(back == model);
  CHECK(serialize_checkpoint(back) == bytes);

  const auto dir = temp_dir("ckpt");
  save_checkpoint(model, dir / "m.snfg");
  CHECK(read_file_bytes(dir / "m.snfg") == bytes);
  CHECK(load_checkpoint(dir / "m.snfg") == model);
}

TEST_CASE("checkpoint layout: magic, version, config, shaped tensors") {
  const auto model = init_model<float>(tiny_config());
  const std::string bytes = serialize_checkpoint(model);
  REQUIRE(bytes.substr(0, 4) == "SNFG");
  CHECK(read_u32(bytes, 4) == kCheckpointVersion);
  const std::uint32_t n = read_u32(bytes, 8);
  CHECK(bytes.substr(12, n) == config_to_json(model.config));

  // Walk the tensor records independently of the reader.
  std::size_t pos = 12 + n;
  std::size_t tensors = 0;
  model.params.for_each([&](TensorId, const Matrix<float>& m) {
    REQUIRE(read_u32(bytes, pos) == 2);
    CHECK(read_u32(bytes, pos + 4) == m.rows);
    CHECK(read_u32(bytes, pos + 8) == m.cols);
    pos += 12;
    for (std::size_t i = 0; i < m.size(); ++i) {
      float f;
      const std::uint32_t u = read_u32(bytes, pos + 4 * i);
      std::memcpy(&f, &u, 4);
      REQUIRE(f == m.data[i]);
    }
    pos += 4 * m.size();
    ++tensors;
  });
  CHECK(pos == bytes.size());
  CHECK(tensors == model.params.tensor_count());
}

TEST_CASE("malformed checkpoints are rejected") {
  const std::string good = serialize_checkpoint(init_model<float>(tiny_config()));
  CHECK_THROWS_AS(deserialize_checkpoint(""), DataError);
  CHECK_THROWS_AS(deserialize_checkpoint("XNFG" + good.substr(4)), DataError);
  std::string bad_version = good;
  bad_version[4] = 9;
  CHECK_THROWS_AS(deserialize_checkpoint(bad_version), DataError);
  CHECK_THROWS_AS(deserialize_checkpoint(good.substr(0, good.size() - 1)), DataError);
  CHECK_THROWS_AS(deserialize_checkpoint(good + "x"), DataError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/model.snfg"), DataError);
}

TEST_CASE("fingerprint identifies config and weights") {
  const auto a = init_model<float>(tiny_config());
  auto b = a;
  CHECK(fingerprint(a) == fingerprint(b));
  b.params.layers[1].down.data[3] += 1e-3f;
  CHECK(fingerprint(a) != fingerprint(b));
  auto cfg = tiny_config();
  cfg.seed = 8;
  CHECK(fingerprint(init_model<float>(cfg)) != fingerprint(a));

  // FNV-1a over the config text followed by the tensor payload.
  Fnv1a h;
  h.update(config_to_json(a.config));
  a.params.for_each([&](TensorId, const Matrix<float>& m) {
    for (float f : m.data) {
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      const unsigned char le[4] = {static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8),
                                   static_cast<unsigned char>(u >> 16),
                                   static_cast<unsigned char>(u >> 24)};
      h.update(le, 4);
    }
  });
  CHECK(h.digest() == fingerprint(a));

  const std::string hex = fingerprint_hex(fingerprint(a));
  CHECK(hex.size() == 16);
  CHECK(parse_fingerprint_hex(hex) == fingerprint(a));
  CHECK_THROWS_AS(parse_fingerprint_hex("xyz"), DataError);
}

TEST_CASE("FNV-1a matches published test vectors") {
  Fnv1a empty;
  CHECK(empty.digest() == 0xcbf29ce484222325ULL);
  Fnv1a a;
  a.update(std::string("a"));
  CHECK(a.digest() == 0xaf63dc4c8601ec8cULL);
  Fnv1a foobar;
  foobar.update(std::string("foobar"));
  CHECK(foobar.digest() == 0x85944171f73967e8ULL);
}
