#include <doctest.h>

#include "splitlstm/binary.hpp"
#include "splitlstm/error.hpp"
#include "splitlstm/model_io.hpp"
#include "test_support.hpp"

using namespace splitlstm;

namespace {

FormatError::Kind decode_kind(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_model(bytes);
  } catch (const FormatError& e) {
    return e.kind();
  }
  FAIL("decode_model accepted corrupt input");
  return FormatError::Kind::Malformed;
}

}  // namespace

TEST_CASE("crc32 check value") {
  const std::string text = "123456789";
  CHECK(crc32(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size())) == 0xCBF43926u);
  CHECK(hash_hex(std::vector<std::uint8_t>{}) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("round trip is exact at 32-bit precision") {
  for (const ModelSpec& spec : {build_student(), build_teacher(7, 5, 4)}) {
    const Parameters p = init_params(spec, 9);
    const auto bytes = encode_model(spec, p);
    const Model back = decode_model(bytes);
    CHECK(back.spec == spec);
    CHECK(back.params == p.cast<float>().cast<double>());
    CHECK(encode_model(back.spec, back.params) == bytes);
  }
}

TEST_CASE("student file size") {
  const ModelSpec s = build_student();
  const auto bytes = encode_model(s, init_params(s, 1));
  // header 8, 4 layer records of 10, 10 tensors with u64 counts, 871 floats, crc.
  CHECK(bytes.size() == 8 + 4 * 10 + 10 * 8 + 871 * 4 + 4);
}

TEST_CASE("save and load") {
  const auto dir = testing::temp_dir("model_io");
  const ModelSpec s = build_student();
  const Parameters p = init_params(s, 4);
  save_model(s, p, dir / "m.slm");
  const Model m = load_model(dir / "m.slm");
  CHECK(model_hash(m.spec, m.params) == model_hash(s, p));
  CHECK_THROWS(load_model(dir / "missing.slm"));
}

TEST_CASE("model hashes tell different models apart") {
  // A CRC-32 over a CRC-terminated container is the same for every model.
  const ModelSpec s = build_student();
  const auto a = encode_model(s, init_params(s, 1));
  const auto b = encode_model(s, init_params(s, 2));
  CHECK(crc32(a) == crc32(b));
  CHECK(model_hash(s, init_params(s, 1)) != model_hash(s, init_params(s, 2)));
  CHECK(payload_crc32(a) != payload_crc32(b));
  CHECK_THROWS_AS(payload_crc32(std::vector<std::uint8_t>{1, 2}), FormatError);
}

TEST_CASE("corruption is reported with a distinct kind") {
  const ModelSpec s = build_student();
  const auto good = encode_model(s, init_params(s, 2));

  auto bad_magic = good;
  bad_magic[0] ^= 0xFF;
  CHECK(decode_kind(bad_magic) == FormatError::Kind::BadMagic);

  auto future = good;
  future[4] = 2;  // version low byte
  CHECK(decode_kind(future) == FormatError::Kind::UnsupportedVersion);

  auto truncated = good;
  truncated.resize(good.size() / 2);
  CHECK(decode_kind(truncated) == FormatError::Kind::Truncated);

  auto flipped = good;
  flipped[200] ^= 0x10;
  CHECK(decode_kind(flipped) == FormatError::Kind::ChecksumMismatch);

  auto trailing = good;
  trailing.push_back(0);
  CHECK(decode_kind(trailing) == FormatError::Kind::Malformed);
}

TEST_CASE("every single-bit flip is rejected") {
  const ModelSpec s = build_teacher(1, 1, 1);
  const auto good = encode_model(s, init_params(s, 3));
  for (std::size_t i = 0; i < good.size(); ++i) {
    for (int bit = 0; bit < 8; ++bit) {
      auto bytes = good;
      bytes[i] ^= static_cast<std::uint8_t>(1u << bit);
      CHECK_THROWS_AS(decode_model(bytes), FormatError);
    }
  }
}
