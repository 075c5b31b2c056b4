#include <gtest/gtest.h>

#include <cstring>
#include <string>

#include "prismer/error.hpp"
#include "prismer/kv_file.hpp"
#include "prismer/rng.hpp"
#include "prismer/tensor_io.hpp"
#include "prismer/vocab.hpp"
#include "test_support.hpp"

namespace prismer {
namespace {

TEST(Pten, ByteLayout) {
  const auto bytes = encode_pten(Tensor::from({1, 2}, {1.0, -2.5}));
  ASSERT_EQ(bytes.size(), 4u + 1u + 2u * 4u + 2u * 4u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "PTEN");
  EXPECT_EQ(bytes[4], 2);
  // little-endian u32 extents
  EXPECT_EQ((std::vector<std::uint8_t>(bytes.begin() + 5, bytes.begin() + 13)),
            (std::vector<std::uint8_t>{1, 0, 0, 0, 2, 0, 0, 0}));
  float first = 0.0f, second = 0.0f;
  std::memcpy(&first, bytes.data() + 13, 4);
  std::memcpy(&second, bytes.data() + 17, 4);
  EXPECT_EQ(first, 1.0f);
  EXPECT_EQ(second, -2.5f);
  // 1.0f = 0x3f800000, stored low byte first
  EXPECT_EQ(bytes[13], 0x00);
  EXPECT_EQ(bytes[16], 0x3f);
}

TEST(Pten, RoundTripIsExactForFloatValues) {
  const auto t = Tensor::from({2, 3, 1}, {0.5, -1.25, 3.0, 1e-3f, 7.0, -0.0});
  const auto back = decode_pten(encode_pten(t));
  EXPECT_EQ(back.shape(), t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) EXPECT_EQ(back.data()[i], static_cast<double>(static_cast<float>(t.data()[i])));
}

TEST(Pten, FileRoundTrip) {
  const auto dir = testing::scratch_dir("pten");
  const auto t = testing::random_tensor({4, 5}, 3);
  write_pten(dir / "t.pten", t);
  const auto back = read_pten(dir / "t.pten");
  ASSERT_EQ(back.shape(), t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) EXPECT_FLOAT_EQ(static_cast<float>(back.data()[i]), static_cast<float>(t.data()[i]));
}

TEST(Pten, RejectsCorruptStreams) {
  auto bytes = encode_pten(Tensor::zeros({2, 2}));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_pten(bad_magic), IoError);
  bytes.pop_back();
  EXPECT_THROW(decode_pten(bytes), IoError);
  EXPECT_THROW(read_pten("/nonexistent/never.pten"), IoError);
}

TEST(Sha256, KnownVectors) {
  const std::string abc = "abc";
  const std::vector<std::uint8_t> bytes(abc.begin(), abc.end());
  EXPECT_EQ(sha256_hex(bytes), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex({}), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Sha256, TensorDigestTracksValuesAndShape) {
  const auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(tensor_sha256(a), tensor_sha256(a.clone()));
  EXPECT_NE(tensor_sha256(a), tensor_sha256(Tensor::from({4}, {1, 2, 3, 4})));
  auto b = a.clone();
  b.mutable_data()[3] = std::nextafter(4.0, 5.0);
  EXPECT_NE(tensor_sha256(a), tensor_sha256(b));
}

TEST(KeyValueFile, PreservesOrderAndOverwrites) {
  KeyValueFile kv;
  kv.set("b", "1");
  kv.set("a", "2");
  kv.set("b", "3");
  EXPECT_EQ(kv.str(), "b=3\na=2\n");
  const auto parsed = KeyValueFile::parse("# comment\nx = y\n\nz=w=v\n");
  EXPECT_EQ(parsed.require("x"), "y");
  EXPECT_EQ(parsed.require("z"), "w=v");
  EXPECT_FALSE(parsed.get("missing").has_value());
  EXPECT_THROW(parsed.require("missing"), Error);
}

TEST(Rng, SeededStreamsAreReproducibleAndDistinct) {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 10; ++i) {
    const auto x = a.next();
    EXPECT_EQ(x, b.next());
    EXPECT_NE(x, c.next());
  }
  EXPECT_NE(derive_seed(1, "a"), derive_seed(1, "b"));
  EXPECT_NE(derive_seed(1, std::uint64_t{0}), derive_seed(2, std::uint64_t{0}));
  EXPECT_EQ(derive_seed(9, "x"), derive_seed(9, "x"));
}

TEST(Rng, DistributionMoments) {
  Rng rng(5);
  const int n = 200000;
  double su = 0.0, sn = 0.0, sn2 = 0.0;
  std::vector<int> buckets(7, 0);
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    su += u;
    const double g = rng.normal();
    sn += g;
    sn2 += g * g;
    buckets[rng.below(7)]++;
  }
  EXPECT_NEAR(su / n, 0.5, 0.005);
  EXPECT_NEAR(sn / n, 0.0, 0.01);
  EXPECT_NEAR(sn2 / n, 1.0, 0.02);
  for (int b : buckets) EXPECT_NEAR(b, n / 7.0, 0.03 * n / 7.0);
}

TEST(Vocabulary, EncodeDecodeRoundTrip) {
  const auto& v = Vocabulary::toy();
  EXPECT_EQ(v.word(kEosToken), "<eos>");
  EXPECT_EQ(v.word(kBosToken), "<bos>");
  const auto ids = v.encode("a red square on a gray background");
  EXPECT_EQ(v.decode(ids), "a red square on a gray background");
  std::vector<int> with_specials = {kBosToken, v.id("red"), kEosToken};
  EXPECT_EQ(v.decode(with_specials), "red");
  EXPECT_THROW(v.encode("a zebra"), ConfigError);
  EXPECT_THROW(v.word(static_cast<int>(v.size())), RangeError);
}

}  // namespace
}  // namespace prismer
