#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "semdiff/encoder.hpp"
#include "semdiff/errors.hpp"

using namespace semdiff;

namespace {

Tensor random_images(std::size_t n, std::size_t c, Rng& rng) {
  Tensor x({n, c, 32, 32});
  for (auto& v : x.data()) v = rng.uniform(-1.0, 1.0);
  return x;
}

}  // namespace

TEST(Encoder, LatentDimFormula) {
  EXPECT_EQ(latent_dim(1024, 0.3), 614u);
  for (std::size_t dim : {1024u, 3072u}) {
    for (double cbr : {0.05, 0.1, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45}) {
      EXPECT_EQ(latent_dim(dim, cbr), 2 * static_cast<std::size_t>(dim * cbr));
    }
  }
  EXPECT_THROW(latent_dim(1024, 0.0), InvalidArgument);
  EXPECT_THROW(latent_dim(1024, 1.0), InvalidArgument);
}

TEST(Encoder, MnistShapesAndPower) {
  Rng rng(1);
  SemanticEncoder enc(EncoderConfig::mnist({0.3}), rng);
  EXPECT_EQ(enc.trunk().out_size(), 4u);
  const Tensor x = random_images(3, 1, rng);
  const auto z = enc.encode(x, 0.3);
  ASSERT_EQ(z.size(), 3u);
  for (const auto& l : z) {
    EXPECT_EQ(l.values.size(), 614u);
    EXPECT_EQ(l.symbols(), 307u);
    EXPECT_NEAR(l.average_power(), 1.0, 1e-9);
  }
  const auto again = enc.encode(x, 0.3);
  EXPECT_EQ(again[1].values, z[1].values);
}

TEST(Encoder, CifarTrunkWithBatchNorm) {
  Rng rng(2);
  EncoderConfig cfg = EncoderConfig::cifar10({0.4});
  cfg.conv_channels = {4, 6, 8, 8};
  SemanticEncoder enc(cfg, rng);
  EXPECT_EQ(enc.trunk().strides(), (std::vector<int>{1, 2, 2, 2}));
  const auto z = enc.encode(random_images(2, 3, rng), 0.4);
  EXPECT_EQ(z[0].values.size(), 2 * static_cast<std::size_t>(3072 * 0.4));
  EXPECT_NEAR(z[0].average_power(), 1.0, 1e-9);
}

TEST(Encoder, UnknownHeadListsAvailable) {
  Rng rng(3);
  SemanticEncoder enc(EncoderConfig::mnist({0.2, 0.3}), rng);
  try {
    enc.head_index(0.25);
    FAIL() << "expected InvalidArgument";
  } catch (const InvalidArgument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("0.2"), std::string::npos);
    EXPECT_NE(msg.find("0.3"), std::string::npos);
  }
}

TEST(Encoder, PadAndReshapeRoundTrip) {
  Rng rng(4);
  std::vector<double> v(614);
  rng.fill_normal(v);
  const auto z = normalize_power(v, 0.3);
  const auto c = pad_and_reshape(z, {1, 32, 32});
  EXPECT_EQ(c.data.shape(), (Shape{1, 1, 32, 32}));
  double mask_sum = 0.0;
  for (double m : c.mask.data()) mask_sum += m;
  EXPECT_EQ(mask_sum, 614.0);
  for (std::size_t i = 614; i < 1024; ++i) EXPECT_EQ(c.data[i], 0.0);
  EXPECT_EQ(extract_latent(c), z.values);

  std::vector<double> full(1024, 0.5);
  const auto cf = pad_and_reshape(normalize_power(full), {1, 32, 32});
  for (double m : cf.mask.data()) EXPECT_EQ(m, 1.0);
  std::vector<double> too_long(1026, 1.0);
  EXPECT_THROW(pad_and_reshape(normalize_power(too_long), {1, 32, 32}), ShapeError);
}

TEST(Encoder, AdaptiveHeadSelectUniform) {
  const std::vector<double> list{0.2, 0.25, 0.3, 0.35, 0.4, 0.45};
  Rng rng(5);
  std::map<double, int> counts;
  const int n = 6000;
  for (int i = 0; i < n; ++i) counts[adaptive_head_select(list, rng)]++;
  EXPECT_EQ(counts.size(), list.size());
  const double p = 1.0 / 6.0, se = std::sqrt(p * (1 - p) / n);
  for (const auto& [c, k] : counts) EXPECT_NEAR(static_cast<double>(k) / n, p, 3 * se) << c;
  const std::vector<double> single{0.3};
  for (int i = 0; i < 10; ++i) EXPECT_EQ(adaptive_head_select(single, rng), 0.3);
  EXPECT_THROW(adaptive_head_select({}, rng), InvalidArgument);
}
