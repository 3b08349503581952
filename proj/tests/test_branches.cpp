#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <utility>
#include <numeric>
#include <vector>

#include "idf/branches.hpp"
#include "idf/error.hpp"
#include "idf/trainer.hpp"
#include "testing.hpp"

namespace {

using idf::BackboneConfig;
using idf::BranchParams;
using idf::IdentityDistribution;
using idf::Image;
using idf::Tensor;
using testing_util::max_fd_error;
using testing_util::random_image;
using testing_util::random_tensor;

BackboneConfig micro() {
  BackboneConfig c;
  c.widths = {4, 6};
  c.feature_dim = 5;
  return c;
}

template <class P>
P zeros_like(const P& p) {
  P g = p;
  g.visit("", [](const std::string&, Tensor& t) { t.fill(0.0); });
  return g;
}

// Analytic gradient of mbranch_loss over the whole batch.
double mbranch_grad(const BranchParams& br, const std::vector<Image>& images, const std::vector<std::size_t>& labels,
                    BranchParams& grad) {
  const std::size_t b = images.size(), c = br.head.out_features(), d = br.backbone.feature_dim();
  std::vector<idf::BackboneTrace> traces(b);
  Tensor feats({b, d}), logits;
  for (std::size_t i = 0; i < b; ++i) {
    const Tensor f = idf::extract_features(br.backbone, images[i].tensor(), &traces[i]);
    std::copy(f.values().begin(), f.values().end(), feats.values().begin() + static_cast<long>(i * d));
  }
  logits = idf::nn::linear_forward(br.head, feats);
  Tensor d_logits({b, c}, 0.0);
  const double loss = idf::id_loss_with_grad(logits, labels, 1.0, d_logits);
  const Tensor d_feats = idf::nn::linear_backward(br.head, feats, d_logits, grad.head);
  for (std::size_t i = 0; i < b; ++i) {
    Tensor df({d});
    std::copy_n(d_feats.values().begin() + static_cast<long>(i * d), d, df.values().begin());
    idf::extract_features_backward(br.backbone, traces[i], df, grad.backbone, false);
  }
  return loss;
}

double softmax_oracle(const std::vector<double>& z, std::size_t k) {
  double s = 0.0;
  for (double v : z) s += std::exp(v);
  return std::exp(z[k]) / s;
}

TEST(Backbone, DeterministicAndShaped) {
  idf::Rng r1(4), r2(4);
  const auto a = idf::make_backbone(BackboneConfig{}, r1);
  const auto b = idf::make_backbone(BackboneConfig{}, r2);
  std::mt19937_64 rng(1);
  const Image img = random_image(32, 16, rng);
  const Tensor fa = idf::extract_features(a, img.tensor());
  EXPECT_EQ(fa.shape(), (idf::Shape{128}));
  EXPECT_EQ(fa.storage(), idf::extract_features(a, img.tensor()).storage());
  EXPECT_EQ(fa.storage(), idf::extract_features(b, img.tensor()).storage());
  for (double v : fa.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Backbone, Errors) {
  idf::BackboneParams empty;
  try {
    idf::extract_features(empty, Tensor({3, 8, 8}));
    FAIL();
  } catch (const idf::Error& e) {
    EXPECT_EQ(e.kind(), idf::ErrorKind::State);
  }
  idf::Rng rng(1);
  const auto p = idf::make_backbone(micro(), rng);
  EXPECT_THROW(idf::extract_features(p, Tensor({1, 8, 8})), idf::Error);
}

TEST(Backbone, GradientMatchesFiniteDifferences) {
  idf::Rng rng(6);
  auto p = idf::make_backbone(micro(), rng);
  std::mt19937_64 r(2);
  Tensor x = random_tensor({3, 8, 8}, r, 0.0, 1.0);
  const Tensor w = random_tensor({5}, r);
  idf::BackboneTrace trace;
  const Tensor f = idf::extract_features(p, x, &trace);
  (void)f;
  auto grad = zeros_like(p);
  const Tensor dx = idf::extract_features_backward(p, trace, w, grad, true);
  auto obj = [&] { return testing_util::weighted_sum(idf::extract_features(p, x), w); };
  EXPECT_LT(max_fd_error(obj, p.blocks[0].weight, grad.blocks[0].weight, 40), 1e-3);
  EXPECT_LT(max_fd_error(obj, p.blocks[1].bias, grad.blocks[1].bias), 1e-3);
  EXPECT_LT(max_fd_error(obj, p.projection.weight, grad.projection.weight), 1e-3);
  EXPECT_LT(max_fd_error(obj, x, dx, 60), 1e-3);
}

TEST(IdentityDistribution, Examples) {
  idf::nn::LinearParams head{Tensor({10, 4}, 0.0), Tensor({10}, 0.0)};
  const auto u = idf::classify(head, Tensor({4}, 0.7));
  for (double p : u.probs) EXPECT_NEAR(p, 0.1, 1e-15);

  const auto sharp = IdentityDistribution::from_logits(std::vector<double>{50.0, 0.0});
  EXPECT_NEAR(sharp.probs[0], 1.0, 1e-6);

  const std::vector<double> z{1.0, 2.0, 3.0};
  const auto d = IdentityDistribution::from_logits(z);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(d.probs[k], softmax_oracle(z, k), 1e-15);
}

TEST(IdentityDistribution, SimplexAndFloor) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 30.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> z(7);
    for (auto& v : z) v = n(rng);
    const auto d = IdentityDistribution::from_logits(z);
    EXPECT_NEAR(std::accumulate(d.probs.begin(), d.probs.end(), 0.0), 1.0, 1e-6);
    for (double p : d.probs) EXPECT_GT(p, 0.0);
  }
}

TEST(IdLoss, Examples) {
  IdentityDistribution certain{{0.0, 1.0, 0.0}};
  const std::vector<IdentityDistribution> two{certain, certain};
  EXPECT_EQ(idf::id_loss(two, std::vector<std::size_t>{1, 1}), 0.0);

  IdentityDistribution uniform{std::vector<double>(10, 0.1)};
  EXPECT_NEAR(idf::id_loss(std::vector<IdentityDistribution>{uniform}, std::vector<std::size_t>{3}), std::log(10.0),
              1e-14);

  const std::vector<IdentityDistribution> pair{{{0.5, 0.5}}, {{0.75, 0.25}}};
  const double v = idf::id_loss(pair, std::vector<std::size_t>{0, 1});
  EXPECT_NEAR(v, (std::log(2.0) + std::log(4.0)) / 2.0, 1e-14);
  EXPECT_NEAR(v, 1.0397, 1e-4);

  EXPECT_THROW(idf::id_loss(pair, std::vector<std::size_t>{0}), idf::Error);
  EXPECT_THROW(idf::id_loss(pair, std::vector<std::size_t>{0, 2}), idf::Error);
  // confident wrong prediction stays finite
  const std::vector<IdentityDistribution> wrong{IdentityDistribution::from_logits(std::vector<double>{2000.0, 0.0})};
  EXPECT_NEAR(idf::id_loss(wrong, std::vector<std::size_t>{1}), -std::log(idf::kProbabilityFloor), 1e-9);
}

TEST(IdLoss, NonNegativeAndLogitGradient) {
  std::mt19937_64 rng(8);
  Tensor logits = random_tensor({3, 5}, rng, -2.0, 2.0);
  const std::vector<std::size_t> labels{4, 0, 2};
  Tensor g({3, 5}, 0.0);
  const double v = idf::id_loss_with_grad(logits, labels, 0.5, g);
  EXPECT_GE(v, 0.0);
  auto f = [&] {
    std::vector<IdentityDistribution> d;
    for (std::size_t b = 0; b < 3; ++b)
      d.push_back(IdentityDistribution::from_logits(std::span<const double>(logits.data() + b * 5, 5)));
    return 0.5 * idf::id_loss(d, labels);
  };
  EXPECT_NEAR(f(), 0.5 * v, 1e-14);
  EXPECT_LT(max_fd_error(f, logits, g), 1e-3);
}

TEST(MBranch, LossGradientMatchesFiniteDifferences) {
  idf::Rng init(10);
  BranchParams br = idf::make_branch(micro(), 3, init);
  for (auto& v : br.head.weight.values()) v *= 30.0;  // non-trivial softmax
  std::mt19937_64 rng(5);
  const std::vector<Image> images{random_image(8, 8, rng), random_image(8, 8, rng)};
  const std::vector<std::size_t> labels{2, 0};
  auto grad = zeros_like(br);
  const double v = mbranch_grad(br, images, labels, grad);
  auto f = [&] { return idf::mbranch_loss(br, images, labels); };
  EXPECT_NEAR(v, f(), 1e-13);
  EXPECT_LT(max_fd_error(f, br.head.weight, grad.head.weight), 1e-3);
  EXPECT_LT(max_fd_error(f, br.backbone.blocks[0].weight, grad.backbone.blocks[0].weight, 40), 1e-3);
  EXPECT_LT(max_fd_error(f, br.backbone.projection.bias, grad.backbone.projection.bias), 1e-3);
}

TEST(MBranch, LossDecreasesUnderSgd) {
  idf::Rng init(12);
  BranchParams br = idf::make_branch(micro(), 2, init);
  std::mt19937_64 rng(7);
  std::vector<Image> images;
  std::vector<std::size_t> labels;
  for (std::size_t id = 0; id < 2; ++id)
    for (int k = 0; k < 4; ++k) {
      Tensor t = random_tensor({3, 8, 8}, rng, 0.0, 0.3);
      for (std::size_t i = 0; i < 64; ++i) t[(id == 0 ? 0 : 2) * 64 + i] += 0.6;
      images.push_back(Image::from_tensor(t));
      labels.push_back(id);
    }
  const double initial = idf::mbranch_loss(br, images, labels);
  idf::TrainConfig cfg;
  cfg.learning_rate = 0.05;
  std::map<std::string, Tensor> velocity;
  for (int step = 0; step < 50; ++step) {
    auto grad = zeros_like(br);
    mbranch_grad(br, images, labels, grad);
    std::map<std::string, const Tensor*> g;
    std::as_const(grad).visit("", [&](const std::string& n, const Tensor& t) { g[n] = &t; });
    br.visit("", [&](const std::string& n, Tensor& t) {
      auto it = velocity.try_emplace(n, Tensor(t.shape(), 0.0)).first;
      idf::sgd_update(t, *g.at(n), it->second, cfg.learning_rate, cfg.momentum, cfg.weight_decay);
    });
  }
  EXPECT_LT(idf::mbranch_loss(br, images, labels), initial);
}

TEST(MBranch, BranchesAreDisjoint) {
  idf::Rng init(14);
  BranchParams a = idf::make_branch(micro(), 3, init);
  BranchParams b = idf::make_branch(micro(), 3, init);
  std::mt19937_64 rng(9);
  const Image img = random_image(8, 8, rng);
  const auto before = idf::mbranch_forward(b, img).logits;
  a.visit("", [](const std::string&, Tensor& t) {
    for (auto& v : t.values()) v += 0.5;
  });
  EXPECT_EQ(idf::mbranch_forward(b, img).logits.storage(), before.storage());
  EXPECT_NE(idf::mbranch_forward(a, img).logits.storage(), before.storage());
}

idf::EnhancerParams micro_enhancer(bool zero_final, std::uint64_t seed) {
  idf::EnhancerConfig c;
  c.width = 4;
  c.iterations = 2;
  c.zero_final_layer = zero_final;
  c.init_std = 0.2;
  idf::Rng rng(seed);
  return idf::make_enhancer(c, rng);
}

TEST(IEBranch, ZeroFinalLayerReducesToMBranch) {
  const auto enh = micro_enhancer(true, 3);
  idf::Rng init(16);
  const BranchParams br = idf::make_branch(micro(), 4, init);
  std::mt19937_64 rng(11);
  const Image img = random_image(8, 8, rng);
  const auto out = idf::iebranch_forward(enh, br, img);
  EXPECT_EQ(out.enhanced.tensor().storage(), img.tensor().storage());
  EXPECT_EQ(out.branch.logits.storage(), idf::mbranch_forward(br, img).logits.storage());
}

TEST(IEBranch, LossIsTermSum) {
  const auto enh = micro_enhancer(false, 5);
  idf::Rng init(18);
  const BranchParams br = idf::make_branch(micro(), 3, init);
  std::mt19937_64 rng(13);
  const std::vector<Image> images{random_image(16, 16, rng, 0.0, 0.3), random_image(16, 16, rng, 0.0, 0.3)};
  const std::vector<std::size_t> labels{1, 2};
  const idf::EnhancementLossConfig cfg;
  const auto loss = idf::iebranch_loss(enh, br, images, labels, cfg);
  std::vector<IdentityDistribution> probs;
  double dce = 0.0;
  for (const auto& img : images) {
    const auto maps = idf::estimate_curves(enh, img);
    const Image e = idf::enhance(img, maps);
    probs.push_back(idf::classify(br.head, idf::extract_features(br.backbone, e.tensor())));
    dce += idf::loss_dce(img, e, maps, cfg).total / 2.0;
  }
  EXPECT_NEAR(loss.id, idf::id_loss(probs, labels), 1e-13);
  EXPECT_NEAR(loss.dce.total, dce, 1e-13);
  EXPECT_NEAR(loss.total(), loss.id + loss.dce.total, 1e-15);
  EXPECT_GT(loss.dce.total, 0.0);
}

TEST(IEBranch, FullGradientMatchesFiniteDifferences) {
  auto enh = micro_enhancer(false, 7);
  idf::Rng init(20);
  BranchParams br = idf::make_branch(micro(), 3, init);
  for (auto& v : br.head.weight.values()) v *= 30.0;
  std::mt19937_64 rng(15);
  const std::vector<Image> images{random_image(16, 16, rng, 0.0, 0.4), random_image(16, 16, rng, 0.0, 0.4)};
  const std::vector<std::size_t> labels{0, 2};
  idf::EnhancementLossConfig cfg;
  cfg.spa_region = 4;
  cfg.exp_region = 8;

  auto g_enh = zeros_like(enh);
  auto g_br = zeros_like(br);
  // per-sample chain: enhancer -> curves -> branch; ID loss via the batch logits
  const std::size_t b = images.size(), d = br.backbone.feature_dim();
  std::vector<idf::EnhancerTrace> et(b);
  std::vector<idf::EnhanceTrace> ct(b);
  std::vector<idf::CurveParameterMaps> maps(b);
  std::vector<Image> enhanced(b);
  std::vector<idf::BackboneTrace> bt(b);
  Tensor feats({b, d});
  for (std::size_t i = 0; i < b; ++i) {
    maps[i] = idf::estimate_curves(enh, images[i], &et[i]);
    enhanced[i] = idf::enhance(images[i], maps[i], &ct[i]);
    const Tensor f = idf::extract_features(br.backbone, enhanced[i].tensor(), &bt[i]);
    std::copy(f.values().begin(), f.values().end(), feats.values().begin() + static_cast<long>(i * d));
  }
  const Tensor logits = idf::nn::linear_forward(br.head, feats);
  Tensor d_logits(logits.shape(), 0.0);
  idf::id_loss_with_grad(logits, labels, 1.0, d_logits);
  const Tensor d_feats = idf::nn::linear_backward(br.head, feats, d_logits, g_br.head);
  for (std::size_t i = 0; i < b; ++i) {
    Tensor df({d});
    std::copy_n(d_feats.values().begin() + static_cast<long>(i * d), d, df.values().begin());
    Tensor d_img = idf::extract_features_backward(br.backbone, bt[i], df, g_br.backbone, true);
    auto d_maps = idf::CurveParameterMaps::zeros(2, 16, 16);
    idf::loss_dce_grad(images[i], enhanced[i], maps[i], cfg, 1.0 / static_cast<double>(b), d_img, d_maps);
    idf::enhance_backward(ct[i], maps[i], d_img, d_maps);
    idf::estimate_curves_backward(enh, et[i], d_maps, g_enh);
  }
  auto f = [&] { return idf::iebranch_loss(enh, br, images, labels, cfg).total(); };
  double norm = 0.0;
  for (double v : g_enh.layers[6].weight.values()) norm += v * v;
  EXPECT_GT(norm, 0.0);
  EXPECT_LT(max_fd_error(f, enh.layers[6].weight, g_enh.layers[6].weight, 40, 1e-6), 1e-3);
  EXPECT_LT(max_fd_error(f, enh.layers[0].weight, g_enh.layers[0].weight, 30, 1e-6), 1e-3);
  EXPECT_LT(max_fd_error(f, br.backbone.blocks[1].weight, g_br.backbone.blocks[1].weight, 30), 1e-3);
  EXPECT_LT(max_fd_error(f, br.head.bias, g_br.head.bias), 1e-3);
}

}  // namespace
