#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "idf/distillation.hpp"
#include "idf/error.hpp"
#include "testing.hpp"

namespace {

using idf::FusionConfig;
using idf::FusionParams;
using idf::FusionState;
using idf::IdentityDistribution;
using idf::Tensor;
using testing_util::max_fd_error;
using testing_util::random_tensor;
using testing_util::weighted_sum;

double kl_oracle(const std::vector<double>& t, const std::vector<double>& s) {
  double v = 0.0;
  for (std::size_t n = 0; n < t.size(); ++n)
    if (t[n] > 0.0) v += t[n] * std::log(t[n] / s[n]);
  return v;
}

FusionParams micro_fusion(std::size_t d, std::size_t classes, std::uint64_t seed, double dropout = 0.5) {
  FusionConfig c;
  c.feature_dim = d;
  c.classes = classes;
  c.dropout = dropout;
  idf::Rng rng(seed);
  return idf::make_fusion(c, rng);
}

IdentityDistribution random_dist(std::size_t c, std::mt19937_64& rng) {
  std::vector<double> z(c);
  std::normal_distribution<double> n(0.0, 1.5);
  for (auto& v : z) v = n(rng);
  return IdentityDistribution::from_logits(z);
}

TEST(Fuse, ShapesOrderAndZeroInput) {
  const FusionParams p = micro_fusion(6, 3, 1);
  std::mt19937_64 rng(2);
  const Tensor a = random_tensor({6}, rng), b = random_tensor({6}, rng);
  const FusionState s = idf::fuse(a, b, p);
  EXPECT_EQ(s.z_in.shape(), (idf::Shape{12}));
  EXPECT_EQ(s.z_cf.shape(), (idf::Shape{6}));
  EXPECT_EQ(s.z_out.shape(), (idf::Shape{12}));
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(s.z_in[i], a[i]);
    EXPECT_EQ(s.z_in[6 + i], b[i]);
  }
  EXPECT_EQ(idf::fuse(a, b, p).z_out.storage(), s.z_out.storage());

  FusionParams zb = p;
  for (auto* l : {&zb.enc1, &zb.enc2, &zb.dec1, &zb.dec2}) l->bias.fill(0.0);
  const FusionState z = idf::fuse(Tensor({6}, 0.0), Tensor({6}, 0.0), zb);
  for (double v : z.z_cf.values()) EXPECT_EQ(v, 0.0);
  for (double v : z.z_out.values()) EXPECT_EQ(v, 0.0);
}

TEST(Fuse, Errors) {
  const FusionParams p = micro_fusion(6, 3, 1);
  EXPECT_THROW(idf::fuse(Tensor({6}), Tensor({5}), p), idf::Error);
  try {
    idf::fuse(Tensor({4}), Tensor({4}), p);
    FAIL();
  } catch (const idf::Error& e) {
    EXPECT_EQ(e.kind(), idf::ErrorKind::Dimension);
  }
  try {
    idf::fuse(Tensor({4}), Tensor({4}), FusionParams{});
    FAIL();
  } catch (const idf::Error& e) {
    EXPECT_EQ(e.kind(), idf::ErrorKind::State);
  }
}

TEST(Fuse, BottleneckIsEnforced) {
  FusionConfig c;
  c.feature_dim = 4;
  c.code_dim = 8;
  idf::Rng rng(1);
  try {
    idf::make_fusion(c, rng);
    FAIL();
  } catch (const idf::Error& e) {
    EXPECT_EQ(e.kind(), idf::ErrorKind::Config);
  }
  c.code_dim = 7;
  const auto p = idf::make_fusion(c, rng);
  EXPECT_EQ(p.code_dim(), 7u);
  // decoder mirrors the encoder
  EXPECT_EQ(p.dec1.in_features(), p.enc2.out_features());
  EXPECT_EQ(p.dec1.out_features(), p.enc2.in_features());
  EXPECT_EQ(p.dec2.in_features(), p.enc1.out_features());
  EXPECT_EQ(p.dec2.out_features(), p.enc1.in_features());
  EXPECT_EQ(idf::make_fusion(FusionConfig{}, rng).code_dim(), 128u);
}

TEST(Fuse, EncoderGradientMatchesFiniteDifferences) {
  FusionParams p = micro_fusion(5, 3, 4);
  std::mt19937_64 rng(3);
  const Tensor a = random_tensor({5}, rng), b = random_tensor({5}, rng);
  const Tensor w = random_tensor({10}, rng);
  // d/dθ of w·z_out through the decoder and encoder, via the batched backward
  idf::nn::BatchNormStats stats = idf::nn::make_batchnorm_stats(p.cls1.out_features());
  idf::Rng drop(1);
  idf::FusionBatchTrace trace;
  // batch norm needs two rows; the second carries no upstream gradient
  Tensor z_in = random_tensor({2, 10}, rng);
  const Tensor zi = idf::concat_features(a, b);
  std::copy(zi.values().begin(), zi.values().end(), z_in.values().begin());
  idf::fusion_forward_train(p, stats, z_in, 0.0, drop, trace);
  FusionParams grad = p;
  grad.visit("", [](const std::string&, Tensor& t) { t.fill(0.0); });
  Tensor w2({2, 10}, 0.0);
  std::copy(w.values().begin(), w.values().end(), w2.values().begin());
  idf::fusion_backward(p, trace, Tensor({2, 3}, 0.0), w2, Tensor({2, 10}, 0.0), grad);
  auto f = [&] { return weighted_sum(idf::fuse(a, b, p).z_out, w); };
  EXPECT_LT(max_fd_error(f, p.enc1.weight, grad.enc1.weight), 1e-3);
  EXPECT_LT(max_fd_error(f, p.enc2.weight, grad.enc2.weight), 1e-3);
  EXPECT_LT(max_fd_error(f, p.dec1.bias, grad.dec1.bias), 1e-3);
}

TEST(RecLoss, Examples) {
  FusionState s;
  s.z_in = Tensor({2}, std::vector<double>{1.0, 0.0});
  s.z_out = Tensor({2}, 0.0);
  EXPECT_EQ(idf::rec_loss(s), 1.0);
  s.z_out = s.z_in;
  EXPECT_EQ(idf::rec_loss(s), 0.0);

  std::mt19937_64 rng(5);
  s.z_in = random_tensor({9}, rng);
  s.z_out = random_tensor({9}, rng);
  const double base = idf::rec_loss(s);
  double oracle = 0.0;
  for (std::size_t i = 0; i < 9; ++i) oracle += (s.z_out[i] - s.z_in[i]) * (s.z_out[i] - s.z_in[i]);
  EXPECT_NEAR(base, oracle, 1e-14);
  FusionState twice = s;
  for (std::size_t i = 0; i < 9; ++i) twice.z_out[i] = s.z_in[i] + 2.0 * (s.z_out[i] - s.z_in[i]);
  EXPECT_NEAR(idf::rec_loss(twice), 4.0 * base, 1e-12);
  EXPECT_GE(base, 0.0);
}

TEST(IfdLoss, Examples) {
  const IdentityDistribution t{{1.0, 0.0}}, s{{0.5, 0.5}};
  EXPECT_NEAR(idf::ifd_loss(t, std::vector<IdentityDistribution>{s}), std::log(2.0), 1e-15);
  EXPECT_NEAR(idf::ifd_loss(t, std::vector<IdentityDistribution>{s, s}), 2.0 * std::log(2.0), 1e-15);
  EXPECT_EQ(idf::ifd_loss(t, std::vector<IdentityDistribution>{t}), 0.0);
  EXPECT_THROW(idf::ifd_loss(t, std::vector<IdentityDistribution>{{{0.2, 0.3, 0.5}}}), idf::Error);
  // zero student probability hits the clamp instead of diverging
  const double clamped = idf::ifd_loss(IdentityDistribution{{0.5, 0.5}}, std::vector<IdentityDistribution>{t});
  EXPECT_TRUE(std::isfinite(clamped));
  EXPECT_NEAR(clamped, 0.5 * std::log(0.5 / idf::kProbabilityFloor) + 0.5 * std::log(0.5), 1e-12);
}

TEST(IfdLoss, NonNegativeZeroOnlyForEqualAndMatchesOracle) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const auto t = random_dist(6, rng);
    const std::vector<IdentityDistribution> s{random_dist(6, rng), random_dist(6, rng)};
    const double v = idf::ifd_loss(t, s);
    EXPECT_GT(v, 0.0);
    EXPECT_NEAR(v, kl_oracle(t.probs, s[0].probs) + kl_oracle(t.probs, s[1].probs), 1e-12);
    EXPECT_EQ(idf::ifd_loss(t, std::vector<IdentityDistribution>{t, t}), 0.0);
  }
}

TEST(IfdLoss, TeacherGradientIsZeroStudentGradientMatches) {
  std::mt19937_64 rng(9);
  const auto t = random_dist(5, rng);
  Tensor logits = random_tensor({5}, rng, -2.0, 2.0);
  const std::vector<IdentityDistribution> s{IdentityDistribution::from_logits(logits.values())};
  for (double g : idf::ifd_teacher_grad(t, s)) EXPECT_EQ(g, 0.0);

  Tensor grad({5}, 0.0);
  idf::ifd_student_grad(t, logits.values(), 0.7, grad.values());
  auto f = [&] {
    return 0.7 * idf::ifd_loss(t, std::vector<IdentityDistribution>{IdentityDistribution::from_logits(logits.values())});
  };
  EXPECT_LT(max_fd_error(f, logits, grad), 1e-3);
}

TEST(IdmLoss, DegenerateWeightsAndTermSum) {
  std::mt19937_64 rng(11);
  const FusionParams p = micro_fusion(4, 3, 5);
  std::vector<IdentityDistribution> probs, teachers;
  std::vector<FusionState> states;
  std::vector<std::vector<IdentityDistribution>> students;
  const std::vector<std::size_t> labels{0, 2};
  for (int b = 0; b < 2; ++b) {
    probs.push_back(random_dist(3, rng));
    teachers.push_back(probs.back());
    states.push_back(idf::fuse(random_tensor({4}, rng), random_tensor({4}, rng), p));
    students.push_back({random_dist(3, rng), random_dist(3, rng)});
  }
  const double id = idf::id_loss(probs, labels);
  idf::DistillationConfig zero{0.0, 0.0};
  EXPECT_EQ(idf::idm_loss(probs, labels, states, teachers, students, zero).total, id);

  const idf::DistillationConfig cfg;
  EXPECT_EQ(cfg.lambda1, 0.1);
  EXPECT_EQ(cfg.lambda2, 0.1);
  const auto l = idf::idm_loss(probs, labels, states, teachers, students, cfg);
  double rec = 0.0, ifd = 0.0;
  for (int b = 0; b < 2; ++b) {
    for (std::size_t i = 0; i < 8; ++i) rec += 0.5 * std::pow(states[b].z_out[i] - states[b].z_in[i], 2);
    for (const auto& s : students[b]) ifd += 0.5 * kl_oracle(teachers[b].probs, s.probs);
  }
  EXPECT_NEAR(l.rec, rec, 1e-12);
  EXPECT_NEAR(l.ifd, ifd, 1e-12);
  EXPECT_NEAR(l.total, id + 0.1 * rec + 0.1 * ifd, 1e-12);

  EXPECT_THROW(idf::idm_loss(probs, labels, states, teachers, students, idf::DistillationConfig{-0.1, 0.1}),
               idf::Error);
}

TEST(FusionBatch, BackwardMatchesFiniteDifferences) {
  FusionParams p = micro_fusion(4, 3, 13, 0.5);
  std::mt19937_64 rng(15);
  const std::size_t b = 3;
  Tensor z_in = random_tensor({b, 8}, rng);
  const Tensor wl = random_tensor({b, 3}, rng), wo = random_tensor({b, 8}, rng), wi = random_tensor({b, 8}, rng);
  // same dropout mask on every evaluation
  auto forward = [&](idf::FusionBatchTrace& tr) {
    auto stats = idf::nn::make_batchnorm_stats(p.cls1.out_features());
    idf::Rng drop(99);
    idf::fusion_forward_train(p, stats, z_in, 0.5, drop, tr);
  };
  idf::FusionBatchTrace trace;
  forward(trace);
  FusionParams grad = p;
  grad.visit("", [](const std::string&, Tensor& t) { t.fill(0.0); });
  const Tensor dz = idf::fusion_backward(p, trace, wl, wo, wi, grad);
  auto f = [&] {
    idf::FusionBatchTrace tr;
    forward(tr);
    return weighted_sum(tr.logits, wl) + weighted_sum(tr.z_out, wo) + weighted_sum(z_in, wi);
  };
  EXPECT_LT(max_fd_error(f, z_in, dz), 1e-3);
  EXPECT_LT(max_fd_error(f, p.cls2.weight, grad.cls2.weight), 1e-3);
  EXPECT_LT(max_fd_error(f, p.bn.gamma, grad.bn.gamma), 1e-3);
  EXPECT_LT(max_fd_error(f, p.bn.beta, grad.bn.beta), 1e-3);
  EXPECT_LT(max_fd_error(f, p.cls1.weight, grad.cls1.weight, 0, 1e-5, 1e-6), 1e-3);
  EXPECT_LT(max_fd_error(f, p.enc1.weight, grad.enc1.weight), 1e-3);
  EXPECT_LT(max_fd_error(f, p.dec2.bias, grad.dec2.bias), 1e-3);
}

TEST(FusionBatch, EvalModeIsDeterministicAndRejectsBackward) {
  const FusionParams p = micro_fusion(4, 3, 17);
  std::mt19937_64 rng(19);
  const Tensor z = random_tensor({2, 8}, rng);
  const auto stats = idf::nn::make_batchnorm_stats(p.cls1.out_features());
  idf::FusionBatchTrace a, b;
  idf::fusion_forward_eval(p, stats, z, a);
  idf::fusion_forward_eval(p, stats, z, b);
  EXPECT_EQ(a.logits.storage(), b.logits.storage());
  FusionParams grad = p;
  try {
    idf::fusion_backward(p, a, Tensor({2, 3}, 0.0), Tensor({2, 8}, 0.0), Tensor({2, 8}, 0.0), grad);
    FAIL();
  } catch (const idf::Error& e) {
    EXPECT_EQ(e.kind(), idf::ErrorKind::State);
  }
}

}  // namespace
