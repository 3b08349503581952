#include "idf/distillation.hpp"

#include <algorithm>
#include <cmath>

#include "idf/error.hpp"
#include "idf/simd/kernels.hpp"

namespace idf {

void DistillationConfig::validate() const {
  require(lambda1 >= 0.0 && lambda2 >= 0.0, ErrorKind::Config, "distillation weights must be non-negative");
}

FusionConfig FusionConfig::resolved() const {
  FusionConfig r = *this;
  if (r.hidden == 0) r.hidden = 2 * r.feature_dim;
  if (r.code_dim == 0) r.code_dim = r.feature_dim;
  if (r.classifier_hidden == 0) r.classifier_hidden = r.code_dim;
  return r;
}

void FusionParams::visit(const std::string& prefix, const TensorVisitor& f) {
  enc1.visit(prefix + "encoder.fc1", f);
  enc2.visit(prefix + "encoder.fc2", f);
  dec1.visit(prefix + "decoder.fc1", f);
  dec2.visit(prefix + "decoder.fc2", f);
  cls1.visit(prefix + "classifier.fc1", f);
  bn.visit(prefix + "classifier.bn", f);
  cls2.visit(prefix + "classifier.fc2", f);
}

void FusionParams::visit(const std::string& prefix, const ConstTensorVisitor& f) const {
  enc1.visit(prefix + "encoder.fc1", f);
  enc2.visit(prefix + "encoder.fc2", f);
  dec1.visit(prefix + "decoder.fc1", f);
  dec2.visit(prefix + "decoder.fc2", f);
  cls1.visit(prefix + "classifier.fc1", f);
  bn.visit(prefix + "classifier.bn", f);
  cls2.visit(prefix + "classifier.fc2", f);
}

FusionParams make_fusion(const FusionConfig& raw, Rng& rng) {
  const FusionConfig cfg = raw.resolved();
  const std::size_t in = 2 * cfg.feature_dim;
  require(cfg.feature_dim >= 1, ErrorKind::Config, "fusion feature dimension must be positive");
  require(cfg.code_dim >= 1 && cfg.code_dim < in, ErrorKind::Config,
          "fusion bottleneck (" + std::to_string(cfg.code_dim) + ") must be smaller than its input (" +
              std::to_string(in) + ")");
  require(cfg.classes >= 2, ErrorKind::Config, "fusion classifier needs at least 2 identities");
  require(cfg.dropout >= 0.0 && cfg.dropout < 1.0, ErrorKind::Config, "dropout rate must be in [0, 1)");
  auto he = [](std::size_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); };
  FusionParams p;
  p.enc1 = nn::make_linear(in, cfg.hidden, he(in), rng);
  p.enc2 = nn::make_linear(cfg.hidden, cfg.code_dim, std::sqrt(1.0 / static_cast<double>(cfg.hidden)), rng);
  p.dec1 = nn::make_linear(cfg.code_dim, cfg.hidden, he(cfg.code_dim), rng);
  p.dec2 = nn::make_linear(cfg.hidden, in, std::sqrt(1.0 / static_cast<double>(cfg.hidden)), rng);
  p.cls1 = nn::make_linear(cfg.code_dim, cfg.classifier_hidden, std::sqrt(1.0 / static_cast<double>(cfg.code_dim)), rng);
  p.bn = nn::make_batchnorm(cfg.classifier_hidden);
  p.cls2 = nn::make_linear(cfg.classifier_hidden, cfg.classes, 0.01, rng);
  return p;
}

Tensor concat_features(const Tensor& f_mbranch, const Tensor& f_iebranch) {
  require(f_mbranch.rank() == 1 && f_iebranch.rank() == 1 && f_mbranch.size() == f_iebranch.size(),
          ErrorKind::Dimension,
          "fusion inputs must be feature vectors of equal dimension, got " + shape_string(f_mbranch.shape()) +
              " and " + shape_string(f_iebranch.shape()));
  Tensor z(Shape{2 * f_mbranch.size()});
  std::copy(f_mbranch.values().begin(), f_mbranch.values().end(), z.data());
  std::copy(f_iebranch.values().begin(), f_iebranch.values().end(), z.data() + f_mbranch.size());
  return z;
}

namespace {

Tensor encode(const FusionParams& p, const Tensor& z_in, Tensor* hidden) {
  Tensor h = nn::linear_forward(p.enc1, z_in);
  nn::relu_inplace(h);
  Tensor z = nn::linear_forward(p.enc2, h);
  if (hidden) *hidden = std::move(h);
  return z;
}

Tensor decode(const FusionParams& p, const Tensor& z_cf, Tensor* hidden) {
  Tensor h = nn::linear_forward(p.dec1, z_cf);
  nn::relu_inplace(h);
  Tensor z = nn::linear_forward(p.dec2, h);
  if (hidden) *hidden = std::move(h);
  return z;
}

}  // namespace

FusionState fuse(const Tensor& f_mbranch, const Tensor& f_iebranch, const FusionParams& params) {
  require(params.initialized(), ErrorKind::State, "fusion parameters are not initialized");
  FusionState s;
  s.z_in = concat_features(f_mbranch, f_iebranch);
  require(s.z_in.size() == params.input_dim(), ErrorKind::Dimension,
          "fusion expects " + std::to_string(params.input_dim()) + " concatenated features, got " +
              std::to_string(s.z_in.size()));
  s.z_cf = encode(params, s.z_in, nullptr);
  s.z_out = decode(params, s.z_cf, nullptr);
  return s;
}

double rec_loss(const FusionState& state) {
  require_same_shape(state.z_in, state.z_out, "reconstruction loss");
  return simd::squared_distance(state.z_out.data(), state.z_in.data(), state.z_in.size());
}

double ifd_loss(const IdentityDistribution& teacher, std::span<const IdentityDistribution> students) {
  double total = 0.0;
  for (const auto& s : students) {
    require(s.classes() == teacher.classes(), ErrorKind::Dimension, "distillation: class counts differ");
    for (std::size_t n = 0; n < teacher.classes(); ++n) {
      const double pt = teacher.probs[n];
      if (pt <= 0.0) continue;
      total += pt * (std::log(std::max(pt, kProbabilityFloor)) - std::log(std::max(s.probs[n], kProbabilityFloor)));
    }
  }
  return total;
}

void ifd_student_grad(const IdentityDistribution& teacher, std::span<const double> student_logits, double scale,
                      std::span<double> d_logits) {
  const std::size_t classes = teacher.classes();
  require(student_logits.size() == classes && d_logits.size() == classes, ErrorKind::Dimension,
          "distillation gradient: class counts differ");
  Tensor z(Shape{classes}, std::vector<double>(student_logits.begin(), student_logits.end()));
  const Tensor p = nn::softmax(z);
  // d/dz_j [-sum_n P_t(n) log p_n] over unclamped n = sum_n P_t(n) (p_j - [n == j])
  double mass = 0.0;
  for (std::size_t n = 0; n < classes; ++n)
    if (p[n] >= kProbabilityFloor) mass += teacher.probs[n];
  for (std::size_t j = 0; j < classes; ++j) {
    const double own = p[j] >= kProbabilityFloor ? teacher.probs[j] : 0.0;
    d_logits[j] += scale * (p[j] * mass - own);
  }
}

std::vector<double> ifd_teacher_grad(const IdentityDistribution& teacher,
                                     std::span<const IdentityDistribution> students) {
  for (const auto& s : students)
    require(s.classes() == teacher.classes(), ErrorKind::Dimension, "distillation: class counts differ");
  return std::vector<double>(teacher.classes(), 0.0);
}

IdmLoss idm_loss(std::span<const IdentityDistribution> probs_idm, std::span<const std::size_t> labels,
                 std::span<const FusionState> states, std::span<const IdentityDistribution> teachers,
                 std::span<const std::vector<IdentityDistribution>> students, const DistillationConfig& cfg) {
  cfg.validate();
  require(states.size() == probs_idm.size() && teachers.size() == probs_idm.size() &&
              students.size() == probs_idm.size(),
          ErrorKind::Dimension, "IDM loss: batch sizes differ");
  IdmLoss l;
  l.id = id_loss(probs_idm, labels);
  const double inv_b = 1.0 / static_cast<double>(probs_idm.size());
  for (std::size_t b = 0; b < probs_idm.size(); ++b) {
    l.rec += inv_b * rec_loss(states[b]);
    l.ifd += inv_b * ifd_loss(teachers[b], students[b]);
  }
  l.total = l.id + cfg.lambda1 * l.rec + cfg.lambda2 * l.ifd;
  return l;
}

void fusion_forward_train(const FusionParams& params, nn::BatchNormStats& stats, const Tensor& z_in, double dropout,
                          Rng& rng, FusionBatchTrace& trace) {
  require(params.initialized(), ErrorKind::State, "fusion parameters are not initialized");
  trace.training = true;
  trace.z_in = z_in;
  trace.z_cf = encode(params, z_in, &trace.h_enc);
  trace.z_out = decode(params, trace.z_cf, &trace.h_dec);
  trace.cls_hidden = nn::linear_forward(params.cls1, trace.z_cf);
  trace.bn_out = nn::batchnorm_forward_train(params.bn, stats, trace.cls_hidden, trace.bn_cache);
  trace.dropout_mask = nn::dropout_mask(trace.bn_out.shape(), dropout, rng);
  trace.dropped = trace.bn_out;
  for (std::size_t i = 0; i < trace.dropped.size(); ++i) trace.dropped[i] *= trace.dropout_mask[i];
  trace.logits = nn::linear_forward(params.cls2, trace.dropped);
}

void fusion_forward_eval(const FusionParams& params, const nn::BatchNormStats& stats, const Tensor& z_in,
                         FusionBatchTrace& trace) {
  require(params.initialized(), ErrorKind::State, "fusion parameters are not initialized");
  trace.training = false;
  trace.z_in = z_in;
  trace.z_cf = encode(params, z_in, &trace.h_enc);
  trace.z_out = decode(params, trace.z_cf, &trace.h_dec);
  trace.cls_hidden = nn::linear_forward(params.cls1, trace.z_cf);
  trace.bn_out = nn::batchnorm_forward_eval(params.bn, stats, trace.cls_hidden);
  trace.dropped = trace.bn_out;
  trace.logits = nn::linear_forward(params.cls2, trace.dropped);
}

Tensor fusion_backward(const FusionParams& params, const FusionBatchTrace& trace, const Tensor& d_logits,
                       const Tensor& d_z_out, const Tensor& d_z_in_direct, FusionParams& grad) {
  require(trace.training, ErrorKind::State, "fusion backward needs a training-mode trace");
  // classifier
  Tensor d = nn::linear_backward(params.cls2, trace.dropped, d_logits, grad.cls2);
  for (std::size_t i = 0; i < d.size(); ++i) d[i] *= trace.dropout_mask[i];
  d = nn::batchnorm_backward(params.bn, trace.bn_cache, d, grad.bn);
  Tensor d_zcf = nn::linear_backward(params.cls1, trace.z_cf, d, grad.cls1);
  // decoder
  Tensor dh = nn::linear_backward(params.dec2, trace.h_dec, d_z_out, grad.dec2);
  nn::relu_backward_inplace(trace.h_dec, dh);
  d_zcf += nn::linear_backward(params.dec1, trace.z_cf, dh, grad.dec1);
  // encoder
  dh = nn::linear_backward(params.enc2, trace.h_enc, d_zcf, grad.enc2);
  nn::relu_backward_inplace(trace.h_enc, dh);
  Tensor d_zin = nn::linear_backward(params.enc1, trace.z_in, dh, grad.enc1);
  d_zin += d_z_in_direct;
  return d_zin;
}

}  // namespace idf
