#pragma once

// Bottleneck fusion of the two branch features, the fused-feature identity
// classifier that acts as teacher, and the reconstruction and KL distillation
// losses.

#include <cstddef>
#include <span>
#include <vector>

#include "idf/branches.hpp"
#include "idf/nn.hpp"

namespace idf {

struct DistillationConfig {
  double lambda1 = 0.1;  // reconstruction weight
  double lambda2 = 0.1;  // distillation weight

  void validate() const;
};

struct FusionConfig {
  std::size_t feature_dim = 128;    // D; the fused input has 2D entries
  std::size_t hidden = 0;           // 0: 2D
  std::size_t code_dim = 0;         // 0: D. Must stay below 2D.
  std::size_t classifier_hidden = 0;  // 0: code_dim
  std::size_t classes = 2;
  double dropout = 0.5;

  FusionConfig resolved() const;
};

struct FusionParams {
  nn::LinearParams enc1, enc2;  // 2D -> hidden -> code
  nn::LinearParams dec1, dec2;  // code -> hidden -> 2D
  nn::LinearParams cls1;        // code -> classifier_hidden
  nn::BatchNormParams bn;
  nn::LinearParams cls2;  // classifier_hidden -> classes

  std::size_t input_dim() const { return enc1.in_features(); }
  std::size_t code_dim() const { return enc2.out_features(); }
  bool initialized() const noexcept { return !enc1.weight.empty(); }
  void visit(const std::string& prefix, const TensorVisitor& f);
  void visit(const std::string& prefix, const ConstTensorVisitor& f) const;
};

FusionParams make_fusion(const FusionConfig& cfg, Rng& rng);

struct FusionState {
  Tensor z_in;   // concat(f_mbranch, f_iebranch)
  Tensor z_cf;   // bottleneck code
  Tensor z_out;  // reconstruction of z_in
};

Tensor concat_features(const Tensor& f_mbranch, const Tensor& f_iebranch);

// Deterministic single-sample encode/decode.
FusionState fuse(const Tensor& f_mbranch, const Tensor& f_iebranch, const FusionParams& params);

// Squared Euclidean distance between reconstruction and input.
double rec_loss(const FusionState& state);

// sum_s sum_n P_t(n) log(P_t(n) / P_s(n)), student probabilities floored at
// kProbabilityFloor. The teacher is a constant for gradient purposes.
double ifd_loss(const IdentityDistribution& teacher, std::span<const IdentityDistribution> students);

// dL_IFD/d(student logits) for one student, scaled and added into d_logits.
void ifd_student_grad(const IdentityDistribution& teacher, std::span<const double> student_logits, double scale,
                      std::span<double> d_logits);

// Gradient with respect to the teacher's logits; identically zero.
std::vector<double> ifd_teacher_grad(const IdentityDistribution& teacher,
                                     std::span<const IdentityDistribution> students);

struct IdmLoss {
  double id = 0.0;
  double rec = 0.0;  // batch mean
  double ifd = 0.0;  // batch mean
  double total = 0.0;
};

// L_ID + lambda1 * L_REC + lambda2 * L_IFD over a batch; students[b] holds the
// student distributions of sample b.
IdmLoss idm_loss(std::span<const IdentityDistribution> probs_idm, std::span<const std::size_t> labels,
                 std::span<const FusionState> states, std::span<const IdentityDistribution> teachers,
                 std::span<const std::vector<IdentityDistribution>> students, const DistillationConfig& cfg);

// Batched pass through encoder, decoder and classifier.
struct FusionBatchTrace {
  Tensor z_in, h_enc, z_cf, h_dec, z_out;
  Tensor cls_hidden, bn_out, dropout_mask, dropped, logits;
  nn::BatchNormCache bn_cache;
  bool training = false;
};

// Training mode: batch statistics (running stats updated) and dropout.
void fusion_forward_train(const FusionParams& params, nn::BatchNormStats& stats, const Tensor& z_in, double dropout,
                          Rng& rng, FusionBatchTrace& trace);
// Evaluation mode: running statistics, no dropout.
void fusion_forward_eval(const FusionParams& params, const nn::BatchNormStats& stats, const Tensor& z_in,
                         FusionBatchTrace& trace);

// Upstream gradients on logits and z_out ([B, *]); d_z_in_direct is added to
// the gradient that flows into z_in (the reconstruction target side).
// Returns dL/dz_in.
Tensor fusion_backward(const FusionParams& params, const FusionBatchTrace& trace, const Tensor& d_logits,
                       const Tensor& d_z_out, const Tensor& d_z_in_direct, FusionParams& grad);

}  // namespace idf
