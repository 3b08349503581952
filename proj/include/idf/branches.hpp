#pragma once

// Master branch (features of the raw night image) and illumination
// enhancement branch (features of the curve-enhanced image). Each branch owns
// its backbone and identity classifier; nothing is shared between them.

#include <cstddef>
#include <span>
#include <vector>

#include "idf/curve.hpp"
#include "idf/enhancement_losses.hpp"
#include "idf/nn.hpp"

namespace idf {

inline constexpr double kProbabilityFloor = 1e-12;

struct BackboneConfig {
  std::vector<std::size_t> widths{16, 32, 64, 128};
  std::size_t feature_dim = 128;
};

// Stride-2 conv+ReLU blocks, global average pooling, linear projection.
struct BackboneParams {
  std::vector<nn::ConvParams> blocks;
  nn::LinearParams projection;

  bool initialized() const noexcept { return !blocks.empty() && !projection.weight.empty(); }
  std::size_t feature_dim() const { return projection.out_features(); }
  void visit(const std::string& prefix, const TensorVisitor& f);
  void visit(const std::string& prefix, const ConstTensorVisitor& f) const;
};

BackboneParams make_backbone(const BackboneConfig& cfg, Rng& rng);

struct BackboneTrace {
  std::vector<Tensor> inputs;   // input of each block
  std::vector<Tensor> outputs;  // post-ReLU output of each block
  Tensor pooled;
};

// image: [3, H, W] -> [feature_dim]
Tensor extract_features(const BackboneParams& params, const Tensor& image, BackboneTrace* trace = nullptr);
// Returns dL/dimage when want_input_grad, otherwise an empty tensor.
Tensor extract_features_backward(const BackboneParams& params, const BackboneTrace& trace, const Tensor& d_feature,
                                 BackboneParams& grad, bool want_input_grad);

// Softmax over training identities; entries floored at kProbabilityFloor.
struct IdentityDistribution {
  std::vector<double> probs;

  std::size_t classes() const noexcept { return probs.size(); }
  static IdentityDistribution from_logits(std::span<const double> logits);
};

using ClassifierHead = nn::LinearParams;

IdentityDistribution classify(const ClassifierHead& head, const Tensor& feature);

// -(1/B) sum_b log p_b(label_b)
double id_loss(std::span<const IdentityDistribution> probs, std::span<const std::size_t> labels);

// ID loss of [B, C] logits; writes dL/dlogits scaled by `scale` into d_logits.
double id_loss_with_grad(const Tensor& logits, std::span<const std::size_t> labels, double scale, Tensor& d_logits);

struct BranchParams {
  BackboneParams backbone;
  ClassifierHead head;

  void visit(const std::string& prefix, const TensorVisitor& f);
  void visit(const std::string& prefix, const ConstTensorVisitor& f) const;
};

BranchParams make_branch(const BackboneConfig& cfg, std::size_t classes, Rng& rng);

struct BranchOutput {
  Tensor feature;
  Tensor logits;
  IdentityDistribution probs;
};

BranchOutput mbranch_forward(const BranchParams& branch, const Image& image);

struct IebOutput {
  CurveParameterMaps maps;
  Image enhanced;
  BranchOutput branch;
};

IebOutput iebranch_forward(const EnhancerParams& enhancer, const BranchParams& branch, const Image& image);

// Per-image branch losses. L_MB = ID loss; L_IEB = ID loss + L_DCE.
double mbranch_loss(const BranchParams& branch, std::span<const Image> images, std::span<const std::size_t> labels);

struct IebLoss {
  double id = 0.0;
  DceLoss dce;
  double total() const { return id + dce.total; }
};
IebLoss iebranch_loss(const EnhancerParams& enhancer, const BranchParams& branch, std::span<const Image> images,
                      std::span<const std::size_t> labels, const EnhancementLossConfig& cfg);

}  // namespace idf
