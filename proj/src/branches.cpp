#include "idf/branches.hpp"

#include <algorithm>
#include <cmath>

#include "idf/error.hpp"

namespace idf {

void BackboneParams::visit(const std::string& prefix, const TensorVisitor& f) {
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(prefix + "block" + std::to_string(i + 1), f);
  projection.visit(prefix + "projection", f);
}

void BackboneParams::visit(const std::string& prefix, const ConstTensorVisitor& f) const {
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(prefix + "block" + std::to_string(i + 1), f);
  projection.visit(prefix + "projection", f);
}

BackboneParams make_backbone(const BackboneConfig& cfg, Rng& rng) {
  require(!cfg.widths.empty(), ErrorKind::Config, "backbone needs at least one block");
  require(cfg.feature_dim >= 1, ErrorKind::Config, "feature dimension must be positive");
  BackboneParams p;
  std::size_t in = 3;
  for (std::size_t w : cfg.widths) {
    require(w >= 1, ErrorKind::Config, "backbone widths must be positive");
    p.blocks.push_back(nn::make_conv(in, w, std::sqrt(2.0 / static_cast<double>(9 * in)), rng));
    in = w;
  }
  p.projection = nn::make_linear(in, cfg.feature_dim, std::sqrt(1.0 / static_cast<double>(in)), rng);
  return p;
}

Tensor extract_features(const BackboneParams& params, const Tensor& image, BackboneTrace* trace) {
  require(params.initialized(), ErrorKind::State, "backbone parameters are not initialized");
  require(image.rank() == 3 && image.dim(0) == 3, ErrorKind::Dimension,
          "backbone input must be [3, H, W], got " + shape_string(image.shape()));
  if (trace) {
    trace->inputs.clear();
    trace->outputs.clear();
  }
  Tensor x = image;
  for (const auto& block : params.blocks) {
    Tensor y = nn::conv2d_forward(block, x, 2);
    nn::relu_inplace(y);
    if (trace) {
      trace->inputs.push_back(std::move(x));
      trace->outputs.push_back(y);
    }
    x = std::move(y);
  }
  Tensor pooled = nn::global_average_pool(x);
  Tensor feature = nn::linear_forward(params.projection, pooled);
  if (trace) trace->pooled = std::move(pooled);
  return feature;
}

Tensor extract_features_backward(const BackboneParams& params, const BackboneTrace& trace, const Tensor& d_feature,
                                 BackboneParams& grad, bool want_input_grad) {
  require(trace.outputs.size() == params.blocks.size(), ErrorKind::State, "backbone trace does not match parameters");
  Tensor d = nn::linear_backward(params.projection, trace.pooled, d_feature, grad.projection);
  d = nn::global_average_pool_backward(d, trace.outputs.back().shape());
  for (std::size_t i = params.blocks.size(); i-- > 0;) {
    nn::relu_backward_inplace(trace.outputs[i], d);
    d = nn::conv2d_backward(params.blocks[i], trace.inputs[i], d, 2, grad.blocks[i], i > 0 || want_input_grad);
  }
  return want_input_grad ? d : Tensor();
}

IdentityDistribution IdentityDistribution::from_logits(std::span<const double> logits) {
  require(!logits.empty(), ErrorKind::Dimension, "identity distribution over zero classes");
  Tensor z(Shape{logits.size()}, std::vector<double>(logits.begin(), logits.end()));
  const Tensor p = nn::softmax(z);
  IdentityDistribution d;
  d.probs.assign(p.values().begin(), p.values().end());
  for (double& v : d.probs) v = std::max(v, kProbabilityFloor);
  return d;
}

IdentityDistribution classify(const ClassifierHead& head, const Tensor& feature) {
  require(feature.rank() == 1, ErrorKind::Dimension, "classifier input must be a feature vector");
  const Tensor logits = nn::linear_forward(head, feature);
  return IdentityDistribution::from_logits(logits.values());
}

double id_loss(std::span<const IdentityDistribution> probs, std::span<const std::size_t> labels) {
  require(probs.size() == labels.size(), ErrorKind::Dimension, "ID loss: batch sizes differ");
  require(!probs.empty(), ErrorKind::Parameter, "ID loss of an empty batch");
  double total = 0.0;
  for (std::size_t b = 0; b < probs.size(); ++b) {
    require(labels[b] < probs[b].classes(), ErrorKind::Parameter,
            "label " + std::to_string(labels[b]) + " out of range for " + std::to_string(probs[b].classes()) + " classes");
    total -= std::log(std::max(probs[b].probs[labels[b]], kProbabilityFloor));
  }
  return total / static_cast<double>(probs.size());
}

double id_loss_with_grad(const Tensor& logits, std::span<const std::size_t> labels, double scale, Tensor& d_logits) {
  require(logits.rank() == 2 && logits.dim(0) == labels.size(), ErrorKind::Dimension, "ID loss: logits/labels mismatch");
  require_same_shape(logits, d_logits, "ID loss gradient");
  const std::size_t batch = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  require(batch > 0, ErrorKind::Parameter, "ID loss of an empty batch");
  const Tensor p = nn::softmax(logits);
  const double inv_b = 1.0 / static_cast<double>(batch);
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t y = labels[b];
    require(y < classes, ErrorKind::Parameter, "label " + std::to_string(y) + " out of range");
    const double py = p[b * classes + y];
    total -= std::log(std::max(py, kProbabilityFloor));
    if (py < kProbabilityFloor) continue;  // clamped: constant in the logits
    for (std::size_t c = 0; c < classes; ++c)
      d_logits[b * classes + c] += scale * inv_b * (p[b * classes + c] - (c == y ? 1.0 : 0.0));
  }
  return total * inv_b;
}

void BranchParams::visit(const std::string& prefix, const TensorVisitor& f) {
  backbone.visit(prefix + "backbone.", f);
  head.visit(prefix + "head", f);
}

void BranchParams::visit(const std::string& prefix, const ConstTensorVisitor& f) const {
  backbone.visit(prefix + "backbone.", f);
  head.visit(prefix + "head", f);
}

BranchParams make_branch(const BackboneConfig& cfg, std::size_t classes, Rng& rng) {
  require(classes >= 2, ErrorKind::Config, "classifier needs at least 2 identities");
  BranchParams b;
  b.backbone = make_backbone(cfg, rng);
  b.head = nn::make_linear(cfg.feature_dim, classes, 0.01, rng);
  return b;
}

BranchOutput mbranch_forward(const BranchParams& branch, const Image& image) {
  BranchOutput out;
  out.feature = extract_features(branch.backbone, image.tensor());
  out.logits = nn::linear_forward(branch.head, out.feature);
  out.probs = IdentityDistribution::from_logits(out.logits.values());
  return out;
}

IebOutput iebranch_forward(const EnhancerParams& enhancer, const BranchParams& branch, const Image& image) {
  IebOutput out;
  out.maps = estimate_curves(enhancer, image);
  out.enhanced = enhance(image, out.maps);
  out.branch = mbranch_forward(branch, out.enhanced);
  return out;
}

double mbranch_loss(const BranchParams& branch, std::span<const Image> images, std::span<const std::size_t> labels) {
  std::vector<IdentityDistribution> probs;
  for (const auto& img : images) probs.push_back(mbranch_forward(branch, img).probs);
  return id_loss(probs, labels);
}

IebLoss iebranch_loss(const EnhancerParams& enhancer, const BranchParams& branch, std::span<const Image> images,
                      std::span<const std::size_t> labels, const EnhancementLossConfig& cfg) {
  require(!images.empty(), ErrorKind::Parameter, "branch loss of an empty batch");
  std::vector<IdentityDistribution> probs;
  IebLoss loss;
  const double inv_b = 1.0 / static_cast<double>(images.size());
  for (const auto& img : images) {
    IebOutput out = iebranch_forward(enhancer, branch, img);
    const DceLoss d = loss_dce(img, out.enhanced, out.maps, cfg);
    loss.dce.spa += inv_b * d.spa;
    loss.dce.exp += inv_b * d.exp;
    loss.dce.tva += inv_b * d.tva;
    loss.dce.col += inv_b * d.col;
    loss.dce.total += inv_b * d.total;
    probs.push_back(std::move(out.branch.probs));
  }
  loss.id = id_loss(probs, labels);
  return loss;
}

}  // namespace idf
