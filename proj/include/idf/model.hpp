#pragma once

// The full two-branch network with the distillation module, the joint
// objective and its gradient.

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "idf/branches.hpp"
#include "idf/curve.hpp"
#include "idf/distillation.hpp"
#include "idf/enhancement_losses.hpp"

namespace idf {

// Which components train and contribute to the retrieval embedding.
enum class Variant {
  MbOnly,    // master branch alone
  MbIeb,     // both branches, features concatenated
  MbIebIdm,  // plus the fusion module, no distillation term
  Full,      // plus distillation from the fusion classifier
};

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view text);

struct ModelConfig {
  std::size_t input_height = kDefaultHeight;
  std::size_t input_width = kDefaultWidth;
  EnhancerConfig enhancer;
  BackboneConfig backbone;
  std::size_t classes = 2;
  std::size_t code_dim = 0;           // 0: feature_dim
  std::size_t fusion_hidden = 0;      // 0: 2 * feature_dim
  std::size_t classifier_hidden = 0;  // 0: code_dim
  double dropout = 0.5;
  Variant variant = Variant::Full;

  bool uses_iebranch() const { return variant != Variant::MbOnly; }
  bool uses_idm() const { return variant == Variant::MbIebIdm || variant == Variant::Full; }
  bool uses_distillation() const { return variant == Variant::Full; }
  FusionConfig fusion() const;
  void validate() const;

  std::map<std::string, std::string> to_map() const;
  // Keys are the "model." entries of a run configuration, without the prefix.
  static ModelConfig from_map(const std::map<std::string, std::string>& values);
};

inline constexpr const char* kGroupEnhancer = "enhancer";
inline constexpr const char* kGroupMbranch = "mbranch";
inline constexpr const char* kGroupIebranch = "iebranch";
inline constexpr const char* kGroupIdm = "idm";

struct ModelParams {
  EnhancerParams enhancer;
  BranchParams mbranch;
  BranchParams iebranch;
  FusionParams idm;

  // Names are "<group>/<tensor>".
  void visit(const TensorVisitor& f);
  void visit(const ConstTensorVisitor& f) const;
  void visit_group(std::string_view group, const TensorVisitor& f);
  void visit_group(std::string_view group, const ConstTensorVisitor& f) const;

  ModelParams zeros_like() const;
  void set_zero();
};

struct ModelBuffers {
  nn::BatchNormStats idm_bn;

  void visit(const TensorVisitor& f);
  void visit(const ConstTensorVisitor& f) const;
};

// Trainable groups for a variant, in canonical order.
std::vector<std::string> active_groups(Variant v);

struct LossBreakdown {
  double l_id_mb = 0.0;
  double l_id_ieb = 0.0;
  double l_id_idm = 0.0;
  double l_dce = 0.0;  // weighted sum of the four terms below
  double l_spa = 0.0;
  double l_exp = 0.0;
  double l_tva = 0.0;
  double l_col = 0.0;
  double l_rec = 0.0;  // batch mean, unweighted
  double l_ifd = 0.0;  // batch mean, unweighted
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double total = 0.0;

  // l_id_mb + l_id_ieb + l_dce + l_id_idm + lambda1 * l_rec + lambda2 * l_ifd
  double recomposed() const;
};

struct LossSettings {
  EnhancementLossConfig enhancement;
  DistillationConfig distillation;
};

class IdfModel {
 public:
  IdfModel() = default;
  IdfModel(const ModelConfig& cfg, std::uint64_t seed);
  IdfModel(const ModelConfig& cfg, ModelParams params, ModelBuffers buffers);

  const ModelConfig& config() const noexcept { return config_; }
  ModelParams& params() noexcept { return params_; }
  const ModelParams& params() const noexcept { return params_; }
  ModelBuffers& buffers() noexcept { return buffers_; }
  const ModelBuffers& buffers() const noexcept { return buffers_; }
  bool initialized() const noexcept { return params_.mbranch.backbone.initialized(); }

  // Joint objective over a batch in training mode. When grads is non-null the
  // gradient of `total` is added into it. Dropout masks are drawn from rng.
  LossBreakdown total_loss(std::span<const Image> images, std::span<const std::size_t> labels,
                           const LossSettings& settings, Rng& rng, ModelParams* grads);

  // Evaluation-mode retrieval embedding: f_mb, then f_ieb, then z_cf, as the
  // variant provides them.
  std::vector<double> assemble_features(const Image& image) const;
  std::size_t embedding_dim() const;

  // Evaluation-mode pieces, exposed for inspection and tests.
  Tensor mbranch_features(const Image& image) const;
  Tensor iebranch_features(const Image& image) const;
  FusionState fusion_state(const Image& image) const;
  Image enhance_image(const Image& image) const;

 private:
  void check_input(const Image& image) const;

  ModelConfig config_;
  ModelParams params_;
  ModelBuffers buffers_;
};

}  // namespace idf
