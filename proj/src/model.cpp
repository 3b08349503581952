#include "idf/model.hpp"

#include <charconv>
#include <sstream>

#include "idf/error.hpp"
#include "idf/simd/kernels.hpp"

namespace idf {

namespace {

// Per-sample trace memory above which the backward pass recomputes the
// forward activations instead of holding a whole batch of them.
constexpr std::size_t kTraceBudgetBytes = std::size_t{512} << 20;

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size()) fail(ErrorKind::Config, key + ": not a number: '" + text + "'");
  return v;
}

std::size_t parse_size(const std::string& key, const std::string& text) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size())
    fail(ErrorKind::Config, key + ": not a non-negative integer: '" + text + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  fail(ErrorKind::Config, key + ": not a boolean: '" + text + "'");
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_size(key, item));
  if (out.empty()) fail(ErrorKind::Config, key + ": empty list");
  return out;
}

std::span<const double> row(const Tensor& t, std::size_t r) {
  const std::size_t cols = t.dim(1);
  return {t.data() + r * cols, cols};
}

Tensor row_tensor(const Tensor& t, std::size_t r) {
  auto s = row(t, r);
  return Tensor(Shape{s.size()}, std::vector<double>(s.begin(), s.end()));
}

void set_row(Tensor& t, std::size_t r, const Tensor& v) {
  std::copy(v.values().begin(), v.values().end(), t.data() + r * t.dim(1));
}

}  // namespace

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::MbOnly: return "mb";
    case Variant::MbIeb: return "mb_ieb";
    case Variant::MbIebIdm: return "mb_ieb_idm";
    case Variant::Full: return "full";
  }
  return "unknown";
}

Variant parse_variant(std::string_view text) {
  for (Variant v : {Variant::MbOnly, Variant::MbIeb, Variant::MbIebIdm, Variant::Full})
    if (text == to_string(v)) return v;
  fail(ErrorKind::Config, "unknown model variant '" + std::string(text) + "' (mb, mb_ieb, mb_ieb_idm, full)");
}

FusionConfig ModelConfig::fusion() const {
  FusionConfig f;
  f.feature_dim = backbone.feature_dim;
  f.hidden = fusion_hidden;
  f.code_dim = code_dim;
  f.classifier_hidden = classifier_hidden;
  f.classes = classes;
  f.dropout = dropout;
  return f.resolved();
}

void ModelConfig::validate() const {
  require(input_height >= 1 && input_width >= 1, ErrorKind::Config, "input size must be positive");
  require(classes >= 2, ErrorKind::Config, "training needs at least 2 identities");
  require(enhancer.width >= 1 && enhancer.iterations >= 1, ErrorKind::Config, "invalid enhancer configuration");
  require(!backbone.widths.empty() && backbone.feature_dim >= 1, ErrorKind::Config, "invalid backbone configuration");
  const FusionConfig f = fusion();
  require(f.code_dim < 2 * f.feature_dim, ErrorKind::Config,
          "fusion bottleneck (" + std::to_string(f.code_dim) + ") must be smaller than 2 x feature_dim (" +
              std::to_string(2 * f.feature_dim) + ")");
  require(dropout >= 0.0 && dropout < 1.0, ErrorKind::Config, "dropout rate must be in [0, 1)");
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  return {
      {"height", std::to_string(input_height)},
      {"width", std::to_string(input_width)},
      {"enhancer_width", std::to_string(enhancer.width)},
      {"curve_iterations", std::to_string(enhancer.iterations)},
      {"enhancer_init_std", format_double(enhancer.init_std)},
      {"enhancer_zero_final", enhancer.zero_final_layer ? "true" : "false"},
      {"backbone_widths", join_sizes(backbone.widths)},
      {"feature_dim", std::to_string(backbone.feature_dim)},
      {"classes", std::to_string(classes)},
      {"code_dim", std::to_string(code_dim)},
      {"fusion_hidden", std::to_string(fusion_hidden)},
      {"classifier_hidden", std::to_string(classifier_hidden)},
      {"dropout", format_double(dropout)},
      {"variant", std::string(to_string(variant))},
  };
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& values) {
  ModelConfig c;
  for (const auto& [key, v] : values) {
    const std::string k = "model." + key;
    if (key == "height") c.input_height = parse_size(k, v);
    else if (key == "width") c.input_width = parse_size(k, v);
    else if (key == "enhancer_width") c.enhancer.width = parse_size(k, v);
    else if (key == "curve_iterations") c.enhancer.iterations = parse_size(k, v);
    else if (key == "enhancer_init_std") c.enhancer.init_std = parse_double(k, v);
    else if (key == "enhancer_zero_final") c.enhancer.zero_final_layer = parse_bool(k, v);
    else if (key == "backbone_widths") c.backbone.widths = parse_sizes(k, v);
    else if (key == "feature_dim") c.backbone.feature_dim = parse_size(k, v);
    else if (key == "classes") c.classes = parse_size(k, v);
    else if (key == "code_dim") c.code_dim = parse_size(k, v);
    else if (key == "fusion_hidden") c.fusion_hidden = parse_size(k, v);
    else if (key == "classifier_hidden") c.classifier_hidden = parse_size(k, v);
    else if (key == "dropout") c.dropout = parse_double(k, v);
    else if (key == "variant") c.variant = parse_variant(v);
    else fail(ErrorKind::Config, "unknown key '" + k + "'");
  }
  return c;
}

void ModelParams::visit(const TensorVisitor& f) {
  for (const char* g : {kGroupEnhancer, kGroupMbranch, kGroupIebranch, kGroupIdm}) visit_group(g, f);
}

void ModelParams::visit(const ConstTensorVisitor& f) const {
  for (const char* g : {kGroupEnhancer, kGroupMbranch, kGroupIebranch, kGroupIdm}) visit_group(g, f);
}

void ModelParams::visit_group(std::string_view group, const TensorVisitor& f) {
  const std::string prefix = std::string(group) + "/";
  if (group == kGroupEnhancer) enhancer.visit(prefix, f);
  else if (group == kGroupMbranch) mbranch.visit(prefix, f);
  else if (group == kGroupIebranch) iebranch.visit(prefix, f);
  else if (group == kGroupIdm) idm.visit(prefix, f);
  else fail(ErrorKind::Parameter, "unknown parameter group '" + std::string(group) + "'");
}

void ModelParams::visit_group(std::string_view group, const ConstTensorVisitor& f) const {
  const std::string prefix = std::string(group) + "/";
  if (group == kGroupEnhancer) enhancer.visit(prefix, f);
  else if (group == kGroupMbranch) mbranch.visit(prefix, f);
  else if (group == kGroupIebranch) iebranch.visit(prefix, f);
  else if (group == kGroupIdm) idm.visit(prefix, f);
  else fail(ErrorKind::Parameter, "unknown parameter group '" + std::string(group) + "'");
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z = *this;
  z.set_zero();
  return z;
}

void ModelParams::set_zero() {
  visit(TensorVisitor([](const std::string&, Tensor& t) { t.fill(0.0); }));
}

void ModelBuffers::visit(const TensorVisitor& f) { idm_bn.visit("buffers/idm.bn", f); }
void ModelBuffers::visit(const ConstTensorVisitor& f) const { idm_bn.visit("buffers/idm.bn", f); }

std::vector<std::string> active_groups(Variant v) {
  switch (v) {
    case Variant::MbOnly: return {kGroupMbranch};
    case Variant::MbIeb: return {kGroupEnhancer, kGroupMbranch, kGroupIebranch};
    case Variant::MbIebIdm:
    case Variant::Full: return {kGroupEnhancer, kGroupMbranch, kGroupIebranch, kGroupIdm};
  }
  return {};
}

double LossBreakdown::recomposed() const {
  return l_id_mb + l_id_ieb + l_dce + l_id_idm + lambda1 * l_rec + lambda2 * l_ifd;
}

IdfModel::IdfModel(const ModelConfig& cfg, std::uint64_t seed) : config_(cfg) {
  config_.validate();
  // Each group draws from its own stream so that adding or resizing one
  // component leaves the initial weights of the others unchanged.
  Rng enhancer_rng(seed_mix(seed, 0xe0));
  Rng mb_rng(seed_mix(seed, 0xe1));
  Rng ieb_rng(seed_mix(seed, 0xe2));
  Rng idm_rng(seed_mix(seed, 0xe3));
  params_.enhancer = make_enhancer(cfg.enhancer, enhancer_rng);
  params_.mbranch = make_branch(cfg.backbone, cfg.classes, mb_rng);
  params_.iebranch = make_branch(cfg.backbone, cfg.classes, ieb_rng);
  const FusionConfig f = cfg.fusion();
  params_.idm = make_fusion(f, idm_rng);
  buffers_.idm_bn = nn::make_batchnorm_stats(f.classifier_hidden);
}

IdfModel::IdfModel(const ModelConfig& cfg, ModelParams params, ModelBuffers buffers)
    : config_(cfg), params_(std::move(params)), buffers_(std::move(buffers)) {
  config_.validate();
}

void IdfModel::check_input(const Image& image) const {
  require(initialized(), ErrorKind::State, "model parameters are not initialized");
  require(image.height() == config_.input_height && image.width() == config_.input_width, ErrorKind::Dimension,
          "model expects " + std::to_string(config_.input_height) + "x" + std::to_string(config_.input_width) +
              " images, got " + std::to_string(image.height()) + "x" + std::to_string(image.width()));
}

Tensor IdfModel::mbranch_features(const Image& image) const {
  check_input(image);
  return extract_features(params_.mbranch.backbone, image.tensor());
}

Image IdfModel::enhance_image(const Image& image) const {
  require(params_.enhancer.initialized(), ErrorKind::State, "enhancer parameters are not initialized");
  return enhance(image, estimate_curves(params_.enhancer, image));
}

Tensor IdfModel::iebranch_features(const Image& image) const {
  check_input(image);
  return extract_features(params_.iebranch.backbone, enhance_image(image).tensor());
}

FusionState IdfModel::fusion_state(const Image& image) const {
  return fuse(mbranch_features(image), iebranch_features(image), params_.idm);
}

std::size_t IdfModel::embedding_dim() const {
  const std::size_t d = config_.backbone.feature_dim;
  if (!config_.uses_iebranch()) return d;
  if (!config_.uses_idm()) return 2 * d;
  return 2 * d + config_.fusion().code_dim;
}

std::vector<double> IdfModel::assemble_features(const Image& image) const {
  const Tensor f_mb = mbranch_features(image);
  std::vector<double> out(f_mb.values().begin(), f_mb.values().end());
  if (!config_.uses_iebranch()) return out;
  const Tensor f_ieb = iebranch_features(image);
  out.insert(out.end(), f_ieb.values().begin(), f_ieb.values().end());
  if (!config_.uses_idm()) return out;
  const FusionState s = fuse(f_mb, f_ieb, params_.idm);
  out.insert(out.end(), s.z_cf.values().begin(), s.z_cf.values().end());
  return out;
}

LossBreakdown IdfModel::total_loss(std::span<const Image> images, std::span<const std::size_t> labels,
                                   const LossSettings& settings, Rng& rng, ModelParams* grads) {
  require(!images.empty(), ErrorKind::Parameter, "total loss of an empty batch");
  require(images.size() == labels.size(), ErrorKind::Dimension, "images and labels differ in count");
  settings.enhancement.validate();
  settings.distillation.validate();
  for (const auto& img : images) check_input(img);
  for (std::size_t y : labels)
    require(y < config_.classes, ErrorKind::Parameter, "label " + std::to_string(y) + " out of range");

  const std::size_t batch = images.size();
  const std::size_t classes = config_.classes;
  const std::size_t dim = config_.backbone.feature_dim;
  const bool use_ieb = config_.uses_iebranch();
  const bool use_idm = config_.uses_idm();
  const bool use_ifd = config_.uses_distillation();
  require(!use_idm || batch >= 2, ErrorKind::Parameter, "the fusion module needs batches of at least 2");
  const bool backward = grads != nullptr;

  const std::size_t pixels = config_.input_height * config_.input_width;
  const std::size_t per_sample_bytes =
      8 * pixels *
      (3 * (config_.enhancer.iterations + 2) + 6 * config_.enhancer.width + 3 * config_.enhancer.iterations +
       config_.backbone.widths.front() / 2);
  const bool keep_traces = backward && per_sample_bytes * batch <= kTraceBudgetBytes;

  struct Sample {
    BackboneTrace mb_trace, ieb_trace;
    EnhancerTrace enhancer_trace;
    EnhanceTrace stages;
    CurveParameterMaps maps;
    Image enhanced;
  };
  std::vector<Sample> samples(batch);
  Tensor feat_mb(Shape{batch, dim}), feat_ieb(Shape{batch, dim});
  Tensor logits_mb(Shape{batch, classes}), logits_ieb(Shape{batch, classes});

  LossBreakdown loss;
  const double inv_b = 1.0 / static_cast<double>(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    Sample& s = samples[b];
    const Tensor f = extract_features(params_.mbranch.backbone, images[b].tensor(), keep_traces ? &s.mb_trace : nullptr);
    set_row(feat_mb, b, f);
    set_row(logits_mb, b, nn::linear_forward(params_.mbranch.head, f));
    if (!use_ieb) continue;
    s.maps = estimate_curves(params_.enhancer, images[b], keep_traces ? &s.enhancer_trace : nullptr);
    s.enhanced = enhance(images[b], s.maps, keep_traces ? &s.stages : nullptr);
    const Tensor g = extract_features(params_.iebranch.backbone, s.enhanced.tensor(), keep_traces ? &s.ieb_trace : nullptr);
    set_row(feat_ieb, b, g);
    set_row(logits_ieb, b, nn::linear_forward(params_.iebranch.head, g));
    const DceLoss d = loss_dce(images[b], s.enhanced, s.maps, settings.enhancement);
    loss.l_spa += inv_b * d.spa;
    loss.l_exp += inv_b * d.exp;
    loss.l_tva += inv_b * d.tva;
    loss.l_col += inv_b * d.col;
    loss.l_dce += inv_b * d.total;
  }

  Tensor d_logits_mb(logits_mb.shape()), d_logits_ieb(logits_ieb.shape());
  Tensor d_feat_mb(feat_mb.shape()), d_feat_ieb(feat_ieb.shape());
  loss.l_id_mb = id_loss_with_grad(logits_mb, labels, 1.0, d_logits_mb);
  if (use_ieb) loss.l_id_ieb = id_loss_with_grad(logits_ieb, labels, 1.0, d_logits_ieb);

  if (use_idm) {
    const double lambda1 = settings.distillation.lambda1;
    const double lambda2 = use_ifd ? settings.distillation.lambda2 : 0.0;
    loss.lambda1 = lambda1;
    loss.lambda2 = lambda2;
    Tensor z_in(Shape{batch, 2 * dim});
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(feat_mb.data() + b * dim, dim, z_in.data() + b * 2 * dim);
      std::copy_n(feat_ieb.data() + b * dim, dim, z_in.data() + b * 2 * dim + dim);
    }
    FusionBatchTrace trace;
    fusion_forward_train(params_.idm, buffers_.idm_bn, z_in, config_.dropout, rng, trace);
    Tensor d_logits_idm(trace.logits.shape());
    loss.l_id_idm = id_loss_with_grad(trace.logits, labels, 1.0, d_logits_idm);

    Tensor d_z_out(z_in.shape()), d_z_in(z_in.shape());
    for (std::size_t i = 0; i < z_in.size(); ++i) {
      const double diff = trace.z_out[i] - z_in[i];
      loss.l_rec += inv_b * diff * diff;
      d_z_out[i] = 2.0 * lambda1 * inv_b * diff;
      d_z_in[i] = -d_z_out[i];
    }
    if (use_ifd) {
      for (std::size_t b = 0; b < batch; ++b) {
        const IdentityDistribution teacher = IdentityDistribution::from_logits(row(trace.logits, b));
        const std::vector<IdentityDistribution> students{IdentityDistribution::from_logits(row(logits_mb, b)),
                                                         IdentityDistribution::from_logits(row(logits_ieb, b))};
        loss.l_ifd += inv_b * ifd_loss(teacher, students);
        if (backward) {
          ifd_student_grad(teacher, row(logits_mb, b), lambda2 * inv_b,
                           {d_logits_mb.data() + b * classes, classes});
          ifd_student_grad(teacher, row(logits_ieb, b), lambda2 * inv_b,
                           {d_logits_ieb.data() + b * classes, classes});
        }
      }
    }
    if (backward) {
      const Tensor d_zin = fusion_backward(params_.idm, trace, d_logits_idm, d_z_out, d_z_in, grads->idm);
      for (std::size_t b = 0; b < batch; ++b) {
        std::copy_n(d_zin.data() + b * 2 * dim, dim, d_feat_mb.data() + b * dim);
        std::copy_n(d_zin.data() + b * 2 * dim + dim, dim, d_feat_ieb.data() + b * dim);
      }
    }
  }
  loss.total = loss.recomposed();
  if (!backward) return loss;

  d_feat_mb += nn::linear_backward(params_.mbranch.head, feat_mb, d_logits_mb, grads->mbranch.head);
  if (use_ieb) d_feat_ieb += nn::linear_backward(params_.iebranch.head, feat_ieb, d_logits_ieb, grads->iebranch.head);

  for (std::size_t b = 0; b < batch; ++b) {
    Sample& s = samples[b];
    if (!keep_traces) extract_features(params_.mbranch.backbone, images[b].tensor(), &s.mb_trace);
    extract_features_backward(params_.mbranch.backbone, s.mb_trace, row_tensor(d_feat_mb, b), grads->mbranch.backbone,
                              false);
    if (use_ieb) {
      if (!keep_traces) {
        s.maps = estimate_curves(params_.enhancer, images[b], &s.enhancer_trace);
        s.enhanced = enhance(images[b], s.maps, &s.stages);
        extract_features(params_.iebranch.backbone, s.enhanced.tensor(), &s.ieb_trace);
      }
      Tensor d_enhanced = extract_features_backward(params_.iebranch.backbone, s.ieb_trace, row_tensor(d_feat_ieb, b),
                                                    grads->iebranch.backbone, true);
      CurveParameterMaps d_maps =
          CurveParameterMaps::zeros(s.maps.iterations(), config_.input_height, config_.input_width);
      loss_dce_grad(images[b], s.enhanced, s.maps, settings.enhancement, inv_b, d_enhanced, d_maps);
      enhance_backward(s.stages, s.maps, d_enhanced, d_maps);
      estimate_curves_backward(params_.enhancer, s.enhancer_trace, d_maps, grads->enhancer);
    }
    s = Sample{};
  }
  return loss;
}

}  // namespace idf
