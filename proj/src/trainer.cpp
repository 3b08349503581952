#include "idf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "idf/error.hpp"

namespace idf {

namespace {

using NamedTensors = std::vector<std::pair<std::string, Tensor*>>;
using ConstNamedTensors = std::vector<std::pair<std::string, const Tensor*>>;

constexpr char kMagic[8] = {'I', 'D', 'F', 'C', 'K', 'P', 'T', '\n'};
constexpr const char* kOptimizerPrefix = "optimizer/";

NamedTensors collect(ModelParams& p, std::string_view group) {
  NamedTensors out;
  p.visit_group(group, TensorVisitor([&](const std::string& n, Tensor& t) { out.emplace_back(n, &t); }));
  return out;
}

ConstNamedTensors collect(const ModelParams& p, std::string_view group) {
  ConstNamedTensors out;
  p.visit_group(group, ConstTensorVisitor([&](const std::string& n, const Tensor& t) { out.emplace_back(n, &t); }));
  return out;
}

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    require(static_cast<bool>(out_), ErrorKind::Io, "cannot write checkpoint " + path.string());
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void tensor(const std::string& name, const Tensor& t) {
    str(name);
    u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) u64(d);
    bytes(t.data(), t.size() * sizeof(double));
  }
  void finish() {
    out_.flush();
    require(static_cast<bool>(out_), ErrorKind::Io, "failed writing checkpoint " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path) {
    std::error_code ec;
    require(std::filesystem::is_regular_file(path, ec), ErrorKind::State, "no checkpoint at " + path.string());
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot read checkpoint " + path.string());
    data_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  void bytes(void* p, std::size_t n) {
    require(n <= data_.size() - pos_, ErrorKind::Format, "truncated checkpoint " + path_.string());
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str() {
    const std::uint64_t n = u64();
    require(n <= data_.size() - pos_, ErrorKind::Format, "truncated checkpoint " + path_.string());
    std::string s(data_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::pair<std::string, Tensor> tensor() {
    std::string name = str();
    const std::uint32_t rank = u32();
    require(rank <= 8, ErrorKind::Format, "implausible tensor rank in checkpoint");
    Shape shape(rank);
    std::size_t volume = 1;
    for (auto& d : shape) {
      d = u64();
      require(d > 0 && volume <= (data_.size() - pos_) / d, ErrorKind::Format, "implausible tensor shape in checkpoint");
      volume *= d;
    }
    std::vector<double> values(volume);
    bytes(values.data(), volume * sizeof(double));
    return {std::move(name), Tensor(shape, std::move(values))};
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::filesystem::path path_;
  std::vector<char> data_;
  std::size_t pos_ = 0;
};

std::string config_text(const ModelConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : cfg.to_map()) out += k + "=" + v + "\n";
  return out;
}

ModelConfig parse_config_text(const std::string& text) {
  std::map<std::string, std::string> values;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorKind::Format, "malformed model configuration in checkpoint");
    values[line.substr(0, eq)] = line.substr(eq + 1);
  }
  try {
    return ModelConfig::from_map(values);
  } catch (const Error& e) {
    fail(ErrorKind::Format, std::string("checkpoint model configuration: ") + e.what());
  }
}

double finite_or_throw(double v, const std::string& what) {
  require(std::isfinite(v), ErrorKind::Numeric, what + " is not finite");
  return v;
}

}  // namespace

void TrainConfig::validate() const {
  // Zero is accepted for every rate: a null update is a legitimate control run.
  require(std::isfinite(learning_rate) && learning_rate >= 0.0, ErrorKind::Config, "learning rate must be >= 0");
  require(momentum >= 0.0 && momentum < 1.0, ErrorKind::Config, "momentum must be in [0, 1)");
  require(std::isfinite(weight_decay) && weight_decay >= 0.0, ErrorKind::Config, "weight decay must be >= 0");
  require(batch_size >= 2, ErrorKind::Config, "batch size must be at least 2");
  losses.enhancement.validate();
  losses.distillation.validate();
}

void sgd_update(Tensor& theta, const Tensor& grad, Tensor& velocity, double lr, double momentum, double weight_decay) {
  require_same_shape(theta, grad, "sgd gradient");
  require_same_shape(theta, velocity, "sgd velocity");
  double* t = theta.data();
  const double* g = grad.data();
  double* v = velocity.data();
  for (std::size_t i = 0; i < theta.size(); ++i) {
    v[i] = momentum * v[i] + (g[i] + weight_decay * t[i]);
    t[i] -= lr * v[i];
  }
}

void Sgd::step(ModelParams& params, const ModelParams& grads, std::span<const std::string> groups,
               const TrainConfig& cfg) {
  for (const auto& group : groups) {
    const NamedTensors p = collect(params, group);
    const ConstNamedTensors g = collect(grads, group);
    require(p.size() == g.size(), ErrorKind::Dimension, "gradient layout differs from parameters in " + group);
    for (std::size_t i = 0; i < p.size(); ++i) {
      auto [it, inserted] = velocity_.try_emplace(p[i].first, p[i].second->shape(), 0.0);
      sgd_update(*p[i].second, *g[i].second, it->second, cfg.learning_rate, cfg.momentum, cfg.weight_decay);
    }
  }
}

Checkpoint Checkpoint::capture(const IdfModel& model, const Sgd& optimizer, std::size_t epoch, std::uint64_t seed) {
  require(model.initialized(), ErrorKind::State, "cannot checkpoint an uninitialized model");
  return Checkpoint{model.config(), model.params(), model.buffers(), optimizer.velocity(), epoch, seed};
}

IdfModel Checkpoint::restore() const { return IdfModel(model, params, buffers); }

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  Writer w(path);
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.str(config_text(ckpt.model));
  w.u64(ckpt.epoch);
  w.u64(ckpt.seed);
  std::vector<std::pair<std::string, const Tensor*>> all;
  const auto add = ConstTensorVisitor([&](const std::string& n, const Tensor& t) { all.emplace_back(n, &t); });
  ckpt.params.visit(add);
  ckpt.buffers.visit(add);
  for (const auto& [n, t] : ckpt.velocity) all.emplace_back(kOptimizerPrefix + n, &t);
  w.u64(all.size());
  for (const auto& [n, t] : all) w.tensor(n, *t);
  w.finish();
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  char magic[sizeof kMagic];
  r.bytes(magic, sizeof magic);
  require(std::memcmp(magic, kMagic, sizeof kMagic) == 0, ErrorKind::Format, path.string() + " is not a checkpoint");
  const std::uint32_t version = r.u32();
  require(version == kCheckpointVersion, ErrorKind::Format,
          "unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.model = parse_config_text(r.str());
  ckpt.epoch = r.u64();
  ckpt.seed = r.u64();
  std::map<std::string, Tensor> blobs;
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    auto [name, t] = r.tensor();
    require(blobs.emplace(name, std::move(t)).second, ErrorKind::Format, "duplicate tensor " + name);
  }
  require(r.done(), ErrorKind::Format, "trailing bytes in checkpoint " + path.string());

  // A freshly initialized model supplies the expected names and shapes.
  IdfModel shell(ckpt.model, 0);
  ckpt.params = shell.params();
  ckpt.buffers = shell.buffers();
  const auto fill = TensorVisitor([&](const std::string& n, Tensor& t) {
    auto it = blobs.find(n);
    require(it != blobs.end(), ErrorKind::Format, "checkpoint lacks tensor " + n);
    require(it->second.shape() == t.shape(), ErrorKind::Format,
            "tensor " + n + " has shape " + shape_string(it->second.shape()) + ", expected " + shape_string(t.shape()));
    t = std::move(it->second);
    blobs.erase(it);
  });
  ckpt.params.visit(fill);
  ckpt.buffers.visit(fill);
  const std::string prefix = kOptimizerPrefix;
  for (auto& [n, t] : blobs) {
    require(n.rfind(prefix, 0) == 0, ErrorKind::Format, "unexpected tensor " + n + " in checkpoint");
    ckpt.velocity.emplace(n.substr(prefix.size()), std::move(t));
  }
  return ckpt;
}

TrainingSet TrainingSet::from_records(std::span<const PersonRecord> records, std::span<const std::size_t> identities) {
  TrainingSet set;
  set.class_identity.assign(identities.begin(), identities.end());
  std::sort(set.class_identity.begin(), set.class_identity.end());
  set.class_identity.erase(std::unique(set.class_identity.begin(), set.class_identity.end()), set.class_identity.end());
  for (const auto& r : records) {
    auto it = std::lower_bound(set.class_identity.begin(), set.class_identity.end(), r.identity);
    if (it == set.class_identity.end() || *it != r.identity) continue;
    set.images.push_back(r.image);
    set.labels.push_back(static_cast<std::size_t>(it - set.class_identity.begin()));
  }
  return set;
}

std::string metrics_csv_header() {
  return "step,epoch,total,l_id_mb,l_id_ieb,l_id_idm,l_dce,l_rec,l_ifd,l_spa,l_exp,l_tva,l_col";
}

std::string metrics_csv_row(const StepMetrics& m) {
  const LossBreakdown& l = m.loss;
  char buf[512];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%.12e,%.12e,%.12e,%.12e,%.12e,%.12e,%.12e,%.12e,%.12e,%.12e,%.12e", m.step,
                m.epoch, l.total, l.l_id_mb, l.l_id_ieb, l.l_id_idm, l.l_dce, l.l_rec, l.l_ifd, l.l_spa, l.l_exp,
                l.l_tva, l.l_col);
  return buf;
}

TrainResult train(IdfModel& model, const TrainingSet& data, const TrainConfig& cfg,
                  const std::filesystem::path& out_dir) {
  cfg.validate();
  require(model.initialized(), ErrorKind::State, "model parameters are not initialized");
  require(data.classes() >= 2, ErrorKind::Parameter, "training needs at least 2 identities");
  require(data.images.size() >= 2, ErrorKind::Parameter, "training needs at least 2 images");
  require(data.classes() == model.config().classes, ErrorKind::Config,
          "model has " + std::to_string(model.config().classes) + " classes, training set has " +
              std::to_string(data.classes()));

  std::ofstream metrics;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    metrics.open(out_dir / "metrics.csv", std::ios::trunc);
    require(static_cast<bool>(metrics), ErrorKind::Io, "cannot write " + (out_dir / "metrics.csv").string());
    metrics << metrics_csv_header() << '\n';
  }

  const std::vector<std::string> groups = active_groups(model.config().variant);
  Sgd optimizer;
  Rng shuffle_rng(seed_mix(cfg.seed, 0x5f));
  Rng dropout_rng(seed_mix(cfg.seed, 0xd0));
  std::vector<std::size_t> order(data.images.size());
  std::iota(order.begin(), order.end(), 0);
  ModelParams grads = model.params().zeros_like();

  TrainResult result;
  result.best_loss = std::numeric_limits<double>::infinity();
  std::size_t step = 0;
  std::vector<Image> batch;
  std::vector<std::size_t> labels;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_sum = 0.0;
    std::size_t epoch_steps = 0;
    for (std::size_t start = 0; start + 2 <= order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      batch.clear();
      labels.clear();
      for (std::size_t i = start; i < start + n; ++i) {
        batch.push_back(data.images[order[i]]);
        labels.push_back(data.labels[order[i]]);
      }
      grads.set_zero();
      StepMetrics m{step, epoch, model.total_loss(batch, labels, cfg.losses, dropout_rng, &grads)};
      finite_or_throw(m.loss.total, "training loss at step " + std::to_string(step));
      optimizer.step(model.params(), grads, groups, cfg);
      if (metrics.is_open()) metrics << metrics_csv_row(m) << '\n';
      epoch_sum += m.loss.total;
      ++epoch_steps;
      result.steps.push_back(m);
      ++step;
    }
    const double mean = epoch_sum / static_cast<double>(std::max<std::size_t>(epoch_steps, 1));
    result.epoch_loss.push_back(mean);
    if (mean < result.best_loss) {
      result.best_loss = mean;
      result.best = Checkpoint::capture(model, optimizer, epoch + 1, cfg.seed);
    }
  }
  result.final_state = Checkpoint::capture(model, optimizer, cfg.epochs, cfg.seed);
  if (cfg.epochs == 0) {
    result.best = result.final_state;
    result.best_loss = std::numeric_limits<double>::quiet_NaN();
  }
  if (!out_dir.empty()) {
    metrics.flush();
    require(static_cast<bool>(metrics), ErrorKind::Io, "failed writing metrics.csv");
    save_checkpoint(result.final_state, out_dir / "final.ckpt");
    save_checkpoint(result.best, out_dir / "best.ckpt");
  }
  return result;
}

std::vector<DceLoss> train_enhancer(EnhancerParams& enhancer, std::span<const Image> images,
                                    const EnhancementLossConfig& losses, const TrainConfig& cfg, std::size_t steps) {
  cfg.validate();
  losses.validate();
  require(enhancer.initialized(), ErrorKind::State, "enhancer parameters are not initialized");
  require(!images.empty(), ErrorKind::Parameter, "enhancer training needs images");

  EnhancerParams grads = enhancer;
  NamedTensors p, g;
  enhancer.visit("", TensorVisitor([&](const std::string& n, Tensor& t) { p.emplace_back(n, &t); }));
  grads.visit("", TensorVisitor([&](const std::string& n, Tensor& t) { g.emplace_back(n, &t); }));
  std::vector<Tensor> velocity;
  for (const auto& [n, t] : p) velocity.emplace_back(t->shape(), 0.0);

  Rng rng(seed_mix(cfg.seed, 0xe5));
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const std::size_t batch = std::min(cfg.batch_size, images.size());
  const double scale = 1.0 / static_cast<double>(batch);

  std::vector<DceLoss> history;
  for (std::size_t s = 0; s < steps; ++s) {
    for (auto& [n, t] : g) t->fill(0.0);
    DceLoss mean;
    for (std::size_t b = 0; b < batch; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const Image& img = images[order[cursor++]];
      EnhancerTrace trace;
      EnhanceTrace stages;
      const CurveParameterMaps maps = estimate_curves(enhancer, img, &trace);
      const Image enhanced = enhance(img, maps, &stages);
      Tensor d_enhanced(enhanced.tensor().shape());
      CurveParameterMaps d_maps = CurveParameterMaps::zeros(maps.iterations(), img.height(), img.width());
      const DceLoss l = loss_dce_grad(img, enhanced, maps, losses, scale, d_enhanced, d_maps);
      enhance_backward(stages, maps, d_enhanced, d_maps);
      estimate_curves_backward(enhancer, trace, d_maps, grads);
      mean.spa += scale * l.spa;
      mean.exp += scale * l.exp;
      mean.tva += scale * l.tva;
      mean.col += scale * l.col;
      mean.total += scale * l.total;
    }
    finite_or_throw(mean.total, "enhancer loss at step " + std::to_string(s));
    for (std::size_t i = 0; i < p.size(); ++i)
      sgd_update(*p[i].second, *g[i].second, velocity[i], cfg.learning_rate, cfg.momentum, cfg.weight_decay);
    history.push_back(mean);
  }
  return history;
}

GradCheckReport grad_check(const std::function<double()>& loss, std::span<const GradTarget> targets,
                           const GradCheckOptions& options) {
  require(options.step > 0.0, ErrorKind::Parameter, "finite-difference step must be positive");
  finite_or_throw(loss(), "loss");
  Rng rng(seed_mix(options.seed, 0x9c));
  GradCheckReport report;
  for (const auto& target : targets) {
    require(target.value != nullptr && target.analytic != nullptr, ErrorKind::Parameter,
            "gradient target " + target.name + " is incomplete");
    require_same_shape(*target.value, *target.analytic, "analytic gradient of " + target.name);
    std::vector<std::size_t> indices(target.value->size());
    std::iota(indices.begin(), indices.end(), 0);
    if (options.samples_per_tensor != 0 && options.samples_per_tensor < indices.size()) {
      std::vector<std::size_t> picked;
      std::sample(indices.begin(), indices.end(), std::back_inserter(picked), options.samples_per_tensor, rng);
      indices = std::move(picked);
    }
    Tensor& v = *target.value;
    for (std::size_t idx : indices) {
      const double original = v[idx];
      v[idx] = original + options.step;
      const double plus = loss();
      v[idx] = original - options.step;
      const double minus = loss();
      v[idx] = original;
      finite_or_throw(plus, "loss");
      finite_or_throw(minus, "loss");
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double analytic = (*target.analytic)[idx];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), options.floor});
      const double rel = std::abs(analytic - numeric) / denom;
      ++report.checked;
      if (rel > report.max_relative_error || report.worst.empty()) {
        if (rel >= report.max_relative_error) {
          report.max_relative_error = rel;
          report.worst = target.name + "[" + std::to_string(idx) + "]";
          report.worst_analytic = analytic;
          report.worst_numeric = numeric;
        }
      }
    }
  }
  return report;
}

}  // namespace idf
