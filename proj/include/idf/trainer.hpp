#pragma once

// SGD with momentum, checkpoints, the joint training loop and a
// finite-difference gradient checker.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "idf/image.hpp"
#include "idf/model.hpp"

namespace idf {

struct TrainConfig {
  double learning_rate = 0.0005;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::size_t batch_size = 32;
  std::size_t epochs = 120;
  std::uint64_t seed = 1;
  LossSettings losses;

  void validate() const;
};

// v <- mu * v + (g + wd * theta); theta <- theta - lr * v
void sgd_update(Tensor& theta, const Tensor& grad, Tensor& velocity, double lr, double momentum, double weight_decay);

class Sgd {
 public:
  // Updates only the tensors of the listed groups. Velocities are created on
  // first use and keyed by parameter name.
  void step(ModelParams& params, const ModelParams& grads, std::span<const std::string> groups,
            const TrainConfig& cfg);

  std::map<std::string, Tensor>& velocity() noexcept { return velocity_; }
  const std::map<std::string, Tensor>& velocity() const noexcept { return velocity_; }

 private:
  std::map<std::string, Tensor> velocity_;
};

struct Checkpoint {
  ModelConfig model;
  ModelParams params;
  ModelBuffers buffers;
  std::map<std::string, Tensor> velocity;
  std::size_t epoch = 0;
  std::uint64_t seed = 0;

  static Checkpoint capture(const IdfModel& model, const Sgd& optimizer, std::size_t epoch, std::uint64_t seed);
  IdfModel restore() const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Training identities mapped to dense class labels in ascending identity order.
struct TrainingSet {
  std::vector<Image> images;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> class_identity;

  std::size_t classes() const noexcept { return class_identity.size(); }
  static TrainingSet from_records(std::span<const PersonRecord> records, std::span<const std::size_t> identities);
};

struct StepMetrics {
  std::size_t step = 0;
  std::size_t epoch = 0;
  LossBreakdown loss;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const StepMetrics& m);

struct TrainResult {
  Checkpoint final_state;
  Checkpoint best;  // lowest epoch-mean total loss
  double best_loss = 0.0;
  std::vector<StepMetrics> steps;
  std::vector<double> epoch_loss;  // mean total per epoch
};

// Runs cfg.epochs shuffled passes over the set, dropping a trailing batch
// smaller than 2. When out_dir is non-empty it receives metrics.csv,
// final.ckpt and best.ckpt. With zero epochs the initial state is exported.
TrainResult train(IdfModel& model, const TrainingSet& data, const TrainConfig& cfg,
                  const std::filesystem::path& out_dir = {});

// Enhancer trained on the curve losses alone.
std::vector<DceLoss> train_enhancer(EnhancerParams& enhancer, std::span<const Image> images,
                                    const EnhancementLossConfig& losses, const TrainConfig& cfg, std::size_t steps);

struct GradTarget {
  std::string name;
  Tensor* value = nullptr;
  const Tensor* analytic = nullptr;
};

struct GradCheckOptions {
  double step = 1e-4;
  std::size_t samples_per_tensor = 8;  // 0: every coordinate
  double floor = 1e-6;                 // denominator floor for the relative error
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "<tensor>[<index>]"
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;

  bool within(double tolerance) const { return max_relative_error <= tolerance; }
};

// Central differences of `loss` against the analytic gradients. `loss` must
// read the current values of the targets; each coordinate is restored after use.
GradCheckReport grad_check(const std::function<double()>& loss, std::span<const GradTarget> targets,
                           const GradCheckOptions& options = {});

}  // namespace idf
