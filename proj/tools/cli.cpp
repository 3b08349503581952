#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>

#include "idf/config.hpp"
#include "idf/dataset.hpp"
#include "idf/retrieval.hpp"
#include "idf/trainer.hpp"

namespace idf::cli {

namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config;
  std::uint64_t seed = 1;
  std::string out = "out";
  std::vector<std::string> set;
};

void add_globals(CLI::App* app, Globals& g) {
  app->add_option("--config", g.config, "Key=value configuration file");
  app->add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app->add_option("--out", g.out, "Output directory")->capture_default_str();
  app->add_option("--set", g.set, "Override one configuration key (key=value); repeatable");
}

// Collects explicitly given command-line values as configuration keys.
class Overrides {
 public:
  template <typename T>
  CLI::Option* add(CLI::App* app, const std::string& flag, T& target, const std::string& key,
                   const std::string& help) {
    CLI::Option* opt = app->add_option(flag, target, help)->capture_default_str();
    bindings_.push_back({opt, key, [&target] { return format(target); }});
    return opt;
  }
  CLI::Option* add_flag(CLI::App* app, const std::string& flag, bool& target, const std::string& key,
                        const std::string& help, bool invert = false) {
    CLI::Option* opt = app->add_flag(flag, target, help);
    bindings_.push_back({opt, key, [&target, invert] { return std::string((target != invert) ? "true" : "false"); }});
    return opt;
  }
  void collect(ConfigValues& values) const {
    for (const auto& b : bindings_)
      if (b.option->count() > 0) values[b.key] = b.value();
  }

 private:
  static std::string format(const std::string& v) { return v; }
  template <typename T>
  static std::string format(const T& v) {
    std::ostringstream s;
    s.precision(17);
    s << v;
    return s.str();
  }
  struct Binding {
    CLI::Option* option;
    std::string key;
    std::function<std::string()> value;
  };
  std::vector<Binding> bindings_;
};

RunConfig resolve(const Globals& top, const Globals& sub, const CLI::App& app, const CLI::App& cmd,
                  const Overrides& overrides) {
  RunConfig cfg;
  const std::string& config_path = !sub.config.empty() ? sub.config : top.config;
  if (!config_path.empty()) cfg.apply(read_config_file(config_path));
  ConfigValues cli;
  for (const auto* g : {&top, &sub})
    for (const auto& a : g->set) {
      auto [k, v] = parse_assignment(a);
      cli[k] = v;
    }
  if (app.count("--seed")) cli["run.seed"] = std::to_string(top.seed);
  if (app.count("--out")) cli["run.out"] = top.out;
  if (cmd.count("--seed")) cli["run.seed"] = std::to_string(sub.seed);
  if (cmd.count("--out")) cli["run.out"] = sub.out;
  overrides.collect(cli);
  cfg.apply(cli);
  return cfg;
}

void require_data_dir(const RunConfig& cfg) {
  require(!cfg.data_dir.empty(), ErrorKind::Config, "no dataset directory given (--data or data.dir)");
}

std::vector<std::size_t> identities_of(const std::vector<PersonRecord>& records) {
  std::set<std::size_t> ids;
  for (const auto& r : records) ids.insert(r.identity);
  return {ids.begin(), ids.end()};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out << text;
  out.flush();
  require(static_cast<bool>(out), ErrorKind::Io, "failed writing " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec && fs::is_directory(dir), ErrorKind::Io, "cannot create directory " + dir.string());
}

int cmd_synth(const RunConfig& cfg, std::ostream& out) {
  require(cfg.synth.identities >= 2, ErrorKind::Parameter, "need at least 2 identities");
  make_dir(cfg.out_dir);
  const auto entries = write_synthetic_dataset(cfg.synth, cfg.out_dir);
  out << "wrote " << entries.size() << " images of " << cfg.synth.identities << " identities under "
      << cfg.synth.cameras << " cameras to " << cfg.out_dir.string() << "\n";
  return 0;
}

int cmd_train(RunConfig cfg, const std::string& init, std::ostream& out) {
  require_data_dir(cfg);
  require(init == "random" || init == "zero", ErrorKind::Config, "init must be 'random' or 'zero'");
  const auto records = load_dataset(cfg.data_dir, cfg.model.input_height, cfg.model.input_width);
  require(!records.empty(), ErrorKind::Ingestion, "dataset " + cfg.data_dir.string() + " is empty");
  const IdentityPartition part = partition_identities(identities_of(records), cfg.train_fraction);
  TrainingSet data = TrainingSet::from_records(records, part.train);
  cfg.model.classes = data.classes();
  cfg.model.validate();
  cfg.train.validate();

  IdfModel model(cfg.model, cfg.seed);
  if (init == "zero") model.params().set_zero();
  make_dir(cfg.out_dir);
  write_text(cfg.out_dir / "config.txt", cfg.to_text());
  out << "training " << to_string(cfg.model.variant) << " on " << data.images.size() << " images of "
      << data.classes() << " identities for " << cfg.train.epochs << " epochs\n";
  const TrainResult result = train(model, data, cfg.train, cfg.out_dir);
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
    char line[96];
    std::snprintf(line, sizeof line, "epoch %zu mean loss %.6f\n", e + 1, result.epoch_loss[e]);
    out << line;
  }
  out << "checkpoints written to " << cfg.out_dir.string() << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint, std::ostream& out) {
  require_data_dir(cfg);
  require(!checkpoint.empty(), ErrorKind::Config, "no checkpoint given (--checkpoint)");
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const IdfModel model = ckpt.restore();
  const auto records = load_dataset(cfg.data_dir, model.config().input_height, model.config().input_width);
  require(!records.empty(), ErrorKind::Ingestion, "dataset " + cfg.data_dir.string() + " is empty");
  const IdentityPartition part = partition_identities(identities_of(records), cfg.train_fraction);
  const std::set<std::size_t> test_ids(part.test.begin(), part.test.end());

  std::vector<PersonRecord> test;
  for (const auto& r : records)
    if (test_ids.count(r.identity)) test.push_back(r);
  std::vector<RecordInfo> info;
  for (const auto& r : test) info.push_back(RecordInfo::of(r));
  const RetrievalSplit split = build_split(info, cfg.probes_per_view, cfg.seed);
  require(!split.query.empty(), ErrorKind::Protocol, "the test identities yield no queries");

  std::vector<PersonRecord> q_records, g_records;
  for (std::size_t i : split.query) q_records.push_back(test[i]);
  for (std::size_t i : split.gallery) g_records.push_back(test[i]);
  const GalleryIndex queries = build_index(model, q_records);
  const GalleryIndex gallery = build_index(model, g_records);
  const RetrievalMetrics m = evaluate(queries, gallery, cfg.eval);

  std::vector<RecordInfo> q_info, g_info;
  for (const auto& r : q_records) q_info.push_back(RecordInfo::of(r));
  for (const auto& r : g_records) g_info.push_back(RecordInfo::of(r));
  const double baseline = random_rank1_baseline(q_info, g_info, cfg.eval.exclude_same_camera);

  make_dir(cfg.out_dir);
  write_text(cfg.out_dir / "eval_metrics.csv", metrics_csv(m));
  if (cfg.eval.keep_top > 0) write_ranked_lists(m, queries, gallery, cfg.out_dir / "ranked.csv");
  out << metrics_table(m);
  char line[160];
  std::snprintf(line, sizeof line, "random-ranking rank-1: %.2f%%; single-camera identities excluded: %zu\n",
                100.0 * baseline, split.excluded_identities);
  out << line;
  return 0;
}

int cmd_enhance(const RunConfig& cfg, const std::string& checkpoint, const std::string& in_dir, std::ostream& out) {
  require(!checkpoint.empty(), ErrorKind::Config, "no checkpoint given (--checkpoint)");
  require(!in_dir.empty(), ErrorKind::Config, "no input directory given (--in)");
  const IdfModel model = load_checkpoint(checkpoint).restore();
  std::error_code ec;
  require(fs::is_directory(in_dir, ec), ErrorKind::Io, "no input directory " + in_dir);
  std::vector<fs::path> inputs;
  for (const auto& entry : fs::directory_iterator(in_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".ppm") inputs.push_back(entry.path());
  std::sort(inputs.begin(), inputs.end());
  require(fs::absolute(in_dir) != fs::absolute(cfg.out_dir), ErrorKind::Config,
          "output directory must differ from the input directory");
  make_dir(cfg.out_dir);
  for (const auto& p : inputs) save_image(model.enhance_image(load_image(p)), cfg.out_dir / p.filename());
  out << "enhanced " << inputs.size() << " images into " << cfg.out_dir.string() << "\n";
  return 0;
}

int cmd_stats(const RunConfig& cfg, std::size_t bins, std::ostream& out) {
  require_data_dir(cfg);
  require(bins >= 1, ErrorKind::Parameter, "histogram needs at least one bin");
  // Statistics use the ingested 256x128 images.
  const auto records = load_dataset(cfg.data_dir, kDefaultHeight, kDefaultWidth);
  require(!records.empty(), ErrorKind::Ingestion, "dataset " + cfg.data_dir.string() + " is empty");
  const IdentityPartition part = partition_identities(identities_of(records), cfg.train_fraction);
  const std::set<std::size_t> train_ids(part.train.begin(), part.train.end());

  const std::vector<std::string> partitions{"train", "test", "all"};
  std::map<std::string, std::map<std::string, std::size_t>> light, scale;
  std::map<std::string, ChannelHistogram> hist;
  for (const auto& name : partitions)
    for (auto& c : hist[name]) c.assign(bins, 0);
  for (const auto& r : records) {
    const std::string own = train_ids.count(r.identity) ? "train" : "test";
    const ChannelHistogram h = channel_histogram(r.image, bins);
    for (const std::string& p : {own, std::string("all")}) {
      ++light[p][std::string(to_string(classify_illumination(r.image)))];
      ++scale[p][std::string(to_string(classify_scale(r)))];
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t b = 0; b < bins; ++b) hist[p][c][b] += h[c][b];
    }
  }

  make_dir(cfg.out_dir);
  auto level_csv = [&](const auto& counts, const std::vector<std::string>& levels) {
    std::string text = "partition,level,count\n";
    for (const auto& p : partitions) {
      for (const auto& level : levels) {
        const std::size_t n = counts.count(p) && counts.at(p).count(level) ? counts.at(p).at(level) : 0;
        text += p + "," + level + "," + std::to_string(n) + "\n";
      }
    }
    return text;
  };
  const std::string illum = level_csv(light, {"low", "medium", "high"});
  write_text(cfg.out_dir / "illumination.csv", illum);
  write_text(cfg.out_dir / "scale.csv", level_csv(scale, {"small", "medium", "big"}));
  std::string htext = "partition,channel,bin,count\n";
  const char* channels[3] = {"r", "g", "b"};
  for (const auto& p : partitions)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t b = 0; b < bins; ++b)
        htext += p + "," + channels[c] + "," + std::to_string(b) + "," + std::to_string(hist[p][c][b]) + "\n";
  write_text(cfg.out_dir / "histogram.csv", htext);
  out << illum;
  return 0;
}

}  // namespace

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Ingestion: return 3;
    case ErrorKind::Format: return 4;
    case ErrorKind::Parameter: return 5;
    case ErrorKind::Dimension: return 6;
    case ErrorKind::State: return 7;
    case ErrorKind::Config: return 8;
    case ErrorKind::Io: return 9;
    case ErrorKind::Protocol: return 10;
    case ErrorKind::Contract: return 11;
    case ErrorKind::Numeric: return 12;
  }
  return 1;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Illumination distillation for nighttime person re-identification", "idf"};
  app.require_subcommand(1, 1);
  Globals top;
  add_globals(&app, top);

  struct Command {
    CLI::App* app;
    Globals globals;
    Overrides overrides;
  };
  std::map<std::string, Command> commands;
  auto add = [&](const std::string& name, const std::string& help) -> Command& {
    Command& c = commands[name];
    c.app = app.add_subcommand(name, help);
    add_globals(c.app, c.globals);
    return c;
  };

  // Defaults shown in --help come from the built-in configuration.
  const RunConfig defaults;
  std::size_t identities = defaults.synth.identities, per_camera = defaults.synth.images_per_camera,
              cameras = defaults.synth.cameras;
  Command& synth = add("synth", "Render a toy low-light re-identification corpus");
  synth.overrides.add(synth.app, "--identities", identities, "synth.identities", "Number of identities");
  synth.overrides.add(synth.app, "--images-per-camera", per_camera, "synth.images_per_camera",
                      "Images of each identity under each camera");
  synth.overrides.add(synth.app, "--cameras", cameras, "synth.cameras", "Number of cameras");

  std::string data_dir;
  std::string variant(to_string(defaults.model.variant));
  std::size_t epochs = defaults.train.epochs, batch = defaults.train.batch_size;
  std::size_t height = defaults.model.input_height, width = defaults.model.input_width;
  double lr = defaults.train.learning_rate, lambda1 = defaults.train.losses.distillation.lambda1,
         lambda2 = defaults.train.losses.distillation.lambda2, fraction = defaults.train_fraction;
  std::string init = "random";
  Command& trn = add("train", "Train a model and write checkpoints and per-step metrics");
  trn.overrides.add(trn.app, "--data", data_dir, "data.dir", "Dataset directory (with manifest.csv)");
  trn.overrides.add(trn.app, "--variant", variant, "model.variant", "Model variant: mb, mb_ieb, mb_ieb_idm, full");
  trn.overrides.add(trn.app, "--epochs", epochs, "train.epochs", "Training epochs");
  trn.overrides.add(trn.app, "--batch-size", batch, "train.batch_size", "Batch size");
  trn.overrides.add(trn.app, "--lr", lr, "train.lr", "Learning rate");
  trn.overrides.add(trn.app, "--lambda1", lambda1, "loss.lambda1", "Reconstruction loss weight");
  trn.overrides.add(trn.app, "--lambda2", lambda2, "loss.lambda2", "Distillation loss weight");
  trn.overrides.add(trn.app, "--height", height, "model.height", "Input height");
  trn.overrides.add(trn.app, "--width", width, "model.width", "Input width");
  trn.overrides.add(trn.app, "--train-fraction", fraction, "data.train_fraction",
                    "Fraction of identities used for training");
  trn.app->add_option("--init", init, "Initial weights: random or zero")->capture_default_str();

  std::string checkpoint;
  std::string metric(to_string(defaults.eval.metric));
  std::size_t probes = defaults.probes_per_view, top_k = defaults.eval.keep_top;
  bool same_camera = false;
  Command& ev = add("eval", "Evaluate a checkpoint on the held-out identities");
  ev.app->add_option("--checkpoint", checkpoint, "Checkpoint file");
  ev.overrides.add(ev.app, "--data", data_dir, "data.dir", "Dataset directory (with manifest.csv)");
  ev.overrides.add(ev.app, "--metric", metric, "eval.metric", "Distance: cosine or euclidean");
  ev.overrides.add(ev.app, "--probes-per-view", probes, "eval.probes_per_view",
                   "Queries drawn per identity and camera");
  ev.overrides.add(ev.app, "--top", top_k, "eval.top", "Ranked gallery entries written per query (0: none)");
  ev.overrides.add(ev.app, "--train-fraction", fraction, "data.train_fraction",
                   "Fraction of identities reserved for training");
  ev.overrides.add_flag(ev.app, "--keep-same-camera", same_camera, "eval.exclude_same_camera",
                        "Keep gallery items sharing identity and camera with the query", true);

  std::string in_dir;
  Command& enh = add("enhance", "Enhance every .ppm image of a directory with a checkpoint's enhancer");
  enh.app->add_option("--checkpoint", checkpoint, "Checkpoint file");
  enh.app->add_option("--in", in_dir, "Input directory");

  std::size_t bins = 32;
  Command& st = add("stats", "Illumination, scale and colour statistics of a dataset");
  st.overrides.add(st.app, "--data", data_dir, "data.dir", "Dataset directory (with manifest.csv)");
  st.app->add_option("--bins", bins, "Histogram bins per channel")->capture_default_str();
  st.overrides.add(st.app, "--train-fraction", fraction, "data.train_fraction",
                   "Fraction of identities counted as training");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  std::string name;
  try {
    for (auto& [n, c] : commands) {
      if (!c.app->parsed()) continue;
      name = n;
      const RunConfig cfg = resolve(top, c.globals, app, *c.app, c.overrides);
      if (n == "synth") return cmd_synth(cfg, out);
      if (n == "train") return cmd_train(cfg, init, out);
      if (n == "eval") return cmd_eval(cfg, checkpoint, out);
      if (n == "enhance") return cmd_enhance(cfg, checkpoint, in_dir, out);
      if (n == "stats") return cmd_stats(cfg, bins, out);
    }
  } catch (const Error& e) {
    err << "idf " << name << ": " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "idf " << name << ": io error: " << e.what() << "\n";
    return exit_code(ErrorKind::Io);
  } catch (const std::exception& e) {
    err << "idf " << name << ": unexpected error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace idf::cli
