#pragma once

// Run configuration: a flat key=value file with dotted sections, e.g.
//   train.lr=0.0005
//   model.variant=full
// Later sources override earlier ones; unknown keys are rejected.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "idf/dataset.hpp"
#include "idf/model.hpp"
#include "idf/retrieval.hpp"
#include "idf/trainer.hpp"

namespace idf {

using ConfigValues = std::map<std::string, std::string>;

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SynthConfig synth;
  std::filesystem::path data_dir;
  double train_fraction = 0.5;
  std::size_t probes_per_view = 3;
  EvalOptions eval{Metric::Cosine, true, 10};
  std::uint64_t seed = 1;
  std::filesystem::path out_dir = "out";

  // Applies values in key order. Throws a config error naming the key.
  void apply(const ConfigValues& values);
  ConfigValues to_values() const;
  std::string to_text() const;
};

// '#' starts a comment; blank lines are skipped; whitespace around keys and
// values is trimmed. Repeated keys keep the last value.
ConfigValues parse_config_text(const std::string& text, const std::string& origin = "<config>");
ConfigValues read_config_file(const std::filesystem::path& path);

// Parses "key=value".
std::pair<std::string, std::string> parse_assignment(const std::string& text);

// Every key RunConfig::apply accepts.
std::vector<std::string> config_keys();

}  // namespace idf
