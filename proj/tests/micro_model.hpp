#pragma once

// A model small enough for finite-difference checks and short training runs.

#include <map>
#include <string>

#include "idf/model.hpp"

namespace testing_util {

inline idf::ModelConfig micro_config(idf::Variant variant = idf::Variant::Full, std::size_t classes = 3) {
  idf::ModelConfig c;
  c.input_height = 16;
  c.input_width = 16;
  c.enhancer.width = 4;
  c.enhancer.iterations = 2;
  c.enhancer.init_std = 0.2;
  c.backbone.widths = {4, 6};
  c.backbone.feature_dim = 5;
  c.classes = classes;
  c.variant = variant;
  return c;
}

inline idf::LossSettings micro_losses() {
  idf::LossSettings s;
  s.enhancement.exp_region = 8;
  return s;
}

inline std::map<std::string, idf::Tensor> snapshot(const idf::ModelParams& p) {
  std::map<std::string, idf::Tensor> out;
  p.visit([&](const std::string& n, const idf::Tensor& t) { out.emplace(n, t); });
  return out;
}

}  // namespace testing_util
