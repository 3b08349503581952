#include "idf/curve.hpp"

#include "idf/error.hpp"
#include "idf/simd/kernels.hpp"

namespace idf {

CurveParameterMaps CurveParameterMaps::zeros(std::size_t iterations, std::size_t height, std::size_t width) {
  CurveParameterMaps m;
  m.maps.assign(iterations, Tensor(Shape{3, height, width}));
  return m;
}

CurveParameterMaps CurveParameterMaps::from_stacked(const Tensor& stacked) {
  require(stacked.rank() == 3 && stacked.dim(0) % 3 == 0 && stacked.dim(0) > 0, ErrorKind::Dimension,
          "stacked curve maps must be [3N, H, W], got " + shape_string(stacked.shape()));
  for (double v : stacked.values())
    require(v >= -1.0 && v <= 1.0, ErrorKind::Contract, "curve coefficient outside [-1, 1]");
  const std::size_t n = stacked.dim(0) / 3;
  const std::size_t plane = 3 * stacked.dim(1) * stacked.dim(2);
  CurveParameterMaps m;
  m.maps.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor t(Shape{3, stacked.dim(1), stacked.dim(2)});
    std::copy_n(stacked.data() + i * plane, plane, t.data());
    m.maps.push_back(std::move(t));
  }
  return m;
}

Tensor CurveParameterMaps::stacked() const {
  require(!maps.empty(), ErrorKind::State, "empty curve maps");
  Tensor out(Shape{3 * maps.size(), maps[0].dim(1), maps[0].dim(2)});
  for (std::size_t i = 0; i < maps.size(); ++i) std::copy(maps[i].values().begin(), maps[i].values().end(), out.data() + i * maps[i].size());
  return out;
}

Image curve_step(const Image& image, const Tensor& coefficients) {
  require_same_shape(image.tensor(), coefficients, "curve step");
  for (double a : coefficients.values())
    require(a >= -1.0 && a <= 1.0, ErrorKind::Contract, "curve coefficient outside [-1, 1]");
  Tensor out(image.tensor().shape());
  simd::curve_step(image.tensor().data(), coefficients.data(), out.data(), out.size());
  return Image::from_tensor(std::move(out));
}

Image enhance(const Image& image, const CurveParameterMaps& maps, EnhanceTrace* trace) {
  if (trace) {
    trace->stages.clear();
    trace->stages.reserve(maps.iterations() + 1);
    trace->stages.push_back(image);
  }
  Image current = image;
  for (const Tensor& a : maps.maps) {
    current = curve_step(current, a);
    if (trace) trace->stages.push_back(current);
  }
  return current;
}

Tensor enhance_backward(const EnhanceTrace& trace, const CurveParameterMaps& maps, const Tensor& d_output,
                        CurveParameterMaps& d_maps) {
  const std::size_t n = maps.iterations();
  require(trace.stages.size() == n + 1, ErrorKind::State, "enhance trace does not match the curve maps");
  require(d_maps.iterations() == n, ErrorKind::Dimension, "curve gradient has wrong iteration count");
  Tensor g = d_output;
  Tensor next(g.shape());
  for (std::size_t i = n; i-- > 0;) {
    const Tensor& input = trace.stages[i].tensor();
    require_same_shape(input, g, "enhance backward");
    simd::curve_step_backward(input.data(), maps.maps[i].data(), g.data(), next.data(), d_maps.maps[i].data(), g.size());
    std::swap(g, next);
  }
  return g;
}

void EnhancerParams::visit(const std::string& prefix, const TensorVisitor& f) {
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].visit(prefix + "conv" + std::to_string(i + 1), f);
}

void EnhancerParams::visit(const std::string& prefix, const ConstTensorVisitor& f) const {
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].visit(prefix + "conv" + std::to_string(i + 1), f);
}

EnhancerParams make_enhancer(const EnhancerConfig& cfg, Rng& rng) {
  require(cfg.width >= 1, ErrorKind::Config, "enhancer width must be positive");
  require(cfg.iterations >= 1, ErrorKind::Config, "enhancer needs at least one curve iteration");
  const std::size_t w = cfg.width;
  EnhancerParams p;
  p.iterations = cfg.iterations;
  p.layers[0] = nn::make_conv(3, w, cfg.init_std, rng);
  p.layers[1] = nn::make_conv(w, w, cfg.init_std, rng);
  p.layers[2] = nn::make_conv(w, w, cfg.init_std, rng);
  p.layers[3] = nn::make_conv(w, w, cfg.init_std, rng);
  p.layers[4] = nn::make_conv(2 * w, w, cfg.init_std, rng);
  p.layers[5] = nn::make_conv(2 * w, w, cfg.init_std, rng);
  p.layers[6] = nn::make_conv(2 * w, 3 * cfg.iterations, cfg.zero_final_layer ? 0.0 : cfg.init_std, rng);
  return p;
}

namespace {

// Input of layer `index` (0-based) given the activations computed so far.
Tensor layer_input(std::size_t index, const Tensor& image, const std::array<Tensor, 7>& act) {
  switch (index) {
    case 0: return image;
    case 4: return nn::concat_channels(act[3], act[2]);
    case 5: return nn::concat_channels(act[4], act[1]);
    case 6: return nn::concat_channels(act[5], act[0]);
    default: return act[index - 1];
  }
}

}  // namespace

CurveParameterMaps estimate_curves(const EnhancerParams& params, const Image& image, EnhancerTrace* trace) {
  require(params.initialized(), ErrorKind::State, "enhancer parameters are not initialized");
  std::array<Tensor, 7> act;
  const Tensor& x = image.tensor();
  for (std::size_t i = 0; i < 7; ++i) {
    Tensor y = nn::conv2d_forward(params.layers[i], layer_input(i, x, act), 1);
    if (i < 6)
      nn::relu_inplace(y);
    else
      nn::tanh_inplace(y);
    act[i] = std::move(y);
  }
  CurveParameterMaps maps = CurveParameterMaps::from_stacked(act[6]);
  if (trace) {
    trace->input = x;
    trace->activations = std::move(act);
  }
  return maps;
}

void estimate_curves_backward(const EnhancerParams& params, const EnhancerTrace& trace,
                              const CurveParameterMaps& d_maps, EnhancerParams& grad) {
  require(params.initialized() && grad.initialized(), ErrorKind::State, "enhancer parameters are not initialized");
  const auto& act = trace.activations;
  std::array<Tensor, 7> d_act;
  d_act[6] = d_maps.stacked();
  require_same_shape(d_act[6], act[6], "curve map gradient");
  for (std::size_t i = 0; i < 6; ++i) d_act[i] = Tensor::zeros_like(act[i]);

  for (std::size_t i = 7; i-- > 0;) {
    Tensor dy = std::move(d_act[i]);
    if (i == 6)
      nn::tanh_backward_inplace(act[i], dy);
    else
      nn::relu_backward_inplace(act[i], dy);
    const Tensor input = layer_input(i, trace.input, act);
    Tensor dx = nn::conv2d_backward(params.layers[i], input, dy, 1, grad.layers[i], i > 0);
    if (i == 0) break;
    if (i >= 4) {
      Tensor d_prev, d_skip;
      nn::split_channels(dx, act[i - 1].dim(0), d_prev, d_skip);
      d_act[i - 1] += d_prev;
      d_act[6 - i] += d_skip;  // layer 8-k receives layer k: 0-based skip source is 6 - i
    } else {
      d_act[i - 1] += dx;
    }
  }
}

}  // namespace idf
