#pragma once

// Classifiers mapping features onto the probability simplex, with
// hand-written forward and backward passes. Parameters live in one flat
// buffer so optimizers and finite-difference checks can treat them uniformly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "volmin/error.hpp"
#include "volmin/linalg.hpp"
#include "volmin/rng.hpp"

namespace volmin {

enum class Architecture { softmax_linear, mlp };

inline std::string to_string(Architecture a) {
  return a == Architecture::softmax_linear ? "softmax-linear" : "mlp";
}

inline Architecture parse_architecture(const std::string& s) {
  if (s == "softmax-linear" || s == "linear") return Architecture::softmax_linear;
  if (s == "mlp") return Architecture::mlp;
  throw ValueError("unknown architecture '" + s + "'");
}

// Numerically stable softmax, in place.
inline void softmax_inplace(std::span<double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double& v : z) {
    v = std::exp(v - m);
    s += v;
  }
  for (double& v : z) v /= s;
}

class Classifier {
 public:
  struct Layer {
    std::size_t in = 0;
    std::size_t out = 0;
    std::size_t weight_offset = 0;  // out x in, row-major
    std::size_t bias_offset = 0;
  };

  // Activations of one forward pass, kept for backward.
  struct Trace {
    std::vector<Vector> acts;  // acts[0] = input, acts[l+1] = output of layer l
  };

  Classifier() = default;

  static Classifier softmax_linear(std::size_t inputs, std::size_t classes) {
    return Classifier(Architecture::softmax_linear, {inputs, classes});
  }

  static Classifier mlp(std::size_t inputs, const std::vector<std::size_t>& hidden,
                        std::size_t classes) {
    if (hidden.empty() || hidden.size() > 2)
      throw ValueError("mlp takes one or two hidden layers");
    std::vector<std::size_t> widths{inputs};
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(classes);
    return Classifier(Architecture::mlp, widths);
  }

  static Classifier make(Architecture arch, std::size_t inputs, const std::vector<std::size_t>& hidden,
                         std::size_t classes) {
    return arch == Architecture::mlp ? mlp(inputs, hidden, classes) : softmax_linear(inputs, classes);
  }

  Architecture architecture() const noexcept { return arch_; }
  const std::vector<std::size_t>& widths() const noexcept { return widths_; }
  std::size_t inputs() const noexcept { return widths_.front(); }
  std::size_t classes() const noexcept { return widths_.back(); }
  const std::vector<Layer>& layers() const noexcept { return layers_; }

  std::span<double> params() noexcept { return params_; }
  std::span<const double> params() const noexcept { return params_; }
  std::size_t num_params() const noexcept { return params_.size(); }

  double weight(std::size_t l, std::size_t o, std::size_t i) const {
    return params_[layers_[l].weight_offset + o * layers_[l].in + i];
  }
  double& weight(std::size_t l, std::size_t o, std::size_t i) {
    return params_[layers_[l].weight_offset + o * layers_[l].in + i];
  }
  double bias(std::size_t l, std::size_t o) const { return params_[layers_[l].bias_offset + o]; }
  double& bias(std::size_t l, std::size_t o) { return params_[layers_[l].bias_offset + o]; }

  // Uniform in [-a, a], a = sqrt(6 / (fan_in + fan_out)); biases start at zero.
  void init_glorot(std::uint64_t seed) {
    Engine eng = make_engine(seed, 0x6d6f64656cULL);
    std::fill(params_.begin(), params_.end(), 0.0);
    for (const auto& layer : layers_) {
      const double a = std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
      for (std::size_t k = 0; k < layer.in * layer.out; ++k)
        params_[layer.weight_offset + k] = uniform(eng, -a, a);
    }
  }

  Vector forward(std::span<const double> x) const {
    Trace t;
    forward(x, t);
    return t.acts.back();
  }

  // Fills `trace`; the last activation is the output distribution.
  void forward(std::span<const double> x, Trace& trace) const {
    if (x.size() != inputs())
      throw ShapeError("classifier expects " + std::to_string(inputs()) + " features, got " +
                       std::to_string(x.size()));
    trace.acts.resize(layers_.size() + 1);
    trace.acts[0].assign(x.begin(), x.end());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const Layer& layer = layers_[l];
      const Vector& in = trace.acts[l];
      Vector& out = trace.acts[l + 1];
      out.resize(layer.out);
      const double* w = params_.data() + layer.weight_offset;
      for (std::size_t o = 0; o < layer.out; ++o) {
        double s = params_[layer.bias_offset + o];
        for (std::size_t i = 0; i < layer.in; ++i) s += w[o * layer.in + i] * in[i];
        out[o] = s;
      }
      if (l + 1 < layers_.size()) {
        for (double& v : out) v = std::tanh(v);
      } else {
        softmax_inplace(out);
      }
    }
  }

  // Accumulates d(grad_out . forward(x)) / d(params) into `grad`.
  void backward(const Trace& trace, std::span<const double> grad_out, std::span<double> grad) const {
    if (grad_out.size() != classes()) throw ShapeError("classifier backward: grad_out length");
    if (grad.size() != params_.size()) throw ShapeError("classifier backward: grad buffer length");
    const Vector& p = trace.acts.back();
    double pg = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) pg += p[k] * grad_out[k];
    Vector delta(p.size());
    for (std::size_t k = 0; k < p.size(); ++k) delta[k] = p[k] * (grad_out[k] - pg);

    for (std::size_t l = layers_.size(); l-- > 0;) {
      const Layer& layer = layers_[l];
      const Vector& in = trace.acts[l];
      double* gw = grad.data() + layer.weight_offset;
      for (std::size_t o = 0; o < layer.out; ++o) {
        grad[layer.bias_offset + o] += delta[o];
        for (std::size_t i = 0; i < layer.in; ++i) gw[o * layer.in + i] += delta[o] * in[i];
      }
      if (l == 0) break;
      Vector prev(layer.in, 0.0);
      const double* w = params_.data() + layer.weight_offset;
      for (std::size_t o = 0; o < layer.out; ++o)
        for (std::size_t i = 0; i < layer.in; ++i) prev[i] += w[o * layer.in + i] * delta[o];
      // tanh' = 1 - tanh^2, and `in` holds the tanh outputs
      for (std::size_t i = 0; i < layer.in; ++i) prev[i] *= 1.0 - in[i] * in[i];
      delta.swap(prev);
    }
  }

  Vector backward(std::span<const double> x, std::span<const double> grad_out) const {
    Trace t;
    forward(x, t);
    Vector grad(params_.size(), 0.0);
    backward(t, grad_out, grad);
    return grad;
  }

  // Named blocks: layer<l>.weight (out x in) and layer<l>.bias (1 x out).
  void write_text(std::ostream& os) const {
    os << "# classifier arch=" << to_string(arch_) << " widths=";
    for (std::size_t k = 0; k < widths_.size(); ++k) os << (k ? "," : "") << widths_[k];
    os << '\n';
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const Layer& layer = layers_[l];
      Matrix w(layer.out, layer.in,
               std::vector<double>(params_.begin() + static_cast<std::ptrdiff_t>(layer.weight_offset),
                                   params_.begin() + static_cast<std::ptrdiff_t>(layer.weight_offset +
                                                                                 layer.out * layer.in)));
      Matrix b(1, layer.out,
               std::vector<double>(params_.begin() + static_cast<std::ptrdiff_t>(layer.bias_offset),
                                   params_.begin() + static_cast<std::ptrdiff_t>(layer.bias_offset + layer.out)));
      os << "# block layer" << l << ".weight " << w.rows() << ' ' << w.cols() << '\n';
      write_matrix_text(os, w);
      os << "# block layer" << l << ".bias " << b.rows() << ' ' << b.cols() << '\n';
      write_matrix_text(os, b);
    }
  }

  static Classifier read_text(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line.rfind("# classifier ", 0) != 0)
      throw ValueError("classifier checkpoint: missing header line");
    std::istringstream hs(line.substr(13));
    std::string tok;
    std::string arch;
    std::vector<std::size_t> widths;
    while (hs >> tok) {
      if (tok.rfind("arch=", 0) == 0) arch = tok.substr(5);
      if (tok.rfind("widths=", 0) == 0)
        for (const auto& w : detail::split(tok.substr(7), ',')) widths.push_back(std::stoul(w));
    }
    if (widths.size() < 2) throw ValueError("classifier checkpoint: bad widths");
    Classifier c(parse_architecture(arch), widths);
    std::size_t line_no = 1;
    for (std::size_t l = 0; l < c.layers_.size(); ++l) {
      for (int part = 0; part < 2; ++part) {
        if (!std::getline(is, line)) throw ValueError("classifier checkpoint: truncated");
        ++line_no;
        std::istringstream bs(line);
        std::string hash, kw, name;
        std::size_t rows = 0, cols = 0;
        bs >> hash >> kw >> name >> rows >> cols;
        const std::string want = "layer" + std::to_string(l) + (part == 0 ? ".weight" : ".bias");
        if (kw != "block" || name != want)
          throw ValueError("classifier checkpoint line " + std::to_string(line_no) + ": expected block " + want);
        const std::size_t offset = part == 0 ? c.layers_[l].weight_offset : c.layers_[l].bias_offset;
        const std::size_t expect = part == 0 ? c.layers_[l].in * c.layers_[l].out : c.layers_[l].out;
        if (rows * cols != expect) throw ValueError("classifier checkpoint: block " + want + " has wrong shape");
        std::size_t k = 0;
        for (std::size_t r = 0; r < rows; ++r) {
          if (!std::getline(is, line)) throw ValueError("classifier checkpoint: truncated block " + want);
          ++line_no;
          for (const auto& v : detail::split(detail::trim(line), ','))
            c.params_[offset + k++] = detail::parse_double(v, line_no);
        }
        if (k != expect) throw ValueError("classifier checkpoint: block " + want + " has wrong size");
      }
    }
    return c;
  }

 private:
  Classifier(Architecture arch, std::vector<std::size_t> widths) : arch_(arch), widths_(std::move(widths)) {
    if (widths_.size() < 2) throw ValueError("classifier needs input and output widths");
    for (std::size_t w : widths_)
      if (w == 0) throw ValueError("classifier layer width must be positive");
    if (widths_.back() < 2) throw ValueError("classifier needs at least 2 classes");
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      Layer layer{widths_[l], widths_[l + 1], offset, offset + widths_[l] * widths_[l + 1]};
      offset = layer.bias_offset + layer.out;
      layers_.push_back(layer);
    }
    params_.assign(offset, 0.0);
  }

  Architecture arch_ = Architecture::softmax_linear;
  std::vector<std::size_t> widths_;
  std::vector<Layer> layers_;
  std::vector<double> params_;
};

}  // namespace volmin
