#include "cofair/diffmath.hpp"

#include <algorithm>
#include <cmath>

#include "cofair/error.hpp"

namespace cofair {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double leaky_relu(double x) { return x >= 0.0 ? x : kLeakySlope * x; }

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

double bce(double p, double a) {
  const double q = clamp_prob(p);
  return -(a * std::log(q) + (1.0 - a) * std::log(1.0 - q));
}

double bce_grad_p(double p, double a) {
  if (p < kProbClamp || p > 1.0 - kProbClamp) return 0.0;
  return -a / p + (1.0 - a) / (1.0 - p);
}

std::string_view primitive_name(Primitive kind) {
  switch (kind) {
    case Primitive::affine: return "affine";
    case Primitive::sigmoid: return "sigmoid";
    case Primitive::softplus: return "softplus";
    case Primitive::leaky_relu: return "leaky_relu";
    case Primitive::concat: return "concat";
    case Primitive::dot: return "dot";
    case Primitive::bce: return "bce";
  }
  return "unknown";
}

namespace {

[[noreturn]] void shape_fail(Primitive kind, const std::string& detail) {
  throw ShapeError(std::string(primitive_name(kind)) + ": " + detail);
}

void expect_arity(Primitive kind, std::span<const Tensor2> inputs, std::size_t n) {
  if (inputs.size() != n) {
    shape_fail(kind, "expected " + std::to_string(n) + " inputs, got " + std::to_string(inputs.size()));
  }
}

void expect_same(Primitive kind, const Tensor2& a, const Tensor2& b) {
  if (!a.same_shape(b)) shape_fail(kind, "operands " + a.shape_string() + " and " + b.shape_string() + " differ");
}

void check_affine(const Tensor2& x, const Tensor2& w, const Tensor2& b) {
  if (x.cols() != w.rows()) {
    shape_fail(Primitive::affine, "input " + x.shape_string() + " has " + std::to_string(x.cols()) +
                                      " columns but weight " + w.shape_string() + " has " +
                                      std::to_string(w.rows()) + " rows");
  }
  if (b.rows() != 1 || b.cols() != w.cols()) {
    shape_fail(Primitive::affine, "bias " + b.shape_string() + " does not match weight " + w.shape_string());
  }
}

template <typename F>
Tensor2 map(const Tensor2& x, F f) {
  Tensor2 out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

}  // namespace

Tensor2 affine(const Tensor2& x, const Tensor2& weight, const Tensor2& bias) {
  check_affine(x, weight, bias);
  Tensor2 out(x.rows(), weight.cols());
  for (std::size_t i = 0; i < out.rows(); ++i) std::copy_n(bias.values().data(), bias.cols(), out.row(i).data());
  matmul_rows_accumulate(x, weight, 0, out);
  return out;
}

AffineGrads affine_backward(const Tensor2& x, const Tensor2& weight, const Tensor2& upstream) {
  if (upstream.rows() != x.rows() || upstream.cols() != weight.cols() || x.cols() != weight.rows()) {
    shape_fail(Primitive::affine, "upstream " + upstream.shape_string() + " incompatible with input " +
                                      x.shape_string() + " and weight " + weight.shape_string());
  }
  return {matmul_nt(upstream, weight), matmul_tn(x, upstream), column_sums(upstream)};
}

Tensor2 map_sigmoid(const Tensor2& x) { return map(x, [](double v) { return sigmoid(v); }); }
Tensor2 map_softplus(const Tensor2& x) { return map(x, [](double v) { return softplus(v); }); }
Tensor2 map_leaky_relu(const Tensor2& x) { return map(x, [](double v) { return leaky_relu(v); }); }

Tensor2 leaky_relu_backward(const Tensor2& x, const Tensor2& upstream) {
  expect_same(Primitive::leaky_relu, x, upstream);
  Tensor2 out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = upstream[i] * (x[i] >= 0.0 ? 1.0 : kLeakySlope);
  return out;
}

Tensor2 concat_cols(const Tensor2& a, const Tensor2& b) {
  if (a.rows() != b.rows()) {
    shape_fail(Primitive::concat, "row counts differ: " + a.shape_string() + " and " + b.shape_string());
  }
  Tensor2 out(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::copy_n(a.row(i).data(), a.cols(), out.row(i).data());
    std::copy_n(b.row(i).data(), b.cols(), out.row(i).data() + a.cols());
  }
  return out;
}

Tensor2 rowwise_dot(const Tensor2& a, const Tensor2& b) {
  expect_same(Primitive::dot, a, b);
  Tensor2 out(a.rows(), 1);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double acc = 0.0;
    auto ar = a.row(i);
    auto br = b.row(i);
    for (std::size_t j = 0; j < ar.size(); ++j) acc += ar[j] * br[j];
    out[i] = acc;
  }
  return out;
}

Tensor2 primitive_forward(Primitive kind, std::span<const Tensor2> in) {
  switch (kind) {
    case Primitive::affine:
      expect_arity(kind, in, 3);
      return affine(in[0], in[1], in[2]);
    case Primitive::sigmoid:
      expect_arity(kind, in, 1);
      return map_sigmoid(in[0]);
    case Primitive::softplus:
      expect_arity(kind, in, 1);
      return map_softplus(in[0]);
    case Primitive::leaky_relu:
      expect_arity(kind, in, 1);
      return map_leaky_relu(in[0]);
    case Primitive::concat:
      expect_arity(kind, in, 2);
      return concat_cols(in[0], in[1]);
    case Primitive::dot:
      expect_arity(kind, in, 2);
      return rowwise_dot(in[0], in[1]);
    case Primitive::bce: {
      expect_arity(kind, in, 2);
      expect_same(kind, in[0], in[1]);
      Tensor2 out(in[0].rows(), in[0].cols());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = bce(in[0][i], in[1][i]);
      return out;
    }
  }
  shape_fail(kind, "unknown primitive");
}

std::vector<Tensor2> primitive_backward(Primitive kind, std::span<const Tensor2> in, const Tensor2& up) {
  std::vector<Tensor2> grads;
  switch (kind) {
    case Primitive::affine: {
      expect_arity(kind, in, 3);
      check_affine(in[0], in[1], in[2]);
      auto g = affine_backward(in[0], in[1], up);
      grads.push_back(std::move(g.input));
      grads.push_back(std::move(g.weight));
      grads.push_back(std::move(g.bias));
      break;
    }
    case Primitive::sigmoid: {
      expect_arity(kind, in, 1);
      expect_same(kind, in[0], up);
      Tensor2 g(up.rows(), up.cols());
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = sigmoid(in[0][i]);
        g[i] = up[i] * s * (1.0 - s);
      }
      grads.push_back(std::move(g));
      break;
    }
    case Primitive::softplus: {
      expect_arity(kind, in, 1);
      expect_same(kind, in[0], up);
      Tensor2 g(up.rows(), up.cols());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = up[i] * sigmoid(in[0][i]);
      grads.push_back(std::move(g));
      break;
    }
    case Primitive::leaky_relu:
      expect_arity(kind, in, 1);
      grads.push_back(leaky_relu_backward(in[0], up));
      break;
    case Primitive::concat: {
      expect_arity(kind, in, 2);
      const auto& a = in[0];
      const auto& b = in[1];
      if (a.rows() != b.rows() || up.rows() != a.rows() || up.cols() != a.cols() + b.cols()) {
        shape_fail(kind, "upstream " + up.shape_string() + " does not match " + a.shape_string() + " ++ " +
                             b.shape_string());
      }
      Tensor2 ga(a.rows(), a.cols()), gb(b.rows(), b.cols());
      for (std::size_t i = 0; i < a.rows(); ++i) {
        std::copy_n(up.row(i).data(), a.cols(), ga.row(i).data());
        std::copy_n(up.row(i).data() + a.cols(), b.cols(), gb.row(i).data());
      }
      grads.push_back(std::move(ga));
      grads.push_back(std::move(gb));
      break;
    }
    case Primitive::dot: {
      expect_arity(kind, in, 2);
      expect_same(kind, in[0], in[1]);
      if (up.rows() != in[0].rows() || up.cols() != 1) {
        shape_fail(kind, "upstream " + up.shape_string() + " must be " + std::to_string(in[0].rows()) + "x1");
      }
      Tensor2 ga(in[0].rows(), in[0].cols()), gb(in[1].rows(), in[1].cols());
      for (std::size_t i = 0; i < ga.rows(); ++i) {
        for (std::size_t j = 0; j < ga.cols(); ++j) {
          ga(i, j) = up[i] * in[1](i, j);
          gb(i, j) = up[i] * in[0](i, j);
        }
      }
      grads.push_back(std::move(ga));
      grads.push_back(std::move(gb));
      break;
    }
    case Primitive::bce: {
      expect_arity(kind, in, 2);
      expect_same(kind, in[0], in[1]);
      expect_same(kind, in[0], up);
      Tensor2 gp(up.rows(), up.cols()), ga(up.rows(), up.cols());
      for (std::size_t i = 0; i < up.size(); ++i) {
        const double q = clamp_prob(in[0][i]);
        gp[i] = up[i] * bce_grad_p(in[0][i], in[1][i]);
        ga[i] = -up[i] * (std::log(q) - std::log(1.0 - q));
      }
      grads.push_back(std::move(gp));
      grads.push_back(std::move(ga));
      break;
    }
  }
  return grads;
}

Tensor2 dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng) {
  Tensor2 mask(rows, cols, 1.0);
  if (rate <= 0.0) return mask;
  const double keep_scale = 1.0 / (1.0 - rate);
  for (auto& m : mask.values()) m = rng.uniform() < rate ? 0.0 : keep_scale;
  return mask;
}

void hadamard_inplace(Tensor2& dst, const Tensor2& mask) {
  if (!dst.same_shape(mask)) throw ShapeError("hadamard: " + dst.shape_string() + " vs " + mask.shape_string());
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] *= mask[i];
}

Tensor2 xavier_init(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, Stream::init);
  return xavier_init(rows, cols, rng);
}

Tensor2 xavier_init(std::size_t rows, std::size_t cols, Rng& rng) {
  if (rows == 0 || cols == 0) throw ShapeError("xavier_init: empty shape " + std::to_string(rows) + "x" + std::to_string(cols));
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor2 out(rows, cols);
  for (auto& x : out.values()) x = rng.uniform(-bound, bound);
  return out;
}

void adam_step(std::span<const ParamBlock> blocks, AdamState& state) {
  for (const auto& b : blocks) {
    if (!b.value->same_shape(*b.grad)) {
      throw ShapeError("adam: gradient " + b.grad->shape_string() + " for block '" + b.name + "' of shape " +
                       b.value->shape_string());
    }
    if (!all_finite(*b.grad)) throw NumericError("adam: non-finite gradient in block '" + b.name + "'");
  }
  if (state.first_moment.empty()) {
    for (const auto& b : blocks) {
      state.first_moment.emplace_back(b.value->rows(), b.value->cols());
      state.second_moment.emplace_back(b.value->rows(), b.value->cols());
    }
  }
  if (state.first_moment.size() != blocks.size()) {
    throw ShapeError("adam: state holds " + std::to_string(state.first_moment.size()) + " blocks, step got " +
                     std::to_string(blocks.size()));
  }
  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    auto& p = *blocks[k].value;
    const auto& g = *blocks[k].grad;
    if (!m.same_shape(p)) throw ShapeError("adam: moment shape changed for block '" + blocks[k].name + "'");
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
}

double numeric_partial(const DifferentiableFn& fn, std::span<Tensor2* const> params, std::size_t block,
                       std::size_t index, double h) {
  double& x = (*params[block])[index];
  const double original = x;
  x = original + h;
  const double up = fn(nullptr);
  x = original - h;
  const double down = fn(nullptr);
  x = original;
  return (up - down) / (2.0 * h);
}

GradCheckReport grad_check(const DifferentiableFn& fn, std::span<Tensor2* const> params, std::size_t probe_count,
                           Rng& rng, double h) {
  std::vector<Tensor2> analytic;
  fn(&analytic);
  if (analytic.size() != params.size()) {
    throw ShapeError("grad_check: function returned " + std::to_string(analytic.size()) + " gradients for " +
                     std::to_string(params.size()) + " blocks");
  }
  std::size_t total = 0;
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (!analytic[b].same_shape(*params[b])) {
      throw ShapeError("grad_check: gradient " + analytic[b].shape_string() + " for block " + std::to_string(b) +
                       " of shape " + params[b]->shape_string());
    }
    total += params[b]->size();
  }

  GradCheckReport report;
  auto probe = [&](std::size_t flat) {
    std::size_t b = 0;
    while (flat >= params[b]->size()) flat -= params[b++]->size();
    const double numeric = numeric_partial(fn, params, b, flat, h);
    const double a = analytic[b][flat];
    const double abs_err = std::abs(a - numeric);
    const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    if (rel > report.max_rel_error || report.probes == 0) {
      report.max_rel_error = std::max(report.max_rel_error, rel);
      report.worst_block = b;
      report.worst_index = flat;
    }
    ++report.probes;
  };
  if (total == 0) return report;
  if (probe_count >= total) {
    for (std::size_t i = 0; i < total; ++i) probe(i);
  } else {
    for (std::size_t i = 0; i < probe_count; ++i) probe(rng.below(total));
  }
  return report;
}

}  // namespace cofair
