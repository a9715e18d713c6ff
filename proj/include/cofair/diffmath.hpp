#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cofair/rng.hpp"
#include "cofair/tensor.hpp"

namespace cofair {

inline constexpr double kProbClamp = 1e-7;
inline constexpr double kLeakySlope = 0.01;

// Scalar building blocks.
double sigmoid(double x);
// max(x, 0) + log1p(exp(-|x|)); never overflows.
double softplus(double x);
double leaky_relu(double x);
double clamp_prob(double p);
// -[a ln p + (1 - a) ln(1 - p)] with p clamped into [1e-7, 1 - 1e-7].
double bce(double p, double a);
// d bce / d p; zero where the clamp is active.
double bce_grad_p(double p, double a);

enum class Primitive { affine, sigmoid, softplus, leaky_relu, concat, dot, bce };

std::string_view primitive_name(Primitive kind);

// Input conventions:
//   affine     {x (n x in), weight (in x out), bias (1 x out)} -> n x out
//   sigmoid, softplus, leaky_relu   {x} -> same shape
//   concat     {a (n x p), b (n x q)} -> n x (p + q)
//   dot        {a (n x d), b (n x d)} -> n x 1, row-wise inner products
//   bce        {p, a} same shape -> elementwise binary cross-entropy
Tensor2 primitive_forward(Primitive kind, std::span<const Tensor2> inputs);

// One gradient per input, each shaped like that input.
std::vector<Tensor2> primitive_backward(Primitive kind, std::span<const Tensor2> inputs,
                                        const Tensor2& upstream);

// Typed entry points used on hot paths.
Tensor2 affine(const Tensor2& x, const Tensor2& weight, const Tensor2& bias);
struct AffineGrads {
  Tensor2 input, weight, bias;
};
AffineGrads affine_backward(const Tensor2& x, const Tensor2& weight, const Tensor2& upstream);

Tensor2 map_sigmoid(const Tensor2& x);
Tensor2 map_softplus(const Tensor2& x);
Tensor2 map_leaky_relu(const Tensor2& x);
Tensor2 leaky_relu_backward(const Tensor2& x, const Tensor2& upstream);
Tensor2 concat_cols(const Tensor2& a, const Tensor2& b);
Tensor2 rowwise_dot(const Tensor2& a, const Tensor2& b);

// Inverted dropout mask: each entry is 0 with probability `rate`, else 1/(1-rate).
Tensor2 dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng);
void hadamard_inplace(Tensor2& dst, const Tensor2& mask);

// Uniform on +-sqrt(6 / (rows + cols)); identical seed, identical tensor.
Tensor2 xavier_init(std::size_t rows, std::size_t cols, std::uint64_t seed);
Tensor2 xavier_init(std::size_t rows, std::size_t cols, Rng& rng);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<Tensor2> first_moment;
  std::vector<Tensor2> second_moment;
  std::int64_t step = 0;
};

struct ParamBlock {
  std::string name;
  Tensor2* value;
  const Tensor2* grad;
};

// Bias-corrected Adam, in place. Moments are created on the first call and
// must keep matching shapes afterwards. Throws NumericError naming the block
// if any gradient entry is non-finite (nothing is updated in that case).
void adam_step(std::span<const ParamBlock> blocks, AdamState& state);

// A scalar function of the tensors in `params`. When `grads` is non-null the
// callee must resize it to params.size() and fill reverse-mode gradients.
using DifferentiableFn = std::function<double(std::vector<Tensor2>* grads)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_block = 0;
  std::size_t worst_index = 0;
  std::size_t probes = 0;
};

// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps entries whose
// true value is ~0 from being judged on finite-difference roundoff alone.
inline constexpr double kGradCheckFloor = 1e-3;

// Compares reverse-mode gradients with central differences at `probe_count`
// coordinates drawn uniformly over all blocks (every coordinate when
// probe_count >= total size). Parameters are restored before returning.
GradCheckReport grad_check(const DifferentiableFn& fn, std::span<Tensor2* const> params,
                           std::size_t probe_count, Rng& rng, double h = 1e-6);

// Central-difference derivative of `fn` with respect to params[block][index].
double numeric_partial(const DifferentiableFn& fn, std::span<Tensor2* const> params,
                       std::size_t block, std::size_t index, double h = 1e-6);

}  // namespace cofair
