#pragma once

#include <atomic>
#include <cstdint>
#include <span>
#include <vector>

#include "cofair/data.hpp"
#include "cofair/rng.hpp"
#include "cofair/tensor.hpp"

namespace cofair {

struct ModelDims {
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t latent = 64;
  std::size_t shared = 64;
  std::size_t adapter = 64;
  std::size_t adversary_hidden = 64;
  std::size_t levels = 5;
  bool shared_layer = true;     // false removes S; the output layer sees the adapter embedding only
  bool shared_adapter = false;  // true: one adapter serves every level
  double dropout = 0.2;

  std::size_t adapter_blocks() const { return shared_adapter ? 1 : levels; }
  std::size_t output_input() const { return (shared_layer ? shared : 0) + adapter; }
};

// y = x W + b with W (in x out) and b (1 x out).
struct Affine {
  Tensor2 weight;
  Tensor2 bias;

  Tensor2 apply(const Tensor2& x) const;
};

struct Backbone {
  Tensor2 user_embedding;  // U x d
  Tensor2 item_embedding;  // I x d
};

struct CofairHead {
  Affine shared;                // d -> d_s; empty tensors when disabled
  std::vector<Affine> adapters;  // T blocks (1 when shared_adapter), d -> d_p
  Affine output;                 // (d_s + d_p) -> d
};

// Two affine layers, LeakyReLU and inverted dropout between, sigmoid output.
struct Adversary {
  Affine hidden;  // d -> h
  Affine output;  // h -> 1
};

// Counts rows pushed through the shared layer. Copyable so models stay values.
class ForwardCounter {
 public:
  ForwardCounter() = default;
  ForwardCounter(const ForwardCounter& other) : value_(other.value()) {}
  ForwardCounter& operator=(const ForwardCounter& other) {
    value_.store(other.value(), std::memory_order_relaxed);
    return *this;
  }
  void add(std::uint64_t n) { value_.fetch_add(n, std::memory_order_relaxed); }
  std::uint64_t value() const { return value_.load(std::memory_order_relaxed); }
  void reset() { value_.store(0, std::memory_order_relaxed); }

 private:
  std::atomic<std::uint64_t> value_{0};
};

class CofairModel {
 public:
  CofairModel() = default;
  // Xavier-uniform weights, zero biases, drawn from the init stream of `seed`.
  CofairModel(const ModelDims& dims, std::uint64_t seed);
  // Zero-initialised parameters of the right shapes.
  static CofairModel zeros(const ModelDims& dims);

  const ModelDims& dims() const noexcept { return dims_; }
  std::size_t levels() const noexcept { return dims_.levels; }
  // Adapter block used by 1-based level t; throws RangeError outside [1, T].
  std::size_t adapter_index(std::size_t level) const;
  void check_user(Index user) const;
  void check_item(Index item) const;

  std::uint64_t shared_forward_count() const { return shared_forwards_.value(); }
  void reset_shared_forward_count() const { shared_forwards_.reset(); }
  void note_shared_forward(std::size_t rows) const { shared_forwards_.add(rows); }

  Backbone backbone;
  CofairHead head;
  Adversary adversary;

 private:
  ModelDims dims_;
  mutable ForwardCounter shared_forwards_;
};

// Intermediate values of the head for a batch of users.
struct HeadTape {
  Tensor2 input;                 // B x d
  Tensor2 shared;                // B x d_s (empty without the shared layer)
  Tensor2 shared_part;           // B x d, output bias plus the shared slice of the output layer
  std::vector<Tensor2> adapter;  // per computed level, B x d_p
  std::vector<Tensor2> level;    // per computed level, B x d: e_u^(t)
  std::vector<std::size_t> levels;  // 1-based levels held in adapter/level
};

// Runs the shared layer once and every requested level's adapter. With
// `only_level` set, a single level is produced.
HeadTape head_forward(const CofairModel& model, const Tensor2& input, std::size_t only_level = 0);

struct HeadGrads {
  Tensor2 input;
  Affine shared;
  std::vector<Affine> adapters;
  Affine output;
};

// `d_level[k]` is the gradient with respect to tape.level[k].
HeadGrads head_backward(const CofairModel& model, const HeadTape& tape, std::span<const Tensor2> d_level);

struct AdversaryTape {
  Tensor2 input;
  Tensor2 pre_activation;  // B x h
  Tensor2 hidden;          // after LeakyReLU and the dropout mask
  Tensor2 mask;            // empty in eval mode
  Tensor2 probs;           // B x 1, sigmoid output (unclamped)
};

// Eval mode when `mask` is null.
AdversaryTape adversary_forward(const Adversary& adversary, const Tensor2& input, const Tensor2* mask);

struct AdversaryGrads {
  Tensor2 input;
  Affine hidden;
  Affine output;
};

AdversaryGrads adversary_backward(const Adversary& adversary, const AdversaryTape& tape, const Tensor2& d_probs);

enum class Mode { train, eval };

struct LevelEmbedding {
  Index user;
  std::size_t level;
  std::vector<double> vector;
};

LevelEmbedding level_embedding(const CofairModel& model, Index user, std::size_t level);
// e^(t) for each user in `users`, one row each.
Tensor2 level_embeddings(const CofairModel& model, std::span<const Index> users, std::size_t level);

double score(const CofairModel& model, Index user, Index item, std::size_t level);
// rows: users, cols: all items.
Tensor2 score_matrix(const CofairModel& model, std::span<const Index> users, std::size_t level);

// Clamped into [1e-7, 1 - 1e-7]. Train mode draws a dropout mask from `rng`.
double adversary_prob(const Adversary& adversary, std::span<const double> embedding, Mode mode, Rng& rng,
                      double dropout_rate);

struct TopK {
  std::vector<Index> items;
  std::vector<double> scores;
  bool short_list = false;  // fewer than K candidates remained
};

// Highest scores first; ties go to the smaller item id. `excluded` flags items
// that may not be returned (empty span = nothing excluded).
TopK topk_from_scores(std::span<const double> scores, std::size_t k, std::span<const char> excluded);

TopK topk(const CofairModel& model, Index user, std::size_t level, std::size_t k,
          std::span<const Index> excluded_items);

}  // namespace cofair
