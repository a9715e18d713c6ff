#include "cofair/model.hpp"

#include <algorithm>

#include "cofair/diffmath.hpp"
#include "cofair/error.hpp"

namespace cofair {

Tensor2 Affine::apply(const Tensor2& x) const { return affine(x, weight, bias); }

namespace {

Affine xavier_affine(std::size_t in, std::size_t out, Rng& rng) {
  return {xavier_init(in, out, rng), Tensor2(1, out)};
}

Affine zero_affine(std::size_t in, std::size_t out) { return {Tensor2(in, out), Tensor2(1, out)}; }

void validate(const ModelDims& d) {
  if (d.users == 0 || d.items == 0) throw ConfigError("model: user and item counts must be positive");
  if (d.latent == 0 || d.adapter == 0 || d.adversary_hidden == 0 || (d.shared_layer && d.shared == 0)) {
    throw ConfigError("model: layer widths must be positive");
  }
  if (d.levels == 0) throw ConfigError("model: need at least one fairness level");
  if (!(d.dropout >= 0.0 && d.dropout < 1.0)) throw ConfigError("model: dropout rate must lie in [0, 1)");
}

}  // namespace

CofairModel::CofairModel(const ModelDims& dims, std::uint64_t seed) : dims_(dims) {
  validate(dims);
  Rng rng = Rng::derive(seed, Stream::init);
  backbone.user_embedding = xavier_init(dims.users, dims.latent, rng);
  backbone.item_embedding = xavier_init(dims.items, dims.latent, rng);
  if (dims.shared_layer) head.shared = xavier_affine(dims.latent, dims.shared, rng);
  for (std::size_t b = 0; b < dims.adapter_blocks(); ++b) {
    head.adapters.push_back(xavier_affine(dims.latent, dims.adapter, rng));
  }
  head.output = xavier_affine(dims.output_input(), dims.latent, rng);
  adversary.hidden = xavier_affine(dims.latent, dims.adversary_hidden, rng);
  adversary.output = xavier_affine(dims.adversary_hidden, 1, rng);
}

CofairModel CofairModel::zeros(const ModelDims& dims) {
  validate(dims);
  CofairModel m;
  m.dims_ = dims;
  m.backbone.user_embedding = Tensor2(dims.users, dims.latent);
  m.backbone.item_embedding = Tensor2(dims.items, dims.latent);
  if (dims.shared_layer) m.head.shared = zero_affine(dims.latent, dims.shared);
  for (std::size_t b = 0; b < dims.adapter_blocks(); ++b) m.head.adapters.push_back(zero_affine(dims.latent, dims.adapter));
  m.head.output = zero_affine(dims.output_input(), dims.latent);
  m.adversary.hidden = zero_affine(dims.latent, dims.adversary_hidden);
  m.adversary.output = zero_affine(dims.adversary_hidden, 1);
  return m;
}

std::size_t CofairModel::adapter_index(std::size_t level) const {
  if (level < 1 || level > dims_.levels) {
    throw RangeError("fairness level " + std::to_string(level) + " outside [1, " + std::to_string(dims_.levels) + "]");
  }
  return dims_.shared_adapter ? 0 : level - 1;
}

void CofairModel::check_user(Index user) const {
  if (user >= dims_.users) throw RangeError("unknown user " + std::to_string(user));
}

void CofairModel::check_item(Index item) const {
  if (item >= dims_.items) throw RangeError("unknown item " + std::to_string(item));
}

HeadTape head_forward(const CofairModel& model, const Tensor2& input, std::size_t only_level) {
  const auto& dims = model.dims();
  if (input.cols() != dims.latent) {
    throw ShapeError("head: input width " + std::to_string(input.cols()) + " != latent " + std::to_string(dims.latent));
  }
  HeadTape tape;
  tape.input = input;
  const std::size_t batch = input.rows();
  tape.shared_part = Tensor2(batch, dims.latent);
  add_row_broadcast(tape.shared_part, model.head.output.bias);
  if (dims.shared_layer) {
    tape.shared = model.head.shared.apply(input);
    model.note_shared_forward(batch);
    matmul_rows_accumulate(tape.shared, model.head.output.weight, 0, tape.shared_part);
  }
  const std::size_t adapter_offset = dims.shared_layer ? dims.shared : 0;

  if (only_level != 0) {
    tape.levels.push_back(only_level);
    model.adapter_index(only_level);
  } else {
    for (std::size_t t = 1; t <= dims.levels; ++t) tape.levels.push_back(t);
  }
  std::size_t cached_block = static_cast<std::size_t>(-1);
  for (std::size_t t : tape.levels) {
    const std::size_t block = model.adapter_index(t);
    if (block == cached_block) {
      tape.adapter.push_back(tape.adapter.back());
      tape.level.push_back(tape.level.back());
      continue;
    }
    cached_block = block;
    tape.adapter.push_back(model.head.adapters[block].apply(input));
    Tensor2 z = tape.shared_part;
    matmul_rows_accumulate(tape.adapter.back(), model.head.output.weight, adapter_offset, z);
    tape.level.push_back(std::move(z));
  }
  return tape;
}

HeadGrads head_backward(const CofairModel& model, const HeadTape& tape, std::span<const Tensor2> d_level) {
  const auto& dims = model.dims();
  if (d_level.size() != tape.level.size()) {
    throw ShapeError("head_backward: " + std::to_string(d_level.size()) + " upstream blocks for " +
                     std::to_string(tape.level.size()) + " levels");
  }
  const std::size_t batch = tape.input.rows();
  HeadGrads g;
  g.input = Tensor2(batch, dims.latent);
  g.output = {Tensor2(dims.output_input(), dims.latent), Tensor2(1, dims.latent)};
  for (const auto& a : model.head.adapters) g.adapters.push_back({Tensor2(a.weight.rows(), a.weight.cols()), Tensor2(1, a.bias.cols())});

  Tensor2 d_sum(batch, dims.latent);
  for (const auto& d : d_level) add_inplace(d_sum, d);
  g.output.bias = column_sums(d_sum);

  const std::size_t adapter_offset = dims.shared_layer ? dims.shared : 0;
  std::vector<Tensor2> d_adapter_by_block(model.head.adapters.size());
  for (std::size_t k = 0; k < d_level.size(); ++k) {
    matmul_tn_accumulate_rows(tape.adapter[k], d_level[k], adapter_offset, g.output.weight);
    Tensor2 d_adapter = matmul_nt_rows(d_level[k], model.head.output.weight, adapter_offset, dims.adapter);
    auto& acc = d_adapter_by_block[model.adapter_index(tape.levels[k])];
    if (acc.empty()) {
      acc = std::move(d_adapter);
    } else {
      add_inplace(acc, d_adapter);
    }
  }
  for (std::size_t b = 0; b < d_adapter_by_block.size(); ++b) {
    if (d_adapter_by_block[b].empty()) continue;
    auto ag = affine_backward(tape.input, model.head.adapters[b].weight, d_adapter_by_block[b]);
    g.adapters[b] = {std::move(ag.weight), std::move(ag.bias)};
    add_inplace(g.input, ag.input);
  }
  if (dims.shared_layer) {
    matmul_tn_accumulate_rows(tape.shared, d_sum, 0, g.output.weight);
    Tensor2 d_shared = matmul_nt_rows(d_sum, model.head.output.weight, 0, dims.shared);
    auto sg = affine_backward(tape.input, model.head.shared.weight, d_shared);
    g.shared = {std::move(sg.weight), std::move(sg.bias)};
    add_inplace(g.input, sg.input);
  }
  return g;
}

AdversaryTape adversary_forward(const Adversary& adversary, const Tensor2& input, const Tensor2* mask) {
  AdversaryTape tape;
  tape.input = input;
  tape.pre_activation = adversary.hidden.apply(input);
  tape.hidden = map_leaky_relu(tape.pre_activation);
  if (mask) {
    tape.mask = *mask;
    hadamard_inplace(tape.hidden, tape.mask);
  }
  tape.probs = map_sigmoid(adversary.output.apply(tape.hidden));
  return tape;
}

AdversaryGrads adversary_backward(const Adversary& adversary, const AdversaryTape& tape, const Tensor2& d_probs) {
  if (!d_probs.same_shape(tape.probs)) {
    throw ShapeError("adversary_backward: upstream " + d_probs.shape_string() + " vs " + tape.probs.shape_string());
  }
  Tensor2 d_logits(d_probs.rows(), 1);
  for (std::size_t i = 0; i < d_logits.size(); ++i) {
    const double p = tape.probs[i];
    d_logits[i] = d_probs[i] * p * (1.0 - p);
  }
  auto out = affine_backward(tape.hidden, adversary.output.weight, d_logits);
  Tensor2 d_hidden = std::move(out.input);
  if (!tape.mask.empty()) hadamard_inplace(d_hidden, tape.mask);
  Tensor2 d_pre = leaky_relu_backward(tape.pre_activation, d_hidden);
  auto hid = affine_backward(tape.input, adversary.hidden.weight, d_pre);
  return {std::move(hid.input), {std::move(hid.weight), std::move(hid.bias)},
          {std::move(out.weight), std::move(out.bias)}};
}

Tensor2 level_embeddings(const CofairModel& model, std::span<const Index> users, std::size_t level) {
  model.adapter_index(level);
  for (Index u : users) model.check_user(u);
  Tensor2 input = gather_rows(model.backbone.user_embedding, users);
  auto tape = head_forward(model, input, level);
  return std::move(tape.level.front());
}

LevelEmbedding level_embedding(const CofairModel& model, Index user, std::size_t level) {
  const Index users[] = {user};
  Tensor2 e = level_embeddings(model, users, level);
  return {user, level, std::vector<double>(e.values().begin(), e.values().end())};
}

double score(const CofairModel& model, Index user, Index item, std::size_t level) {
  model.check_item(item);
  const auto e = level_embedding(model, user, level);
  const auto v = model.backbone.item_embedding.row(item);
  double acc = 0.0;
  for (std::size_t j = 0; j < v.size(); ++j) acc += e.vector[j] * v[j];
  return acc;
}

Tensor2 score_matrix(const CofairModel& model, std::span<const Index> users, std::size_t level) {
  return matmul_nt(level_embeddings(model, users, level), model.backbone.item_embedding);
}

double adversary_prob(const Adversary& adversary, std::span<const double> embedding, Mode mode, Rng& rng,
                      double dropout_rate) {
  if (embedding.size() != adversary.hidden.weight.rows()) {
    throw ShapeError("adversary: embedding width " + std::to_string(embedding.size()) + " != " +
                     std::to_string(adversary.hidden.weight.rows()));
  }
  Tensor2 input(1, embedding.size(), std::vector<double>(embedding.begin(), embedding.end()));
  AdversaryTape tape;
  if (mode == Mode::train) {
    Tensor2 mask = dropout_mask(1, adversary.hidden.weight.cols(), dropout_rate, rng);
    tape = adversary_forward(adversary, input, &mask);
  } else {
    tape = adversary_forward(adversary, input, nullptr);
  }
  return clamp_prob(tape.probs[0]);
}

TopK topk_from_scores(std::span<const double> scores, std::size_t k, std::span<const char> excluded) {
  if (k == 0) throw RangeError("top-K needs K >= 1");
  if (!excluded.empty() && excluded.size() != scores.size()) {
    throw ShapeError("topk: exclusion mask has " + std::to_string(excluded.size()) + " entries for " +
                     std::to_string(scores.size()) + " items");
  }
  std::vector<Index> candidates;
  candidates.reserve(scores.size());
  for (Index i = 0; i < scores.size(); ++i) {
    if (excluded.empty() || !excluded[i]) candidates.push_back(i);
  }
  auto better = [&](Index a, Index b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); };
  TopK out;
  const std::size_t take = std::min(k, candidates.size());
  out.short_list = candidates.size() < k;
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take), candidates.end(), better);
  out.items.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take));
  for (Index i : out.items) out.scores.push_back(scores[i]);
  return out;
}

TopK topk(const CofairModel& model, Index user, std::size_t level, std::size_t k, std::span<const Index> excluded_items) {
  model.check_user(user);
  std::vector<char> mask(model.dims().items, 0);
  for (Index i : excluded_items) {
    model.check_item(i);
    mask[i] = 1;
  }
  const Index users[] = {user};
  Tensor2 scores = score_matrix(model, users, level);
  return topk_from_scores(scores.row(0), k, mask);
}

}  // namespace cofair
