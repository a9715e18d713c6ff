#include "cofair/training.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "cofair/config.hpp"
#include "cofair/log.hpp"
#include "cofair/metrics.hpp"

namespace cofair {

using nlohmann::json;

const char* ablation_name(Ablation mode) {
  switch (mode) {
    case Ablation::full: return "full";
    case Ablation::no_srl: return "no_srl";
    case Ablation::no_fca: return "no_fca";
    case Ablation::no_awl: return "no_awl";
    case Ablation::no_url: return "no_url";
  }
  return "full";
}

Ablation parse_ablation(const std::string& name) {
  for (auto mode : {Ablation::full, Ablation::no_srl, Ablation::no_fca, Ablation::no_awl, Ablation::no_url}) {
    if (name == ablation_name(mode)) return mode;
  }
  throw ConfigError("unknown ablation mode '" + name + "' (expected full, no_srl, no_fca, no_awl or no_url)");
}

void TrainConfig::validate() const {
  if (latent == 0 || shared == 0 || adapter == 0 || adversary_hidden == 0) {
    throw ConfigError("train: layer widths must be positive");
  }
  if (levels == 0) throw ConfigError("train: levels must be >= 1");
  if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  if (adversary_steps == 0) throw ConfigError("train: adversary_steps must be >= 1");
  if (max_epochs == 0) throw ConfigError("train: max_epochs must be >= 1");
  if (eval_k == 0) throw ConfigError("train: eval_k must be >= 1");
  if (!(lr > 0.0) || !(adversary_lr > 0.0)) throw ConfigError("train: learning rates must be positive");
  if (!(lambda_max >= 0.0)) throw ConfigError("train: lambda_max must be >= 0");
  if (!(lambda0 >= 0.0 && lambda0 <= lambda_max)) throw ConfigError("train: lambda0 must lie in [0, lambda_max]");
  if (!(eta >= 0.0)) throw ConfigError("train: eta must be >= 0");
  if (!(beta >= 0.0)) throw ConfigError("train: beta must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("train: dropout must lie in [0, 1)");
}

StructuralVariant ablation_apply(const TrainConfig& config, std::size_t users, std::size_t items) {
  StructuralVariant v;
  v.dims.users = users;
  v.dims.items = items;
  v.dims.latent = config.latent;
  v.dims.shared = config.shared;
  v.dims.adapter = config.adapter;
  v.dims.adversary_hidden = config.adversary_hidden;
  v.dims.levels = config.levels;
  v.dims.dropout = config.dropout;
  v.eta = config.eta;
  v.beta = config.beta;
  switch (config.ablation) {
    case Ablation::full: break;
    case Ablation::no_srl: v.dims.shared_layer = false; break;
    case Ablation::no_fca: v.dims.shared_adapter = true; break;
    case Ablation::no_awl: v.eta = 0.0; break;
    case Ablation::no_url: v.beta = 0.0; break;
  }
  return v;
}

namespace {

template <typename Model, typename Push>
void visit_parameters(Model& model, ParamScope scope, Push push) {
  if (scope != ParamScope::adversary) {
    push("backbone.user_embedding", model.backbone.user_embedding);
    push("backbone.item_embedding", model.backbone.item_embedding);
    if (model.dims().shared_layer) {
      push("head.shared.weight", model.head.shared.weight);
      push("head.shared.bias", model.head.shared.bias);
    }
    for (std::size_t b = 0; b < model.head.adapters.size(); ++b) {
      const std::string prefix = "head.adapter." + std::to_string(b);
      push(prefix + ".weight", model.head.adapters[b].weight);
      push(prefix + ".bias", model.head.adapters[b].bias);
    }
    push("head.output.weight", model.head.output.weight);
    push("head.output.bias", model.head.output.bias);
  }
  if (scope != ParamScope::generator) {
    push("adversary.hidden.weight", model.adversary.hidden.weight);
    push("adversary.hidden.bias", model.adversary.hidden.bias);
    push("adversary.output.weight", model.adversary.output.weight);
    push("adversary.output.bias", model.adversary.output.bias);
  }
}

void accumulate(Affine& dst, const Affine& src) {
  if (src.weight.empty()) return;
  add_inplace(dst.weight, src.weight);
  add_inplace(dst.bias, src.bias);
}

}  // namespace

std::vector<NamedTensor> parameter_tensors(CofairModel& model, ParamScope scope) {
  std::vector<NamedTensor> out;
  visit_parameters(model, scope, [&](std::string name, Tensor2& t) { out.push_back({std::move(name), &t}); });
  return out;
}

std::vector<std::pair<std::string, const Tensor2*>> parameter_tensors(const CofairModel& model, ParamScope scope) {
  std::vector<std::pair<std::string, const Tensor2*>> out;
  visit_parameters(model, scope, [&](std::string name, const Tensor2& t) { out.emplace_back(std::move(name), &t); });
  return out;
}

Batch make_batch(std::span<const TrainingTriple> triples, const SensitiveAttributes& attributes) {
  Batch b;
  for (const auto& t : triples) b.users.push_back(t.user);
  std::sort(b.users.begin(), b.users.end());
  b.users.erase(std::unique(b.users.begin(), b.users.end()), b.users.end());
  for (Index u : b.users) {
    if (u >= attributes.value.size()) throw DataError("no attribute for user " + std::to_string(u));
    b.attributes.push_back(attributes.value[u]);
  }
  for (const auto& t : triples) {
    b.triple_user.push_back(static_cast<std::size_t>(std::lower_bound(b.users.begin(), b.users.end(), t.user) -
                                                     b.users.begin()));
    b.positives.push_back(t.positive);
    b.negatives.push_back(t.negative);
  }
  return b;
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) acc += a[j] * b[j];
  return acc;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t j = 0; j < x.size(); ++j) y[j] += alpha * x[j];
}

const Tensor2* mask_for(std::span<const Tensor2> masks, std::size_t k) {
  if (masks.empty() || masks[k].empty()) return nullptr;
  return &masks[k];
}

void check_tape(const CofairModel& model, const HeadTape& tape, const Batch& batch, std::span<const Tensor2> masks) {
  if (tape.level.size() != model.levels()) {
    throw ShapeError("objective: tape holds " + std::to_string(tape.level.size()) + " of " +
                     std::to_string(model.levels()) + " levels");
  }
  if (tape.input.rows() != batch.users.size()) throw ShapeError("objective: tape rows do not match the batch");
  if (!masks.empty() && masks.size() != model.levels()) throw ShapeError("objective: one dropout mask per level");
}

}  // namespace

CompositeResult composite_objective(const CofairModel& model, const HeadTape& tape, const Batch& batch,
                                    const FairnessSchedule& schedule, std::span<const Tensor2> masks,
                                    CofairModel* grads, bool adversary_grads) {
  check_tape(model, tape, batch, masks);
  const std::size_t levels = model.levels();
  if (schedule.levels() != levels) throw ShapeError("objective: schedule and model disagree on T");
  const std::size_t users = batch.users.size();
  const std::size_t n = batch.positives.size();
  const auto& items = model.backbone.item_embedding;

  std::vector<double> rec(levels), fair(levels);
  std::vector<std::vector<ScorePair>> pairs(levels, std::vector<ScorePair>(n));
  std::vector<AdversaryTape> adv(levels);
  CompositeResult result;
  result.trajectory = Tensor2(users, levels);
  for (std::size_t k = 0; k < levels; ++k) {
    const Tensor2& e = tape.level[k];
    for (std::size_t j = 0; j < n; ++j) {
      const auto row = e.row(batch.triple_user[j]);
      pairs[k][j] = {dot(row, items.row(batch.positives[j])), dot(row, items.row(batch.negatives[j]))};
    }
    rec[k] = bpr_loss(pairs[k]);
    adv[k] = adversary_forward(model.adversary, e, mask_for(masks, k));
    const auto f = fairness_loss(adv[k].probs.values(), batch.attributes);
    fair[k] = f.aggregate;
    for (std::size_t r = 0; r < users; ++r) result.trajectory(r, k) = f.per_user[r];
  }
  const double reg = user_reg(result.trajectory);
  result.loss = total_objective(rec, fair, reg, schedule);
  if (!grads) return result;

  const double inv_levels = 1.0 / static_cast<double>(levels);
  const Tensor2 reg_grad = user_reg_grad(result.trajectory);
  std::vector<Tensor2> d_level;
  for (std::size_t k = 0; k < levels; ++k) {
    const Tensor2& e = tape.level[k];
    Tensor2 d(users, model.dims().latent);
    const auto g = bpr_loss_grad(pairs[k]);
    for (std::size_t j = 0; j < n; ++j) {
      const double gj = g[j] * inv_levels;
      const std::size_t r = batch.triple_user[j];
      axpy(gj, items.row(batch.positives[j]), d.row(r));
      axpy(-gj, items.row(batch.negatives[j]), d.row(r));
      axpy(gj, e.row(r), grads->backbone.item_embedding.row(batch.positives[j]));
      axpy(-gj, e.row(r), grads->backbone.item_embedding.row(batch.negatives[j]));
    }
    Tensor2 d_probs(users, 1);
    const double fair_weight = schedule.lambdas[k] * inv_levels / static_cast<double>(users);
    for (std::size_t r = 0; r < users; ++r) {
      const double d_traj = fair_weight + schedule.beta * reg_grad(r, k);
      d_probs[r] = -d_traj * bce_grad_p(adv[k].probs[r], static_cast<double>(batch.attributes[r]));
    }
    auto ag = adversary_backward(model.adversary, adv[k], d_probs);
    add_inplace(d, ag.input);
    if (adversary_grads) {
      accumulate(grads->adversary.hidden, ag.hidden);
      accumulate(grads->adversary.output, ag.output);
    }
    d_level.push_back(std::move(d));
  }
  auto hg = head_backward(model, tape, d_level);
  if (model.dims().shared_layer) accumulate(grads->head.shared, hg.shared);
  for (std::size_t b = 0; b < hg.adapters.size(); ++b) accumulate(grads->head.adapters[b], hg.adapters[b]);
  accumulate(grads->head.output, hg.output);
  scatter_add_rows(grads->backbone.user_embedding, batch.users, hg.input);
  return result;
}

double adversary_objective(const CofairModel& model, const HeadTape& tape, const Batch& batch,
                           std::span<const Tensor2> masks, CofairModel* grads) {
  check_tape(model, tape, batch, masks);
  const std::size_t levels = model.levels(), users = batch.users.size();
  if (users == 0) return 0.0;
  const double scale = 1.0 / (static_cast<double>(levels) * static_cast<double>(users));
  double sum = 0.0;
  for (std::size_t k = 0; k < levels; ++k) {
    const auto adv = adversary_forward(model.adversary, tape.level[k], mask_for(masks, k));
    Tensor2 d_probs(users, 1);
    for (std::size_t r = 0; r < users; ++r) {
      const double a = static_cast<double>(batch.attributes[r]);
      sum += bce(adv.probs[r], a);
      d_probs[r] = bce_grad_p(adv.probs[r], a) * scale;
    }
    if (grads) {
      auto g = adversary_backward(model.adversary, adv, d_probs);
      accumulate(grads->adversary.hidden, g.hidden);
      accumulate(grads->adversary.output, g.output);
    }
  }
  return sum * scale;
}

namespace {

std::vector<ParamBlock> blocks(CofairModel& model, const CofairModel& grads, ParamScope scope, bool skip_backbone) {
  auto values = parameter_tensors(model, scope);
  auto g = parameter_tensors(grads, scope);
  std::vector<ParamBlock> out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (skip_backbone && values[i].name.rfind("backbone.", 0) == 0) continue;
    out.push_back({values[i].name, values[i].tensor, g[i].second});
  }
  return out;
}

std::vector<Tensor2> draw_masks(const ModelDims& dims, std::size_t rows, std::uint64_t seed,
                                std::initializer_list<std::uint64_t> path) {
  std::vector<Tensor2> masks;
  Rng rng = Rng::derive(seed, Stream::dropout, path);
  for (std::size_t k = 0; k < dims.levels; ++k) masks.push_back(dropout_mask(rows, dims.adversary_hidden, dims.dropout, rng));
  return masks;
}

double validation_ndcg(const CofairModel& model, const InteractionDataset& dataset, std::size_t k,
                       std::vector<double>& per_level) {
  const auto users = evaluated_users(dataset, Split::validation);
  std::vector<std::size_t> levels;
  for (std::size_t t = 1; t <= model.levels(); ++t) levels.push_back(t);
  per_level.assign(levels.size(), 0.0);
  if (users.empty()) return 0.0;
  const auto lists = level_topk_lists(model, dataset, users, levels, k, Split::validation);
  std::vector<std::vector<Index>> relevant;
  for (Index u : users) relevant.push_back(dataset.validation[u]);
  double sum = 0.0;
  for (std::size_t w = 0; w < levels.size(); ++w) {
    per_level[w] = ranking_metrics(lists[w], relevant, k).ndcg;
    sum += per_level[w];
  }
  return sum / static_cast<double>(levels.size());
}

}  // namespace

Checkpoint train(const TrainConfig& config, const InteractionDataset& dataset, const SensitiveAttributes& attributes,
                 TrainMonitor* monitor) {
  config.validate();
  if (!dataset.is_split) throw DataError("train: dataset has not been split");
  if (attributes.value.size() != dataset.user_count) {
    throw DataError("train: attributes cover " + std::to_string(attributes.value.size()) + " of " +
                    std::to_string(dataset.user_count) + " users");
  }
  const auto variant = ablation_apply(config, dataset.user_count, dataset.item_count);
  const ModelDims& dims = variant.dims;

  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.data.users = dataset.user_count;
  ckpt.data.items = dataset.item_count;
  ckpt.data.interactions_count = dataset.interaction_count();
  for (Index u = 0; u < dataset.user_ids.size(); ++u) ckpt.data.user_ids.push_back(dataset.user_ids.raw(u));
  for (Index i = 0; i < dataset.item_ids.size(); ++i) ckpt.data.item_ids.push_back(dataset.item_ids.raw(i));
  ckpt.schedule = FairnessSchedule::initial(dims.levels, config.lambda0, variant.eta, config.lambda_max, variant.beta);

  CofairModel model(dims, config.seed);
  ckpt.model = model;
  if (dataset.count(Split::validation) == 0) log::warn("train: empty validation split; early stopping sees NDCG 0");

  AdamState gen_state{{config.lr}, {}, {}, 0};
  AdamState adv_state{{config.adversary_lr}, {}, {}, 0};
  double best_metric = -std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  auto diverged = [&](const std::string& what) {
    throw TrainingDiverged("training diverged: " + what, ckpt);
  };

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    auto triples = sample_negatives(dataset, Rng::derive(config.seed, Stream::negatives, {epoch}).key());
    Rng order = Rng::derive(config.seed, Stream::batches, {epoch});
    shuffle(triples.begin(), triples.end(), order);

    EpochRecord record;
    record.epoch = epoch;
    record.lambdas = ckpt.schedule.lambdas;
    std::vector<double> rec_sum(dims.levels, 0.0), fair_sum(dims.levels, 0.0);
    double reg_sum = 0.0, total_sum = 0.0, adv_sum = 0.0;
    std::size_t batches = 0;

    for (std::size_t start = 0; start < triples.size(); start += config.batch_size) {
      const std::span<const TrainingTriple> slice(triples.data() + start,
                                                  std::min(config.batch_size, triples.size() - start));
      const Batch batch = make_batch(slice, attributes);
      const std::uint64_t before = model.shared_forward_count();
      const HeadTape tape = head_forward(model, gather_rows(model.backbone.user_embedding, batch.users));
      StepStats stats;
      stats.epoch = epoch;
      stats.distinct_users = batch.users.size();
      stats.shared_forwards = model.shared_forward_count() - before;

      double adv_loss = 0.0;
      for (std::size_t s = 0; s < config.adversary_steps; ++s) {
        const auto masks = draw_masks(dims, batch.users.size(), config.seed, {epoch, batches, s});
        CofairModel grads = CofairModel::zeros(dims);
        adv_loss = adversary_objective(model, tape, batch, masks, &grads);
        if (!std::isfinite(adv_loss)) diverged("adversary loss is not finite at epoch " + std::to_string(epoch));
        try {
          adam_step(blocks(model, grads, ParamScope::adversary, false), adv_state);
        } catch (const NumericError& e) {
          diverged(e.what());
        }
        if (monitor && s == 0) stats.adversary_bce_before = adv_loss;
        if (monitor && s + 1 == config.adversary_steps) {
          stats.adversary_bce_after = adversary_objective(model, tape, batch, masks, nullptr);
        }
      }

      const auto masks = draw_masks(dims, batch.users.size(), config.seed, {epoch, batches, config.adversary_steps});
      CofairModel grads = CofairModel::zeros(dims);
      const auto result = composite_objective(model, tape, batch, ckpt.schedule, masks, &grads);
      if (!std::isfinite(result.loss.total)) diverged("loss is not finite at epoch " + std::to_string(epoch));
      try {
        adam_step(blocks(model, grads, ParamScope::generator, config.freeze_backbone), gen_state);
      } catch (const NumericError& e) {
        diverged(e.what());
      }

      for (std::size_t k = 0; k < dims.levels; ++k) {
        rec_sum[k] += result.loss.rec[k];
        fair_sum[k] += result.loss.fair[k];
      }
      reg_sum += result.loss.reg;
      total_sum += result.loss.total;
      adv_sum += adv_loss;
      ++batches;
      if (monitor) monitor->steps.push_back(stats);
    }

    const double inv = batches ? 1.0 / static_cast<double>(batches) : 0.0;
    for (std::size_t k = 0; k < dims.levels; ++k) {
      record.loss.rec.push_back(rec_sum[k] * inv);
      record.loss.fair.push_back(fair_sum[k] * inv);
    }
    record.loss.reg = reg_sum * inv;
    record.loss.total = total_sum * inv;
    record.adversary_bce = adv_sum * inv;

    if (config.ablation != Ablation::no_awl) ckpt.schedule = update_lambdas(ckpt.schedule, record.loss.fair);
    record.val_mean_ndcg = validation_ndcg(model, dataset, config.eval_k, record.val_ndcg);
    ckpt.history.push_back(record);

    if (record.val_mean_ndcg > best_metric) {
      best_metric = record.val_mean_ndcg;
      ckpt.best_epoch = epoch;
      ckpt.model = model;
      since_best = 0;
    } else {
      ++since_best;
    }
    if (monitor) {
      monitor->epoch_seconds.push_back(
          std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count());
      if (monitor->on_epoch) monitor->on_epoch(record);
    }
    log::debug("epoch " + std::to_string(epoch) + " total " + std::to_string(record.loss.total) + " val ndcg " +
               std::to_string(record.val_mean_ndcg));
    if (config.patience > 0 && since_best >= config.patience) {
      log::info("early stop at epoch " + std::to_string(epoch) + ", best epoch " + std::to_string(ckpt.best_epoch));
      break;
    }
  }
  ckpt.model.reset_shared_forward_count();
  return ckpt;
}

// ---- checkpoint file -------------------------------------------------------

namespace {

json to_json(const LossBreakdown& l) {
  return json{{"rec", l.rec}, {"fair", l.fair}, {"reg", l.reg}, {"total", l.total}};
}

json to_json(const EpochRecord& r) {
  return json{{"epoch", r.epoch},
              {"loss", to_json(r.loss)},
              {"adversary_bce", r.adversary_bce},
              {"lambdas", r.lambdas},
              {"val_ndcg", r.val_ndcg},
              {"val_mean_ndcg", r.val_mean_ndcg}};
}

json to_json(const DataRef& d) {
  return json{{"interactions", d.interactions},
              {"attributes", d.attributes},
              {"user_ids", d.user_ids},
              {"item_ids", d.item_ids},
              {"attribute_symbols", d.attribute_symbols},
              {"rating_threshold", d.rating_threshold},
              {"ratios", {d.ratios.train, d.ratios.validation, d.ratios.test}},
              {"split_seed", d.split_seed},
              {"users", d.users},
              {"items", d.items},
              {"interaction_count", d.interactions_count}};
}

DataRef data_from_json(const json& j) {
  DataRef d;
  d.interactions = j.at("interactions").get<std::string>();
  d.attributes = j.at("attributes").get<std::string>();
  d.user_ids = j.at("user_ids").get<std::vector<std::string>>();
  d.item_ids = j.at("item_ids").get<std::vector<std::string>>();
  d.attribute_symbols = j.at("attribute_symbols").get<AttributeMap>();
  d.rating_threshold = j.at("rating_threshold").get<double>();
  const auto r = j.at("ratios").get<std::vector<double>>();
  if (r.size() != 3) throw CheckpointError("checkpoint: data.ratios needs three entries");
  d.ratios = {r[0], r[1], r[2]};
  d.split_seed = j.at("split_seed").get<std::uint64_t>();
  d.users = j.at("users").get<std::size_t>();
  d.items = j.at("items").get<std::size_t>();
  d.interactions_count = j.at("interaction_count").get<std::size_t>();
  return d;
}

EpochRecord record_from_json(const json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<std::size_t>();
  const auto& l = j.at("loss");
  r.loss.rec = l.at("rec").get<std::vector<double>>();
  r.loss.fair = l.at("fair").get<std::vector<double>>();
  r.loss.reg = l.at("reg").get<double>();
  r.loss.total = l.at("total").get<double>();
  r.adversary_bce = j.at("adversary_bce").get<double>();
  r.lambdas = j.at("lambdas").get<std::vector<double>>();
  r.val_ndcg = j.at("val_ndcg").get<std::vector<double>>();
  r.val_mean_ndcg = j.at("val_mean_ndcg").get<double>();
  return r;
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[b])) << (8 * b);
  return v;
}

void put_tensor(std::string& out, const Tensor2& t) {
  for (double x : t.values()) put_u64(out, std::bit_cast<std::uint64_t>(x));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (ckpt.schedule.levels() != ckpt.model.levels()) {
    throw ShapeError("checkpoint: schedule has " + std::to_string(ckpt.schedule.levels()) + " levels, model " +
                     std::to_string(ckpt.model.levels()));
  }
  json header;
  header["format"] = kCheckpointMagic;
  header["config"] = cofair::to_json(ckpt.config);
  header["data"] = to_json(ckpt.data);
  header["schedule"] = {{"eta", ckpt.schedule.eta}, {"lambda_max", ckpt.schedule.lambda_max},
                        {"beta", ckpt.schedule.beta}, {"levels", ckpt.schedule.levels()}};
  header["history"] = json::array();
  for (const auto& r : ckpt.history) header["history"].push_back(to_json(r));
  header["best_epoch"] = ckpt.best_epoch;

  std::string payload;
  json tensors = json::array();
  auto add = [&](const std::string& name, const Tensor2& t) {
    tensors.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}, {"offset", payload.size()},
                       {"bytes", t.size() * 8}});
    put_tensor(payload, t);
  };
  for (const auto& [name, t] : parameter_tensors(ckpt.model, ParamScope::all)) add(name, *t);
  add("schedule.lambdas", Tensor2(1, ckpt.schedule.levels(), ckpt.schedule.lambdas));
  header["tensors"] = std::move(tensors);

  const std::string text = header.dump();
  std::string out(kCheckpointMagic);
  put_u64(out, text.size());
  out += text;
  out += payload;

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw CheckpointError("cannot write checkpoint " + path.string());
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const std::string where = "checkpoint " + path.string();
  if (bytes.size() < 8) throw CheckpointError(where + " is truncated (no magic)");
  if (bytes.compare(0, 8, kCheckpointMagic) != 0) {
    if (bytes.compare(0, 6, "COFAIR") == 0) {
      throw CheckpointError(where + ": unsupported format version '" + bytes.substr(0, 8) + "'");
    }
    throw CheckpointError(where + " is not a COFAIR01 checkpoint");
  }
  if (bytes.size() < 16) throw CheckpointError(where + " is truncated (no header length)");
  const std::uint64_t header_len = get_u64(bytes.data() + 8);
  if (header_len > bytes.size() - 16) throw CheckpointError(where + " is truncated inside the header");

  Checkpoint ckpt;
  json header, listed;
  try {
    header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
    if (header.at("format").get<std::string>() != kCheckpointMagic) {
      throw CheckpointError(where + ": header format '" + header.at("format").get<std::string>() + "'");
    }
    ckpt.config = train_config_from_json(header.at("config"));
    ckpt.config.validate();
    ckpt.data = data_from_json(header.at("data"));
    const auto& s = header.at("schedule");
    ckpt.schedule.eta = s.at("eta").get<double>();
    ckpt.schedule.lambda_max = s.at("lambda_max").get<double>();
    ckpt.schedule.beta = s.at("beta").get<double>();
    if (s.at("levels").get<std::size_t>() != ckpt.config.levels) {
      throw ShapeError(where + ": schedule declares " + std::to_string(s.at("levels").get<std::size_t>()) +
                       " levels, config " + std::to_string(ckpt.config.levels));
    }
    for (const auto& r : header.at("history")) ckpt.history.push_back(record_from_json(r));
    ckpt.best_epoch = header.at("best_epoch").get<std::size_t>();
    listed = header.at("tensors");
  } catch (const json::exception& e) {
    throw CheckpointError(where + ": malformed header: " + e.what());
  }

  const auto variant = ablation_apply(ckpt.config, ckpt.data.users, ckpt.data.items);
  ckpt.model = CofairModel::zeros(variant.dims);
  auto params = parameter_tensors(ckpt.model, ParamScope::all);
  Tensor2 lambdas(1, ckpt.config.levels);
  params.push_back({"schedule.lambdas", &lambdas});

  if (!listed.is_array()) throw CheckpointError(where + ": tensor table is not an array");
  if (listed.size() != params.size()) {
    throw ShapeError(where + ": header lists " + std::to_string(listed.size()) + " tensors, config (T=" +
                     std::to_string(ckpt.config.levels) + ", " + ablation_name(ckpt.config.ablation) + ") implies " +
                     std::to_string(params.size()));
  }
  const std::size_t payload_start = 16 + header_len;
  const std::size_t payload_size = bytes.size() - payload_start;
  std::size_t consumed = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = listed[i];
    std::string name;
    std::size_t rows = 0, cols = 0, offset = 0, length = 0;
    try {
      name = entry.at("name").get<std::string>();
      rows = entry.at("rows").get<std::size_t>();
      cols = entry.at("cols").get<std::size_t>();
      offset = entry.at("offset").get<std::size_t>();
      length = entry.at("bytes").get<std::size_t>();
    } catch (const json::exception& e) {
      throw CheckpointError(where + ": malformed tensor entry " + std::to_string(i) + ": " + e.what());
    }
    Tensor2& dst = *params[i].tensor;
    if (name != params[i].name || rows != dst.rows() || cols != dst.cols()) {
      throw ShapeError(where + ": tensor " + std::to_string(i) + " is " + name + " " + std::to_string(rows) + "x" +
                       std::to_string(cols) + ", expected " + params[i].name + " " + dst.shape_string());
    }
    if (length != rows * cols * 8 || offset != consumed) {
      throw CheckpointError(where + ": tensor " + name + " has inconsistent offset or length");
    }
    if (offset + length > payload_size) throw CheckpointError(where + " is truncated inside tensor " + name);
    const char* p = bytes.data() + payload_start + offset;
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = std::bit_cast<double>(get_u64(p + 8 * k));
    consumed += length;
  }
  if (consumed != payload_size) throw CheckpointError(where + " has " + std::to_string(payload_size - consumed) +
                                                      " trailing bytes");
  ckpt.schedule.lambdas = lambdas.storage();
  try {
    ckpt.schedule.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(where + ": " + e.what());
  }
  for (const auto& [name, t] : parameter_tensors(std::as_const(ckpt.model), ParamScope::all)) {
    if (!all_finite(*t)) throw CheckpointError(where + ": tensor " + name + " holds non-finite values");
  }
  return ckpt;
}

RestoredData restore_data(const DataRef& ref, const std::string& interactions, const std::string& attributes) {
  const std::string data_path = interactions.empty() ? ref.interactions : interactions;
  const std::string attr_path = attributes.empty() ? ref.attributes : attributes;
  if (data_path.empty() || attr_path.empty()) throw DataError("checkpoint does not name its data files");
  IdMap users, items;
  for (const auto& u : ref.user_ids) users.intern(u);
  for (const auto& i : ref.item_ids) items.intern(i);
  auto loaded = load_interactions(data_path, ref.rating_threshold, &users, &items);
  if (loaded.user_count != ref.users || loaded.item_count != ref.items ||
      loaded.interaction_count() != ref.interactions_count) {
    throw DataError(data_path + " holds " + std::to_string(loaded.user_count) + " users, " +
                    std::to_string(loaded.item_count) + " items and " + std::to_string(loaded.interaction_count()) +
                    " interactions; the checkpoint was trained on " + std::to_string(ref.users) + ", " +
                    std::to_string(ref.items) + " and " + std::to_string(ref.interactions_count));
  }
  RestoredData out;
  out.dataset = split(loaded, ref.ratios, ref.split_seed);
  out.attributes = load_attributes(attr_path, out.dataset, ref.attribute_symbols);
  return out;
}

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

}  // namespace cofair
