#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cofair/data.hpp"
#include "cofair/diffmath.hpp"
#include "cofair/error.hpp"
#include "cofair/model.hpp"
#include "cofair/objective.hpp"

namespace cofair {

enum class Ablation { full, no_srl, no_fca, no_awl, no_url };
const char* ablation_name(Ablation mode);
// Throws ConfigError for unknown names.
Ablation parse_ablation(const std::string& name);

struct TrainConfig {
  std::size_t latent = 64;
  std::size_t shared = 64;
  std::size_t adapter = 64;
  std::size_t adversary_hidden = 64;
  std::size_t levels = 5;
  double lambda0 = 0.1;
  double eta = 0.2;
  double lambda_max = 10.0;
  double beta = 0.5;
  double lr = 1e-3;
  double adversary_lr = 1e-3;
  std::size_t batch_size = 4096;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;  // 0 disables early stopping
  std::uint64_t seed = 1;
  std::size_t adversary_steps = 1;
  Ablation ablation = Ablation::full;
  bool freeze_backbone = false;
  double dropout = 0.2;
  std::size_t eval_k = 10;

  void validate() const;
};

// What an ablation mode does to the model and schedule.
struct StructuralVariant {
  ModelDims dims;
  double eta = 0.0;
  double beta = 0.0;
};

StructuralVariant ablation_apply(const TrainConfig& config, std::size_t users, std::size_t items);

enum class ParamScope { generator, adversary, all };

// Parameter tensors in a fixed order, paired with stable names. The same
// order is used by the optimizer, checkpoints and gradient checks.
struct NamedTensor {
  std::string name;
  Tensor2* tensor;
};
std::vector<NamedTensor> parameter_tensors(CofairModel& model, ParamScope scope);
std::vector<std::pair<std::string, const Tensor2*>> parameter_tensors(const CofairModel& model, ParamScope scope);

// One mini-batch: triples plus the distinct users they touch.
struct Batch {
  std::vector<Index> users;  // ascending, distinct
  std::vector<int> attributes;
  std::vector<std::size_t> triple_user;  // position in `users` per triple
  std::vector<Index> positives;
  std::vector<Index> negatives;
};

Batch make_batch(std::span<const TrainingTriple> triples, const SensitiveAttributes& attributes);

struct CompositeResult {
  LossBreakdown loss;
  Tensor2 trajectory;  // users x levels, per-user fairness losses
};

// The generator objective on one batch:
//   (1/T) sum_t [rec_t + lambda_t fair_t] + beta * reg
// `tape` must hold every level of the head for batch.users. `masks[k]` is the
// adversary dropout mask for level k (null pointers or an empty span mean eval
// mode). Gradients, when requested, are accumulated into `grads`, a model
// shaped like `model` (see CofairModel::zeros); adversary gradients are only
// filled when `adversary_grads` is true.
CompositeResult composite_objective(const CofairModel& model, const HeadTape& tape, const Batch& batch,
                                    const FairnessSchedule& schedule, std::span<const Tensor2> masks,
                                    CofairModel* grads, bool adversary_grads = false);

// Mean BCE of the adversary over all levels and users, unweighted by lambda.
// Gradients go to grads->adversary only.
double adversary_objective(const CofairModel& model, const HeadTape& tape, const Batch& batch,
                           std::span<const Tensor2> masks, CofairModel* grads);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  LossBreakdown loss;     // epoch means of the batch breakdowns
  double adversary_bce = 0.0;
  std::vector<double> lambdas;  // schedule in force during the epoch
  std::vector<double> val_ndcg;
  double val_mean_ndcg = 0.0;
};

struct DataRef {
  std::string interactions;
  std::string attributes;
  std::vector<std::string> user_ids;  // raw id of each dense user index
  std::vector<std::string> item_ids;
  AttributeMap attribute_symbols = default_attribute_map();
  double rating_threshold = 0.0;
  SplitRatios ratios;
  std::uint64_t split_seed = 1;
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t interactions_count = 0;
};

inline constexpr const char* kCheckpointMagic = "COFAIR01";

struct Checkpoint {
  std::string version = kCheckpointMagic;
  TrainConfig config;
  DataRef data;
  CofairModel model;
  FairnessSchedule schedule;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
};

struct StepStats {
  std::size_t epoch = 0;
  std::size_t distinct_users = 0;
  std::uint64_t shared_forwards = 0;  // rows through the shared layer for this step
  double adversary_bce_before = 0.0;
  double adversary_bce_after = 0.0;
};

// Optional instrumentation; nothing recorded here enters the checkpoint.
struct TrainMonitor {
  std::vector<StepStats> steps;
  std::vector<double> epoch_seconds;
  std::function<void(const EpochRecord&)> on_epoch;
};

// Non-finite loss or gradient during training. Carries the checkpoint as it
// stood after the last completed epoch.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& message, Checkpoint last_good)
      : NumericError(message), last_good_(std::move(last_good)) {}
  const Checkpoint& last_good() const noexcept { return last_good_; }

 private:
  Checkpoint last_good_;
};

// Alternating min-max training. The returned checkpoint holds the parameters
// of the best validation epoch, the final schedule and the full history.
Checkpoint train(const TrainConfig& config, const InteractionDataset& dataset, const SensitiveAttributes& attributes,
                 TrainMonitor* monitor = nullptr);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct RestoredData {
  InteractionDataset dataset;
  SensitiveAttributes attributes;
};

// Re-reads the interaction and attribute files named in `ref` (or the given
// replacements), resolves raw ids through the stored id lists and re-applies
// the recorded split. Throws DataError if the result does not match `ref`.
RestoredData restore_data(const DataRef& ref, const std::string& interactions = {},
                          const std::string& attributes = {});

// FNV-1a 64 of the file bytes, lower-case hex.
std::string file_hash(const std::filesystem::path& path);

}  // namespace cofair
