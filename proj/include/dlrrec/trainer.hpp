#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dlrrec/autodiff.hpp"
#include "dlrrec/dataio.hpp"
#include "dlrrec/model.hpp"
#include "dlrrec/objectives.hpp"
#include "dlrrec/swing.hpp"

namespace dlrrec::trainer {

using GradMap = std::map<std::string, ad::Tensor>;

// ---------------------------------------------------------------- Adam

struct AdamConfig {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::map<std::string, ad::Tensor> m;
  std::map<std::string, ad::Tensor> v;
};

// One bias-corrected Adam update at step t >= 1. Parameters without an
// entry in `grads` see a zero gradient.
void adam_step(model::ModelParams& params, const GradMap& grads, AdamState& state, std::size_t t,
               const AdamConfig& cfg);

// ---------------------------------------------------------------- metrics

struct Confusion {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  bool operator==(const Confusion&) const = default;
};

struct Evaluation {
  double accuracy = 0.0;
  double fp_rate = 0.0;
  Confusion confusion;
  // Set when the records hold no actual negatives; fp_rate is then 0.
  bool no_negatives = false;
  bool operator==(const Evaluation&) const = default;
};

Evaluation score_predictions(std::span<const double> probabilities, std::span<const int> labels,
                             double threshold = 0.5);
Evaluation evaluate(const model::ModelParams& params, const model::ModelConfig& cfg,
                    std::span<const data::InteractionRecord> records,
                    const data::EmbeddingSet& embeddings, double threshold = 0.5);

nlohmann::json to_json(const Evaluation& e);

// ---------------------------------------------------------------- early stopping

// Tracks the best (lowest) test FP rate. Only strict improvements count.
// Stopping is checked after each epoch: the run ends once `patience` epochs
// have passed since max(last improvement, min_epochs).
class EarlyStopper {
 public:
  EarlyStopper(std::size_t min_epochs, std::size_t patience);

  // Returns true when fp_rate is a new best.
  bool update(std::size_t epoch, double fp_rate);
  bool should_stop(std::size_t epoch) const;

  std::optional<std::size_t> best_epoch() const { return best_epoch_; }
  double best() const { return best_; }

 private:
  std::size_t min_epochs_;
  std::size_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  std::optional<std::size_t> best_epoch_;
};

// ---------------------------------------------------------------- configuration

struct TrainConfig {
  AdamConfig adam;
  std::size_t batch_size = 256;
  std::size_t max_epochs = 1000;
  std::size_t min_epochs = 300;
  std::size_t patience = 50;
  std::size_t repeats = 5;
  std::uint64_t seed = 0;
  // The split is shared by every repeat; only `seed` varies across repeats.
  std::uint64_t split_seed = 7;
  double test_fraction = 0.2;
  std::string mask = "text+image";
  std::vector<std::size_t> projection_hidden = {};
  objectives::LossConfig loss;
  // Channels are filled from the dataset schema and `mask`.
  model::ModelConfig model;

  void check() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Defaults with the shortened schedule used on the synthetic benchmark:
// at most 40 epochs, early stopping allowed after 20, patience 10.
TrainConfig benchmark_config();

model::ModelConfig resolve_model_config(const TrainConfig& cfg, const data::Schema& schema);

std::string loss_arm(const objectives::LossConfig& loss);

// ---------------------------------------------------------------- per-batch loss

// Everything the per-batch objective needs besides parameters and records.
struct LossContext {
  model::ModelConfig model;
  objectives::LossConfig loss;  // class weights resolved
  const data::EmbeddingSet* embeddings = nullptr;
  const swing::SimilarityGraph* user_sims = nullptr;
  const swing::SimilarityGraph* item_sims = nullptr;
  std::vector<std::string> user_corpus;
  std::vector<std::string> item_corpus;
  std::uint64_t seed = 0;
};

LossContext make_loss_context(const model::ModelConfig& model, const objectives::LossConfig& loss,
                              std::span<const data::InteractionRecord> train,
                              const data::EmbeddingSet& embeddings,
                              const swing::SimilarityGraph& user_sims,
                              const swing::SimilarityGraph& item_sims, std::uint64_t seed);

// Channel whose projection carries the contrastive term for a side: the
// first active channel of that entity kind.
std::optional<std::string> contrastive_channel(const model::ModelConfig& cfg, swing::Side side);

struct BatchLoss {
  ad::Var total;
  ad::Var rec;
  std::optional<ad::Var> ii;
  std::optional<ad::Var> uu;
  std::size_t item_anchors = 0;
  std::size_t user_anchors = 0;
};

// Builds L_total for one batch on `tape`. Randomness (dropout, contrastive
// sampling) is keyed by (ctx.seed, epoch, batch) on separate streams.
BatchLoss batch_loss(ad::Tape& tape, const model::BoundParams& params, const LossContext& ctx,
                     std::span<const data::InteractionRecord* const> records, std::uint64_t epoch,
                     std::uint64_t batch, ad::Mode mode);

objectives::LossBreakdown breakdown(const ad::Tape& tape, const BatchLoss& loss);

// ---------------------------------------------------------------- training

struct EpochMetrics {
  std::size_t epoch = 0;
  objectives::LossBreakdown train_loss;  // batch means
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double test_fp_rate = 0.0;
  bool improved = false;
  double wall_seconds = 0.0;  // logged only, never serialized
};

struct RunReport {
  nlohmann::json config;
  model::ModelConfig model;
  std::string mask;
  std::string loss;
  std::vector<EpochMetrics> epochs;
  std::size_t best_epoch = 0;
  double best_test_fp_rate = 1.0;
  double best_test_accuracy = 0.0;
  Evaluation best_evaluation;
  std::string checkpoint;
  std::string stop_reason;
  model::ModelParams best_params;
  model::ModelParams final_params;
};

nlohmann::json to_json(const RunReport& r);

struct BatchTrace {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  objectives::LossBreakdown loss;
};

struct TrainHooks {
  std::function<void(const BatchTrace&)> on_batch;
  std::function<void(const EpochMetrics&)> on_epoch;
};

RunReport train(const TrainConfig& cfg, const data::DatasetSplit& split,
                const data::EmbeddingSet& embeddings, const swing::SimilarityGraph& user_sims,
                const swing::SimilarityGraph& item_sims, const TrainHooks& hooks = {});

struct AggregateReport {
  std::vector<RunReport> runs;
  double mean_accuracy = 0.0, min_accuracy = 0.0, max_accuracy = 0.0;
  double mean_fp_rate = 0.0, min_fp_rate = 0.0, max_fp_rate = 0.0;
};

AggregateReport aggregate(std::vector<RunReport> runs);

// Runs with seeds cfg.seed + 0 ... cfg.seed + n - 1.
AggregateReport repeat_runs(const TrainConfig& cfg, std::size_t n, const data::DatasetSplit& split,
                            const data::EmbeddingSet& embeddings,
                            const swing::SimilarityGraph& user_sims,
                            const swing::SimilarityGraph& item_sims);

nlohmann::json to_json(const AggregateReport& a);

// ---------------------------------------------------------------- comparison table

struct ArmSummary {
  std::string mask;  // "text" | "image" | "text+image"
  std::string loss;  // "BCE" | "BCE + Contr."
  std::vector<double> accuracies;
  std::vector<double> fp_rates;
};

struct TableRow {
  std::string model;
  std::string loss;
  double accuracy = 0.0;  // mean over runs
  double fp_rate = 0.0;
  std::size_t runs = 0;
};

struct ComparisonTable {
  std::vector<TableRow> rows;
  std::vector<std::string> warnings;

  std::string markdown() const;
  nlohmann::json to_json() const;
};

std::string mask_display_name(const std::string& mask);
// Percent with two decimals: 0.0015 -> "0.15".
std::string percent(double fraction);
// Rows follow the given arm order; arms without runs are dropped with a warning.
ComparisonTable emit_table(std::span<const ArmSummary> arms);
// Sorts arms into the reference order: Text Only, Image Only, Text + Image,
// each with the contrastive arm first.
void sort_table_order(std::vector<ArmSummary>& arms);

}  // namespace dlrrec::trainer
