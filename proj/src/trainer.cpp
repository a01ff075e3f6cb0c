#include "dlrrec/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "dlrrec/error.hpp"
#include "dlrrec/rng.hpp"

namespace dlrrec::trainer {

using ad::Tensor;
using ad::Var;
using nlohmann::json;

// ---------------------------------------------------------------- Adam

void adam_step(model::ModelParams& params, const GradMap& grads, AdamState& state, std::size_t t,
               const AdamConfig& cfg) {
  if (t == 0) throw ContractError("adam_step: step counter starts at 1");
  for (const auto& [name, g] : grads) {
    auto it = params.tensors.find(name);
    if (it == params.tensors.end()) throw ContractError("adam_step: gradient for unknown parameter '" + name + "'");
    if (!it->second.same_shape(g)) {
      throw ContractError("adam_step: gradient " + g.shape_str() + " for '" + name + "' of shape " +
                          it->second.shape_str());
    }
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (auto& [name, theta] : params.tensors) {
    auto [mit, fresh_m] = state.m.try_emplace(name, Tensor(theta.shape(), 0.0));
    auto [vit, fresh_v] = state.v.try_emplace(name, Tensor(theta.shape(), 0.0));
    (void)fresh_m;
    (void)fresh_v;
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    auto git = grads.find(name);
    const Tensor* g = git == grads.end() ? nullptr : &git->second;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      theta[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
  }
}

// ---------------------------------------------------------------- metrics

Evaluation score_predictions(std::span<const double> probabilities, std::span<const int> labels,
                             double threshold) {
  if (probabilities.size() != labels.size())
    throw DimensionError("score_predictions: probabilities and labels differ in length");
  Evaluation e;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool predicted = probabilities[i] >= threshold;
    if (labels[i] == 1) {
      (predicted ? e.confusion.tp : e.confusion.fn) += 1;
    } else {
      (predicted ? e.confusion.fp : e.confusion.tn) += 1;
    }
  }
  const auto& c = e.confusion;
  const std::size_t n = labels.size();
  e.accuracy = n == 0 ? 0.0 : static_cast<double>(c.tp + c.tn) / static_cast<double>(n);
  const std::size_t negatives = c.fp + c.tn;
  e.no_negatives = negatives == 0;
  e.fp_rate = negatives == 0 ? 0.0 : static_cast<double>(c.fp) / static_cast<double>(negatives);
  return e;
}

Evaluation evaluate(const model::ModelParams& params, const model::ModelConfig& cfg,
                    std::span<const data::InteractionRecord> records,
                    const data::EmbeddingSet& embeddings, double threshold) {
  const auto probs = model::predict(params, cfg, records, embeddings);
  std::vector<int> labels;
  labels.reserve(records.size());
  for (const auto& r : records) labels.push_back(r.label);
  return score_predictions(probs, labels, threshold);
}

json to_json(const Evaluation& e) {
  return json{{"accuracy", e.accuracy},
              {"fp_rate", e.fp_rate},
              {"confusion",
               {{"tp", e.confusion.tp}, {"tn", e.confusion.tn}, {"fp", e.confusion.fp}, {"fn", e.confusion.fn}}},
              {"no_negatives", e.no_negatives}};
}

// ---------------------------------------------------------------- early stopping

EarlyStopper::EarlyStopper(std::size_t min_epochs, std::size_t patience)
    : min_epochs_(min_epochs), patience_(patience) {
  if (patience == 0) throw ConfigError("early stopping: patience must be at least 1");
}

bool EarlyStopper::update(std::size_t epoch, double fp_rate) {
  if (fp_rate < best_) {
    best_ = fp_rate;
    best_epoch_ = epoch;
    return true;
  }
  return false;
}

bool EarlyStopper::should_stop(std::size_t epoch) const {
  const std::size_t anchor = std::max(best_epoch_.value_or(0), min_epochs_);
  return epoch >= anchor && epoch - anchor >= patience_;
}

// ---------------------------------------------------------------- configuration

void TrainConfig::check() const {
  if (!(adam.learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0))
    throw ConfigError("train: Adam betas must lie in [0, 1)");
  if (!(adam.epsilon > 0.0)) throw ConfigError("train: Adam epsilon must be positive");
  if (batch_size == 0) throw ConfigError("train: batch_size must be at least 1");
  if (max_epochs == 0) throw ConfigError("train: max_epochs must be at least 1");
  if (patience == 0) throw ConfigError("train: patience must be at least 1");
  if (repeats == 0) throw ConfigError("train: repeats must be at least 1");
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("train: test_fraction must lie in (0, 1)");
  model::mask_channels(mask);
  loss.check();
}

json to_json(const TrainConfig& c) {
  json model_json = c.model;
  model_json.erase("channels");
  model_json.erase("pad_id");
  model_json.erase("dense_dim");
  model_json.erase("sparse_vocab");
  model_json.erase("init_seed");
  return json{{"adam",
               {{"learning_rate", c.adam.learning_rate},
                {"beta1", c.adam.beta1},
                {"beta2", c.adam.beta2},
                {"epsilon", c.adam.epsilon}}},
              {"batch_size", c.batch_size},
              {"max_epochs", c.max_epochs},
              {"min_epochs", c.min_epochs},
              {"patience", c.patience},
              {"repeats", c.repeats},
              {"seed", c.seed},
              {"split_seed", c.split_seed},
              {"test_fraction", c.test_fraction},
              {"mask", c.mask},
              {"projection_hidden", c.projection_hidden},
              {"loss", c.loss},
              {"model", model_json}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  try {
    if (j.contains("adam")) {
      const auto& a = j.at("adam");
      c.adam.learning_rate = a.value("learning_rate", c.adam.learning_rate);
      c.adam.beta1 = a.value("beta1", c.adam.beta1);
      c.adam.beta2 = a.value("beta2", c.adam.beta2);
      c.adam.epsilon = a.value("epsilon", c.adam.epsilon);
    }
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.min_epochs = j.value("min_epochs", c.min_epochs);
    c.patience = j.value("patience", c.patience);
    c.repeats = j.value("repeats", c.repeats);
    c.seed = j.value("seed", c.seed);
    c.split_seed = j.value("split_seed", c.split_seed);
    c.test_fraction = j.value("test_fraction", c.test_fraction);
    c.mask = j.value("mask", c.mask);
    c.projection_hidden = j.value("projection_hidden", c.projection_hidden);
    if (j.contains("loss")) c.loss = j.at("loss").get<objectives::LossConfig>();
    if (j.contains("model")) c.model = j.at("model").get<model::ModelConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.check();
  return c;
}

TrainConfig benchmark_config() {
  TrainConfig c;
  c.max_epochs = 40;
  c.min_epochs = 20;
  c.patience = 10;
  return c;
}

model::ModelConfig resolve_model_config(const TrainConfig& cfg, const data::Schema& schema) {
  const auto active = model::mask_channels(cfg.mask);
  std::vector<std::string> present;
  for (const auto& name : active) {
    bool found = false;
    for (const auto& ch : schema.channels) found = found || ch.name == name;
    if (found) present.push_back(name);
  }
  if (present.empty())
    throw ConfigError("mask '" + cfg.mask + "' selects no channel present in the dataset");
  model::ModelConfig m = model::config_for(schema, present, cfg.projection_hidden);
  m.d_int = cfg.model.d_int;
  m.dense_hidden = cfg.model.dense_hidden;
  m.top_hidden = cfg.model.top_hidden;
  m.dropout = cfg.model.dropout;
  m.init_seed = cfg.seed;
  m.check();
  return m;
}

std::string loss_arm(const objectives::LossConfig& loss) {
  return loss.contrastive ? "BCE + Contr." : "BCE";
}

// ---------------------------------------------------------------- per-batch loss

namespace {

constexpr std::uint64_t kDropoutStream = 0xd709;
constexpr std::uint64_t kSampleStream = 0x5a3e;

std::vector<std::string> distinct_sorted(std::set<std::string> ids) { return {ids.begin(), ids.end()}; }

void require_finite(double value, std::uint64_t epoch, std::uint64_t batch, const char* term) {
  if (!std::isfinite(value)) {
    throw NumericError("non-finite " + std::string(term) + " loss (" + std::to_string(value) +
                       ") at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch));
  }
}

}  // namespace

std::optional<std::string> contrastive_channel(const model::ModelConfig& cfg, swing::Side side) {
  for (const auto& ch : cfg.channels)
    if (ch.entity == side) return ch.name;
  return std::nullopt;
}

LossContext make_loss_context(const model::ModelConfig& model, const objectives::LossConfig& loss,
                              std::span<const data::InteractionRecord> train,
                              const data::EmbeddingSet& embeddings,
                              const swing::SimilarityGraph& user_sims,
                              const swing::SimilarityGraph& item_sims, std::uint64_t seed) {
  if (user_sims.side != swing::Side::User || item_sims.side != swing::Side::Item)
    throw ContractError("make_loss_context: similarity graphs passed for the wrong sides");
  LossContext ctx;
  ctx.model = model;
  ctx.loss = objectives::resolve_class_weights(loss, train);
  ctx.embeddings = &embeddings;
  ctx.user_sims = &user_sims;
  ctx.item_sims = &item_sims;
  ctx.seed = seed;
  std::set<std::string> users, items;
  for (const auto& r : train) {
    users.insert(r.user_id);
    items.insert(r.item_id);
  }
  ctx.user_corpus = distinct_sorted(std::move(users));
  ctx.item_corpus = distinct_sorted(std::move(items));
  return ctx;
}

namespace {

// Contrastive term for one side, or nullopt when no anchor qualifies.
std::optional<Var> contrastive_term(ad::Tape& tape, const model::BoundParams& params,
                                    const LossContext& ctx,
                                    std::span<const data::InteractionRecord* const> records,
                                    swing::Side side, std::uint64_t epoch, std::uint64_t batch,
                                    std::size_t& anchors) {
  const auto channel = contrastive_channel(ctx.model, side);
  if (!channel) return std::nullopt;
  std::set<std::string> ids;
  for (const auto* r : records) ids.insert(side == swing::Side::User ? r->user_id : r->item_id);
  const auto entities = distinct_sorted(std::move(ids));
  const auto& sims = side == swing::Side::User ? *ctx.user_sims : *ctx.item_sims;
  const auto& corpus = side == swing::Side::User ? ctx.user_corpus : ctx.item_corpus;
  const auto seed =
      Rng::derive(ctx.seed, {kSampleStream, epoch, batch, static_cast<std::uint64_t>(side)});
  const auto sampled =
      objectives::sample_contrastive(side, entities, sims, corpus, ctx.loss.negatives, seed);
  if (sampled.anchors.empty()) return std::nullopt;

  std::vector<std::string> rows;
  std::map<std::string, std::size_t> row_of;
  auto row = [&](const std::string& id) {
    auto [it, fresh] = row_of.try_emplace(id, rows.size());
    if (fresh) rows.push_back(id);
    return it->second;
  };
  objectives::ContrastiveIndex index;
  for (const auto& a : sampled.anchors) {
    index.anchors.push_back(row(a.anchor));
    index.positives.push_back(row(a.positive));
    auto& negs = index.negatives.emplace_back();
    for (const auto& n : a.negatives) negs.push_back(row(n));
  }
  const Tensor raw = model::raw_rows(ctx.model.channel(*channel), rows, *ctx.embeddings);
  // Dropout-free projection; the rng is never drawn from in eval mode.
  Rng unused(0);
  Var table = model::project(tape, params, ctx.model, *channel, tape.constant(raw), ad::Mode::Eval,
                             unused);
  anchors = sampled.anchors.size();
  return objectives::infonce(tape, table, index, ctx.loss.tau, ctx.loss.normalize);
}

}  // namespace

BatchLoss batch_loss(ad::Tape& tape, const model::BoundParams& params, const LossContext& ctx,
                     std::span<const data::InteractionRecord* const> records, std::uint64_t epoch,
                     std::uint64_t batch, ad::Mode mode) {
  if (records.empty()) throw ContractError("batch_loss: empty batch");
  const auto inputs = model::make_batch(ctx.model, records, *ctx.embeddings);
  Rng dropout(Rng::derive(ctx.seed, {kDropoutStream, epoch, batch}));
  const auto fwd = model::forward_batch(tape, params, ctx.model, inputs, mode, dropout);
  std::vector<int> labels;
  labels.reserve(records.size());
  for (const auto* r : records) labels.push_back(r->label);

  BatchLoss out;
  out.rec = objectives::weighted_bce(tape, fwd.logits, labels, ctx.loss.pos_class_weight,
                                     ctx.loss.neg_class_weight.value_or(1.0));
  if (ctx.loss.contrastive) {
    out.ii = contrastive_term(tape, params, ctx, records, swing::Side::Item, epoch, batch,
                              out.item_anchors);
    out.uu = contrastive_term(tape, params, ctx, records, swing::Side::User, epoch, batch,
                              out.user_anchors);
  }
  out.total = objectives::composite_loss(tape, out.rec, out.ii, out.uu, ctx.loss);
  return out;
}

objectives::LossBreakdown breakdown(const ad::Tape& tape, const BatchLoss& loss) {
  objectives::LossBreakdown b;
  b.rec = tape.value(loss.rec).item();
  b.ii = loss.ii ? tape.value(*loss.ii).item() : 0.0;
  b.uu = loss.uu ? tape.value(*loss.uu).item() : 0.0;
  b.total = tape.value(loss.total).item();
  b.item_anchors = loss.item_anchors;
  b.user_anchors = loss.user_anchors;
  return b;
}

// ---------------------------------------------------------------- training

namespace {

json to_json(const objectives::LossBreakdown& b) {
  return json{{"rec", b.rec},
              {"ii", b.ii},
              {"uu", b.uu},
              {"total", b.total},
              {"item_anchors", b.item_anchors},
              {"user_anchors", b.user_anchors}};
}

}  // namespace

json to_json(const RunReport& r) {
  json epochs = json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", to_json(e.train_loss)},
                      {"train_accuracy", e.train_accuracy},
                      {"test_accuracy", e.test_accuracy},
                      {"test_fp_rate", e.test_fp_rate},
                      {"improved", e.improved}});
  }
  return json{{"config", r.config},
              {"mask", r.mask},
              {"loss", r.loss},
              {"epochs", epochs},
              {"epochs_run", r.epochs.size()},
              {"best_epoch", r.best_epoch},
              {"best_test_fp_rate", r.best_test_fp_rate},
              {"best_test_accuracy", r.best_test_accuracy},
              {"best_evaluation", to_json(r.best_evaluation)},
              {"checkpoint", r.checkpoint},
              {"stop_reason", r.stop_reason}};
}

RunReport train(const TrainConfig& cfg, const data::DatasetSplit& split,
                const data::EmbeddingSet& embeddings, const swing::SimilarityGraph& user_sims,
                const swing::SimilarityGraph& item_sims, const TrainHooks& hooks) {
  cfg.check();
  if (split.train.empty()) throw ConfigError("train: the training split is empty");
  if (split.test.empty()) throw ConfigError("train: the test split is empty");
  const model::ModelConfig mcfg = resolve_model_config(cfg, split.schema);
  std::vector<std::string> channel_names;
  for (const auto& ch : mcfg.channels) channel_names.push_back(ch.name);
  data::validate(split.train, split.schema, embeddings, channel_names);
  data::validate(split.test, split.schema, embeddings, channel_names);

  const LossContext ctx =
      make_loss_context(mcfg, cfg.loss, split.train, embeddings, user_sims, item_sims, cfg.seed);

  RunReport report;
  report.model = mcfg;
  report.mask = cfg.mask;
  report.loss = loss_arm(cfg.loss);
  report.config = to_json(cfg);
  report.config["resolved_model"] = mcfg;
  report.config["resolved_loss"] = ctx.loss;

  model::ModelParams params = model::init(mcfg);
  AdamState adam;
  std::size_t step = 0;
  EarlyStopper stopper(cfg.min_epochs, cfg.patience);
  report.stop_reason = "max-epochs";

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const auto batches = data::make_batches(split.train.size(), cfg.batch_size, cfg.seed, epoch);
    EpochMetrics metrics;
    metrics.epoch = epoch;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      std::vector<const data::InteractionRecord*> records;
      records.reserve(batches[b].size());
      for (auto i : batches[b]) records.push_back(&split.train[i]);

      ad::Tape tape;
      const auto bound = model::bind(tape, params);
      const BatchLoss loss = batch_loss(tape, bound, ctx, records, epoch, b, ad::Mode::Train);
      const auto values = breakdown(tape, loss);
      require_finite(values.rec, epoch, b, "rec");
      require_finite(values.ii, epoch, b, "item-item");
      require_finite(values.uu, epoch, b, "user-user");
      require_finite(values.total, epoch, b, "total");

      const auto grads = tape.backward(loss.total);
      GradMap named;
      for (const auto& [name, var] : bound.vars)
        if (const Tensor* g = grads.find(var)) named.emplace(name, *g);
      adam_step(params, named, adam, ++step, cfg.adam);

      auto& acc = metrics.train_loss;
      acc.rec += values.rec;
      acc.ii += values.ii;
      acc.uu += values.uu;
      acc.total += values.total;
      acc.item_anchors += values.item_anchors;
      acc.user_anchors += values.user_anchors;
      if (hooks.on_batch) hooks.on_batch({epoch, b, values});
      spdlog::debug("epoch {} batch {}: rec {:.5f} ii {:.5f} uu {:.5f} total {:.5f}", epoch, b,
                    values.rec, values.ii, values.uu, values.total);
    }
    const double nb = static_cast<double>(batches.size());
    metrics.train_loss.rec /= nb;
    metrics.train_loss.ii /= nb;
    metrics.train_loss.uu /= nb;
    metrics.train_loss.total /= nb;

    metrics.train_accuracy = evaluate(params, mcfg, split.train, embeddings).accuracy;
    const Evaluation test = evaluate(params, mcfg, split.test, embeddings);
    metrics.test_accuracy = test.accuracy;
    metrics.test_fp_rate = test.fp_rate;
    metrics.improved = stopper.update(epoch, test.fp_rate);
    if (metrics.improved) {
      report.best_epoch = epoch;
      report.best_test_fp_rate = test.fp_rate;
      report.best_test_accuracy = test.accuracy;
      report.best_evaluation = test;
      report.best_params = params;
    }
    metrics.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    spdlog::info("[{} | {}] epoch {}: loss {:.4f} train acc {:.4f} test acc {:.4f} test fp {:.4f}{} ({:.2f}s)",
                 report.mask, report.loss, epoch, metrics.train_loss.total, metrics.train_accuracy,
                 metrics.test_accuracy, metrics.test_fp_rate, metrics.improved ? " *" : "",
                 metrics.wall_seconds);
    report.epochs.push_back(metrics);
    if (hooks.on_epoch) hooks.on_epoch(metrics);
    if (stopper.should_stop(epoch)) {
      report.stop_reason = "early-stop";
      break;
    }
  }
  report.final_params = std::move(params);
  return report;
}

AggregateReport aggregate(std::vector<RunReport> runs) {
  AggregateReport a;
  a.runs = std::move(runs);
  if (a.runs.empty()) return a;
  a.min_accuracy = a.max_accuracy = a.runs.front().best_test_accuracy;
  a.min_fp_rate = a.max_fp_rate = a.runs.front().best_test_fp_rate;
  for (const auto& r : a.runs) {
    a.mean_accuracy += r.best_test_accuracy;
    a.mean_fp_rate += r.best_test_fp_rate;
    a.min_accuracy = std::min(a.min_accuracy, r.best_test_accuracy);
    a.max_accuracy = std::max(a.max_accuracy, r.best_test_accuracy);
    a.min_fp_rate = std::min(a.min_fp_rate, r.best_test_fp_rate);
    a.max_fp_rate = std::max(a.max_fp_rate, r.best_test_fp_rate);
  }
  const double n = static_cast<double>(a.runs.size());
  a.mean_accuracy /= n;
  a.mean_fp_rate /= n;
  return a;
}

AggregateReport repeat_runs(const TrainConfig& cfg, std::size_t n, const data::DatasetSplit& split,
                            const data::EmbeddingSet& embeddings,
                            const swing::SimilarityGraph& user_sims,
                            const swing::SimilarityGraph& item_sims) {
  if (n == 0) throw ConfigError("repeat_runs: need at least one run");
  std::vector<RunReport> runs;
  for (std::size_t i = 0; i < n; ++i) {
    TrainConfig run = cfg;
    run.seed = cfg.seed + i;
    runs.push_back(train(run, split, embeddings, user_sims, item_sims));
  }
  return aggregate(std::move(runs));
}

json to_json(const AggregateReport& a) {
  json runs = json::array();
  for (const auto& r : a.runs) {
    runs.push_back({{"seed", r.config.value("seed", 0)},
                    {"best_epoch", r.best_epoch},
                    {"best_test_accuracy", r.best_test_accuracy},
                    {"best_test_fp_rate", r.best_test_fp_rate},
                    {"epochs_run", r.epochs.size()},
                    {"stop_reason", r.stop_reason}});
  }
  json out{{"runs", runs},
           {"accuracy", {{"mean", a.mean_accuracy}, {"min", a.min_accuracy}, {"max", a.max_accuracy}}},
           {"fp_rate", {{"mean", a.mean_fp_rate}, {"min", a.min_fp_rate}, {"max", a.max_fp_rate}}}};
  if (!a.runs.empty()) {
    out["mask"] = a.runs.front().mask;
    out["loss"] = a.runs.front().loss;
  }
  return out;
}

// ---------------------------------------------------------------- comparison table

std::string mask_display_name(const std::string& mask) {
  if (mask == "text") return "Text Only";
  if (mask == "image") return "Image Only";
  if (mask == "text+image" || mask == "all") return "Text + Image";
  return mask;
}

std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * fraction);
  return buf;
}

ComparisonTable emit_table(std::span<const ArmSummary> arms) {
  ComparisonTable t;
  for (const auto& arm : arms) {
    if (arm.accuracies.size() != arm.fp_rates.size())
      throw ContractError("emit_table: accuracy and FP lists differ in length");
    if (arm.accuracies.empty()) {
      t.warnings.push_back("no runs for " + mask_display_name(arm.mask) + " / " + arm.loss +
                           "; row omitted");
      spdlog::warn("{}", t.warnings.back());
      continue;
    }
    TableRow row;
    row.model = mask_display_name(arm.mask);
    row.loss = arm.loss;
    row.runs = arm.accuracies.size();
    for (std::size_t i = 0; i < row.runs; ++i) {
      row.accuracy += arm.accuracies[i];
      row.fp_rate += arm.fp_rates[i];
    }
    row.accuracy /= static_cast<double>(row.runs);
    row.fp_rate /= static_cast<double>(row.runs);
    t.rows.push_back(std::move(row));
  }
  return t;
}

std::string ComparisonTable::markdown() const {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "| %-12s | %-12s | %6s | %5s |\n", "Model", "Loss", "Acc.", "FP");
  out << line << "|--------------|--------------|--------|-------|\n";
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "| %-12s | %-12s | %6s | %5s |\n", r.model.c_str(),
                  r.loss.c_str(), percent(r.accuracy).c_str(), percent(r.fp_rate).c_str());
    out << line;
  }
  return out.str();
}

json ComparisonTable::to_json() const {
  json rows_json = json::array();
  for (const auto& r : rows) {
    rows_json.push_back({{"model", r.model},
                         {"loss", r.loss},
                         {"accuracy", r.accuracy},
                         {"fp_rate", r.fp_rate},
                         {"accuracy_pct", percent(r.accuracy)},
                         {"fp_rate_pct", percent(r.fp_rate)},
                         {"runs", r.runs}});
  }
  return json{{"rows", rows_json}, {"warnings", warnings}};
}

void sort_table_order(std::vector<ArmSummary>& arms) {
  auto rank = [](const ArmSummary& a) {
    int m = 3;
    if (a.mask == "text") m = 0;
    else if (a.mask == "image") m = 1;
    else if (a.mask == "text+image" || a.mask == "all") m = 2;
    return std::pair{m, a.loss == "BCE" ? 1 : 0};
  };
  std::stable_sort(arms.begin(), arms.end(),
                   [&](const ArmSummary& a, const ArmSummary& b) { return rank(a) < rank(b); });
}

}  // namespace dlrrec::trainer
