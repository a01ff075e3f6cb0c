#include "dlrrec/objectives.hpp"

#include <cmath>
#include <unordered_set>

#include "dlrrec/error.hpp"
#include "dlrrec/rng.hpp"

namespace dlrrec::objectives {

using ad::Tensor;
using ad::Var;
using nlohmann::json;

void LossConfig::check() const {
  if (!(tau > 0.0)) throw ConfigError("loss: tau must be positive");
  if (!(w1 >= 0.0) || !(w2 >= 0.0)) throw ConfigError("loss: w1 and w2 must be non-negative");
  if (!(pos_class_weight > 0.0)) throw ConfigError("loss: pos_class_weight must be positive");
  if (neg_class_weight && !(*neg_class_weight > 0.0))
    throw ConfigError("loss: neg_class_weight must be positive");
  if (negatives == 0) throw ConfigError("loss: negatives (K) must be at least 1");
}

void to_json(json& j, const LossConfig& c) {
  j = json{{"tau", c.tau},
           {"w1", c.w1},
           {"w2", c.w2},
           {"pos_class_weight", c.pos_class_weight},
           {"neg_class_weight", c.neg_class_weight ? json(*c.neg_class_weight) : json(nullptr)},
           {"negatives", c.negatives},
           {"normalize", c.normalize},
           {"contrastive", c.contrastive}};
}

void from_json(const json& j, LossConfig& c) {
  LossConfig d;
  c.tau = j.value("tau", d.tau);
  c.w1 = j.value("w1", d.w1);
  c.w2 = j.value("w2", d.w2);
  c.pos_class_weight = j.value("pos_class_weight", d.pos_class_weight);
  c.neg_class_weight.reset();
  if (j.contains("neg_class_weight") && !j.at("neg_class_weight").is_null())
    c.neg_class_weight = j.at("neg_class_weight").get<double>();
  c.negatives = j.value("negatives", d.negatives);
  c.normalize = j.value("normalize", d.normalize);
  c.contrastive = j.value("contrastive", d.contrastive);
}

LossConfig resolve_class_weights(LossConfig cfg, std::span<const data::InteractionRecord> train) {
  if (cfg.neg_class_weight) return cfg;
  std::size_t pos = 0;
  for (const auto& r : train) pos += r.label == 1 ? 1 : 0;
  const std::size_t neg = train.size() - pos;
  cfg.neg_class_weight =
      (pos == 0 || neg == 0) ? 1.0 : static_cast<double>(pos) / static_cast<double>(neg);
  return cfg;
}

// ---------------------------------------------------------------- BCE

Var weighted_bce(ad::Tape& tape, Var logits, std::span<const int> labels, double pos_weight,
                 double neg_weight) {
  const Tensor& z = tape.value(logits);
  if (labels.empty()) throw ContractError("weighted_bce: empty batch");
  if (z.size() != labels.size() || z.cols() != 1) {
    throw DimensionError("weighted_bce: logits " + z.shape_str() + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = labels.size();
  Tensor sign({n, 1});
  Tensor weight({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ContractError("weighted_bce: labels must be 0 or 1");
    sign[i] = labels[i] == 1 ? -1.0 : 1.0;
    weight[i] = labels[i] == 1 ? pos_weight : neg_weight;
  }
  // softplus(x) = logsumexp([0, x])
  Var signed_logits = tape.mul(logits, tape.constant(std::move(sign)));
  Var softplus =
      tape.logsumexp(tape.concat_cols({tape.constant(Tensor({n, 1})), signed_logits}), 1);
  return tape.mean_all(tape.mul(softplus, tape.constant(std::move(weight))));
}

double weighted_bce(std::span<const double> probabilities, std::span<const int> labels,
                    const LossConfig& cfg) {
  if (probabilities.size() != labels.size())
    throw DimensionError("weighted_bce: probabilities and labels differ in length");
  ad::Tape tape;
  Tensor z({probabilities.size(), 1});
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    const double p = probabilities[i];
    if (!(p > 0.0 && p < 1.0)) throw DomainError("weighted_bce: probability outside (0, 1)");
    z[i] = std::log(p) - std::log1p(-p);
  }
  Var loss = weighted_bce(tape, tape.constant(std::move(z)), labels, cfg.pos_class_weight,
                          cfg.neg_class_weight.value_or(1.0));
  return tape.value(loss).item();
}

// ---------------------------------------------------------------- sampling

ContrastiveBatch sample_contrastive(swing::Side side, std::span<const std::string> entities,
                                    const swing::SimilarityGraph& sims,
                                    std::span<const std::string> corpus, std::size_t negatives,
                                    std::uint64_t seed) {
  if (sims.side != side) throw ContractError("sample_contrastive: similarity graph is for the other side");
  if (negatives == 0) throw ConfigError("sample_contrastive: K must be at least 1");
  Rng rng(seed);
  ContrastiveBatch out;
  out.side = side;
  std::unordered_set<std::string> excluded;
  std::unordered_set<std::size_t> chosen;
  for (const auto& id : entities) {
    const auto neighbors = sims.of(id);
    if (neighbors.empty()) {
      ++out.skipped;
      continue;
    }
    excluded.clear();
    excluded.insert(id);
    for (const auto& n : neighbors) excluded.insert(n.id);
    std::size_t eligible = 0;
    for (const auto& c : corpus) eligible += excluded.contains(c) ? 0 : 1;
    if (eligible < negatives) {
      throw ConfigError("sample_contrastive: corpus of " + std::to_string(corpus.size()) +
                        " leaves " + std::to_string(eligible) + " negatives for '" + id +
                        "', need K = " + std::to_string(negatives));
    }
    ContrastiveAnchor a;
    a.anchor = id;
    a.positive = neighbors[static_cast<std::size_t>(rng.below(neighbors.size()))].id;
    chosen.clear();
    while (a.negatives.size() < negatives) {
      const auto pick = static_cast<std::size_t>(rng.below(corpus.size()));
      if (excluded.contains(corpus[pick]) || !chosen.insert(pick).second) continue;
      a.negatives.push_back(corpus[pick]);
    }
    out.anchors.push_back(std::move(a));
  }
  return out;
}

// ---------------------------------------------------------------- InfoNCE

namespace {

// Rows scaled to unit L2 norm: x * (1 / |x|) broadcast with an outer product.
Var l2_normalize_rows(ad::Tape& tape, Var x) {
  const std::size_t d = tape.value(x).cols();
  Var sq = tape.sum(tape.mul(x, x), 1);
  Var inv = tape.exp(tape.scale(tape.log(sq), -0.5));
  Var spread = tape.matmul(inv, tape.constant(Tensor({1, d}, 1.0)));
  return tape.mul(x, spread);
}

}  // namespace

Var infonce(ad::Tape& tape, Var table, const ContrastiveIndex& index, double tau, bool normalize) {
  if (!(tau > 0.0)) throw ConfigError("infonce: tau must be positive");
  const std::size_t n = index.anchors.size();
  if (n == 0) throw ContractError("infonce: no anchors");
  if (index.positives.size() != n || index.negatives.size() != n)
    throw ContractError("infonce: anchors, positives and negatives disagree in count");
  const std::size_t k = index.negatives.front().size();
  for (const auto& row : index.negatives)
    if (row.size() != k) throw ContractError("infonce: ragged negative lists");

  Var emb = normalize ? l2_normalize_rows(tape, table) : table;
  Var anchors = tape.gather_rows(emb, index.anchors);
  auto logit = [&](Var other) { return tape.scale(tape.sum(tape.mul(anchors, other), 1), 1.0 / tau); };

  Var positive = logit(tape.gather_rows(emb, index.positives));
  std::vector<Var> columns{positive};
  for (std::size_t j = 0; j < k; ++j) {
    std::vector<std::size_t> rows(n);
    for (std::size_t a = 0; a < n; ++a) rows[a] = index.negatives[a][j];
    columns.push_back(logit(tape.gather_rows(emb, std::move(rows))));
  }
  Var lse = tape.logsumexp(tape.concat_cols(columns), 1);
  return tape.mean_all(tape.add(lse, tape.neg(positive)));
}

InfoNceValue infonce(std::span<const AnchorVectors> anchors, double tau, bool normalize) {
  InfoNceValue out;
  if (anchors.empty()) return out;
  const std::size_t d = anchors.front().anchor.size();
  std::vector<double> rows;
  ContrastiveIndex index;
  auto push = [&](const std::vector<double>& v) {
    if (v.size() != d) throw DimensionError("infonce: vectors differ in dimension");
    rows.insert(rows.end(), v.begin(), v.end());
    return rows.size() / d - 1;
  };
  for (const auto& a : anchors) {
    index.anchors.push_back(push(a.anchor));
    index.positives.push_back(push(a.positive));
    auto& negs = index.negatives.emplace_back();
    for (const auto& v : a.negatives) negs.push_back(push(v));
  }
  ad::Tape tape;
  const std::size_t count = rows.size() / d;
  Var table = tape.constant(Tensor({count, d}, std::move(rows)));
  out.loss = tape.value(infonce(tape, table, index, tau, normalize)).item();
  out.anchors = anchors.size();
  out.absent = false;
  return out;
}

// ---------------------------------------------------------------- composite

LossBreakdown composite_loss(double rec, double ii, double uu, const LossConfig& cfg) {
  LossBreakdown b;
  b.rec = rec;
  b.ii = ii;
  b.uu = uu;
  b.total = rec + (cfg.w1 * ii + cfg.w2 * uu);
  return b;
}

Var composite_loss(ad::Tape& tape, Var rec, std::optional<Var> ii, std::optional<Var> uu,
                   const LossConfig& cfg) {
  std::optional<Var> aux;
  if (ii) aux = tape.scale(*ii, cfg.w1);
  if (uu) {
    Var term = tape.scale(*uu, cfg.w2);
    aux = aux ? tape.add(*aux, term) : term;
  }
  return aux ? tape.add(rec, *aux) : rec;
}

}  // namespace dlrrec::objectives
