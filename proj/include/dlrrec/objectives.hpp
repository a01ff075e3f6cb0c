#pragma once

// Training objectives: class-weighted BCE for the ranking head, InfoNCE over
// SWING-derived positives for user-user and item-item structure, and their
// weighted sum  L = L_rec + w1 * L_ii + w2 * L_uu.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dlrrec/autodiff.hpp"
#include "dlrrec/dataio.hpp"
#include "dlrrec/swing.hpp"

namespace dlrrec::objectives {

struct LossConfig {
  double tau = 0.2;
  double w1 = 0.1;  // item-item
  double w2 = 0.1;  // user-user
  double pos_class_weight = 1.0;
  // Unset: #pos / #neg over the training split.
  std::optional<double> neg_class_weight;
  std::size_t negatives = 16;
  bool normalize = false;
  // Off: no contrastive sampling at all (the plain BCE arm).
  bool contrastive = true;

  void check() const;
  bool operator==(const LossConfig&) const = default;
};

void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);

// Fills neg_class_weight from label counts when it is unset.
LossConfig resolve_class_weights(LossConfig cfg, std::span<const data::InteractionRecord> train);

// Mean over the batch of -w(y) [y ln p + (1-y) ln(1-p)], evaluated from
// logits as w(y) * softplus((1 - 2y) z) for stability. Returns a [1 x 1] node.
ad::Var weighted_bce(ad::Tape& tape, ad::Var logits, std::span<const int> labels,
                     double pos_weight, double neg_weight);
double weighted_bce(std::span<const double> probabilities, std::span<const int> labels,
                    const LossConfig& cfg);

struct ContrastiveAnchor {
  std::string anchor;
  std::string positive;
  std::vector<std::string> negatives;
  bool operator==(const ContrastiveAnchor&) const = default;
};

struct ContrastiveBatch {
  swing::Side side = swing::Side::User;
  std::vector<ContrastiveAnchor> anchors;
  std::size_t skipped = 0;
  bool operator==(const ContrastiveBatch&) const = default;
};

// For each entity with SWING neighbors: one positive uniformly from its
// neighbor list and `negatives` distinct corpus entities outside
// {entity} + neighbors. Entities without neighbors are counted as skipped.
ContrastiveBatch sample_contrastive(swing::Side side, std::span<const std::string> entities,
                                    const swing::SimilarityGraph& sims,
                                    std::span<const std::string> corpus, std::size_t negatives,
                                    std::uint64_t seed);

// Row indices into an embedding table for one contrastive batch.
struct ContrastiveIndex {
  std::vector<std::size_t> anchors;
  std::vector<std::size_t> positives;
  std::vector<std::vector<std::size_t>> negatives;  // [anchor][k]
};

// Mean over anchors of -ln softmax of the positive logit among
// {u.p / tau, u.n_k / tau}. `table` holds one embedding per row. Returns a
// [1 x 1] node; the index must contain at least one anchor.
ad::Var infonce(ad::Tape& tape, ad::Var table, const ContrastiveIndex& index, double tau,
                bool normalize = false);

struct AnchorVectors {
  std::vector<double> anchor;
  std::vector<double> positive;
  std::vector<std::vector<double>> negatives;
};

struct InfoNceValue {
  double loss = 0.0;
  std::size_t anchors = 0;
  // No usable anchors: the term is absent and loss is 0.
  bool absent = true;
};

InfoNceValue infonce(std::span<const AnchorVectors> anchors, double tau, bool normalize = false);

struct LossBreakdown {
  double rec = 0.0;
  double ii = 0.0;
  double uu = 0.0;
  double total = 0.0;
  std::size_t item_anchors = 0;
  std::size_t user_anchors = 0;
  bool operator==(const LossBreakdown&) const = default;
};

LossBreakdown composite_loss(double rec, double ii, double uu, const LossConfig& cfg);
// rec + w1 * ii + w2 * uu on the tape; absent terms are skipped.
ad::Var composite_loss(ad::Tape& tape, ad::Var rec, std::optional<ad::Var> ii,
                       std::optional<ad::Var> uu, const LossConfig& cfg);

}  // namespace dlrrec::objectives
