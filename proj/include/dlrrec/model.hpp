#pragma once

// DLRM-lite ranking network with co-trained content projections.
//
//   dense features  -> dense MLP   -> z_dense  [d_int]
//   sparse ids      -> mean-pooled embedding rows -> z_sparse [d_int]
//   raw content c   -> projection head c -> z_c [d_int]   (one per active channel)
//   pairwise dots of {z_dense, z_sparse, z_c...}, concatenated after z_dense
//   -> top MLP -> logit
//
// Every pathway ends in d_int so the dot-product interaction is defined.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dlrrec/autodiff.hpp"
#include "dlrrec/dataio.hpp"

namespace dlrrec::model {

struct ProjectionConfig {
  std::string name;
  data::Entity entity = data::Entity::User;
  std::size_t d_raw = 384;
  std::vector<std::size_t> hidden;

  bool operator==(const ProjectionConfig&) const = default;
};

struct ModelConfig {
  std::size_t d_int = 32;
  std::size_t dense_dim = 4;
  std::vector<std::size_t> dense_hidden = {64};
  std::vector<std::size_t> top_hidden = {64, 32};
  std::size_t sparse_vocab = 180;
  // Active content channels. Masked channels are simply absent, so the top
  // MLP input width is fixed per mask.
  std::vector<ProjectionConfig> channels;
  double dropout = 0.1;
  std::uint64_t init_seed = 0;

  std::size_t pad_id() const { return sparse_vocab - 1; }
  std::size_t interaction_vectors() const { return 2 + channels.size(); }
  std::size_t top_input_dim() const;
  const ProjectionConfig& channel(const std::string& name) const;
  bool has_channel(const std::string& name) const;
  void check() const;

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Channel lists for the named ablation arms: "text", "image", "text+image".
std::vector<std::string> mask_channels(const std::string& arm);
std::span<const std::string> mask_arms();

// Model config over the schema's channels restricted to `active`.
ModelConfig config_for(const data::Schema& schema, std::span<const std::string> active,
                       std::vector<std::size_t> projection_hidden = {});

struct ModelParams {
  std::map<std::string, ad::Tensor> tensors;

  const ad::Tensor& at(const std::string& name) const;
  bool operator==(const ModelParams&) const = default;
};

ModelParams init(const ModelConfig& cfg);

// Parameter tensors registered on a tape.
struct BoundParams {
  std::map<std::string, ad::Var> vars;
  ad::Var operator[](const std::string& name) const;
};

BoundParams bind(ad::Tape& tape, const ModelParams& params);

// Inputs for a batch of records, laid out row-per-record.
struct Batch {
  ad::Tensor dense;
  std::vector<std::size_t> sparse_ids;
  std::vector<std::size_t> sparse_offsets;
  std::map<std::string, ad::Tensor> raw;
  std::size_t size() const { return dense.rows(); }
};

Batch make_batch(const ModelConfig& cfg, std::span<const data::InteractionRecord* const> records,
                 const data::EmbeddingSet& embeddings);
Batch make_batch(const ModelConfig& cfg, std::span<const data::InteractionRecord> records,
                 const data::EmbeddingSet& embeddings);

// Raw channel vectors for a list of entity ids, one row each.
ad::Tensor raw_rows(const ProjectionConfig& channel, std::span<const std::string> ids,
                    const data::EmbeddingSet& embeddings);

ad::Var project(ad::Tape& tape, const BoundParams& p, const ModelConfig& cfg,
                const std::string& channel, ad::Var raw, ad::Mode mode, Rng& rng);
ad::Var pool_sparse(ad::Tape& tape, const BoundParams& p, const ModelConfig& cfg,
                    std::span<const std::size_t> ids, std::span<const std::size_t> offsets);

struct BatchForward {
  ad::Var logits;  // [B x 1]
  std::map<std::string, ad::Var> reduced;
};

BatchForward forward_batch(ad::Tape& tape, const BoundParams& p, const ModelConfig& cfg,
                           const Batch& batch, ad::Mode mode, Rng& rng);

// Vector-level conveniences that build and discard their own tape.
std::vector<double> project(const ModelParams& params, const ModelConfig& cfg,
                            const std::string& channel, std::span<const double> raw,
                            ad::Mode mode = ad::Mode::Eval, std::uint64_t seed = 0);
std::vector<double> pool_sparse(const ModelParams& params, const ModelConfig& cfg,
                                std::span<const std::size_t> ids);

struct ForwardOutput {
  double logit = 0.0;
  double probability = 0.5;
  std::map<std::string, std::vector<double>> reduced;
};

ForwardOutput forward(const ModelParams& params, const ModelConfig& cfg,
                      const data::InteractionRecord& record, const data::EmbeddingSet& embeddings,
                      ad::Mode mode = ad::Mode::Eval, std::uint64_t seed = 0);

// Eval-mode probabilities for many records, chunked.
std::vector<double> predict(const ModelParams& params, const ModelConfig& cfg,
                            std::span<const data::InteractionRecord> records,
                            const data::EmbeddingSet& embeddings, std::size_t chunk = 512);

nlohmann::json checkpoint_json(const ModelParams& params);
ModelParams params_from_json(const nlohmann::json& j);
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);
// Also verifies every tensor name and shape against init(cfg).
ModelParams load_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg);

}  // namespace dlrrec::model
