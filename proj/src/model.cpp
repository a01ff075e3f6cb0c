#include "dlrrec/model.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <set>

#include "dlrrec/error.hpp"

namespace dlrrec::model {

using ad::Tensor;
using ad::Var;
using nlohmann::json;

namespace {

const std::array<std::string, 3> kArms = {"text", "image", "text+image"};

std::string weight_name(const std::string& prefix, std::size_t layer) {
  return prefix + ".w" + std::to_string(layer);
}

std::string bias_name(const std::string& prefix, std::size_t layer) {
  return prefix + ".b" + std::to_string(layer);
}

std::string projection_prefix(const std::string& channel) { return "proj." + channel; }

// Layer widths from input to output.
std::vector<std::size_t> widths(std::size_t in, const std::vector<std::size_t>& hidden,
                                std::size_t out) {
  std::vector<std::size_t> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

void add_mlp_shapes(std::map<std::string, std::vector<std::size_t>>& shapes,
                    const std::string& prefix, const std::vector<std::size_t>& w) {
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    shapes[weight_name(prefix, l)] = {w[l], w[l + 1]};
    shapes[bias_name(prefix, l)] = {1, w[l + 1]};
  }
}

std::map<std::string, std::vector<std::size_t>> param_shapes(const ModelConfig& cfg) {
  std::map<std::string, std::vector<std::size_t>> shapes;
  shapes["sparse.table"] = {cfg.sparse_vocab, cfg.d_int};
  add_mlp_shapes(shapes, "dense", widths(cfg.dense_dim, cfg.dense_hidden, cfg.d_int));
  for (const auto& c : cfg.channels)
    add_mlp_shapes(shapes, projection_prefix(c.name), widths(c.d_raw, c.hidden, cfg.d_int));
  add_mlp_shapes(shapes, "top", widths(cfg.top_input_dim(), cfg.top_hidden, 1));
  return shapes;
}

// relu on hidden layers, dropout after each hidden activation, linear output.
Var mlp(ad::Tape& tape, const BoundParams& p, const std::string& prefix, std::size_t layers,
        Var x, double dropout, ad::Mode mode, Rng& rng) {
  Var h = x;
  for (std::size_t l = 0; l < layers; ++l) {
    h = tape.add_row(tape.matmul(h, p[weight_name(prefix, l)]), p[bias_name(prefix, l)]);
    if (l + 1 < layers) h = tape.dropout(tape.relu(h), dropout, mode, rng);
  }
  return h;
}

}  // namespace

// ---------------------------------------------------------------- config

std::size_t ModelConfig::top_input_dim() const {
  const std::size_t n = interaction_vectors();
  return d_int + n * (n - 1) / 2;
}

const ProjectionConfig& ModelConfig::channel(const std::string& name) const {
  for (const auto& c : channels)
    if (c.name == name) return c;
  throw ConfigError("model has no active channel '" + name + "'");
}

bool ModelConfig::has_channel(const std::string& name) const {
  for (const auto& c : channels)
    if (c.name == name) return true;
  return false;
}

void ModelConfig::check() const {
  if (d_int == 0 || dense_dim == 0) throw ConfigError("model: d_int and dense_dim must be positive");
  if (sparse_vocab < 2) throw ConfigError("model: sparse_vocab must be at least 2");
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw ConfigError("model: dropout must lie in [0, 1), got " + std::to_string(dropout));
  std::set<std::string> seen;
  for (const auto& c : channels) {
    if (c.d_raw == 0) throw ConfigError("model: channel '" + c.name + "' has d_raw 0");
    if (!seen.insert(c.name).second) throw ConfigError("model: duplicate channel '" + c.name + "'");
  }
  auto positive = [](const std::vector<std::size_t>& v) {
    for (auto x : v)
      if (x == 0) throw ConfigError("model: layer widths must be positive");
  };
  positive(dense_hidden);
  positive(top_hidden);
  for (const auto& c : channels) positive(c.hidden);
}

void to_json(json& j, const ModelConfig& c) {
  json channels = json::array();
  for (const auto& p : c.channels) {
    channels.push_back({{"name", p.name},
                        {"entity", data::to_string(p.entity)},
                        {"d_raw", p.d_raw},
                        {"hidden", p.hidden}});
  }
  j = json{{"d_int", c.d_int},           {"dense_dim", c.dense_dim},
           {"dense_hidden", c.dense_hidden}, {"top_hidden", c.top_hidden},
           {"sparse_vocab", c.sparse_vocab}, {"pad_id", c.pad_id()},
           {"channels", channels},       {"dropout", c.dropout},
           {"init_seed", c.init_seed}};
}

void from_json(const json& j, ModelConfig& c) {
  ModelConfig d;
  c.d_int = j.value("d_int", d.d_int);
  c.dense_dim = j.value("dense_dim", d.dense_dim);
  c.dense_hidden = j.value("dense_hidden", d.dense_hidden);
  c.top_hidden = j.value("top_hidden", d.top_hidden);
  c.sparse_vocab = j.value("sparse_vocab", d.sparse_vocab);
  c.dropout = j.value("dropout", d.dropout);
  c.init_seed = j.value("init_seed", d.init_seed);
  c.channels.clear();
  if (j.contains("channels")) {
    for (const auto& p : j.at("channels")) {
      c.channels.push_back({p.at("name").get<std::string>(),
                            data::entity_from_string(p.at("entity").get<std::string>()),
                            p.at("d_raw").get<std::size_t>(),
                            p.value("hidden", std::vector<std::size_t>{})});
    }
  }
}

std::span<const std::string> mask_arms() { return kArms; }

std::vector<std::string> mask_channels(const std::string& arm) {
  if (arm == "text") return {data::kUserSummary, data::kItemSummary};
  if (arm == "image") return {data::kItemImage};
  if (arm == "text+image" || arm == "all")
    return {data::kUserSummary, data::kItemSummary, data::kItemImage};
  throw ConfigError("unknown channel mask '" + arm + "' (expected text, image or text+image)");
}

ModelConfig config_for(const data::Schema& schema, std::span<const std::string> active,
                       std::vector<std::size_t> projection_hidden) {
  ModelConfig cfg;
  cfg.dense_dim = schema.dense_dim;
  cfg.sparse_vocab = schema.sparse_vocab;
  // Channels keep schema order regardless of the order they were requested in.
  for (const auto& spec : schema.channels) {
    if (std::find(active.begin(), active.end(), spec.name) != active.end())
      cfg.channels.push_back({spec.name, spec.entity, spec.d_raw, projection_hidden});
  }
  for (const auto& name : active) schema.channel(name);
  return cfg;
}

// ---------------------------------------------------------------- params

const Tensor& ModelParams::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw LookupError("no parameter named '" + name + "'");
  return it->second;
}

ModelParams init(const ModelConfig& cfg) {
  cfg.check();
  ModelParams params;
  Rng rng(Rng::derive(cfg.init_seed, {0x1417}));
  for (const auto& [name, shape] : param_shapes(cfg)) {
    Tensor t(shape);
    const auto dot = name.rfind('.');
    const bool is_bias = dot != std::string::npos && name[dot + 1] == 'b';
    if (name == "sparse.table") {
      const double limit = 1.0 / std::sqrt(static_cast<double>(cfg.d_int));
      for (auto& v : t.data()) v = rng.uniform(-limit, limit);
    } else if (!is_bias) {
      const double limit = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
      for (auto& v : t.data()) v = rng.uniform(-limit, limit);
    }
    params.tensors.emplace(name, std::move(t));
  }
  return params;
}

Var BoundParams::operator[](const std::string& name) const {
  auto it = vars.find(name);
  if (it == vars.end()) throw LookupError("no bound parameter named '" + name + "'");
  return it->second;
}

BoundParams bind(ad::Tape& tape, const ModelParams& params) {
  BoundParams b;
  for (const auto& [name, t] : params.tensors) b.vars.emplace(name, tape.parameter(t));
  return b;
}

// ---------------------------------------------------------------- inputs

Tensor raw_rows(const ProjectionConfig& channel, std::span<const std::string> ids,
                const data::EmbeddingSet& embeddings) {
  auto it = embeddings.find(channel.name);
  if (it == embeddings.end())
    throw LookupError("no embeddings loaded for channel '" + channel.name + "'");
  const auto& store = it->second;
  if (store.dim() != channel.d_raw) {
    throw DimensionError("channel '" + channel.name + "' has dimension " +
                         std::to_string(store.dim()) + ", model expects " +
                         std::to_string(channel.d_raw));
  }
  Tensor out({ids.size(), channel.d_raw});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const auto row = store.row(ids[r]);
    for (std::size_t c = 0; c < channel.d_raw; ++c) out.at(r, c) = row[c];
  }
  return out;
}

Batch make_batch(const ModelConfig& cfg, std::span<const data::InteractionRecord* const> records,
                 const data::EmbeddingSet& embeddings) {
  Batch b;
  const std::size_t n = records.size();
  b.dense = Tensor({n, cfg.dense_dim});
  b.sparse_offsets.reserve(n + 1);
  b.sparse_offsets.push_back(0);
  for (std::size_t r = 0; r < n; ++r) {
    const auto& rec = *records[r];
    if (rec.dense.size() != cfg.dense_dim) {
      throw DimensionError("record " + rec.user_id + "/" + rec.item_id + ": dense length " +
                           std::to_string(rec.dense.size()) + ", model expects " +
                           std::to_string(cfg.dense_dim));
    }
    for (std::size_t c = 0; c < cfg.dense_dim; ++c) b.dense.at(r, c) = rec.dense[c];
    for (auto id : rec.sparse) {
      if (id >= cfg.sparse_vocab) {
        throw RangeError("sparse id " + std::to_string(id) + " >= vocab " +
                         std::to_string(cfg.sparse_vocab));
      }
      if (id != cfg.pad_id()) b.sparse_ids.push_back(id);
    }
    b.sparse_offsets.push_back(b.sparse_ids.size());
  }
  for (const auto& ch : cfg.channels) {
    std::vector<std::string> ids(n);
    for (std::size_t r = 0; r < n; ++r)
      ids[r] = ch.entity == data::Entity::User ? records[r]->user_id : records[r]->item_id;
    b.raw.emplace(ch.name, raw_rows(ch, ids, embeddings));
  }
  return b;
}

Batch make_batch(const ModelConfig& cfg, std::span<const data::InteractionRecord> records,
                 const data::EmbeddingSet& embeddings) {
  std::vector<const data::InteractionRecord*> ptrs;
  ptrs.reserve(records.size());
  for (const auto& r : records) ptrs.push_back(&r);
  return make_batch(cfg, ptrs, embeddings);
}

// ---------------------------------------------------------------- forward

Var project(ad::Tape& tape, const BoundParams& p, const ModelConfig& cfg,
            const std::string& channel, Var raw, ad::Mode mode, Rng& rng) {
  const auto& ch = cfg.channel(channel);
  if (tape.value(raw).cols() != ch.d_raw) {
    throw DimensionError("project '" + channel + "': input width " +
                         std::to_string(tape.value(raw).cols()) + ", expected " +
                         std::to_string(ch.d_raw));
  }
  return mlp(tape, p, projection_prefix(channel), ch.hidden.size() + 1, raw, cfg.dropout, mode,
             rng);
}

Var pool_sparse(ad::Tape& tape, const BoundParams& p, const ModelConfig& cfg,
                std::span<const std::size_t> ids, std::span<const std::size_t> offsets) {
  for (auto id : ids) {
    if (id >= cfg.sparse_vocab) {
      throw RangeError("sparse id " + std::to_string(id) + " >= vocab " +
                       std::to_string(cfg.sparse_vocab));
    }
  }
  Var rows = tape.gather_rows(p["sparse.table"], {ids.begin(), ids.end()});
  return tape.segment_mean(rows, {offsets.begin(), offsets.end()});
}

BatchForward forward_batch(ad::Tape& tape, const BoundParams& p, const ModelConfig& cfg,
                           const Batch& batch, ad::Mode mode, Rng& rng) {
  BatchForward out;
  std::vector<Var> vectors;
  Var z_dense = mlp(tape, p, "dense", cfg.dense_hidden.size() + 1, tape.constant(batch.dense),
                    cfg.dropout, mode, rng);
  vectors.push_back(z_dense);
  vectors.push_back(pool_sparse(tape, p, cfg, batch.sparse_ids, batch.sparse_offsets));
  for (const auto& ch : cfg.channels) {
    Var z = project(tape, p, cfg, ch.name, tape.constant(batch.raw.at(ch.name)), mode, rng);
    out.reduced.emplace(ch.name, z);
    vectors.push_back(z);
  }
  std::vector<Var> top_in{z_dense};
  for (std::size_t a = 0; a < vectors.size(); ++a)
    for (std::size_t b = a + 1; b < vectors.size(); ++b)
      top_in.push_back(tape.sum(tape.mul(vectors[a], vectors[b]), 1));
  out.logits = mlp(tape, p, "top", cfg.top_hidden.size() + 1, tape.concat_cols(top_in),
                   cfg.dropout, mode, rng);
  return out;
}

std::vector<double> project(const ModelParams& params, const ModelConfig& cfg,
                            const std::string& channel, std::span<const double> raw,
                            ad::Mode mode, std::uint64_t seed) {
  ad::Tape tape;
  auto p = bind(tape, params);
  Rng rng(seed);
  Var x = tape.constant(Tensor({1, raw.size()}, {raw.begin(), raw.end()}));
  Var z = project(tape, p, cfg, channel, x, mode, rng);
  const auto v = tape.value(z).values();
  return {v.begin(), v.end()};
}

std::vector<double> pool_sparse(const ModelParams& params, const ModelConfig& cfg,
                                std::span<const std::size_t> ids) {
  ad::Tape tape;
  auto p = bind(tape, params);
  std::vector<std::size_t> kept;
  for (auto id : ids) {
    if (id >= cfg.sparse_vocab) {
      throw RangeError("sparse id " + std::to_string(id) + " >= vocab " +
                       std::to_string(cfg.sparse_vocab));
    }
    if (id != cfg.pad_id()) kept.push_back(id);
  }
  const std::vector<std::size_t> offsets{0, kept.size()};
  Var z = pool_sparse(tape, p, cfg, kept, offsets);
  const auto v = tape.value(z).values();
  return {v.begin(), v.end()};
}

ForwardOutput forward(const ModelParams& params, const ModelConfig& cfg,
                      const data::InteractionRecord& record, const data::EmbeddingSet& embeddings,
                      ad::Mode mode, std::uint64_t seed) {
  const data::InteractionRecord* ptr = &record;
  const Batch batch = make_batch(cfg, std::span(&ptr, 1), embeddings);
  ad::Tape tape;
  auto p = bind(tape, params);
  Rng rng(seed);
  const auto fwd = forward_batch(tape, p, cfg, batch, mode, rng);
  ForwardOutput out;
  out.logit = tape.value(fwd.logits).item();
  out.probability = tape.value(tape.sigmoid(fwd.logits)).item();
  for (const auto& [name, v] : fwd.reduced) {
    const auto vals = tape.value(v).values();
    out.reduced.emplace(name, std::vector<double>(vals.begin(), vals.end()));
  }
  return out;
}

std::vector<double> predict(const ModelParams& params, const ModelConfig& cfg,
                            std::span<const data::InteractionRecord> records,
                            const data::EmbeddingSet& embeddings, std::size_t chunk) {
  std::vector<double> probs;
  probs.reserve(records.size());
  Rng unused(0);
  for (std::size_t start = 0; start < records.size(); start += chunk) {
    const auto part = records.subspan(start, std::min(chunk, records.size() - start));
    const Batch batch = make_batch(cfg, part, embeddings);
    ad::Tape tape;
    auto p = bind(tape, params);
    const auto fwd = forward_batch(tape, p, cfg, batch, ad::Mode::Eval, unused);
    for (double v : tape.value(tape.sigmoid(fwd.logits)).values()) probs.push_back(v);
  }
  return probs;
}

// ---------------------------------------------------------------- checkpoints

json checkpoint_json(const ModelParams& params) {
  json j = json::object();
  for (const auto& [name, t] : params.tensors) {
    j[name] = {{"shape", t.shape()},
               {"values", std::vector<double>(t.values().begin(), t.values().end())}};
  }
  return j;
}

ModelParams params_from_json(const json& j) {
  ModelParams params;
  try {
    for (const auto& [name, entry] : j.items()) {
      params.tensors.emplace(name, Tensor(entry.at("shape").get<std::vector<std::size_t>>(),
                                          entry.at("values").get<std::vector<double>>()));
    }
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
  } catch (const DimensionError& e) {
    throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
  }
  return params;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  // nlohmann emits the shortest decimal form that round-trips each double.
  out << checkpoint_json(params).dump() << '\n';
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
  return params_from_json(j);
}

ModelParams load_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg) {
  ModelParams params = load_checkpoint(path);
  const auto expected = param_shapes(cfg);
  for (const auto& [name, shape] : expected) {
    auto it = params.tensors.find(name);
    if (it == params.tensors.end())
      throw CheckpointError("checkpoint lacks parameter '" + name + "' required by the config");
    if (it->second.shape() != shape) {
      throw CheckpointError("checkpoint parameter '" + name + "' has shape " +
                            it->second.shape_str() + ", config expects " +
                            Tensor(shape).shape_str());
    }
  }
  for (const auto& [name, t] : params.tensors) {
    if (!expected.contains(name))
      throw CheckpointError("checkpoint parameter '" + name + "' is not part of the config");
  }
  return params;
}

}  // namespace dlrrec::model
