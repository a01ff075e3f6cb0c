#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace dlrrec::data {

// One labelled user-item event.
struct InteractionRecord {
  std::string user_id;
  std::string item_id;
  int rating = 0;
  int label = 0;
  std::vector<double> dense;
  std::vector<std::size_t> sparse;

  bool operator==(const InteractionRecord&) const = default;
};

// Ratings of 4 and 5 are positive.
inline int label_for_rating(int rating) { return rating >= 4 ? 1 : 0; }

enum class Entity { User, Item };

std::string to_string(Entity e);
Entity entity_from_string(const std::string& s);

struct ChannelSpec {
  std::string name;
  Entity entity = Entity::User;
  std::size_t d_raw = 0;

  bool operator==(const ChannelSpec&) const = default;
};

inline const std::string kUserSummary = "user-summary";
inline const std::string kItemSummary = "item-summary";
inline const std::string kItemImage = "item-image";

struct Schema {
  std::size_t dense_dim = 4;
  std::size_t sparse_vocab = 180;
  std::size_t sparse_len = 11;
  std::vector<ChannelSpec> channels;

  // Padding id is always the last vocabulary entry.
  std::size_t pad_id() const { return sparse_vocab - 1; }
  const ChannelSpec& channel(const std::string& name) const;

  bool operator==(const Schema&) const = default;
};

void to_json(nlohmann::json& j, const Schema& s);
void from_json(const nlohmann::json& j, Schema& s);

// Raw content vectors of one channel, keyed by entity id.
class EmbeddingStore {
 public:
  EmbeddingStore() = default;
  EmbeddingStore(std::string channel, std::size_t dim) : channel_(std::move(channel)), dim_(dim) {}

  void add(const std::string& id, std::span<const float> values);

  const std::string& channel() const { return channel_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  std::span<const float> payload() const { return values_; }

  std::optional<std::size_t> index_of(const std::string& id) const;
  bool contains(const std::string& id) const { return index_of(id).has_value(); }
  // Throws LookupError naming the channel and id.
  std::span<const float> row(const std::string& id) const;
  std::span<const float> row(std::size_t index) const;

  bool operator==(const EmbeddingStore& o) const {
    return channel_ == o.channel_ && dim_ == o.dim_ && ids_ == o.ids_ && values_ == o.values_;
  }

 private:
  std::string channel_;
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<float> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

using EmbeddingSet = std::map<std::string, EmbeddingStore>;

std::vector<InteractionRecord> parse_interactions(std::istream& in);
std::vector<InteractionRecord> load_interactions(const std::filesystem::path& path);
std::string format_interaction(const InteractionRecord& r);
void save_interactions(const std::filesystem::path& path, std::span<const InteractionRecord> records);

// Reads the binary embedding format, or the JSONL fallback
// ({"id": ..., "vector": [...]} per line) when the file starts with '{'.
EmbeddingStore load_embeddings(const std::filesystem::path& path, const std::string& channel);
void save_embeddings(const std::filesystem::path& path, const EmbeddingStore& store);
EmbeddingStore decode_embeddings(std::span<const std::uint8_t> bytes, const std::string& channel);
std::vector<std::uint8_t> encode_embeddings(const EmbeddingStore& store);

struct DatasetSplit {
  std::vector<InteractionRecord> train;
  std::vector<InteractionRecord> test;
  Schema schema;
};

DatasetSplit split(std::span<const InteractionRecord> records, double test_fraction,
                   std::uint64_t seed, const Schema& schema);

// Checks record shapes against the schema and that every referenced id has
// a vector in each listed channel.
void validate(std::span<const InteractionRecord> records, const Schema& schema,
              const EmbeddingSet& embeddings, std::span<const std::string> channels);

// Record indices in [0, n), reshuffled per (seed, epoch), chunked into
// batches; the final partial batch is kept.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                   std::uint64_t seed, std::uint64_t epoch);

struct SynthConfig {
  std::size_t user_clusters = 4;
  std::size_t item_clusters = 4;
  std::size_t users = 200;
  std::size_t items = 200;
  std::vector<std::vector<double>> affinity;
  // Relative weight with which a user of cluster a picks an item of cluster
  // b. Empty means uniform item choice.
  std::vector<std::vector<double>> exposure;
  double sigma = 0.3;
  std::size_t d_raw = 64;
  std::size_t interactions_per_user = 40;
  std::uint64_t seed = 1;
  // Noise multiplier for the item-image channel relative to sigma.
  double image_noise_scale = 2.0;
  std::size_t dense_dim = 4;
  std::size_t sparse_vocab = 180;
  std::size_t sparse_len = 11;

  void check() const;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

struct Dataset {
  std::vector<InteractionRecord> records;
  Schema schema;
  EmbeddingSet embeddings;
  // Ground truth, present for synthetic data only.
  std::map<std::string, std::size_t> user_clusters;
  std::map<std::string, std::size_t> item_clusters;
};

Dataset synthesize(const SynthConfig& cfg);

// 4 x 4 clusters, 200 users, 200 items, 40 interactions per user (8000
// total), sigma 0.3, d_raw 384. Exposure and affinity put the positive rate
// near 7/8 with negatives concentrated in one disliked cluster per user.
SynthConfig standard_benchmark();

// Directory layout: interactions.jsonl, schema.json, <channel>.emb per
// channel, and clusters.json when ground truth exists.
void write_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace dlrrec::data
