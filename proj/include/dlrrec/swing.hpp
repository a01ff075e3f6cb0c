#pragma once

// SWING similarity over the user-item bipartite graph.
//
// For two items i, j with user sets U_i, U_j:
//   s(i, j) = sum over unordered pairs {u, v} in U_i & U_j of 1 / (alpha + |I_u & I_v|)
// The user-side score is the same expression with the roles swapped.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dlrrec/dataio.hpp"

namespace dlrrec::swing {

using Side = data::Entity;

// Scores closer than this are ordered by id in top-k lists.
inline constexpr double kTieTolerance = 1e-12;

class BipartiteGraph {
 public:
  // Adds the edge if absent; both adjacency maps stay sorted and mirrored.
  void add_edge(const std::string& user, const std::string& item);

  const std::vector<std::string>& users() const { return users_; }
  const std::vector<std::string>& items() const { return items_; }
  std::optional<std::size_t> user_index(const std::string& id) const;
  std::optional<std::size_t> item_index(const std::string& id) const;
  // Sorted neighbor indices.
  const std::vector<std::vector<std::size_t>>& user_items() const { return user_items_; }
  const std::vector<std::vector<std::size_t>>& item_users() const { return item_users_; }
  std::size_t edge_count() const;

 private:
  static std::size_t intern(std::vector<std::string>& ids, std::map<std::string, std::size_t>& index,
                            std::vector<std::vector<std::size_t>>& adj, const std::string& id);

  std::vector<std::string> users_, items_;
  std::map<std::string, std::size_t> user_index_, item_index_;
  std::vector<std::vector<std::size_t>> user_items_, item_users_;
};

// Only label-1 records form edges unless positive_only is false.
BipartiteGraph build_graph(std::span<const data::InteractionRecord> records,
                           bool positive_only = true);

double swing_item_similarity(const BipartiteGraph& g, const std::string& i, const std::string& j,
                             double alpha);
double swing_user_similarity(const BipartiteGraph& g, const std::string& u, const std::string& v,
                             double alpha);

struct Neighbor {
  std::string id;
  double score = 0.0;
  bool operator==(const Neighbor&) const = default;
};

struct SimilarityGraph {
  Side side = Side::Item;
  double alpha = 1.0;
  std::size_t k = 10;
  // Sorted by descending score, ties by ascending id; no self entries.
  std::map<std::string, std::vector<Neighbor>> neighbors;

  // Empty when the entity is unknown or has no qualifying neighbor.
  std::span<const Neighbor> of(const std::string& id) const;
  bool operator==(const SimilarityGraph&) const = default;
};

// Scores every candidate sharing at least two counterparts with the anchor
// and keeps the top k. Anchors are all entities of `side` present in the graph.
SimilarityGraph top_k_neighbors(const BipartiteGraph& g, Side side, std::size_t k, double alpha);

void to_json(nlohmann::json& j, const SimilarityGraph& s);
void from_json(const nlohmann::json& j, SimilarityGraph& s);
void save_similarity(const std::filesystem::path& path, const SimilarityGraph& s);
SimilarityGraph load_similarity(const std::filesystem::path& path);

}  // namespace dlrrec::swing
