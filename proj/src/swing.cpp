#include "dlrrec/swing.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_map>

#include "dlrrec/error.hpp"

namespace dlrrec::swing {

using nlohmann::json;

std::size_t BipartiteGraph::intern(std::vector<std::string>& ids,
                                   std::map<std::string, std::size_t>& index,
                                   std::vector<std::vector<std::size_t>>& adj,
                                   const std::string& id) {
  auto [it, inserted] = index.emplace(id, ids.size());
  if (inserted) {
    ids.push_back(id);
    adj.emplace_back();
  }
  return it->second;
}

void BipartiteGraph::add_edge(const std::string& user, const std::string& item) {
  const auto u = intern(users_, user_index_, user_items_, user);
  const auto i = intern(items_, item_index_, item_users_, item);
  auto& ui = user_items_[u];
  auto pos = std::lower_bound(ui.begin(), ui.end(), i);
  if (pos != ui.end() && *pos == i) return;
  ui.insert(pos, i);
  auto& iu = item_users_[i];
  iu.insert(std::lower_bound(iu.begin(), iu.end(), u), u);
}

std::optional<std::size_t> BipartiteGraph::user_index(const std::string& id) const {
  auto it = user_index_.find(id);
  if (it == user_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> BipartiteGraph::item_index(const std::string& id) const {
  auto it = item_index_.find(id);
  if (it == item_index_.end()) return std::nullopt;
  return it->second;
}

std::size_t BipartiteGraph::edge_count() const {
  std::size_t n = 0;
  for (const auto& a : user_items_) n += a.size();
  return n;
}

BipartiteGraph build_graph(std::span<const data::InteractionRecord> records, bool positive_only) {
  BipartiteGraph g;
  for (const auto& r : records)
    if (!positive_only || r.label == 1) g.add_edge(r.user_id, r.item_id);
  return g;
}

namespace {

void check_alpha(double alpha) {
  if (!(alpha > 0.0)) throw ConfigError("swing: alpha must be positive, got " + std::to_string(alpha));
}

std::size_t sorted_overlap(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::size_t n = 0;
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++n;
      ++i;
      ++j;
    }
  }
  return n;
}

// Views the graph from one side: `entity` adjacency lists counterparts,
// `counterpart` adjacency lists entities.
struct SideView {
  const std::vector<std::string>& ids;
  const std::vector<std::vector<std::size_t>>& entity;
  const std::vector<std::vector<std::size_t>>& counterpart;
};

SideView view(const BipartiteGraph& g, Side side) {
  if (side == Side::Item) return {g.items(), g.item_users(), g.user_items()};
  return {g.users(), g.user_items(), g.item_users()};
}

// Counterpart-pair overlap sizes, memoised across anchors.
class OverlapCache {
 public:
  explicit OverlapCache(const SideView& v) : v_(v) {}

  std::size_t get(std::size_t a, std::size_t b) {
    if (a > b) std::swap(a, b);
    const std::uint64_t key = (static_cast<std::uint64_t>(a) << 32) | b;
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    const auto n = sorted_overlap(v_.counterpart[a], v_.counterpart[b]);
    cache_.emplace(key, n);
    return n;
  }

 private:
  const SideView& v_;
  std::unordered_map<std::uint64_t, std::size_t> cache_;
};

// Sorts by descending score. Runs of scores within kTieTolerance of their
// predecessor are ties and get ascending id order: equal sums reached through
// different overlap profiles can differ in the last bit.
void order_with_ties(std::vector<Neighbor>& list) {
  std::sort(list.begin(), list.end(), [](const Neighbor& x, const Neighbor& y) {
    return x.score != y.score ? x.score > y.score : x.id < y.id;
  });
  for (std::size_t start = 0; start < list.size();) {
    std::size_t end = start + 1;
    while (end < list.size() && list[end - 1].score - list[end].score <= kTieTolerance) ++end;
    std::sort(list.begin() + static_cast<std::ptrdiff_t>(start), list.begin() + static_cast<std::ptrdiff_t>(end),
              [](const Neighbor& x, const Neighbor& y) { return x.id < y.id; });
    start = end;
  }
}

// Sum over unordered pairs of a sorted common-counterpart list. Pairs are
// counted per overlap size and summed in ascending size, so entities whose
// pairs have the same overlap profile get bit-identical scores and tie.
double pair_sum(const std::vector<std::size_t>& common, double alpha, OverlapCache& overlaps) {
  std::map<std::size_t, std::size_t> pairs_by_overlap;
  for (std::size_t x = 0; x < common.size(); ++x)
    for (std::size_t y = x + 1; y < common.size(); ++y)
      ++pairs_by_overlap[overlaps.get(common[x], common[y])];
  double s = 0.0;
  for (const auto& [overlap, count] : pairs_by_overlap)
    s += static_cast<double>(count) / (alpha + static_cast<double>(overlap));
  return s;
}

double similarity(const BipartiteGraph& g, Side side, const std::optional<std::size_t>& a,
                  const std::optional<std::size_t>& b, double alpha) {
  if (!a || !b) return 0.0;
  const SideView v = view(g, side);
  std::vector<std::size_t> common;
  std::set_intersection(v.entity[*a].begin(), v.entity[*a].end(), v.entity[*b].begin(),
                        v.entity[*b].end(), std::back_inserter(common));
  OverlapCache overlaps(v);
  return pair_sum(common, alpha, overlaps);
}

}  // namespace

double swing_item_similarity(const BipartiteGraph& g, const std::string& i, const std::string& j,
                             double alpha) {
  check_alpha(alpha);
  if (i == j) throw ContractError("swing: similarity of an item with itself is undefined");
  return similarity(g, Side::Item, g.item_index(i), g.item_index(j), alpha);
}

double swing_user_similarity(const BipartiteGraph& g, const std::string& u, const std::string& v,
                             double alpha) {
  check_alpha(alpha);
  if (u == v) throw ContractError("swing: similarity of a user with itself is undefined");
  return similarity(g, Side::User, g.user_index(u), g.user_index(v), alpha);
}

std::span<const Neighbor> SimilarityGraph::of(const std::string& id) const {
  auto it = neighbors.find(id);
  if (it == neighbors.end()) return {};
  return it->second;
}

SimilarityGraph top_k_neighbors(const BipartiteGraph& g, Side side, std::size_t k, double alpha) {
  check_alpha(alpha);
  if (k == 0) throw ConfigError("swing: k must be at least 1");
  const SideView v = view(g, side);
  const std::size_t n = v.ids.size();

  std::vector<std::size_t> anchors(n);
  for (std::size_t a = 0; a < n; ++a) anchors[a] = a;
  std::sort(anchors.begin(), anchors.end(),
            [&](std::size_t x, std::size_t y) { return v.ids[x] < v.ids[y]; });

  SimilarityGraph out;
  out.side = side;
  out.alpha = alpha;
  out.k = k;

  OverlapCache overlaps(v);
  std::vector<std::vector<std::size_t>> common(n);
  std::vector<std::size_t> touched;
  for (std::size_t a : anchors) {
    // Inverted index walk: counterparts of the anchor, then their entities.
    // Counterpart lists are sorted, so each common list comes out sorted.
    for (std::size_t c : v.entity[a]) {
      for (std::size_t b : v.counterpart[c]) {
        if (b == a) continue;
        if (common[b].empty()) touched.push_back(b);
        common[b].push_back(c);
      }
    }
    std::vector<Neighbor> scored;
    for (std::size_t b : touched) {
      if (common[b].size() >= 2) {
        const double s = pair_sum(common[b], alpha, overlaps);
        if (s > 0.0) scored.push_back({v.ids[b], s});
      }
      common[b].clear();
    }
    touched.clear();
    order_with_ties(scored);
    const auto keep = std::min(k, scored.size());
    scored.resize(keep);
    out.neighbors.emplace(v.ids[a], std::move(scored));
  }
  return out;
}

void to_json(json& j, const SimilarityGraph& s) {
  json neighbors = json::object();
  for (const auto& [id, list] : s.neighbors) {
    json arr = json::array();
    for (const auto& n : list) arr.push_back(json::array({n.id, n.score}));
    neighbors[id] = std::move(arr);
  }
  j = json{{"side", data::to_string(s.side)}, {"alpha", s.alpha}, {"k", s.k},
           {"neighbors", neighbors}};
}

void from_json(const json& j, SimilarityGraph& s) {
  s.side = data::entity_from_string(j.at("side").get<std::string>());
  s.alpha = j.at("alpha").get<double>();
  s.k = j.at("k").get<std::size_t>();
  s.neighbors.clear();
  for (const auto& [id, arr] : j.at("neighbors").items()) {
    auto& list = s.neighbors[id];
    for (const auto& pair : arr)
      list.push_back({pair.at(0).get<std::string>(), pair.at(1).get<double>()});
  }
}

void save_similarity(const std::filesystem::path& path, const SimilarityGraph& s) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << json(s).dump() << '\n';
}

SimilarityGraph load_similarity(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open similarity file " + path.string());
  try {
    return json::parse(in).get<SimilarityGraph>();
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace dlrrec::swing
