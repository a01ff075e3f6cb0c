#include "dlrrec/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dlrrec/error.hpp"
#include "dlrrec/rng.hpp"

namespace dlrrec::data {

using nlohmann::json;

std::string to_string(Entity e) { return e == Entity::User ? "user" : "item"; }

Entity entity_from_string(const std::string& s) {
  if (s == "user") return Entity::User;
  if (s == "item") return Entity::Item;
  throw ConfigError("unknown entity kind '" + s + "' (expected user or item)");
}

const ChannelSpec& Schema::channel(const std::string& name) const {
  for (const auto& c : channels)
    if (c.name == name) return c;
  throw ConfigError("unknown channel '" + name + "'");
}

void to_json(json& j, const Schema& s) {
  json channels = json::array();
  for (const auto& c : s.channels)
    channels.push_back({{"name", c.name}, {"entity", to_string(c.entity)}, {"d_raw", c.d_raw}});
  j = json{{"dense_dim", s.dense_dim},
           {"sparse_vocab", s.sparse_vocab},
           {"pad_id", s.pad_id()},
           {"sparse_len", s.sparse_len},
           {"channels", channels}};
}

void from_json(const json& j, Schema& s) {
  s.dense_dim = j.at("dense_dim").get<std::size_t>();
  s.sparse_vocab = j.at("sparse_vocab").get<std::size_t>();
  s.sparse_len = j.at("sparse_len").get<std::size_t>();
  if (s.sparse_vocab == 0) throw ConfigError("schema: sparse_vocab must be positive");
  if (j.contains("pad_id") && j.at("pad_id").get<std::size_t>() != s.pad_id())
    throw ConfigError("schema: pad_id must equal sparse_vocab - 1");
  s.channels.clear();
  for (const auto& c : j.at("channels")) {
    s.channels.push_back(ChannelSpec{c.at("name").get<std::string>(),
                                     entity_from_string(c.at("entity").get<std::string>()),
                                     c.at("d_raw").get<std::size_t>()});
  }
}

// ---------------------------------------------------------------- EmbeddingStore

void EmbeddingStore::add(const std::string& id, std::span<const float> values) {
  if (values.size() != dim_) {
    throw FormatError("channel '" + channel_ + "': vector for '" + id + "' has dimension " +
                      std::to_string(values.size()) + ", expected " + std::to_string(dim_));
  }
  if (index_.contains(id))
    throw ValidationError("channel '" + channel_ + "': duplicate id '" + id + "'");
  index_.emplace(id, ids_.size());
  ids_.push_back(id);
  values_.insert(values_.end(), values.begin(), values.end());
}

std::optional<std::size_t> EmbeddingStore::index_of(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::span<const float> EmbeddingStore::row(const std::string& id) const {
  auto idx = index_of(id);
  if (!idx) throw LookupError("channel '" + channel_ + "' has no embedding for id '" + id + "'");
  return row(*idx);
}

std::span<const float> EmbeddingStore::row(std::size_t index) const {
  return std::span<const float>(values_).subspan(index * dim_, dim_);
}

// ---------------------------------------------------------------- interactions

namespace {

InteractionRecord parse_record(const std::string& line, std::size_t line_no) {
  const std::string where = "line " + std::to_string(line_no);
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(where + ": " + e.what());
  }
  InteractionRecord r;
  try {
    if (!j.is_object()) throw ParseError(where + ": expected a JSON object");
    r.user_id = j.at("user_id").get<std::string>();
    r.item_id = j.at("item_id").get<std::string>();
    const auto& rating = j.at("rating");
    if (!rating.is_number_integer()) throw ParseError(where + ": rating must be an integer");
    r.rating = rating.get<int>();
    if (j.contains("dense")) r.dense = j.at("dense").get<std::vector<double>>();
    if (j.contains("sparse")) {
      for (const auto& v : j.at("sparse")) {
        if (!v.is_number_integer() || v.get<long long>() < 0)
          throw ParseError(where + ": sparse ids must be non-negative integers");
        r.sparse.push_back(v.get<std::size_t>());
      }
    }
    if (r.rating < 1 || r.rating > 5) {
      throw ValidationError(where + ": rating " + std::to_string(r.rating) +
                            " outside the range 1-5");
    }
    r.label = label_for_rating(r.rating);
    if (j.contains("label")) {
      const int given = j.at("label").get<int>();
      if (given != r.label) {
        throw ValidationError(where + ": label " + std::to_string(given) +
                              " contradicts rating " + std::to_string(r.rating));
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(where + ": " + e.what());
  }
  return r;
}

}  // namespace

std::vector<InteractionRecord> parse_interactions(std::istream& in) {
  std::vector<InteractionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_record(line, line_no));
  }
  return out;
}

std::vector<InteractionRecord> load_interactions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open interactions file " + path.string());
  return parse_interactions(in);
}

std::string format_interaction(const InteractionRecord& r) {
  json j = {{"user_id", r.user_id}, {"item_id", r.item_id}, {"rating", r.rating},
            {"label", r.label},     {"dense", r.dense},     {"sparse", r.sparse}};
  return j.dump();
}

void save_interactions(const std::filesystem::path& path,
                       std::span<const InteractionRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  for (const auto& r : records) out << format_interaction(r) << '\n';
}

// ---------------------------------------------------------------- embeddings

namespace {

constexpr char kMagic[4] = {'D', 'L', 'R', 'E'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("truncated ") + what + " at byte offset " +
                        std::to_string(pos_) + ": need " + std::to_string(n) + " bytes, have " +
                        std::to_string(bytes_.size() - pos_));
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

EmbeddingStore decode_jsonl_embeddings(const std::string& text, const std::string& channel) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::optional<EmbeddingStore> store;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError("embeddings line " + std::to_string(line_no) + ": " + e.what());
    }
    auto vec = j.at("vector").get<std::vector<float>>();
    if (!store) store.emplace(channel, vec.size());
    if (vec.size() != store->dim()) {
      throw FormatError("embeddings line " + std::to_string(line_no) + ": dimension " +
                        std::to_string(vec.size()) + " differs from " +
                        std::to_string(store->dim()));
    }
    store->add(j.at("id").get<std::string>(), vec);
  }
  return store ? std::move(*store) : EmbeddingStore(channel, 0);
}

}  // namespace

std::vector<std::uint8_t> encode_embeddings(const EmbeddingStore& store) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint64_t>(out, store.size());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.dim()));
  for (const auto& id : store.ids()) {
    if (id.size() > 0xffff) throw FormatError("id longer than 65535 bytes: " + id.substr(0, 32));
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(id.size()));
    out.insert(out.end(), id.begin(), id.end());
  }
  for (float f : store.payload()) {
    std::uint32_t bits = 0;
    std::memcpy(&bits, &f, sizeof bits);
    put_le<std::uint32_t>(out, bits);
  }
  return out;
}

EmbeddingStore decode_embeddings(std::span<const std::uint8_t> bytes, const std::string& channel) {
  Reader rd(bytes);
  auto magic = rd.take(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic)))
    throw FormatError("magic mismatch at byte offset 0: expected \"DLRE\"");
  const auto version_at = rd.offset();
  const auto version = rd.get<std::uint32_t>("version");
  if (version != kVersion) {
    throw FormatError("unsupported version " + std::to_string(version) + " at byte offset " +
                      std::to_string(version_at));
  }
  const auto count = rd.get<std::uint64_t>("count");
  const auto dim = rd.get<std::uint32_t>("dim");
  EmbeddingStore store(channel, dim);
  std::vector<std::string> ids;
  ids.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, rd.remaining())));
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = rd.get<std::uint16_t>("id length");
    auto raw = rd.take(len, "id bytes");
    ids.emplace_back(raw.begin(), raw.end());
  }
  std::vector<float> row(dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    for (std::uint32_t d = 0; d < dim; ++d) {
      const auto bits = rd.get<std::uint32_t>("embedding payload");
      std::memcpy(&row[d], &bits, sizeof bits);
    }
    store.add(ids[i], row);
  }
  if (rd.remaining() != 0) {
    throw FormatError("trailing " + std::to_string(rd.remaining()) + " bytes at byte offset " +
                      std::to_string(rd.offset()));
  }
  return store;
}

EmbeddingStore load_embeddings(const std::filesystem::path& path, const std::string& channel) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open embedding file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  const auto first = std::find_if(bytes.begin(), bytes.end(),
                                  [](std::uint8_t c) { return !std::isspace(c); });
  if (first != bytes.end() && *first == '{')
    return decode_jsonl_embeddings(std::string(bytes.begin(), bytes.end()), channel);
  return decode_embeddings(bytes, channel);
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingStore& store) {
  const auto bytes = encode_embeddings(store);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// ---------------------------------------------------------------- splits and batches

DatasetSplit split(std::span<const InteractionRecord> records, double test_fraction,
                   std::uint64_t seed, const Schema& schema) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("test fraction must lie in (0, 1), got " + std::to_string(test_fraction));
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(Rng::derive(seed, {0x5b1}));
  rng.shuffle(order);
  const auto n_test =
      static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(records.size())));
  std::vector<char> in_test(records.size(), 0);
  for (std::size_t i = 0; i < n_test; ++i) in_test[order[i]] = 1;
  DatasetSplit out;
  out.schema = schema;
  for (std::size_t i = 0; i < records.size(); ++i)
    (in_test[i] ? out.test : out.train).push_back(records[i]);
  return out;
}

void validate(std::span<const InteractionRecord> records, const Schema& schema,
              const EmbeddingSet& embeddings, std::span<const std::string> channels) {
  std::vector<const EmbeddingStore*> stores;
  std::vector<Entity> kinds;
  for (const auto& name : channels) {
    const auto& spec = schema.channel(name);
    auto it = embeddings.find(name);
    if (it == embeddings.end()) throw LookupError("no embeddings loaded for channel '" + name + "'");
    if (it->second.dim() != spec.d_raw) {
      throw FormatError("channel '" + name + "' has dimension " +
                        std::to_string(it->second.dim()) + ", schema says " +
                        std::to_string(spec.d_raw));
    }
    stores.push_back(&it->second);
    kinds.push_back(spec.entity);
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.dense.size() != schema.dense_dim) {
      throw ValidationError("record " + std::to_string(i) + ": dense length " +
                            std::to_string(r.dense.size()) + ", schema says " +
                            std::to_string(schema.dense_dim));
    }
    if (r.sparse.size() != schema.sparse_len) {
      throw ValidationError("record " + std::to_string(i) + ": sparse length " +
                            std::to_string(r.sparse.size()) + ", schema says " +
                            std::to_string(schema.sparse_len));
    }
    for (auto id : r.sparse) {
      if (id >= schema.sparse_vocab) {
        throw RangeError("record " + std::to_string(i) + ": sparse id " + std::to_string(id) +
                         " >= vocab " + std::to_string(schema.sparse_vocab));
      }
    }
    for (std::size_t c = 0; c < stores.size(); ++c)
      stores[c]->row(kinds[c] == Entity::User ? r.user_id : r.item_id);
  }
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                   std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(Rng::derive(seed, {0xba7c, epoch}));
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const auto end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

// ---------------------------------------------------------------- synthesis

void SynthConfig::check() const {
  if (user_clusters == 0 || item_clusters == 0 || users == 0 || items == 0 || d_raw == 0)
    throw ConfigError("synth: cluster counts, entity counts and d_raw must be positive");
  if (interactions_per_user == 0 || interactions_per_user > items)
    throw ConfigError("synth: interactions_per_user must lie in [1, items]");
  if (affinity.size() != user_clusters)
    throw ConfigError("synth: affinity needs one row per user cluster");
  for (const auto& row : affinity) {
    if (row.size() != item_clusters)
      throw ConfigError("synth: affinity rows need one entry per item cluster");
    for (double a : row)
      if (!(a >= 0.0 && a <= 1.0))
        throw ConfigError("synth: affinity entries must lie in [0, 1], got " + std::to_string(a));
  }
  if (!exposure.empty()) {
    if (exposure.size() != user_clusters)
      throw ConfigError("synth: exposure needs one row per user cluster");
    for (const auto& row : exposure) {
      if (row.size() != item_clusters)
        throw ConfigError("synth: exposure rows need one entry per item cluster");
      double total = 0.0;
      for (double w : row) {
        if (!(w >= 0.0)) throw ConfigError("synth: exposure weights must be non-negative");
        total += w;
      }
      if (!(total > 0.0)) throw ConfigError("synth: every exposure row needs a positive weight");
    }
  }
  if (!(sigma >= 0.0) || !(image_noise_scale >= 0.0))
    throw ConfigError("synth: noise scales must be non-negative");
  if (sparse_vocab < 2) throw ConfigError("synth: sparse_vocab must be at least 2");
}

void to_json(json& j, const SynthConfig& c) {
  j = json{{"user_clusters", c.user_clusters},
           {"item_clusters", c.item_clusters},
           {"users", c.users},
           {"items", c.items},
           {"affinity", c.affinity},
           {"exposure", c.exposure},
           {"sigma", c.sigma},
           {"d_raw", c.d_raw},
           {"interactions_per_user", c.interactions_per_user},
           {"seed", c.seed},
           {"image_noise_scale", c.image_noise_scale},
           {"dense_dim", c.dense_dim},
           {"sparse_vocab", c.sparse_vocab},
           {"sparse_len", c.sparse_len}};
}

void from_json(const json& j, SynthConfig& c) {
  SynthConfig d;
  c.user_clusters = j.value("user_clusters", d.user_clusters);
  c.item_clusters = j.value("item_clusters", d.item_clusters);
  c.users = j.value("users", d.users);
  c.items = j.value("items", d.items);
  c.affinity = j.at("affinity").get<std::vector<std::vector<double>>>();
  c.exposure = j.value("exposure", d.exposure);
  c.sigma = j.value("sigma", d.sigma);
  c.d_raw = j.value("d_raw", d.d_raw);
  c.interactions_per_user = j.value("interactions_per_user", d.interactions_per_user);
  c.seed = j.value("seed", d.seed);
  c.image_noise_scale = j.value("image_noise_scale", d.image_noise_scale);
  c.dense_dim = j.value("dense_dim", d.dense_dim);
  c.sparse_vocab = j.value("sparse_vocab", d.sparse_vocab);
  c.sparse_len = j.value("sparse_len", d.sparse_len);
}

namespace {

std::vector<std::vector<double>> unit_centroids(std::size_t count, std::size_t dim, Rng& rng) {
  std::vector<std::vector<double>> out(count, std::vector<double>(dim));
  for (auto& c : out) {
    double norm = 0.0;
    for (auto& v : c) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : c) v /= norm;
  }
  return out;
}

std::vector<float> noisy(const std::vector<double>& centroid, double sigma, Rng& rng) {
  std::vector<float> out(centroid.size());
  for (std::size_t d = 0; d < centroid.size(); ++d)
    out[d] = static_cast<float>(centroid[d] + sigma * rng.normal());
  return out;
}

std::string make_id(char prefix, std::size_t i, std::size_t count) {
  const auto width = std::to_string(count > 0 ? count - 1 : 0).size();
  std::string digits = std::to_string(i);
  return std::string(1, prefix) + std::string(width - std::min(width, digits.size()), '0') + digits;
}

}  // namespace

SynthConfig standard_benchmark() {
  SynthConfig c;
  c.d_raw = 384;
  // Users mostly visit their home item cluster and like almost everything
  // except one cluster, which they rarely visit and nearly always rate low.
  c.affinity.assign(4, std::vector<double>(4, 0.99));
  c.exposure.assign(4, std::vector<double>(4, 7.0));
  for (std::size_t u = 0; u < 4; ++u) {
    c.exposure[u][u] = 42.0;
    c.affinity[u][(u + 1) % 4] = 0.02;
    c.exposure[u][(u + 1) % 4] = 6.0;
  }
  return c;
}

Dataset synthesize(const SynthConfig& cfg) {
  cfg.check();
  Dataset ds;
  ds.schema.dense_dim = cfg.dense_dim;
  ds.schema.sparse_vocab = cfg.sparse_vocab;
  ds.schema.sparse_len = cfg.sparse_len;
  ds.schema.channels = {{kUserSummary, Entity::User, cfg.d_raw},
                        {kItemSummary, Entity::Item, cfg.d_raw},
                        {kItemImage, Entity::Item, cfg.d_raw}};

  Rng assign(Rng::derive(cfg.seed, {1}));
  Rng geometry(Rng::derive(cfg.seed, {2}));
  Rng noise(Rng::derive(cfg.seed, {3}));
  Rng features(Rng::derive(cfg.seed, {4}));
  Rng events(Rng::derive(cfg.seed, {5}));

  std::vector<std::size_t> user_cluster(cfg.users), item_cluster(cfg.items);
  for (auto& c : user_cluster) c = assign.below(cfg.user_clusters);
  for (auto& c : item_cluster) c = assign.below(cfg.item_clusters);

  const auto user_centroids = unit_centroids(cfg.user_clusters, cfg.d_raw, geometry);
  const auto item_centroids = unit_centroids(cfg.item_clusters, cfg.d_raw, geometry);
  const auto image_centroids = unit_centroids(cfg.item_clusters, cfg.d_raw, geometry);

  EmbeddingStore users(kUserSummary, cfg.d_raw);
  EmbeddingStore items(kItemSummary, cfg.d_raw);
  EmbeddingStore images(kItemImage, cfg.d_raw);
  std::vector<std::string> user_ids(cfg.users), item_ids(cfg.items);
  for (std::size_t u = 0; u < cfg.users; ++u) {
    user_ids[u] = make_id('u', u, cfg.users);
    users.add(user_ids[u], noisy(user_centroids[user_cluster[u]], cfg.sigma, noise));
    ds.user_clusters[user_ids[u]] = user_cluster[u];
  }
  for (std::size_t i = 0; i < cfg.items; ++i) {
    item_ids[i] = make_id('i', i, cfg.items);
    items.add(item_ids[i], noisy(item_centroids[item_cluster[i]], cfg.sigma, noise));
    images.add(item_ids[i],
               noisy(image_centroids[item_cluster[i]], cfg.sigma * cfg.image_noise_scale, noise));
    ds.item_clusters[item_ids[i]] = item_cluster[i];
  }

  // Item side features: a one-hot price band and up to three category ids,
  // mostly from a band of the vocabulary owned by the item's cluster.
  const std::size_t pad = cfg.sparse_vocab - 1;
  const std::size_t band = std::max<std::size_t>(1, pad / cfg.item_clusters);
  std::vector<std::vector<double>> item_dense(cfg.items, std::vector<double>(cfg.dense_dim, 0.0));
  std::vector<std::vector<std::size_t>> item_sparse(cfg.items);
  for (std::size_t i = 0; i < cfg.items; ++i) {
    if (cfg.dense_dim > 0) item_dense[i][features.below(cfg.dense_dim)] = 1.0;
    const std::size_t n_cat = std::min<std::size_t>(cfg.sparse_len, 1 + features.below(3));
    for (std::size_t k = 0; k < n_cat; ++k) {
      std::size_t id;
      if (features.bernoulli(0.75)) {
        id = std::min(pad - 1, item_cluster[i] * band + features.below(band));
      } else {
        id = features.below(pad);
      }
      item_sparse[i].push_back(id);
    }
    item_sparse[i].resize(cfg.sparse_len, pad);
  }

  std::vector<std::size_t> pool(cfg.items);
  for (std::size_t u = 0; u < cfg.users; ++u) {
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t k = 0; k < cfg.interactions_per_user; ++k) {
      std::size_t j = k + static_cast<std::size_t>(
                          cfg.exposure.empty() ? events.below(cfg.items - k) : 0);
      if (!cfg.exposure.empty()) {
        // Weighted draw without replacement over the items not yet taken.
        const auto& weights = cfg.exposure[user_cluster[u]];
        double total = 0.0;
        for (std::size_t q = k; q < cfg.items; ++q) total += weights[item_cluster[pool[q]]];
        if (total > 0.0) {
          double target = events.uniform() * total;
          j = cfg.items - 1;
          for (std::size_t q = k; q < cfg.items; ++q) {
            const double w = weights[item_cluster[pool[q]]];
            if (w > 0.0 && target < w) {
              j = q;
              break;
            }
            target -= w;
          }
          while (weights[item_cluster[pool[j]]] == 0.0) --j;
        } else {
          j = k + static_cast<std::size_t>(events.below(cfg.items - k));
        }
      }
      std::swap(pool[k], pool[j]);
      const std::size_t i = pool[k];
      InteractionRecord r;
      r.user_id = user_ids[u];
      r.item_id = item_ids[i];
      r.rating = events.bernoulli(cfg.affinity[user_cluster[u]][item_cluster[i]]) ? 5 : 2;
      r.label = label_for_rating(r.rating);
      r.dense = item_dense[i];
      r.sparse = item_sparse[i];
      ds.records.push_back(std::move(r));
    }
  }

  ds.embeddings.emplace(kUserSummary, std::move(users));
  ds.embeddings.emplace(kItemSummary, std::move(items));
  ds.embeddings.emplace(kItemImage, std::move(images));
  return ds;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  save_interactions(dir / "interactions.jsonl", ds.records);
  json schema = ds.schema;
  for (auto& c : schema["channels"]) c["file"] = c["name"].get<std::string>() + ".emb";
  std::ofstream(dir / "schema.json") << schema.dump(2) << '\n';
  for (const auto& [name, store] : ds.embeddings) save_embeddings(dir / (name + ".emb"), store);
  if (!ds.user_clusters.empty() || !ds.item_clusters.empty()) {
    json clusters = {{"users", ds.user_clusters}, {"items", ds.item_clusters}};
    std::ofstream(dir / "clusters.json") << clusters.dump(2) << '\n';
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  const auto schema_path = dir / "schema.json";
  std::ifstream schema_in(schema_path);
  if (!schema_in) throw ConfigError("cannot open " + schema_path.string());
  json schema;
  try {
    schema = json::parse(schema_in);
    ds.schema = schema.get<Schema>();
  } catch (const json::exception& e) {
    throw ConfigError(schema_path.string() + ": " + e.what());
  }
  ds.records = load_interactions(dir / "interactions.jsonl");
  for (const auto& c : schema.at("channels")) {
    const auto name = c.at("name").get<std::string>();
    const auto file = c.value("file", name + ".emb");
    auto store = load_embeddings(dir / file, name);
    if (store.size() > 0 && store.dim() != ds.schema.channel(name).d_raw) {
      throw FormatError(file + ": dimension " + std::to_string(store.dim()) +
                        " differs from schema d_raw " +
                        std::to_string(ds.schema.channel(name).d_raw));
    }
    ds.embeddings.emplace(name, std::move(store));
  }
  if (std::filesystem::exists(dir / "clusters.json")) {
    std::ifstream in(dir / "clusters.json");
    json clusters = json::parse(in);
    ds.user_clusters = clusters.at("users").get<std::map<std::string, std::size_t>>();
    ds.item_clusters = clusters.at("items").get<std::map<std::string, std::size_t>>();
  }
  return ds;
}

}  // namespace dlrrec::data
