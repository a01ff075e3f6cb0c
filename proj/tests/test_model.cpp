#include <doctest.h>

#include <cmath>
#include <fstream>

#include "dlrrec/error.hpp"
#include "dlrrec/model.hpp"
#include "dlrrec/objectives.hpp"
#include "oracles.hpp"

using namespace dlrrec;
using namespace dlrrec::model;
using ad::Tensor;

namespace {

struct Toy {
  data::Dataset ds = data::synthesize(oracle::tiny_synth());
  ModelConfig cfg;
  explicit Toy(const std::string& mask = "text+image") {
    cfg = config_for(ds.schema, mask_channels(mask));
    cfg.d_int = 4;
    cfg.dense_hidden = {5};
    cfg.top_hidden = {6};
    cfg.dropout = 0.0;
  }
};

ModelParams zeros(const ModelConfig& cfg) {
  auto p = init(cfg);
  for (auto& [name, t] : p.tensors) std::fill(t.data().begin(), t.data().end(), 0.0);
  return p;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("init is deterministic with zero biases and bounded weights") {
  Toy toy;
  toy.cfg.init_seed = 42;
  auto a = init(toy.cfg), b = init(toy.cfg);
  CHECK(a == b);
  toy.cfg.init_seed = 43;
  CHECK(init(toy.cfg) != a);
  for (const auto& [name, t] : a.tensors) {
    INFO(name);
    if (name.find(".b") != std::string::npos) {
      for (double v : t.values()) CHECK(v == 0.0);
    } else if (name == "sparse.table") {
      const double lim = 1.0 / std::sqrt(double(toy.cfg.d_int));
      for (double v : t.values()) CHECK(std::abs(v) <= lim);
    } else {
      const double lim = std::sqrt(6.0 / double(t.rows() + t.cols()));
      double biggest = 0;
      for (double v : t.values()) biggest = std::max(biggest, std::abs(v));
      CHECK(biggest <= lim);
      CHECK(biggest > 0.0);
    }
  }
}

TEST_CASE("projection shapes and constructed cases") {
  data::Schema schema;
  schema.channels = {{data::kUserSummary, data::Entity::User, 384}};
  auto cfg = config_for(schema, std::vector<std::string>{data::kUserSummary});
  std::vector<double> raw(384);
  for (std::size_t k = 0; k < raw.size(); ++k) raw[k] = 0.01 * double(k) - 1.0;

  auto p = init(cfg);
  CHECK(project(p, cfg, data::kUserSummary, raw).size() == 32);

  auto z = zeros(cfg);
  CHECK(project(z, cfg, data::kUserSummary, raw) == std::vector<double>(32, 0.0));

  // A single linear layer whose weight is the identity block.
  auto& w = z.tensors.at("proj.user-summary.w0");
  for (std::size_t k = 0; k < 32; ++k) w.at(k, k) = 1.0;
  auto copy = project(z, cfg, data::kUserSummary, raw);
  for (std::size_t k = 0; k < 32; ++k) CHECK(copy[k] == raw[k]);

  CHECK_THROWS_AS(project(p, cfg, data::kUserSummary, std::vector<double>(383)), DimensionError);
}

TEST_CASE("sparse pooling with padding") {
  ModelConfig cfg;
  auto p = init(cfg);
  const auto& table = p.at("sparse.table");
  auto row = [&](std::size_t r) {
    return std::vector<double>(table.values().begin() + r * 32, table.values().begin() + (r + 1) * 32);
  };
  CHECK(pool_sparse(p, cfg, std::vector<std::size_t>{3, 179, 179}) == row(3));
  CHECK(pool_sparse(p, cfg, std::vector<std::size_t>{179, 179, 179}) == std::vector<double>(32, 0.0));
  CHECK(pool_sparse(p, cfg, std::vector<std::size_t>{2, 2, 179}) == row(2));
  auto mixed = pool_sparse(p, cfg, std::vector<std::size_t>{1, 5, 179});
  for (std::size_t k = 0; k < 32; ++k) CHECK(mixed[k] == doctest::Approx((row(1)[k] + row(5)[k]) / 2));
  CHECK_THROWS_AS(pool_sparse(p, cfg, std::vector<std::size_t>{180}), RangeError);
}

TEST_CASE("zero parameters give probability one half") {
  Toy toy;
  auto out = forward(zeros(toy.cfg), toy.cfg, toy.ds.records[0], toy.ds.embeddings);
  CHECK(out.logit == 0.0);
  CHECK(out.probability == 0.5);
  CHECK(out.reduced.size() == 3);
}

TEST_CASE("interaction of two equal unit vectors is one") {
  ModelConfig cfg;
  cfg.d_int = 3;
  cfg.dense_dim = 2;
  cfg.dense_hidden = {};
  cfg.top_hidden = {};
  cfg.sparse_vocab = 4;
  auto p = zeros(cfg);
  // z_dense = bias = e1, z_sparse = row 0 = e1; the logit reads only the dot.
  p.tensors.at("dense.b0").at(0, 0) = 1.0;
  p.tensors.at("sparse.table").at(0, 0) = 1.0;
  REQUIRE(cfg.top_input_dim() == 4);
  p.tensors.at("top.w0").at(3, 0) = 1.0;
  data::InteractionRecord r;
  r.user_id = "u";
  r.item_id = "i";
  r.dense = {0.3, -0.7};
  r.sparse = {0, 3};
  CHECK(forward(p, cfg, r, {}).logit == 1.0);
}

TEST_CASE("logit gradient against central differences") {
  Toy toy;
  toy.cfg.init_seed = 8;
  auto params = init(toy.cfg);
  for (auto& [name, t] : params.tensors)
    if (name.find(".b") != std::string::npos)
      for (auto& v : t.data()) v = 0.05 * std::sin(double(&v - t.data().data()) + name.size());
  const auto& rec = toy.ds.records[3];

  ad::Tape tape;
  auto bound = bind(tape, params);
  auto batch = make_batch(toy.cfg, std::span(&rec, 1), toy.ds.embeddings);
  Rng rng(0);
  auto fw = forward_batch(tape, bound, toy.cfg, batch, ad::Mode::Eval, rng);
  auto grads = tape.backward(tape.sum_all(fw.logits));

  std::vector<double> ana, num;
  for (auto& [name, t] : params.tensors) {
    const auto* g = grads.find(bound[name]);
    for (std::size_t k = 0; k < t.size(); ++k) {
      ana.push_back(g ? (*g)[k] : 0.0);
      const double keep = t[k];
      t[k] = keep + 1e-5;
      const double up = forward(params, toy.cfg, rec, toy.ds.embeddings).logit;
      t[k] = keep - 1e-5;
      const double down = forward(params, toy.cfg, rec, toy.ds.embeddings).logit;
      t[k] = keep;
      num.push_back((up - down) / 2e-5);
    }
  }
  CHECK(oracle::rel_err(ana, num) < 1e-4);
}

TEST_CASE("every tensor receives gradient from the ranking loss") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Toy toy;
    toy.cfg.init_seed = seed;
    auto params = init(toy.cfg);
    ad::Tape tape;
    auto bound = bind(tape, params);
    std::vector<const data::InteractionRecord*> recs;
    std::vector<int> labels;
    for (std::size_t i = 0; i < 32; ++i) {
      recs.push_back(&toy.ds.records[i]);
      labels.push_back(toy.ds.records[i].label);
    }
    auto batch = make_batch(toy.cfg, recs, toy.ds.embeddings);
    Rng rng(seed);
    auto fw = forward_batch(tape, bound, toy.cfg, batch, ad::Mode::Train, rng);
    auto grads = tape.backward(objectives::weighted_bce(tape, fw.logits, labels, 1.0, 2.0));
    for (const auto& [name, var] : bound.vars) {
      INFO(name << " seed " << seed);
      const auto* g = grads.find(var);
      REQUIRE(g != nullptr);
      CHECK(std::any_of(g->values().begin(), g->values().end(), [](double v) { return v != 0.0; }));
    }
  }
}

TEST_CASE("masked channels do not affect the output") {
  Toy toy("text");
  auto params = init(toy.cfg);
  auto perturbed = toy.ds.embeddings;
  auto& img = perturbed.at(data::kItemImage);
  data::EmbeddingStore noisy(img.channel(), img.dim());
  for (const auto& id : img.ids()) noisy.add(id, std::vector<float>(img.dim(), 123.0f));
  img = noisy;
  for (std::size_t i = 0; i < 20; ++i) {
    const auto& r = toy.ds.records[i];
    CHECK(forward(params, toy.cfg, r, toy.ds.embeddings).logit ==
          forward(params, toy.cfg, r, perturbed).logit);
  }
  Toy image("image");
  CHECK(image.cfg.channels.size() == 1);
  CHECK(image.cfg.top_input_dim() == toy.cfg.top_input_dim() - 3);
  CHECK_THROWS_AS(mask_channels("audio"), ConfigError);
}

TEST_CASE("missing embedding names channel and id") {
  Toy toy;
  auto r = toy.ds.records[0];
  r.item_id = "ghost";
  try {
    forward(init(toy.cfg), toy.cfg, r, toy.ds.embeddings);
    FAIL("expected a lookup error");
  } catch (const LookupError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("ghost") != std::string::npos);
    CHECK(msg.find("item-") != std::string::npos);
  }
}

TEST_CASE("probabilities stay strictly inside the unit interval") {
  Toy toy;
  toy.cfg.dropout = 0.3;
  auto params = init(toy.cfg);
  auto probs = predict(params, toy.cfg, toy.ds.records, toy.ds.embeddings, 7);
  CHECK(probs.size() == toy.ds.records.size());
  for (double p : probs) CHECK((p > 0.0 && p < 1.0));
  CHECK(predict(params, toy.cfg, toy.ds.records, toy.ds.embeddings) == probs);
  const auto& r = toy.ds.records[0];
  CHECK(forward(params, toy.cfg, r, toy.ds.embeddings).probability ==
        doctest::Approx(probs[0]).epsilon(1e-15));
}

TEST_CASE("checkpoints round-trip") {
  Toy toy;
  auto params = init(toy.cfg);
  oracle::TempDir dir("ckpt");
  save_checkpoint(params, dir / "a.ckpt");
  auto back = load_checkpoint(dir / "a.ckpt", toy.cfg);
  CHECK(back == params);
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& r = toy.ds.records[i];
    CHECK(std::abs(forward(back, toy.cfg, r, toy.ds.embeddings).logit -
                   forward(params, toy.cfg, r, toy.ds.embeddings).logit) <= 1e-15);
  }

  Toy other("image");
  CHECK_THROWS_AS(load_checkpoint(dir / "a.ckpt", other.cfg), CheckpointError);

  save_checkpoint(zeros(toy.cfg), dir / "z.ckpt");
  std::ifstream in(dir / "z.ckpt");
  auto j = nlohmann::json::parse(in);
  for (const auto& [name, entry] : j.items())
    for (const auto& v : entry.at("values")) CHECK(v.get<double>() == 0.0);
}

}  // TEST_SUITE
