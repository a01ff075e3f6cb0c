#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "dlrrec/error.hpp"
#include "dlrrec/model.hpp"
#include "dlrrec/trainer.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace dlrrec;
using namespace dlrrec::trainer;
using ad::Tensor;

namespace {

// Splits a markdown row into trimmed cells.
std::vector<std::string> cells(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, '|')) {
    const auto b = cell.find_first_not_of(' ');
    if (b == std::string::npos) continue;
    out.push_back(cell.substr(b, cell.find_last_not_of(' ') - b + 1));
  }
  return out;
}

// Epoch after which the stopper first fires on a given FP trace.
std::optional<std::size_t> first_stop(EarlyStopper s, const std::function<double(std::size_t)>& fp,
                                      std::size_t limit) {
  for (std::size_t e = 0; e < limit; ++e) {
    s.update(e, fp(e));
    if (s.should_stop(e)) return e;
  }
  return std::nullopt;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("adam first step and zero gradient") {
  model::ModelParams p;
  p.tensors["a"] = Tensor::scalar(0.0);
  p.tensors["b"] = Tensor::scalar(1.0);
  AdamState st;
  adam_step(p, {{"a", Tensor::scalar(2.0)}}, st, 1, AdamConfig{});
  CHECK(p.at("a").item() == doctest::Approx(-0.01 * 2.0 / (2.0 + 1e-8)).epsilon(1e-15));
  CHECK(p.at("a").item() < -0.0099999999);
  CHECK(p.at("b").item() == 1.0);
  adam_step(p, {{"b", Tensor::scalar(0.0)}}, st, 2, AdamConfig{});
  CHECK(p.at("b").item() == 1.0);
}

TEST_CASE("adam matches a hand-written reference over many steps") {
  Rng rng(4);
  model::ModelParams p;
  p.tensors["w"] = Tensor({2, 3}, 0.5);
  p.tensors["v"] = Tensor({2, 3}, 0.5);
  std::vector<double> theta(6, 0.5), m(6, 0), v(6, 0);
  AdamState st;
  AdamConfig cfg{0.05, 0.8, 0.99, 1e-8};
  for (std::size_t t = 1; t <= 25; ++t) {
    Tensor g({2, 3});
    for (auto& x : g.data()) x = rng.uniform(-3, 3);
    adam_step(p, {{"w", g}, {"v", g}}, st, t, cfg);
    for (std::size_t k = 0; k < 6; ++k) {
      m[k] = cfg.beta1 * m[k] + (1 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1 - cfg.beta2) * g[k] * g[k];
      const double mh = m[k] / (1 - std::pow(cfg.beta1, double(t)));
      const double vh = v[k] / (1 - std::pow(cfg.beta2, double(t)));
      theta[k] -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.epsilon);
    }
  }
  for (std::size_t k = 0; k < 6; ++k) CHECK(p.at("w")[k] == doctest::Approx(theta[k]).epsilon(1e-12));
  CHECK(p.at("w") == p.at("v"));
}

TEST_CASE("adam contract errors") {
  model::ModelParams p;
  p.tensors["a"] = Tensor({2}, 0.0);
  AdamState st;
  CHECK_THROWS_AS(adam_step(p, {{"a", Tensor({2}, 1.0)}}, st, 0, {}), ContractError);
  CHECK_THROWS_AS(adam_step(p, {{"a", Tensor({3}, 1.0)}}, st, 1, {}), ContractError);
  CHECK_THROWS_AS(adam_step(p, {{"zz", Tensor({2}, 1.0)}}, st, 1, {}), ContractError);
}

TEST_CASE("metric arithmetic") {
  auto e = score_predictions(std::vector<double>(8, 0.9), std::vector{1, 1, 1, 1, 1, 1, 1, 0});
  CHECK(e.accuracy == 0.875);
  CHECK(e.fp_rate == 1.0);
  CHECK(e.confusion == Confusion{7, 0, 1, 0});

  auto perfect = score_predictions(std::vector{0.9, 0.1, 0.7}, std::vector{1, 0, 1});
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.fp_rate == 0.0);

  auto mixed = score_predictions(std::vector{0.6, 0.4, 0.5, 0.99}, std::vector{0, 0, 1, 1});
  CHECK(mixed.fp_rate == 0.5);
  CHECK(mixed.accuracy == 0.75);

  auto none = score_predictions(std::vector{0.9, 0.2}, std::vector{1, 1});
  CHECK(none.no_negatives);
  CHECK(none.fp_rate == 0.0);
  CHECK(to_json(mixed)["confusion"]["fp"] == 1);
}

TEST_CASE("early stopping traces") {
  auto constant = [](std::size_t) { return 0.1; };
  CHECK(first_stop(EarlyStopper(300, 50), constant, 2000) == 350u);
  auto improves_at_320 = [](std::size_t e) { return e < 320 ? 0.2 : 0.1; };
  CHECK(first_stop(EarlyStopper(300, 50), improves_at_320, 2000) == 370u);
  // Late improvements keep extending the window by `patience`.
  auto steady = [](std::size_t e) { return e <= 500 ? 1.0 / double(e + 1) : 0.5; };
  CHECK(first_stop(EarlyStopper(300, 50), steady, 2000) == 550u);
  // Ties do not count as improvement.
  auto ties = [](std::size_t e) { return e == 0 ? 0.3 : 0.3; };
  CHECK(first_stop(EarlyStopper(10, 5), ties, 100) == 15u);
  CHECK_THROWS_AS(EarlyStopper(1, 0), ConfigError);
}

TEST_CASE("early stopping never fires before min-epochs + 1 epochs") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t min = rng.below(40), patience = 1 + rng.below(10);
    std::vector<double> trace(200);
    for (auto& x : trace) x = rng.below(4) * 0.1;
    auto stop = first_stop(EarlyStopper(min, patience), [&](std::size_t e) { return trace[e]; }, 200);
    REQUIRE(stop.has_value());
    CHECK(*stop + 1 >= min + 1 + patience);
  }
}

TEST_CASE("config JSON round-trip and validation") {
  auto c = benchmark_config();
  c.mask = "image";
  c.loss.w1 = 0.3;
  auto back = train_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.max_epochs == 40);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"patience", 0}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"mask", "audio"}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"batch_size", "big"}}), ConfigError);
  TrainConfig bad;
  bad.adam.learning_rate = 0.0;
  CHECK_THROWS_AS(bad.check(), ConfigError);
}

TEST_CASE("zero contrastive weights leave the total equal to the ranking loss") {
  fixture::Pipeline p;
  auto cfg = p.cfg;
  cfg.loss.w1 = cfg.loss.w2 = 0.0;
  std::size_t batches = 0, anchored = 0;
  TrainHooks hooks;
  hooks.on_batch = [&](const BatchTrace& b) {
    ++batches;
    anchored += b.loss.item_anchors + b.loss.user_anchors;
    CHECK(std::abs(b.loss.total - b.loss.rec) <= 1e-12);
  };
  p.run(cfg, hooks);
  CHECK(batches > 0);
  CHECK(anchored > 0);
}

TEST_CASE("runs are deterministic and the best epoch is the FP minimum") {
  fixture::Pipeline p;
  auto a = p.run(), b = p.run();
  CHECK(to_json(a).dump() == to_json(b).dump());
  CHECK(a.best_params == b.best_params);
  CHECK(a.final_params == b.final_params);
  double lowest = INFINITY;
  for (const auto& e : a.epochs) lowest = std::min(lowest, e.test_fp_rate);
  CHECK(a.best_test_fp_rate == lowest);
  CHECK(a.epochs.at(a.best_epoch).test_fp_rate == lowest);
  CHECK(a.best_test_accuracy == a.epochs.at(a.best_epoch).test_accuracy);

  auto other = p.cfg;
  other.seed = 6;
  CHECK(p.run(other).final_params != a.final_params);
}

TEST_CASE("reloading the best parameters reproduces the reported metrics") {
  fixture::Pipeline p;
  auto r = p.run();
  oracle::TempDir dir("best");
  model::save_checkpoint(r.best_params, dir / "best.ckpt");
  auto params = model::load_checkpoint(dir / "best.ckpt", r.model);
  auto e = evaluate(params, r.model, p.split.test, p.ds.embeddings);
  CHECK(e == r.best_evaluation);
  CHECK(e.fp_rate == r.best_test_fp_rate);
  CHECK(e.accuracy == r.best_test_accuracy);
}

TEST_CASE("stop reasons") {
  fixture::Pipeline p;
  auto cfg = p.cfg;
  cfg.max_epochs = 30;
  cfg.min_epochs = 1;
  cfg.patience = 1;
  auto r = p.run(cfg);
  CHECK(r.stop_reason == "early-stop");
  CHECK(r.epochs.size() < 30);
  CHECK(p.run().stop_reason == "max-epochs");
  CHECK(p.run().epochs.size() == 4);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  fixture::Pipeline p;
  for (auto& r : p.split.train) r.dense.assign(r.dense.size(), std::numeric_limits<double>::infinity());
  try {
    p.run();
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch 0") != std::string::npos);
    CHECK(msg.find("batch") != std::string::npos);
  }
}

TEST_CASE("repeat aggregation") {
  fixture::Pipeline p;
  auto one = repeat_runs(p.cfg, 1, p.split, p.ds.embeddings, p.user_sims, p.item_sims);
  auto single = p.run();
  CHECK(one.mean_accuracy == single.best_test_accuracy);
  CHECK(one.min_fp_rate == single.best_test_fp_rate);
  CHECK(one.max_fp_rate == single.best_test_fp_rate);

  auto three = repeat_runs(p.cfg, 3, p.split, p.ds.embeddings, p.user_sims, p.item_sims);
  REQUIRE(three.runs.size() == 3);
  double mean = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(three.min_fp_rate <= three.runs[i].best_test_fp_rate);
    CHECK(three.max_accuracy >= three.runs[i].best_test_accuracy);
    mean += three.runs[i].best_test_accuracy / 3;
    CHECK(three.runs[i].config["seed"] == p.cfg.seed + i);
  }
  CHECK(three.mean_accuracy == doctest::Approx(mean).epsilon(1e-15));
  CHECK(to_json(three.runs[0]).dump() == to_json(single).dump());
}

TEST_CASE("the plain BCE arm samples nothing") {
  fixture::Pipeline p;
  auto cfg = p.cfg;
  cfg.loss.contrastive = false;
  std::size_t anchored = 0;
  TrainHooks hooks;
  hooks.on_batch = [&](const BatchTrace& b) { anchored += b.loss.item_anchors + b.loss.user_anchors; };
  auto r = p.run(cfg, hooks);
  CHECK(anchored == 0);
  CHECK(r.loss == "BCE");
  CHECK(loss_arm(p.cfg.loss) == "BCE + Contr.");
}

TEST_CASE("table formatting") {
  CHECK(percent(0.9971) == "99.71");
  CHECK(percent(0.0015) == "0.15");
  std::vector<ArmSummary> arms{{"text+image", "BCE + Contr.", {0.9971}, {0.0015}}};
  auto t = emit_table(arms);
  REQUIRE(t.rows.size() == 1);
  std::stringstream md(t.markdown());
  std::string line, last;
  while (std::getline(md, line)) last = line;
  CHECK(cells(last) == std::vector<std::string>{"Text + Image", "BCE + Contr.", "99.71", "0.15"});
  CHECK(t.to_json()["rows"][0]["fp_rate_pct"] == "0.15");
}

TEST_CASE("table grouping and order") {
  std::vector<ArmSummary> arms{{"image", "BCE", {0.8, 0.9}, {0.2, 0.4}},
                               {"text", "BCE", {}, {}},
                               {"text", "BCE + Contr.", {0.95}, {0.05}}};
  auto t = emit_table(arms);
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0].model == "Image Only");
  CHECK(t.rows[0].accuracy == doctest::Approx(0.85));
  CHECK(t.rows[0].fp_rate == doctest::Approx(0.3));
  CHECK(t.rows[0].runs == 2);
  CHECK(t.rows[1].model == "Text Only");
  CHECK(t.warnings.size() == 1);

  std::vector<ArmSummary> all;
  for (std::string m : {"text+image", "image", "text"})
    for (std::string l : {"BCE", "BCE + Contr."}) all.push_back({m, l, {0.5}, {0.5}});
  sort_table_order(all);
  std::vector<std::string> order;
  for (const auto& row : emit_table(all).rows) order.push_back(row.model + "/" + row.loss);
  CHECK(order == std::vector<std::string>{"Text Only/BCE + Contr.", "Text Only/BCE",
                                          "Image Only/BCE + Contr.", "Image Only/BCE",
                                          "Text + Image/BCE + Contr.", "Text + Image/BCE"});
}

}  // TEST_SUITE
