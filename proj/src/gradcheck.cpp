#include "dlrrec/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "dlrrec/dataio.hpp"
#include "dlrrec/error.hpp"
#include "dlrrec/model.hpp"
#include "dlrrec/rng.hpp"
#include "dlrrec/swing.hpp"
#include "dlrrec/trainer.hpp"

namespace dlrrec::gradcheck {

using ad::OpKind;
using ad::Tape;
using ad::Tensor;
using ad::Var;
using nlohmann::json;

double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size())
    throw DimensionError("relative_error: gradients differ in length");
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
}

namespace {

// One randomized instance of an op: its inputs and how to apply it.
struct Instance {
  std::vector<Tensor> inputs;
  std::function<Var(Tape&, const std::vector<Var>&)> apply;
};

Tensor random_tensor(Rng& rng, std::size_t rows, std::size_t cols, double lo = -2.0,
                     double hi = 2.0) {
  Tensor t({rows, cols});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Keeps inputs away from the relu kink so the difference quotient is smooth.
Tensor away_from_zero(Tensor t) {
  for (std::size_t i = 0; i < t.size(); ++i)
    if (std::abs(t[i]) < 0.05) t[i] = t[i] < 0 ? -0.5 : 0.5;
  return t;
}

Instance make_instance(OpKind kind, Rng& rng) {
  const std::size_t m = 2 + rng.below(3);
  const std::size_t n = 2 + rng.below(3);
  Instance in;
  auto unary = [&](auto op) {
    in.inputs = {random_tensor(rng, m, n)};
    in.apply = [op](Tape& t, const std::vector<Var>& v) { return op(t, v[0]); };
  };
  switch (kind) {
    case OpKind::MatMul: {
      const std::size_t k = 2 + rng.below(3);
      in.inputs = {random_tensor(rng, m, k), random_tensor(rng, k, n)};
      in.apply = [](Tape& t, const std::vector<Var>& v) { return t.matmul(v[0], v[1]); };
      break;
    }
    case OpKind::Add:
      in.inputs = {random_tensor(rng, m, n), random_tensor(rng, m, n)};
      in.apply = [](Tape& t, const std::vector<Var>& v) { return t.add(v[0], v[1]); };
      break;
    case OpKind::Mul:
      in.inputs = {random_tensor(rng, m, n), random_tensor(rng, m, n)};
      in.apply = [](Tape& t, const std::vector<Var>& v) { return t.mul(v[0], v[1]); };
      break;
    case OpKind::Neg: unary([](Tape& t, Var x) { return t.neg(x); }); break;
    case OpKind::Relu:
      in.inputs = {away_from_zero(random_tensor(rng, m, n))};
      in.apply = [](Tape& t, const std::vector<Var>& v) { return t.relu(v[0]); };
      break;
    case OpKind::Sigmoid: unary([](Tape& t, Var x) { return t.sigmoid(x); }); break;
    case OpKind::Exp: unary([](Tape& t, Var x) { return t.exp(x); }); break;
    case OpKind::Log:
      in.inputs = {random_tensor(rng, m, n, 0.5, 2.0)};
      in.apply = [](Tape& t, const std::vector<Var>& v) { return t.log(v[0]); };
      break;
    case OpKind::Scale: {
      const double factor = rng.uniform(-2.0, 2.0);
      unary([factor](Tape& t, Var x) { return t.scale(x, factor); });
      break;
    }
    case OpKind::AddRow:
      in.inputs = {random_tensor(rng, m, n), random_tensor(rng, 1, n)};
      in.apply = [](Tape& t, const std::vector<Var>& v) { return t.add_row(v[0], v[1]); };
      break;
    case OpKind::Sum:
    case OpKind::Mean:
    case OpKind::LogSumExp: {
      const std::size_t axis = rng.below(2);
      unary([kind, axis](Tape& t, Var x) {
        if (kind == OpKind::Sum) return t.sum(x, axis);
        if (kind == OpKind::Mean) return t.mean(x, axis);
        return t.logsumexp(x, axis);
      });
      break;
    }
    case OpKind::GatherRows: {
      std::vector<std::size_t> idx(m + 2);
      for (auto& i : idx) i = rng.below(m);  // repeats exercise the scatter-add
      in.inputs = {random_tensor(rng, m, n)};
      in.apply = [idx](Tape& t, const std::vector<Var>& v) { return t.gather_rows(v[0], idx); };
      break;
    }
    case OpKind::SegmentMean: {
      const std::size_t rows = m + 3;
      // Segments of 2, 0 (empty) and the rest.
      std::vector<std::size_t> offsets{0, 2, 2, rows};
      in.inputs = {random_tensor(rng, rows, n)};
      in.apply = [offsets](Tape& t, const std::vector<Var>& v) {
        return t.segment_mean(v[0], offsets);
      };
      break;
    }
    case OpKind::ConcatCols:
      in.inputs = {random_tensor(rng, m, n), random_tensor(rng, m, 1 + rng.below(3))};
      in.apply = [](Tape& t, const std::vector<Var>& v) { return t.concat_cols({v[0], v[1]}); };
      break;
    case OpKind::Dropout: {
      // The mask is redrawn from the same seed on every evaluation.
      const std::uint64_t mask_seed = rng.next();
      unary([mask_seed](Tape& t, Var x) {
        Rng r(mask_seed);
        return t.dropout(x, 0.3, ad::Mode::Train, r);
      });
      break;
    }
    case OpKind::Leaf: throw ContractError("gradcheck: leaves have no backward rule");
  }
  return in;
}

}  // namespace

OpResult check_op(OpKind kind, const Options& opts) {
  OpResult res;
  res.op = std::string(ad::op_name(kind));
  for (std::size_t trial = 0; trial < opts.trials; ++trial) {
    Rng rng(Rng::derive(opts.seed, {static_cast<std::uint64_t>(kind), trial}));
    Instance inst = make_instance(kind, rng);

    // Scalar objective: sum(out * R) for a fixed random R, so every output
    // element carries a distinct upstream gradient.
    Tensor weights;
    auto objective = [&](const std::vector<Tensor>& inputs, Tape& tape, std::vector<Var>& vars) {
      vars.clear();
      for (const auto& x : inputs) vars.push_back(tape.parameter(x));
      Var out = inst.apply(tape, vars);
      if (weights.size() == 0) {
        weights = Tensor(tape.value(out).shape());
        for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = rng.uniform(-2.0, 2.0);
      }
      return tape.sum_all(tape.mul(out, tape.constant(weights)));
    };

    Tape tape;
    if (opts.corrupt) tape.corrupt_backward(*opts.corrupt, opts.corrupt_factor);
    std::vector<Var> vars;
    Var root = objective(inst.inputs, tape, vars);
    const auto grads = tape.backward(root);

    std::vector<double> analytic, numeric;
    for (std::size_t k = 0; k < inst.inputs.size(); ++k) {
      const Tensor* g = grads.find(vars[k]);
      for (std::size_t i = 0; i < inst.inputs[k].size(); ++i) {
        analytic.push_back(g ? (*g)[i] : 0.0);
        auto eval = [&](double delta) {
          auto inputs = inst.inputs;
          inputs[k][i] += delta;
          Tape t;
          std::vector<Var> vs;
          return t.value(objective(inputs, t, vs)).item();
        };
        numeric.push_back((eval(opts.step) - eval(-opts.step)) / (2.0 * opts.step));
      }
    }
    res.worst_error = std::max(res.worst_error, relative_error(analytic, numeric));
    ++res.trials;
  }
  res.passed = res.worst_error < opts.op_tolerance;
  return res;
}

double check_composite(const Options& opts, std::size_t* params_checked) {
  data::SynthConfig sc;
  sc.user_clusters = 2;
  sc.item_clusters = 2;
  sc.users = 6;
  sc.items = 6;
  sc.affinity = {{0.9, 0.2}, {0.2, 0.9}};
  sc.d_raw = 3;
  sc.interactions_per_user = 4;
  sc.seed = opts.seed + 1;
  sc.sparse_vocab = 6;
  sc.sparse_len = 2;
  const data::Dataset ds = data::synthesize(sc);

  // A ring graph: each entity's single neighbor is the next id, so every
  // entity is an anchor and K = 1 always leaves eligible negatives.
  auto full_graph = [&](swing::Side side, const std::vector<std::string>& ids) {
    swing::SimilarityGraph g;
    g.side = side;
    g.k = 1;
    for (std::size_t a = 0; a < ids.size(); ++a)
      for (std::size_t b = 0; b < ids.size(); ++b)
        if (b == (a + 1) % ids.size()) g.neighbors[ids[a]].push_back({ids[b], 1.0});
    return g;
  };
  std::vector<std::string> users, items;
  for (const auto& [id, c] : ds.user_clusters) users.push_back(id);
  for (const auto& [id, c] : ds.item_clusters) items.push_back(id);
  const auto user_sims = full_graph(swing::Side::User, users);
  const auto item_sims = full_graph(swing::Side::Item, items);

  trainer::TrainConfig tc;
  tc.mask = "text+image";
  tc.projection_hidden = {3};
  tc.model.d_int = 3;
  tc.model.dense_hidden = {3};
  tc.model.top_hidden = {4};
  tc.model.dropout = 0.0;
  tc.seed = opts.seed;
  tc.loss.negatives = 1;
  tc.loss.w1 = 0.7;
  tc.loss.w2 = 0.4;
  const auto mcfg = trainer::resolve_model_config(tc, ds.schema);
  const auto ctx = trainer::make_loss_context(mcfg, tc.loss, ds.records, ds.embeddings, user_sims,
                                              item_sims, tc.seed);
  std::vector<const data::InteractionRecord*> records;
  for (const auto& r : ds.records) records.push_back(&r);

  model::ModelParams params = model::init(mcfg);
  // Lift biases off zero so relu kinks are not sitting on the data.
  {
    Rng rng(Rng::derive(opts.seed, {0xb1a5}));
    for (auto& [name, t] : params.tensors)
      for (std::size_t i = 0; i < t.size(); ++i) t[i] += rng.uniform(-0.3, 0.3);
  }

  auto loss_value = [&](const model::ModelParams& p) {
    Tape tape;
    const auto bound = model::bind(tape, p);
    const auto loss = trainer::batch_loss(tape, bound, ctx, records, 0, 0, ad::Mode::Eval);
    return tape.value(loss.total).item();
  };

  Tape tape;
  if (opts.corrupt) tape.corrupt_backward(*opts.corrupt, opts.corrupt_factor);
  const auto bound = model::bind(tape, params);
  const auto loss = trainer::batch_loss(tape, bound, ctx, records, 0, 0, ad::Mode::Eval);
  if (!loss.ii || !loss.uu) throw ContractError("gradcheck: toy objective lacks a contrastive term");
  const auto grads = tape.backward(loss.total);

  std::vector<double> analytic, numeric;
  for (auto& [name, t] : params.tensors) {
    const Tensor* g = grads.find(bound[name]);
    for (std::size_t i = 0; i < t.size(); ++i) {
      analytic.push_back(g ? (*g)[i] : 0.0);
      const double saved = t[i];
      t[i] = saved + opts.step;
      const double up = loss_value(params);
      t[i] = saved - opts.step;
      const double down = loss_value(params);
      t[i] = saved;
      numeric.push_back((up - down) / (2.0 * opts.step));
    }
  }
  if (params_checked) *params_checked = analytic.size();
  return relative_error(analytic, numeric);
}

Report run(const Options& opts) {
  Report r;
  r.passed = true;
  for (OpKind kind : ad::registered_ops()) {
    r.ops.push_back(check_op(kind, opts));
    r.passed = r.passed && r.ops.back().passed;
  }
  double worst = 0.0;
  std::size_t count = 0;
  for (std::size_t s = 0; s < opts.trials; ++s) {
    Options o = opts;
    o.seed = opts.seed + s;
    worst = std::max(worst, check_composite(o, &count));
  }
  r.composite_error = worst;
  r.composite_params = count;
  r.composite_passed = worst < opts.composite_tolerance;
  r.passed = r.passed && r.composite_passed;
  return r;
}

json to_json(const Report& r) {
  json ops = json::array();
  for (const auto& o : r.ops) {
    ops.push_back({{"op", o.op}, {"worst_error", o.worst_error}, {"trials", o.trials}, {"passed", o.passed}});
  }
  return json{{"ops", ops},
              {"composite", {{"error", r.composite_error}, {"params", r.composite_params}, {"passed", r.composite_passed}}},
              {"passed", r.passed}};
}

}  // namespace dlrrec::gradcheck
