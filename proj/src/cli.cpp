#include "dlrrec/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "dlrrec/dataio.hpp"
#include "dlrrec/error.hpp"
#include "dlrrec/gradcheck.hpp"
#include "dlrrec/model.hpp"
#include "dlrrec/swing.hpp"
#include "dlrrec/trainer.hpp"

namespace dlrrec::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Signals a non-zero exit after a completed command (for example a failed check).
struct ExitCode {
  int code;
};

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

data::DatasetSplit split_dataset(const data::Dataset& ds, double fraction, std::uint64_t seed) {
  return data::split(ds.records, fraction, seed, ds.schema);
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void cmd_synth(const SynthArgs& a, std::ostream& out) {
  data::SynthConfig cfg;
  try {
    cfg = read_json(a.config).get<data::SynthConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synth config: ") + e.what());
  }
  if (a.seed) cfg.seed = *a.seed;
  cfg.check();
  const auto ds = data::synthesize(cfg);
  data::write_dataset(a.out, ds);
  std::size_t pos = 0;
  for (const auto& r : ds.records) pos += r.label == 1 ? 1 : 0;
  out << json{{"records", ds.records.size()},
              {"positives", pos},
              {"users", ds.user_clusters.size()},
              {"items", ds.item_clusters.size()},
              {"out", a.out}}
             .dump()
      << "\n";
}

// ---------------------------------------------------------------- swing

struct SwingArgs {
  std::string data;
  std::string side;
  double alpha = 1.0;
  std::size_t topk = 10;
  std::string out;
  double test_fraction = 0.2;
  std::uint64_t split_seed = 7;
  bool all_records = false;
};

void cmd_swing(const SwingArgs& a, std::ostream& out) {
  const auto side = data::entity_from_string(a.side);
  if (!(a.alpha > 0.0)) throw ConfigError("--alpha must be positive");
  if (a.topk == 0) throw ConfigError("--topk must be at least 1");
  auto records = data::load_interactions(fs::path(a.data) / "interactions.jsonl");
  // Similarities come from the training split only, so test interactions
  // never leak into the contrastive positives.
  if (!a.all_records && records.size() > 1) {
    records = data::split(records, a.test_fraction, a.split_seed, data::Schema{}).train;
  }
  const auto graph = swing::build_graph(records);
  const auto sims = swing::top_k_neighbors(graph, side, a.topk, a.alpha);
  swing::save_similarity(a.out, sims);
  std::size_t with_neighbors = 0;
  for (const auto& [id, list] : sims.neighbors) with_neighbors += list.empty() ? 0 : 1;
  out << json{{"side", a.side},
              {"entities", sims.neighbors.size()},
              {"with_neighbors", with_neighbors},
              {"out", a.out}}
             .dump()
      << "\n";
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  std::string data;
  std::string user_sims;
  std::string item_sims;
  std::string out;
  std::optional<std::size_t> repeats;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mask;
  std::optional<std::size_t> max_epochs;
  std::optional<std::size_t> min_epochs;
  std::optional<std::size_t> patience;
  std::optional<double> w1;
  std::optional<double> w2;
  bool no_contrastive = false;
};

void cmd_train(const TrainArgs& a, std::ostream& out) {
  json j = a.config.empty() ? json::object() : read_json(a.config);
  trainer::TrainConfig cfg = trainer::train_config_from_json(j);
  if (a.repeats) cfg.repeats = *a.repeats;
  if (a.seed) cfg.seed = *a.seed;
  if (a.mask) cfg.mask = *a.mask;
  if (a.max_epochs) cfg.max_epochs = *a.max_epochs;
  if (a.min_epochs) cfg.min_epochs = *a.min_epochs;
  if (a.patience) cfg.patience = *a.patience;
  if (a.w1) cfg.loss.w1 = *a.w1;
  if (a.w2) cfg.loss.w2 = *a.w2;
  if (a.no_contrastive) cfg.loss.contrastive = false;
  cfg.check();

  for (const auto& p : {a.user_sims, a.item_sims})
    if (!fs::exists(p)) throw ConfigError("similarity file not found: " + p);
  const auto user_sims = swing::load_similarity(a.user_sims);
  const auto item_sims = swing::load_similarity(a.item_sims);
  const auto ds = data::load_dataset(a.data);
  const auto split = split_dataset(ds, cfg.test_fraction, cfg.split_seed);

  std::vector<trainer::RunReport> runs;
  for (std::size_t i = 0; i < cfg.repeats; ++i) {
    trainer::TrainConfig run = cfg;
    run.seed = cfg.seed + i;
    auto report = trainer::train(run, split, ds.embeddings, user_sims, item_sims);
    report.checkpoint = "best.ckpt";
    const fs::path dir = fs::path(a.out) / ("run_" + std::to_string(i));
    fs::create_directories(dir);
    model::save_checkpoint(report.best_params, dir / "best.ckpt");
    write_json(dir / "config.json", report.config);
    write_json(dir / "report.json", trainer::to_json(report));
    spdlog::info("run {}: best epoch {} acc {:.4f} fp {:.4f} ({})", i, report.best_epoch,
                 report.best_test_accuracy, report.best_test_fp_rate, report.stop_reason);
    runs.push_back(std::move(report));
  }
  const auto agg = trainer::aggregate(std::move(runs));
  const json aj = trainer::to_json(agg);
  write_json(fs::path(a.out) / "aggregate.json", aj);
  out << aj.dump() << "\n";
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string split = "test";
  std::optional<std::string> mask;
};

void cmd_eval(const EvalArgs& a, std::ostream& out) {
  const fs::path config_path = fs::path(a.ckpt).parent_path() / "config.json";
  const json j = read_json(config_path);
  trainer::TrainConfig cfg = trainer::train_config_from_json(j);
  if (a.mask) {
    model::mask_channels(*a.mask);
    if (*a.mask != cfg.mask) {
      throw CheckpointError("checkpoint was trained with mask '" + cfg.mask + "', not '" + *a.mask +
                            "'");
    }
  }
  if (a.split != "test" && a.split != "train")
    throw ConfigError("--split must be 'train' or 'test'");
  const auto ds = data::load_dataset(a.data);
  const auto mcfg = trainer::resolve_model_config(cfg, ds.schema);
  if (j.contains("resolved_model") && j.at("resolved_model").get<model::ModelConfig>() != mcfg)
    throw CheckpointError("dataset schema does not match the run's model config");
  const auto params = model::load_checkpoint(a.ckpt, mcfg);
  const auto split = split_dataset(ds, cfg.test_fraction, cfg.split_seed);
  const auto& records = a.split == "test" ? split.test : split.train;
  const auto e = trainer::evaluate(params, mcfg, records, ds.embeddings);
  out << trainer::to_json(e).dump() << "\n";
}

// ---------------------------------------------------------------- report

struct ReportArgs {
  std::vector<std::string> runs;
  std::string out;
};

std::vector<fs::path> collect_reports(const std::vector<std::string>& dirs) {
  std::vector<fs::path> reports;
  for (const auto& d : dirs) {
    const fs::path dir(d);
    if (fs::is_regular_file(dir / "report.json")) {
      reports.push_back(dir / "report.json");
      continue;
    }
    if (!fs::is_directory(dir)) throw ConfigError("cannot read run directory " + d);
    std::vector<fs::path> found;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_directory() && fs::is_regular_file(entry.path() / "report.json"))
        found.push_back(entry.path() / "report.json");
    if (found.empty()) throw ConfigError("no report.json under " + d);
    std::sort(found.begin(), found.end());
    reports.insert(reports.end(), found.begin(), found.end());
  }
  return reports;
}

void cmd_report(const ReportArgs& a, std::ostream& out) {
  std::vector<trainer::ArmSummary> arms;
  for (const auto& path : collect_reports(a.runs)) {
    const json r = read_json(path);
    try {
      const auto mask = r.at("mask").get<std::string>();
      const auto loss = r.at("loss").get<std::string>();
      auto it = std::find_if(arms.begin(), arms.end(), [&](const trainer::ArmSummary& s) {
        return s.mask == mask && s.loss == loss;
      });
      if (it == arms.end()) {
        arms.push_back({mask, loss, {}, {}});
        it = std::prev(arms.end());
      }
      it->accuracies.push_back(r.at("best_test_accuracy").get<double>());
      it->fp_rates.push_back(r.at("best_test_fp_rate").get<double>());
    } catch (const json::exception& e) {
      throw ConfigError("malformed report " + path.string() + ": " + e.what());
    }
  }
  trainer::sort_table_order(arms);
  const auto table = trainer::emit_table(arms);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  write_text(dir / "table.md", table.markdown());
  write_json(dir / "table.json", table.to_json());
  out << table.markdown();
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckArgs {
  std::uint64_t seed = 0;
  std::size_t trials = 20;
  std::optional<std::string> corrupt;
  bool json_output = false;
};

void cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  gradcheck::Options opts;
  opts.seed = a.seed;
  opts.trials = a.trials;
  if (opts.trials == 0) throw ConfigError("--trials must be at least 1");
  if (a.corrupt) {
    for (auto kind : ad::registered_ops())
      if (ad::op_name(kind) == *a.corrupt) opts.corrupt = kind;
    if (!opts.corrupt) throw ConfigError("unknown op '" + *a.corrupt + "'");
  }
  const auto report = gradcheck::run(opts);
  if (a.json_output) {
    out << gradcheck::to_json(report).dump(2) << "\n";
  } else {
    char line[128];
    for (const auto& op : report.ops) {
      std::snprintf(line, sizeof line, "%-14s worst rel. err %.3e  %s\n", op.op.c_str(),
                    op.worst_error, op.passed ? "PASS" : "FAIL");
      out << line;
    }
    std::snprintf(line, sizeof line, "%-14s worst rel. err %.3e  %s (%zu params, %zu seeds)\n",
                  "composite", report.composite_error, report.composite_passed ? "PASS" : "FAIL",
                  report.composite_params, opts.trials);
    out << line;
  }
  if (!report.passed) throw ExitCode{kCheckFailed};
}

int dispatch(const std::function<void()>& action, std::ostream& err) {
  try {
    action();
    return kOk;
  } catch (const ExitCode& e) {
    return e.code;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kNumeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Recommendation model with co-trained projections and SWING contrastive losses"};
  app.require_subcommand(1, 1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a planted-cluster synthetic dataset");
  s->add_option("--config", synth.config, "SynthConfig JSON")->required();
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--seed", synth.seed, "Override the config seed");

  SwingArgs sw;
  auto* w = app.add_subcommand("swing", "Compute SWING top-k neighbors for one side");
  w->add_option("--data", sw.data, "Dataset directory")->required();
  w->add_option("--side", sw.side, "user or item")->required()->check(CLI::IsMember({"user", "item"}));
  w->add_option("--alpha", sw.alpha, "Smoothing constant (> 0)");
  w->add_option("--topk", sw.topk, "Neighbors kept per entity");
  w->add_option("--out", sw.out, "Output sims.json")->required();
  w->add_option("--test-fraction", sw.test_fraction, "Held-out fraction excluded from the graph");
  w->add_option("--split-seed", sw.split_seed, "Seed of the train/test split");
  w->add_flag("--all-records", sw.all_records, "Build the graph from every interaction");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train one or more seeded runs");
  t->add_option("--config", tr.config, "Run config JSON (defaults when omitted)");
  t->add_option("--data", tr.data, "Dataset directory")->required();
  t->add_option("--user-sims", tr.user_sims, "User similarity JSON")->required();
  t->add_option("--item-sims", tr.item_sims, "Item similarity JSON")->required();
  t->add_option("--out", tr.out, "Output directory")->required();
  t->add_option("--repeats", tr.repeats, "Number of seeded runs");
  t->add_option("--seed", tr.seed, "Base seed");
  t->add_option("--mask", tr.mask, "Channel mask: text, image or text+image");
  t->add_option("--max-epochs", tr.max_epochs, "Epoch ceiling");
  t->add_option("--min-epochs", tr.min_epochs, "Epochs before early stopping may trigger");
  t->add_option("--patience", tr.patience, "Epochs without improvement before stopping");
  t->add_option("--w1", tr.w1, "Item-item contrastive weight");
  t->add_option("--w2", tr.w2, "User-user contrastive weight");
  t->add_flag("--no-contrastive", tr.no_contrastive, "Plain BCE arm");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  e->add_option("--ckpt", ev.ckpt, "Checkpoint; config.json must sit beside it")->required();
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--split", ev.split, "train or test");
  e->add_option("--mask", ev.mask, "Expected channel mask");

  ReportArgs rp;
  auto* r = app.add_subcommand("report", "Build the comparison table from run directories");
  r->add_option("--runs", rp.runs, "Run directories (or train output directories)")->required();
  r->add_option("--out", rp.out, "Output directory for table.md and table.json")->required();

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference check of every op and the full loss");
  g->add_option("--seed", gc.seed, "Base seed");
  g->add_option("--trials", gc.trials, "Random instances per op and composite seeds");
  g->add_option("--corrupt", gc.corrupt, "Scale one op's backward rule (negative control)");
  g->add_flag("--json", gc.json_output, "Machine-readable output");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n" << "run with --help for usage\n";
    return kUsage;
  }

  if (s->parsed()) return dispatch([&] { cmd_synth(synth, out); }, err);
  if (w->parsed()) return dispatch([&] { cmd_swing(sw, out); }, err);
  if (t->parsed()) return dispatch([&] { cmd_train(tr, out); }, err);
  if (e->parsed()) return dispatch([&] { cmd_eval(ev, out); }, err);
  if (r->parsed()) return dispatch([&] { cmd_report(rp, out); }, err);
  if (g->parsed()) return dispatch([&] { cmd_gradcheck(gc, out); }, err);
  return kUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace dlrrec::cli
