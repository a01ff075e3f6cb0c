#pragma once

// A small end-to-end setup: planted-cluster data, a seeded split, SWING
// lists from the training part, and a quick training config.

#include "dlrrec/dataio.hpp"
#include "dlrrec/swing.hpp"
#include "dlrrec/trainer.hpp"
#include "oracles.hpp"

namespace fixture {

struct Pipeline {
  dlrrec::data::Dataset ds;
  dlrrec::data::DatasetSplit split;
  dlrrec::swing::SimilarityGraph user_sims, item_sims;
  dlrrec::trainer::TrainConfig cfg;

  explicit Pipeline(const dlrrec::data::SynthConfig& synth = oracle::tiny_synth()) {
    ds = dlrrec::data::synthesize(synth);
    split = dlrrec::data::split(ds.records, 0.25, 7, ds.schema);
    const auto g = dlrrec::swing::build_graph(split.train);
    user_sims = dlrrec::swing::top_k_neighbors(g, dlrrec::swing::Side::User, 5, 1.0);
    item_sims = dlrrec::swing::top_k_neighbors(g, dlrrec::swing::Side::Item, 5, 1.0);
    cfg.batch_size = 32;
    cfg.max_epochs = 4;
    cfg.min_epochs = 0;
    cfg.patience = 10;
    cfg.repeats = 1;
    cfg.seed = 5;
    cfg.loss.negatives = 3;
    cfg.model.d_int = 4;
    cfg.model.dense_hidden = {6};
    cfg.model.top_hidden = {6};
  }

  dlrrec::trainer::RunReport run(const dlrrec::trainer::TrainConfig& c,
                                 const dlrrec::trainer::TrainHooks& hooks = {}) const {
    return dlrrec::trainer::train(c, split, ds.embeddings, user_sims, item_sims, hooks);
  }
  dlrrec::trainer::RunReport run() const { return run(cfg); }
};

}  // namespace fixture
