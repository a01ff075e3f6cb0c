#pragma once

// Finite-difference verification of the reverse-mode rules, op by op and for
// the full training objective on a toy model.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dlrrec/autodiff.hpp"

namespace dlrrec::gradcheck {

struct Options {
  std::uint64_t seed = 0;
  std::size_t trials = 20;  // random instances per op, and composite seeds
  double step = 1e-5;       // central-difference h
  double op_tolerance = 1e-6;
  double composite_tolerance = 1e-4;
  // Negative control: scale this op's backward output by `corrupt_factor`.
  std::optional<ad::OpKind> corrupt;
  double corrupt_factor = 1.5;
};

struct OpResult {
  std::string op;
  double worst_error = 0.0;
  std::size_t trials = 0;
  bool passed = false;
};

struct Report {
  std::vector<OpResult> ops;
  double composite_error = 0.0;
  std::size_t composite_params = 0;
  bool composite_passed = false;
  bool passed = false;
};

// Norm-wise relative error |a - n| / max(|a|, |n|, tiny).
double relative_error(std::span<const double> analytic, std::span<const double> numeric);

OpResult check_op(ad::OpKind kind, const Options& opts);
// Gradient of the batch objective (BCE plus both contrastive terms, dropout
// off) against central differences on a small synthetic model.
double check_composite(const Options& opts, std::size_t* params_checked = nullptr);

Report run(const Options& opts);
nlohmann::json to_json(const Report& r);

}  // namespace dlrrec::gradcheck
