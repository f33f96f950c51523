// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "rqmoe/moe_model.hpp"
#include "rqmoe/numerics.hpp"

namespace rqmoe {

inline constexpr double kDefaultCalibFraction = 0.1;
inline constexpr double kDefaultSparsity = 0.5;

/// ceil(fraction * rows) rows drawn uniformly without replacement, returned
/// in their original order.
Matrix sample_calibration(const Matrix& tokens, double fraction, std::uint64_t seed);

/// Number of rows sample_calibration keeps.
std::size_t calibration_size(std::size_t rows, double fraction);

/// Most-routed base expert per layer.
struct HeavyHitterList {
  std::vector<std::size_t> experts;
  friend bool operator==(const HeavyHitterList&, const HeavyHitterList&) = default;
};

HeavyHitterList find_heavy_hitters(const MoeModel& model, const Matrix& calib);

struct ImportanceReport {
  std::vector<std::vector<double>> scores;  // [layer][expert]
  std::vector<std::size_t> chosen;          // argmax per layer
  double sparsity = kDefaultSparsity;
  friend bool operator==(const ImportanceReport&, const ImportanceReport&) = default;
};

/// Per-row count of pruned entries: max(1, floor(cols * sparsity)).
std::size_t pruned_per_row(std::size_t cols, double sparsity);

/// Mean of the per-row bottom pruned_per_row(C_in, s) entries of
/// S = |W| * diag(column_norms).
double wanda_expert_score(const Matrix& weights, std::span<const double> column_norms,
                          double sparsity);

/// Activation-aware importance per base expert. Each expert's input norms
/// come from the calibration tokens dispatched to it; experts that receive
/// none fall back to the norms of the whole layer input.
ImportanceReport wanda_expert_scores(const MoeModel& model, const Matrix& calib,
                                     double sparsity);

}  // namespace rqmoe
