// SPDX-License-Identifier: Apache-2.0
#include "rqmoe/expert_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rqmoe/errors.hpp"
#include "rqmoe/random.hpp"
#include "rqmoe/routing_metrics.hpp"

namespace rqmoe {

namespace {

constexpr std::uint64_t kCalibrationStream = 0xCA11B;

// Absorbs representation error in products like 0.7 * 10.
constexpr double kCountSlack = 1e-9;

std::size_t argmax_lowest(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

class ActivationNorms final : public LayerObserver {
 public:
  explicit ActivationNorms(const MoeModel& model) {
    for (const auto& layer : model.layers()) {
      per_expert_.emplace_back(layer.base_expert_count(),
                               std::vector<double>(layer.d_in(), 0.0));
      hits_.emplace_back(layer.base_expert_count(), 0);
      all_.emplace_back(layer.d_in(), 0.0);
    }
  }

  void on_route(std::size_t layer, std::span<const double> input, const RouteResult& route,
                std::span<const std::size_t>) override {
    for (std::size_t j = 0; j < input.size(); ++j) all_[layer][j] += input[j] * input[j];
    for (std::size_t e : route.selected) {
      auto& acc = per_expert_[layer][e];
      for (std::size_t j = 0; j < input.size(); ++j) acc[j] += input[j] * input[j];
      ++hits_[layer][e];
    }
  }

  std::vector<double> norms(std::size_t layer, std::size_t expert) const {
    std::vector<double> out =
        hits_[layer][expert] > 0 ? per_expert_[layer][expert] : all_[layer];
    for (double& v : out) v = std::sqrt(v);
    return out;
  }

 private:
  std::vector<std::vector<std::vector<double>>> per_expert_;  // sums of squares
  std::vector<std::vector<std::uint64_t>> hits_;
  std::vector<std::vector<double>> all_;
};

}  // namespace

std::size_t calibration_size(std::size_t rows, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ArgumentError("calibration fraction must be in (0, 1]");
  }
  const double want = std::ceil(fraction * static_cast<double>(rows) - kCountSlack);
  return std::clamp<std::size_t>(static_cast<std::size_t>(want), 1, rows);
}

Matrix sample_calibration(const Matrix& tokens, double fraction, std::uint64_t seed) {
  if (tokens.rows() == 0) throw ArgumentError("sample_calibration: no tokens");
  const std::size_t n = tokens.rows();
  const std::size_t keep = calibration_size(n, fraction);

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  CounterRng rng(seed, kCalibrationStream);
  for (std::size_t i = 0; i < keep; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());

  std::vector<double> values;
  values.reserve(keep * tokens.cols());
  for (std::size_t r : idx) values.insert(values.end(), tokens.row(r).begin(), tokens.row(r).end());
  return Matrix(keep, tokens.cols(), std::move(values));
}

HeavyHitterList find_heavy_hitters(const MoeModel& model, const Matrix& calib) {
  if (calib.rows() == 0) throw ArgumentError("find_heavy_hitters: empty calibration set");
  RoutingTrace trace;
  forward_model(model, calib, &trace);
  HeavyHitterList out;
  for (const auto& layer : trace.layers) out.experts.push_back(heaviest_origin(layer));
  return out;
}

std::size_t pruned_per_row(std::size_t cols, double sparsity) {
  if (!(sparsity > 0.0 && sparsity <= 1.0)) throw ArgumentError("sparsity must be in (0, 1]");
  const auto t =
      static_cast<std::size_t>(std::floor(static_cast<double>(cols) * sparsity + kCountSlack));
  return std::clamp<std::size_t>(t, 1, cols);
}

double wanda_expert_score(const Matrix& weights, std::span<const double> column_norms,
                          double sparsity) {
  if (column_norms.size() != weights.cols()) {
    throw ShapeError("wanda: weights " + weights.shape_string() + " vs " +
                     std::to_string(column_norms.size()) + " column norms");
  }
  const std::size_t t = pruned_per_row(weights.cols(), sparsity);
  std::vector<double> row_scores(weights.cols());
  double total = 0.0;
  for (std::size_t r = 0; r < weights.rows(); ++r) {
    const auto w = weights.row(r);
    for (std::size_t j = 0; j < w.size(); ++j) row_scores[j] = std::fabs(w[j]) * column_norms[j];
    std::partial_sort(row_scores.begin(), row_scores.begin() + static_cast<std::ptrdiff_t>(t),
                      row_scores.end());
    for (std::size_t i = 0; i < t; ++i) total += row_scores[i];
  }
  return total / static_cast<double>(weights.rows() * t);
}

ImportanceReport wanda_expert_scores(const MoeModel& model, const Matrix& calib,
                                     double sparsity) {
  if (!(sparsity > 0.0 && sparsity <= 1.0)) throw ArgumentError("sparsity must be in (0, 1]");
  if (calib.rows() == 0) throw ArgumentError("wanda_expert_scores: empty calibration set");

  ActivationNorms norms(model);
  forward_model(model, calib, nullptr, &norms);

  ImportanceReport report;
  report.sparsity = sparsity;
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    const MoeLayer& layer = model.layer(l);
    std::vector<double> scores(layer.base_expert_count());
    for (std::size_t e = 0; e < scores.size(); ++e) {
      const Matrix w = dequantize(layer.instances()[layer.original_index(e)].weights);
      scores[e] = wanda_expert_score(w, norms.norms(l, e), sparsity);
    }
    report.chosen.push_back(argmax_lowest(scores));
    report.scores.push_back(std::move(scores));
  }
  return report;
}

}  // namespace rqmoe
