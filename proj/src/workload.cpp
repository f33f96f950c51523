// SPDX-License-Identifier: Apache-2.0
#include "rqmoe/workload.hpp"

#include <cmath>

#include "rqmoe/errors.hpp"
#include "rqmoe/random.hpp"

namespace rqmoe {

namespace {

constexpr std::uint64_t kModelStream = 1;
constexpr std::uint64_t kTokenStream = 2;

Matrix normal_matrix(CounterRng& rng, std::size_t rows, std::size_t cols, double scale) {
  std::vector<double> values(rows * cols);
  for (double& v : values) v = rng.normal() * scale;
  return Matrix(rows, cols, std::move(values));
}

}  // namespace

std::string_view to_string(SkewMode mode) {
  switch (mode) {
    case SkewMode::Uniform: return "uniform";
    case SkewMode::Zipf: return "zipf";
    case SkewMode::Directional: return "directional";
  }
  return "?";
}

std::optional<SkewMode> parse_skew_mode(std::string_view text) {
  if (text == "uniform") return SkewMode::Uniform;
  if (text == "zipf") return SkewMode::Zipf;
  if (text == "directional") return SkewMode::Directional;
  return std::nullopt;
}

void SkewSpec::validate() const {
  if (!(zipf_exponent >= 0.0) || !std::isfinite(zipf_exponent)) {
    throw ArgumentError("zipf exponent must be finite and >= 0");
  }
  if (!(bias_strength >= 0.0) || !std::isfinite(bias_strength)) {
    throw ArgumentError("bias strength must be finite and >= 0");
  }
  if (mode == SkewMode::Uniform && zipf_exponent != 0.0) {
    throw ArgumentError("uniform skew takes no zipf exponent");
  }
}

MoeModel gen_model(std::uint64_t seed, const ModelShape& shape, const SkewSpec& skew) {
  skew.validate();
  if (shape.layers == 0) throw ArgumentError("need at least one layer");
  if (shape.dim == 0) throw ArgumentError("dimension must be positive");
  if (shape.top_k == 0 || shape.top_k >= shape.experts) {
    throw ArgumentError("need 0 < k < m, got k=" + std::to_string(shape.top_k) +
                        " m=" + std::to_string(shape.experts));
  }

  CounterRng rng(seed, kModelStream);
  const std::size_t m = shape.experts;
  const std::size_t d = shape.dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  std::vector<double> weight(m, 0.0);
  if (skew.mode != SkewMode::Uniform) {
    for (std::size_t j = 0; j < m; ++j) {
      weight[j] = skew.bias_strength * std::pow(1.0 / static_cast<double>(j + 1), skew.zipf_exponent);
    }
  }

  std::vector<MoeLayer> layers;
  for (std::size_t l = 0; l < shape.layers; ++l) {
    Router router{normal_matrix(rng, m, d, scale), std::vector<double>(m, 0.0)};
    std::vector<ExpertInstance> experts;
    for (std::size_t e = 0; e < m; ++e) {
      experts.push_back({e, quantize(normal_matrix(rng, d, d, scale), PrecisionScheme::Full32),
                         false});
    }
    if (skew.mode == SkewMode::Zipf) {
      router.bias = weight;
    } else if (skew.mode == SkewMode::Directional) {
      std::vector<double> u(d);
      double norm = 0.0;
      for (double& v : u) {
        v = rng.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
      for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t c = 0; c < d; ++c) router.weights(j, c) += weight[j] * u[c] / norm;
      }
    }
    layers.emplace_back(std::move(router), shape.top_k, std::move(experts));
  }
  return MoeModel(std::move(layers), {"synthetic", seed});
}

Matrix gen_tokens(std::uint64_t seed, std::size_t n, std::size_t d) {
  if (n == 0) throw ArgumentError("token count must be positive");
  if (d == 0) throw ArgumentError("dimension must be positive");
  CounterRng rng(seed, kTokenStream);
  return normal_matrix(rng, n, d, 1.0);
}

MoeModel with_base_scheme(const MoeModel& model, PrecisionScheme scheme) {
  std::vector<MoeLayer> layers;
  for (const auto& layer : model.layers()) {
    std::vector<ExpertInstance> instances = layer.instances();
    for (auto& inst : instances) inst.weights = quantize(dequantize(inst.weights), scheme);
    layers.emplace_back(layer.router(), layer.top_k(), std::move(instances));
  }
  return MoeModel(std::move(layers), model.metadata());
}

}  // namespace rqmoe
