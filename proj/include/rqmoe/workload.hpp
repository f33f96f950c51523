// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "rqmoe/moe_model.hpp"
#include "rqmoe/numerics.hpp"

namespace rqmoe {

enum class SkewMode { Uniform, Zipf, Directional };

std::string_view to_string(SkewMode mode);
std::optional<SkewMode> parse_skew_mode(std::string_view text);

/// Router skew. Zipf adds bias_strength * (1 / (j + 1))^zipf_exponent to
/// expert j's logit. Directional tilts router row j toward a shared random
/// unit direction by the same per-expert weight, so tokens aligned with
/// that direction favour low-index experts.
struct SkewSpec {
  SkewMode mode = SkewMode::Uniform;
  double zipf_exponent = 0.0;
  double bias_strength = 0.0;

  void validate() const;
};

struct ModelShape {
  std::size_t layers = 1;   // p
  std::size_t experts = 8;  // m
  std::size_t top_k = 1;    // k
  std::size_t dim = 16;     // d (C_in == C_out)
};

/// Full32 model; router and expert weights are i.i.d. N(0, 1/d).
MoeModel gen_model(std::uint64_t seed, const ModelShape& shape, const SkewSpec& skew);

/// n x d i.i.d. standard normal tokens.
Matrix gen_tokens(std::uint64_t seed, std::size_t n, std::size_t d);

/// Same model with every expert stored at `scheme` (e.g. a Half16 base).
MoeModel with_base_scheme(const MoeModel& model, PrecisionScheme scheme);

}  // namespace rqmoe
