// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "icefm/errors.hpp"
#include "icefm/nn/params.hpp"

namespace icefm {

/// Low-rank adapter settings; the adapter output is scaled by alpha / rank.
struct LoraConfig {
  int rank = 4;
  double alpha = 16.0;
  double dropout = 0.2;
  std::vector<ParamRole> targets{ParamRole::attn_q, ParamRole::attn_v};

  [[nodiscard]] double scale() const { return alpha / static_cast<double>(rank); }

  void validate() const {
    if (rank < 1) throw ValidationError("lora.rank must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("lora.dropout must be in [0, 1)");
    if (targets.empty()) throw ValidationError("lora.targets must not be empty");
    for (auto t : targets)
      if (t != ParamRole::attn_q && t != ParamRole::attn_k && t != ParamRole::attn_v && t != ParamRole::attn_out)
        throw ValidationError("lora.targets may only name attention projections");
  }
};

/// Visual prompt tuning; per_layer selects the deep variant.
struct VptConfig {
  int prompt_length = 10;
  bool per_layer = true;

  void validate() const {
    if (prompt_length < 0) throw ValidationError("vpt.prompt_length must be >= 0");
  }
};

}  // namespace icefm
