#pragma once

#include <string>
#include <vector>

#include "adsf/tensor.hpp"

namespace adsf {

enum class RankingTask { ctr, pccvr };

struct RankingConfig {
  RankingTask task = RankingTask::ctr;
  int64_t input_width = 0;  // context width plus dynamic user width when present
  bool use_cross = true;
  bool serial_dcn = false;  // default: cross and deep in parallel, outputs concatenated
  double leaky_slope = 0.2;
  double width_divisor = 50.0;  // production widths scaled down by this factor

  int64_t num_cross() const { return task == RankingTask::ctr ? 4 : 2; }
  std::vector<int64_t> deep_sizes() const;
};

// Wide input + cross stack + deep stack (affine, batch norm, LeakyReLU) +
// sigmoid head.
struct RankingModel {
  RankingConfig config;
  struct CrossLayer {
    Param* w = nullptr;  // [d x d]
    Param* b = nullptr;  // [d]
  };
  struct DeepLayer {
    Param* w = nullptr;
    Param* b = nullptr;
    Param* gamma = nullptr;
    Param* beta = nullptr;
    BatchNormState bn;
  };
  std::vector<CrossLayer> cross;
  std::vector<DeepLayer> deep;
  Param* head_w = nullptr;
  Param* head_b = nullptr;
};

RankingModel make_ranking_model(ParamSet& params, const RankingConfig& config,
                                RngStream& rng);

// x_{l+1} = x0 * (W x_l + b) + x_l, elementwise product against the layer-0
// input; all widths equal.
Var cross_layer(Var x0, Var xl, Var w, Var b);

// Predicted probability, strictly inside (0,1). Input is [batch x input_width].
Var ranking_forward(Graph& g, RankingModel& model, Var wide_input, bool training);

}  // namespace adsf
