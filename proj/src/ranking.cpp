#include "adsf/ranking.hpp"

#include <cmath>
#include <stdexcept>

namespace adsf {

std::vector<int64_t> RankingConfig::deep_sizes() const {
  std::vector<int64_t> production = task == RankingTask::ctr
                                   ? std::vector<int64_t>{5000, 2500, 250, 500}
                                   : std::vector<int64_t>{240, 120};
  std::vector<int64_t> out;
  for (int64_t w : production)
    out.push_back(std::max<int64_t>(
        4, static_cast<int64_t>(std::llround(static_cast<double>(w) / width_divisor))));
  return out;
}

RankingModel make_ranking_model(ParamSet& params, const RankingConfig& config,
                                RngStream& rng) {
  if (config.input_width <= 0)
    throw std::invalid_argument("ranking model: input width must be positive");
  RankingModel m;
  m.config = config;
  int64_t d = config.input_width;
  if (config.use_cross) {
    for (int64_t l = 0; l < config.num_cross(); ++l) {
      RankingModel::CrossLayer cl;
      cl.w = &params.create_init("rank.cross" + std::to_string(l) + ".w", {d, d}, rng,
                                 1.0 / std::sqrt(static_cast<double>(d)));
      cl.b = &params.create("rank.cross" + std::to_string(l) + ".b", {d});
      m.cross.push_back(cl);
    }
  }
  int64_t in = d;
  if (config.serial_dcn && config.use_cross) in = d;  // serial: deep consumes cross output
  auto sizes = config.deep_sizes();
  for (size_t l = 0; l < sizes.size(); ++l) {
    RankingModel::DeepLayer dl;
    int64_t out_w = sizes[l];
    std::string pfx = "rank.deep" + std::to_string(l);
    dl.w = &params.create_init(pfx + ".w", {in, out_w}, rng,
                               1.0 / std::sqrt(static_cast<double>(in)));
    dl.b = &params.create(pfx + ".b", {out_w});
    dl.gamma = &params.create(pfx + ".bn_gamma", {out_w});
    dl.beta = &params.create(pfx + ".bn_beta", {out_w});
    for (double& v : dl.gamma->value.v) v = 1.0;
    dl.bn.running_mean = &params.create(pfx + ".bn_mean", {out_w});
    dl.bn.running_var = &params.create(pfx + ".bn_var", {out_w});
    for (double& v : dl.bn.running_var->value.v) v = 1.0;
    dl.bn.running_mean->trainable = false;
    dl.bn.running_var->trainable = false;
    m.deep.push_back(dl);
    in = out_w;
  }
  int64_t head_in = in;
  if (config.use_cross && !config.serial_dcn) head_in += d;  // parallel: concat stacks
  else if (config.use_cross && config.serial_dcn) head_in = in;
  m.head_w = &params.create_init("rank.head.w", {head_in, 1}, rng,
                                 1.0 / std::sqrt(static_cast<double>(head_in)));
  m.head_b = &params.create("rank.head.b", {1});
  return m;
}

Var cross_layer(Var x0, Var xl, Var w, Var b) {
  const TensorData& xv = x0.val();
  if (!xv.same_shape(xl.val()))
    throw std::invalid_argument("cross_layer: x0/x_l width mismatch, " +
                                xv.shape_str() + " vs " + xl.val().shape_str());
  if (w.val().shape != std::vector<int64_t>{xv.last_dim(), xv.last_dim()})
    throw std::invalid_argument("cross_layer: weight shape mismatch " +
                                w.val().shape_str());
  // W x_l per row: matmul_nt gives y[i,j] = sum_k x[i,k] W[j,k]
  Var wx = add_bias(matmul_nt(xl, w), b);
  return add(mul(x0, wx), xl);
}

Var ranking_forward(Graph& g, RankingModel& model, Var wide_input, bool training) {
  const RankingConfig& c = model.config;
  if (wide_input.val().last_dim() != c.input_width)
    throw std::invalid_argument("ranking forward: input width " +
                                wide_input.val().shape_str() + ", model expects " +
                                std::to_string(c.input_width));
  Var cross_out = wide_input;
  if (c.use_cross) {
    Var x0 = wide_input;
    Var xl = wide_input;
    for (auto& cl : model.cross)
      xl = cross_layer(x0, xl, g.leaf(*cl.w), g.leaf(*cl.b));
    cross_out = xl;
  }
  Var deep_in = (c.use_cross && c.serial_dcn) ? cross_out : wide_input;
  Var h = deep_in;
  for (auto& dl : model.deep) {
    h = add_bias(matmul(h, g.leaf(*dl.w)), g.leaf(*dl.b));
    h = batch_norm(h, g.leaf(*dl.gamma), g.leaf(*dl.beta), dl.bn, training);
    h = leaky_relu(h, c.leaky_slope);
  }
  Var head_in = h;
  if (c.use_cross && !c.serial_dcn) head_in = concat_last({cross_out, h});
  Var logit = add_bias(matmul(head_in, g.leaf(*model.head_w)), g.leaf(*model.head_b));
  return sigmoid(logit);
}

}  // namespace adsf
