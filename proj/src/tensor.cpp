#include "adsf/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace adsf {

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

std::string TensorData::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

int Graph::add(TensorData value, std::vector<int> parents,
               std::function<void(Graph&, int)> backprop) {
  Node n;
  n.value = std::move(value);
  n.parents = std::move(parents);
  n.backprop = std::move(backprop);
  for (int p : n.parents) {
    if (nodes_[static_cast<size_t>(p)].needs_grad) n.needs_grad = true;
  }
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Var Graph::leaf(Param& p) {
  Node n;
  n.value = p.value;
  n.param = &p;
  n.needs_grad = p.trainable;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::constant(TensorData t) {
  Node n;
  n.value = std::move(t);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Graph::backward(Var loss) {
  check(loss.g == this, "backward: node from another graph");
  Node& ln = nodes_[static_cast<size_t>(loss.id)];
  check(ln.value.numel() == 1, "backward: loss must be scalar, got shape " +
                                   ln.value.shape_str());
  grad_of(loss.id)[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.param && n.param->trainable) {
      if (n.param->grad.size() != n.grad.size()) n.param->zero_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) n.param->grad[i] += n.grad[i];
    }
    if (n.backprop) n.backprop(*this, id);
  }
}

const TensorData& Var::val() const { return g->node(id).value; }

// ---------------------------------------------------------------------------

Var add(Var a, Var b) {
  const TensorData& av = a.val();
  const TensorData& bv = b.val();
  check(av.same_shape(bv),
        "add: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
  TensorData out = av;
  for (int64_t i = 0; i < out.numel(); ++i) out.v[static_cast<size_t>(i)] += bv.v[static_cast<size_t>(i)];
  int pa = a.id, pb = b.id;
  int id = a.g->add(std::move(out), {pa, pb}, [pa, pb](Graph& g, int self) {
    const auto& dy = g.node(self).grad;
    if (g.node(pa).needs_grad) {
      auto& da = g.grad_of(pa);
      for (size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
    }
    if (g.node(pb).needs_grad) {
      auto& db = g.grad_of(pb);
      for (size_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
    }
  });
  return Var{a.g, id};
}

Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var mul(Var a, Var b) {
  const TensorData& av = a.val();
  const TensorData& bv = b.val();
  check(av.same_shape(bv),
        "mul: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
  TensorData out = av;
  for (int64_t i = 0; i < out.numel(); ++i) out.v[static_cast<size_t>(i)] *= bv.v[static_cast<size_t>(i)];
  int pa = a.id, pb = b.id;
  int id = a.g->add(std::move(out), {pa, pb}, [pa, pb](Graph& g, int self) {
    const auto& dy = g.node(self).grad;
    const auto& av2 = g.node(pa).value.v;
    const auto& bv2 = g.node(pb).value.v;
    if (g.node(pa).needs_grad) {
      auto& da = g.grad_of(pa);
      for (size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv2[i];
    }
    if (g.node(pb).needs_grad) {
      auto& db = g.grad_of(pb);
      for (size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * av2[i];
    }
  });
  return Var{a.g, id};
}

Var scale(Var a, double c) {
  TensorData out = a.val();
  for (double& x : out.v) x *= c;
  int pa = a.id;
  int id = a.g->add(std::move(out), {pa}, [pa, c](Graph& g, int self) {
    if (!g.node(pa).needs_grad) return;
    const auto& dy = g.node(self).grad;
    auto& da = g.grad_of(pa);
    for (size_t i = 0; i < dy.size(); ++i) da[i] += c * dy[i];
  });
  return Var{a.g, id};
}

Var add_bias(Var x, Var b) {
  const TensorData& xv = x.val();
  const TensorData& bv = b.val();
  int64_t d = xv.last_dim();
  check(bv.ndim() == 1 && bv.shape[0] == d,
        "add_bias: bias " + bv.shape_str() + " does not match last axis of " +
            xv.shape_str());
  TensorData out = xv;
  int64_t rows = out.numel() / d;
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < d; ++j) out.v[static_cast<size_t>(r * d + j)] += bv.v[static_cast<size_t>(j)];
  int px = x.id, pb = b.id;
  int id = x.g->add(std::move(out), {px, pb}, [px, pb, rows, d](Graph& g, int self) {
    const auto& dy = g.node(self).grad;
    if (g.node(px).needs_grad) {
      auto& dx = g.grad_of(px);
      for (size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    }
    if (g.node(pb).needs_grad) {
      auto& db = g.grad_of(pb);
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < d; ++j) db[static_cast<size_t>(j)] += dy[static_cast<size_t>(r * d + j)];
    }
  });
  return Var{x.g, id};
}

Var add_seq(Var x, Var p) {
  const TensorData& xv = x.val();
  const TensorData& pv = p.val();
  check(xv.ndim() == 3 && pv.ndim() == 2 && xv.shape[1] == pv.shape[0] &&
            xv.shape[2] == pv.shape[1],
        "add_seq: " + xv.shape_str() + " vs " + pv.shape_str());
  int64_t bsz = xv.shape[0], n = pv.numel();
  TensorData out = xv;
  for (int64_t b = 0; b < bsz; ++b)
    for (int64_t i = 0; i < n; ++i) out.v[static_cast<size_t>(b * n + i)] += pv.v[static_cast<size_t>(i)];
  int px = x.id, pp = p.id;
  int id = x.g->add(std::move(out), {px, pp}, [px, pp, bsz, n](Graph& g, int self) {
    const auto& dy = g.node(self).grad;
    if (g.node(px).needs_grad) {
      auto& dx = g.grad_of(px);
      for (size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    }
    if (g.node(pp).needs_grad) {
      auto& dp = g.grad_of(pp);
      for (int64_t b = 0; b < bsz; ++b)
        for (int64_t i = 0; i < n; ++i) dp[static_cast<size_t>(i)] += dy[static_cast<size_t>(b * n + i)];
    }
  });
  return Var{x.g, id};
}

Var matmul(Var a, Var b) {
  const TensorData& av = a.val();
  const TensorData& bv = b.val();
  int an = av.ndim(), bn = bv.ndim();
  int64_t batch = 1, m, k, n;
  if (an == 2 && bn == 2) {
    m = av.shape[0]; k = av.shape[1];
    check(bv.shape[0] == k, "matmul: inner dimensions disagree, " +
                                av.shape_str() + " x " + bv.shape_str());
    n = bv.shape[1];
  } else if (an == 3 && bn == 3) {
    check(av.shape[0] == bv.shape[0] && av.shape[2] == bv.shape[1],
          "matmul: batched shapes disagree, " + av.shape_str() + " x " +
              bv.shape_str());
    batch = av.shape[0]; m = av.shape[1]; k = av.shape[2]; n = bv.shape[2];
  } else if (an == 3 && bn == 2) {
    check(av.shape[2] == bv.shape[0], "matmul: inner dimensions disagree, " +
                                          av.shape_str() + " x " + bv.shape_str());
    batch = av.shape[0]; m = av.shape[1]; k = av.shape[2]; n = bv.shape[1];
  } else {
    check(false, "matmul: unsupported ranks " + av.shape_str() + " x " + bv.shape_str());
    return Var{};
  }
  std::vector<int64_t> oshape =
      (an == 2 && bn == 2) ? std::vector<int64_t>{m, n}
                           : std::vector<int64_t>{batch, m, n};
  TensorData out = TensorData::zeros(oshape);
  bool shared_rhs = (bn == 2);
  for (int64_t s = 0; s < batch; ++s) {
    ConstMatMap A(av.v.data() + s * m * k, m, k);
    ConstMatMap B(bv.v.data() + (shared_rhs ? 0 : s * k * n), k, n);
    MatMap C(out.v.data() + s * m * n, m, n);
    C.noalias() = A * B;
  }
  int pa = a.id, pb = b.id;
  int id = a.g->add(std::move(out), {pa, pb},
                    [pa, pb, batch, m, k, n, shared_rhs](Graph& g, int self) {
    const auto& dy = g.node(self).grad;
    const auto& avv = g.node(pa).value.v;
    const auto& bvv = g.node(pb).value.v;
    if (g.node(pa).needs_grad) {
      auto& da = g.grad_of(pa);
      for (int64_t s = 0; s < batch; ++s) {
        ConstMatMap dC(dy.data() + s * m * n, m, n);
        ConstMatMap B(bvv.data() + (shared_rhs ? 0 : s * k * n), k, n);
        MatMap dA(da.data() + s * m * k, m, k);
        dA.noalias() += dC * B.transpose();
      }
    }
    if (g.node(pb).needs_grad) {
      auto& db = g.grad_of(pb);
      for (int64_t s = 0; s < batch; ++s) {
        ConstMatMap dC(dy.data() + s * m * n, m, n);
        ConstMatMap A(avv.data() + s * m * k, m, k);
        MatMap dB(db.data() + (shared_rhs ? 0 : s * k * n), k, n);
        dB.noalias() += A.transpose() * dC;
      }
    }
  });
  return Var{a.g, id};
}

Var matmul_nt(Var a, Var b) {
  const TensorData& av = a.val();
  const TensorData& bv = b.val();
  int an = av.ndim(), bn = bv.ndim();
  check(an == bn && (an == 2 || an == 3),
        "matmul_nt: unsupported ranks " + av.shape_str() + " x " + bv.shape_str());
  int64_t batch = 1, m, k, n;
  if (an == 2) {
    m = av.shape[0]; k = av.shape[1]; n = bv.shape[0];
    check(bv.shape[1] == k, "matmul_nt: inner dimensions disagree, " +
                                av.shape_str() + " x " + bv.shape_str());
  } else {
    check(av.shape[0] == bv.shape[0] && av.shape[2] == bv.shape[2],
          "matmul_nt: batched shapes disagree, " + av.shape_str() + " x " +
              bv.shape_str());
    batch = av.shape[0]; m = av.shape[1]; k = av.shape[2]; n = bv.shape[1];
  }
  std::vector<int64_t> oshape =
      (an == 2) ? std::vector<int64_t>{m, n} : std::vector<int64_t>{batch, m, n};
  TensorData out = TensorData::zeros(oshape);
  for (int64_t s = 0; s < batch; ++s) {
    ConstMatMap A(av.v.data() + s * m * k, m, k);
    ConstMatMap B(bv.v.data() + s * n * k, n, k);
    MatMap C(out.v.data() + s * m * n, m, n);
    C.noalias() = A * B.transpose();
  }
  int pa = a.id, pb = b.id;
  int id = a.g->add(std::move(out), {pa, pb},
                    [pa, pb, batch, m, k, n](Graph& g, int self) {
    const auto& dy = g.node(self).grad;
    const auto& avv = g.node(pa).value.v;
    const auto& bvv = g.node(pb).value.v;
    if (g.node(pa).needs_grad) {
      auto& da = g.grad_of(pa);
      for (int64_t s = 0; s < batch; ++s) {
        ConstMatMap dC(dy.data() + s * m * n, m, n);
        ConstMatMap B(bvv.data() + s * n * k, n, k);
        MatMap dA(da.data() + s * m * k, m, k);
        dA.noalias() += dC * B;
      }
    }
    if (g.node(pb).needs_grad) {
      auto& db = g.grad_of(pb);
      for (int64_t s = 0; s < batch; ++s) {
        ConstMatMap dC(dy.data() + s * m * n, m, n);
        ConstMatMap A(avv.data() + s * m * k, m, k);
        MatMap dB(db.data() + s * n * k, n, k);
        dB.noalias() += dC.transpose() * A;
      }
    }
  });
  return Var{a.g, id};
}

Var softmax_last(Var x) {
  const TensorData& xv = x.val();
  int64_t d = xv.last_dim();
  int64_t rows = xv.numel() / d;
  TensorData out = xv;
  for (int64_t r = 0; r < rows; ++r) {
    double* row = out.v.data() + r * d;
    double mx = row[0];
    for (int64_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      row[j] = std::exp(row[j] - mx);
      s += row[j];
    }
    for (int64_t j = 0; j < d; ++j) row[j] /= s;
  }
  int px = x.id;
  int id = x.g->add(std::move(out), {px}, [px, rows, d](Graph& g, int self) {
    if (!g.node(px).needs_grad) return;
    const auto& dy = g.node(self).grad;
    const auto& y = g.node(self).value.v;
    auto& dx = g.grad_of(px);
    for (int64_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (int64_t j = 0; j < d; ++j) dot += dy[static_cast<size_t>(r * d + j)] * y[static_cast<size_t>(r * d + j)];
      for (int64_t j = 0; j < d; ++j) {
        size_t i = static_cast<size_t>(r * d + j);
        dx[i] += y[i] * (dy[i] - dot);
      }
    }
  });
  return Var{x.g, id};
}

Var layer_norm_last(Var x, Var gain, Var bias, double eps) {
  check(eps > 0, "layer_norm: eps must be positive");
  const TensorData& xv = x.val();
  int64_t d = xv.last_dim();
  check(gain.val().numel() == d && bias.val().numel() == d,
        "layer_norm: gain/bias must match last axis size");
  int64_t rows = xv.numel() / d;
  TensorData out = xv;
  // keep normalized activations for backward
  std::vector<double> xhat(static_cast<size_t>(xv.numel()));
  std::vector<double> inv_sigma(static_cast<size_t>(rows));
  const auto& gv = gain.val().v;
  const auto& bv = bias.val().v;
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = xv.v.data() + r * d;
    double mu = 0.0;
    for (int64_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[static_cast<size_t>(r)] = is;
    for (int64_t j = 0; j < d; ++j) {
      size_t i = static_cast<size_t>(r * d + j);
      xhat[i] = (row[j] - mu) * is;
      out.v[i] = gv[static_cast<size_t>(j)] * xhat[i] + bv[static_cast<size_t>(j)];
    }
  }
  int px = x.id, pg = gain.id, pb = bias.id;
  auto xh = std::make_shared<std::vector<double>>(std::move(xhat));
  auto isg = std::make_shared<std::vector<double>>(std::move(inv_sigma));
  int id = x.g->add(std::move(out), {px, pg, pb},
                    [px, pg, pb, rows, d, xh, isg](Graph& g, int self) {
    const auto& dy = g.node(self).grad;
    const auto& gv2 = g.node(pg).value.v;
    if (g.node(pg).needs_grad) {
      auto& dg = g.grad_of(pg);
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < d; ++j)
          dg[static_cast<size_t>(j)] +=
              dy[static_cast<size_t>(r * d + j)] * (*xh)[static_cast<size_t>(r * d + j)];
    }
    if (g.node(pb).needs_grad) {
      auto& db = g.grad_of(pb);
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < d; ++j) db[static_cast<size_t>(j)] += dy[static_cast<size_t>(r * d + j)];
    }
    if (g.node(px).needs_grad) {
      auto& dx = g.grad_of(px);
      for (int64_t r = 0; r < rows; ++r) {
        double m1 = 0.0, m2 = 0.0;
        for (int64_t j = 0; j < d; ++j) {
          size_t i = static_cast<size_t>(r * d + j);
          double dxh = dy[i] * gv2[static_cast<size_t>(j)];
          m1 += dxh;
          m2 += dxh * (*xh)[i];
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        double is = (*isg)[static_cast<size_t>(r)];
        for (int64_t j = 0; j < d; ++j) {
          size_t i = static_cast<size_t>(r * d + j);
          double dxh = dy[i] * gv2[static_cast<size_t>(j)];
          dx[i] += is * (dxh - m1 - (*xh)[i] * m2);
        }
      }
    }
  });
  return Var{x.g, id};
}

Var leaky_relu(Var x, double slope) {
  check(slope >= 0.0 && slope < 1.0, "leaky_relu: slope must be in [0,1)");
  TensorData out = x.val();
  for (double& v : out.v) {
    if (v < 0.0) v *= slope;
  }
  int px = x.id;
  int id = x.g->add(std::move(out), {px}, [px, slope](Graph& g, int self) {
    if (!g.node(px).needs_grad) return;
    const auto& dy = g.node(self).grad;
    const auto& xv = g.node(px).value.v;
    auto& dx = g.grad_of(px);
    for (size_t i = 0; i < dy.size(); ++i)
      dx[i] += dy[i] * (xv[i] >= 0.0 ? 1.0 : slope);
  });
  return Var{x.g, id};
}

Var dropout(Var x, double rate, bool training, RngStream& rng) {
  check(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0,1)");
  if (!training || rate == 0.0) return x;  // exact identity
  double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(x.val().v.size());
  TensorData out = x.val();
  for (size_t i = 0; i < out.v.size(); ++i) {
    double m = rng.bernoulli(rate) ? 0.0 : keep_scale;
    (*mask)[i] = m;
    out.v[i] *= m;
  }
  int px = x.id;
  int id = x.g->add(std::move(out), {px}, [px, mask](Graph& g, int self) {
    if (!g.node(px).needs_grad) return;
    const auto& dy = g.node(self).grad;
    auto& dx = g.grad_of(px);
    for (size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * (*mask)[i];
  });
  return Var{x.g, id};
}

Var sigmoid(Var x) {
  TensorData out = x.val();
  for (double& v : out.v) v = 1.0 / (1.0 + std::exp(-v));
  int px = x.id;
  int id = x.g->add(std::move(out), {px}, [px](Graph& g, int self) {
    if (!g.node(px).needs_grad) return;
    const auto& dy = g.node(self).grad;
    const auto& y = g.node(self).value.v;
    auto& dx = g.grad_of(px);
    for (size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * y[i] * (1.0 - y[i]);
  });
  return Var{x.g, id};
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.val().v) s += v;
  int px = x.id;
  int id = x.g->add(TensorData::scalar(s), {px}, [px](Graph& g, int self) {
    if (!g.node(px).needs_grad) return;
    double dy = g.node(self).grad[0];
    auto& dx = g.grad_of(px);
    for (double& v : dx) v += dy;
  });
  return Var{x.g, id};
}

Var mean(Var x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.val().numel()));
}

Var concat_last(const std::vector<Var>& xs) {
  check(!xs.empty(), "concat_last: no inputs");
  const TensorData& first = xs[0].val();
  std::vector<int64_t> lead(first.shape.begin(), first.shape.end() - 1);
  int64_t total = 0;
  std::vector<int64_t> widths;
  for (const Var& x : xs) {
    const TensorData& t = x.val();
    std::vector<int64_t> l(t.shape.begin(), t.shape.end() - 1);
    check(l == lead, "concat_last: leading dimensions disagree");
    widths.push_back(t.last_dim());
    total += t.last_dim();
  }
  std::vector<int64_t> oshape = lead;
  oshape.push_back(total);
  TensorData out = TensorData::zeros(oshape);
  int64_t rows = out.numel() / total;
  int64_t off = 0;
  for (size_t p = 0; p < xs.size(); ++p) {
    const auto& src = xs[p].val().v;
    int64_t w = widths[p];
    for (int64_t r = 0; r < rows; ++r)
      std::copy(src.begin() + r * w, src.begin() + (r + 1) * w,
                out.v.begin() + r * total + off);
    off += w;
  }
  std::vector<int> parents;
  for (const Var& x : xs) parents.push_back(x.id);
  auto ws = std::make_shared<std::vector<int64_t>>(widths);
  auto ps = std::make_shared<std::vector<int>>(parents);
  int id = xs[0].g->add(std::move(out), parents,
                        [ws, ps, rows, total](Graph& g, int self) {
    const auto& dy = g.node(self).grad;
    int64_t off2 = 0;
    for (size_t p = 0; p < ps->size(); ++p) {
      int64_t w = (*ws)[p];
      int pid = (*ps)[p];
      if (g.node(pid).needs_grad) {
        auto& dx = g.grad_of(pid);
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t j = 0; j < w; ++j)
            dx[static_cast<size_t>(r * w + j)] += dy[static_cast<size_t>(r * total + off2 + j)];
      }
      off2 += w;
    }
  });
  return Var{xs[0].g, id};
}

Var slice_last(Var x, int64_t start, int64_t len) {
  const TensorData& xv = x.val();
  int64_t d = xv.last_dim();
  check(start >= 0 && len > 0 && start + len <= d, "slice_last: range out of bounds");
  std::vector<int64_t> oshape = xv.shape;
  oshape.back() = len;
  TensorData out = TensorData::zeros(oshape);
  int64_t rows = xv.numel() / d;
  for (int64_t r = 0; r < rows; ++r)
    std::copy(xv.v.begin() + r * d + start, xv.v.begin() + r * d + start + len,
              out.v.begin() + r * len);
  int px = x.id;
  int id = x.g->add(std::move(out), {px}, [px, start, len, d, rows](Graph& g, int self) {
    if (!g.node(px).needs_grad) return;
    const auto& dy = g.node(self).grad;
    auto& dx = g.grad_of(px);
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < len; ++j)
        dx[static_cast<size_t>(r * d + start + j)] += dy[static_cast<size_t>(r * len + j)];
  });
  return Var{x.g, id};
}

Var embedding_lookup(Var table, const std::vector<int64_t>& indices,
                     std::vector<int64_t> index_shape) {
  const TensorData& tv = table.val();
  check(tv.ndim() == 2, "embedding_lookup: table must be 2-D");
  int64_t vocab = tv.shape[0], dim = tv.shape[1];
  check(TensorData::numel_of(index_shape) == static_cast<int64_t>(indices.size()),
        "embedding_lookup: index shape mismatch");
  for (int64_t ix : indices)
    check(ix >= 0 && ix < vocab,
          "embedding_lookup: index " + std::to_string(ix) +
              " out of range for vocab " + std::to_string(vocab));
  std::vector<int64_t> oshape = index_shape;
  oshape.push_back(dim);
  TensorData out = TensorData::zeros(oshape);
  for (size_t r = 0; r < indices.size(); ++r)
    std::copy(tv.v.begin() + indices[r] * dim, tv.v.begin() + (indices[r] + 1) * dim,
              out.v.begin() + static_cast<int64_t>(r) * dim);
  int pt = table.id;
  auto idx = std::make_shared<std::vector<int64_t>>(indices);
  int id = table.g->add(std::move(out), {pt}, [pt, idx, dim](Graph& g, int self) {
    if (!g.node(pt).needs_grad) return;
    const auto& dy = g.node(self).grad;
    auto& dt = g.grad_of(pt);
    for (size_t r = 0; r < idx->size(); ++r)
      for (int64_t j = 0; j < dim; ++j)
        dt[static_cast<size_t>((*idx)[r] * dim + j)] += dy[r * static_cast<size_t>(dim) + static_cast<size_t>(j)];
  });
  return Var{table.g, id};
}

Var masked_max_pool(Var x, const std::vector<uint8_t>& mask) {
  const TensorData& xv = x.val();
  check(xv.ndim() == 3, "masked_max_pool: expected [batch,seq,dim]");
  int64_t bsz = xv.shape[0], L = xv.shape[1], d = xv.shape[2];
  check(static_cast<int64_t>(mask.size()) == bsz * L, "masked_max_pool: mask size mismatch");
  TensorData out = TensorData::zeros({bsz, d});
  // argmax per (row, dim); ties go to the first unmasked index
  auto arg = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(bsz * d), -1);
  for (int64_t b = 0; b < bsz; ++b) {
    bool any = false;
    for (int64_t t = 0; t < L; ++t) {
      if (!mask[static_cast<size_t>(b * L + t)]) continue;
      for (int64_t j = 0; j < d; ++j) {
        double v = xv.v[static_cast<size_t>((b * L + t) * d + j)];
        int64_t& a = (*arg)[static_cast<size_t>(b * d + j)];
        if (a < 0 || v > out.v[static_cast<size_t>(b * d + j)]) {
          a = t;
          out.v[static_cast<size_t>(b * d + j)] = v;
        }
      }
      any = true;
    }
    check(any, "masked_max_pool: all positions masked in row " + std::to_string(b));
  }
  int px = x.id;
  int id = x.g->add(std::move(out), {px}, [px, arg, bsz, L, d](Graph& g, int self) {
    if (!g.node(px).needs_grad) return;
    const auto& dy = g.node(self).grad;
    auto& dx = g.grad_of(px);
    for (int64_t b = 0; b < bsz; ++b)
      for (int64_t j = 0; j < d; ++j) {
        int64_t t = (*arg)[static_cast<size_t>(b * d + j)];
        dx[static_cast<size_t>((b * L + t) * d + j)] += dy[static_cast<size_t>(b * d + j)];
      }
  });
  return Var{x.g, id};
}

Var masked_avg_pool(Var x, const std::vector<uint8_t>& mask) {
  const TensorData& xv = x.val();
  check(xv.ndim() == 3, "masked_avg_pool: expected [batch,seq,dim]");
  int64_t bsz = xv.shape[0], L = xv.shape[1], d = xv.shape[2];
  check(static_cast<int64_t>(mask.size()) == bsz * L, "masked_avg_pool: mask size mismatch");
  TensorData out = TensorData::zeros({bsz, d});
  auto counts = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(bsz), 0);
  for (int64_t b = 0; b < bsz; ++b) {
    int64_t c = 0;
    for (int64_t t = 0; t < L; ++t) {
      if (!mask[static_cast<size_t>(b * L + t)]) continue;
      ++c;
      for (int64_t j = 0; j < d; ++j)
        out.v[static_cast<size_t>(b * d + j)] += xv.v[static_cast<size_t>((b * L + t) * d + j)];
    }
    (*counts)[static_cast<size_t>(b)] = c;
    if (c > 0)
      for (int64_t j = 0; j < d; ++j) out.v[static_cast<size_t>(b * d + j)] /= static_cast<double>(c);
    // empty rows stay zero
  }
  int px = x.id;
  auto m = std::make_shared<std::vector<uint8_t>>(mask);
  int id = x.g->add(std::move(out), {px}, [px, m, counts, bsz, L, d](Graph& g, int self) {
    if (!g.node(px).needs_grad) return;
    const auto& dy = g.node(self).grad;
    auto& dx = g.grad_of(px);
    for (int64_t b = 0; b < bsz; ++b) {
      int64_t c = (*counts)[static_cast<size_t>(b)];
      if (c == 0) continue;
      double inv = 1.0 / static_cast<double>(c);
      for (int64_t t = 0; t < L; ++t) {
        if (!(*m)[static_cast<size_t>(b * L + t)]) continue;
        for (int64_t j = 0; j < d; ++j)
          dx[static_cast<size_t>((b * L + t) * d + j)] += dy[static_cast<size_t>(b * d + j)] * inv;
      }
    }
  });
  return Var{x.g, id};
}

Var l2_normalize_rows(Var x, double eps) {
  const TensorData& xv = x.val();
  int64_t d = xv.last_dim();
  int64_t rows = xv.numel() / d;
  TensorData out = xv;
  auto norms = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int64_t j = 0; j < d; ++j) s += out.v[static_cast<size_t>(r * d + j)] * out.v[static_cast<size_t>(r * d + j)];
    double nrm = std::sqrt(std::max(s, eps));
    (*norms)[static_cast<size_t>(r)] = nrm;
    for (int64_t j = 0; j < d; ++j) out.v[static_cast<size_t>(r * d + j)] /= nrm;
  }
  int px = x.id;
  int id = x.g->add(std::move(out), {px}, [px, norms, rows, d](Graph& g, int self) {
    if (!g.node(px).needs_grad) return;
    const auto& dy = g.node(self).grad;
    const auto& y = g.node(self).value.v;
    auto& dx = g.grad_of(px);
    for (int64_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (int64_t j = 0; j < d; ++j) dot += dy[static_cast<size_t>(r * d + j)] * y[static_cast<size_t>(r * d + j)];
      double inv = 1.0 / (*norms)[static_cast<size_t>(r)];
      for (int64_t j = 0; j < d; ++j) {
        size_t i = static_cast<size_t>(r * d + j);
        dx[i] += (dy[i] - y[i] * dot) * inv;
      }
    }
  });
  return Var{x.g, id};
}

Var bce_mean(Var p, const std::vector<double>& labels) {
  const TensorData& pv = p.val();
  check(static_cast<int64_t>(labels.size()) == pv.numel(),
        "bce_mean: labels size mismatch");
  constexpr double kClamp = 1e-7;
  int64_t n = pv.numel();
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double pc = std::min(std::max(pv.v[static_cast<size_t>(i)], kClamp), 1.0 - kClamp);
    double y = labels[static_cast<size_t>(i)];
    loss -= y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc);
  }
  loss /= static_cast<double>(n);
  int pp = p.id;
  auto ys = std::make_shared<std::vector<double>>(labels);
  int id = p.g->add(TensorData::scalar(loss), {pp}, [pp, ys, n](Graph& g, int self) {
    if (!g.node(pp).needs_grad) return;
    double dy = g.node(self).grad[0];
    const auto& pvv = g.node(pp).value.v;
    auto& dp = g.grad_of(pp);
    double invn = 1.0 / static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i) {
      double praw = pvv[static_cast<size_t>(i)];
      if (praw <= kClamp || praw >= 1.0 - kClamp) continue;  // clamped: flat
      double y = (*ys)[static_cast<size_t>(i)];
      dp[static_cast<size_t>(i)] += dy * invn * (-y / praw + (1.0 - y) / (1.0 - praw));
    }
  });
  return Var{p.g, id};
}

Var softmax_xent_rows(Var logits, const std::vector<int64_t>& targets) {
  const TensorData& lv = logits.val();
  check(lv.ndim() == 2, "softmax_xent_rows: expected 2-D logits");
  int64_t n = lv.shape[0], m = lv.shape[1];
  check(static_cast<int64_t>(targets.size()) == n, "softmax_xent_rows: targets size mismatch");
  auto probs = std::make_shared<std::vector<double>>(lv.v);
  double loss = 0.0;
  for (int64_t r = 0; r < n; ++r) {
    check(targets[static_cast<size_t>(r)] >= 0 && targets[static_cast<size_t>(r)] < m,
          "softmax_xent_rows: target out of range");
    double* row = probs->data() + r * m;
    double mx = row[0];
    for (int64_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (int64_t j = 0; j < m; ++j) {
      row[j] = std::exp(row[j] - mx);
      s += row[j];
    }
    for (int64_t j = 0; j < m; ++j) row[j] /= s;
    loss -= std::log(std::max(row[targets[static_cast<size_t>(r)]], 1e-300));
  }
  loss /= static_cast<double>(n);
  int pl = logits.id;
  auto tg = std::make_shared<std::vector<int64_t>>(targets);
  int id = logits.g->add(TensorData::scalar(loss), {pl},
                         [pl, probs, tg, n, m](Graph& g, int self) {
    if (!g.node(pl).needs_grad) return;
    double dy = g.node(self).grad[0];
    auto& dl = g.grad_of(pl);
    double invn = dy / static_cast<double>(n);
    for (int64_t r = 0; r < n; ++r)
      for (int64_t j = 0; j < m; ++j) {
        double p = (*probs)[static_cast<size_t>(r * m + j)];
        double t = (j == (*tg)[static_cast<size_t>(r)]) ? 1.0 : 0.0;
        dl[static_cast<size_t>(r * m + j)] += invn * (p - t);
      }
  });
  return Var{logits.g, id};
}

Var batch_norm(Var x, Var gamma, Var beta, BatchNormState& state, bool training) {
  const TensorData& xv = x.val();
  check(xv.ndim() == 2, "batch_norm: expected 2-D input");
  int64_t bsz = xv.shape[0], d = xv.shape[1];
  check(gamma.val().numel() == d && beta.val().numel() == d,
        "batch_norm: gamma/beta width mismatch");
  check(state.running_mean && state.running_var, "batch_norm: state not initialized");
  TensorData out = TensorData::zeros({bsz, d});
  const auto& gv = gamma.val().v;
  const auto& bv = beta.val().v;
  auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(bsz * d));
  auto inv_sigma = std::make_shared<std::vector<double>>(static_cast<size_t>(d));
  if (training) {
    for (int64_t j = 0; j < d; ++j) {
      double mu = 0.0;
      for (int64_t b = 0; b < bsz; ++b) mu += xv.v[static_cast<size_t>(b * d + j)];
      mu /= static_cast<double>(bsz);
      double var = 0.0;
      for (int64_t b = 0; b < bsz; ++b) {
        double c = xv.v[static_cast<size_t>(b * d + j)] - mu;
        var += c * c;
      }
      var /= static_cast<double>(bsz);
      double is = 1.0 / std::sqrt(var + state.eps);
      (*inv_sigma)[static_cast<size_t>(j)] = is;
      for (int64_t b = 0; b < bsz; ++b) {
        size_t i = static_cast<size_t>(b * d + j);
        (*xhat)[i] = (xv.v[i] - mu) * is;
        out.v[i] = gv[static_cast<size_t>(j)] * (*xhat)[i] + bv[static_cast<size_t>(j)];
      }
      auto& rm = state.running_mean->value.v[static_cast<size_t>(j)];
      auto& rv = state.running_var->value.v[static_cast<size_t>(j)];
      rm = state.momentum * rm + (1.0 - state.momentum) * mu;
      rv = state.momentum * rv + (1.0 - state.momentum) * var;
    }
  } else {
    for (int64_t j = 0; j < d; ++j) {
      double mu = state.running_mean->value.v[static_cast<size_t>(j)];
      double var = state.running_var->value.v[static_cast<size_t>(j)];
      double is = 1.0 / std::sqrt(var + state.eps);
      (*inv_sigma)[static_cast<size_t>(j)] = is;
      for (int64_t b = 0; b < bsz; ++b) {
        size_t i = static_cast<size_t>(b * d + j);
        (*xhat)[i] = (xv.v[i] - mu) * is;
        out.v[i] = gv[static_cast<size_t>(j)] * (*xhat)[i] + bv[static_cast<size_t>(j)];
      }
    }
  }
  int px = x.id, pg = gamma.id, pb = beta.id;
  int id = x.g->add(std::move(out), {px, pg, pb},
                    [px, pg, pb, bsz, d, xhat, inv_sigma, training](Graph& g, int self) {
    const auto& dy = g.node(self).grad;
    const auto& gv2 = g.node(pg).value.v;
    if (g.node(pg).needs_grad) {
      auto& dg = g.grad_of(pg);
      for (int64_t b = 0; b < bsz; ++b)
        for (int64_t j = 0; j < d; ++j)
          dg[static_cast<size_t>(j)] += dy[static_cast<size_t>(b * d + j)] * (*xhat)[static_cast<size_t>(b * d + j)];
    }
    if (g.node(pb).needs_grad) {
      auto& db = g.grad_of(pb);
      for (int64_t b = 0; b < bsz; ++b)
        for (int64_t j = 0; j < d; ++j) db[static_cast<size_t>(j)] += dy[static_cast<size_t>(b * d + j)];
    }
    if (g.node(px).needs_grad) {
      auto& dx = g.grad_of(px);
      if (training) {
        for (int64_t j = 0; j < d; ++j) {
          double m1 = 0.0, m2 = 0.0;
          for (int64_t b = 0; b < bsz; ++b) {
            size_t i = static_cast<size_t>(b * d + j);
            double dxh = dy[i] * gv2[static_cast<size_t>(j)];
            m1 += dxh;
            m2 += dxh * (*xhat)[i];
          }
          m1 /= static_cast<double>(bsz);
          m2 /= static_cast<double>(bsz);
          double is = (*inv_sigma)[static_cast<size_t>(j)];
          for (int64_t b = 0; b < bsz; ++b) {
            size_t i = static_cast<size_t>(b * d + j);
            double dxh = dy[i] * gv2[static_cast<size_t>(j)];
            dx[i] += is * (dxh - m1 - (*xhat)[i] * m2);
          }
        }
      } else {
        for (int64_t b = 0; b < bsz; ++b)
          for (int64_t j = 0; j < d; ++j) {
            size_t i = static_cast<size_t>(b * d + j);
            dx[i] += dy[i] * gv2[static_cast<size_t>(j)] * (*inv_sigma)[static_cast<size_t>(j)];
          }
      }
    }
  });
  return Var{x.g, id};
}

GradCheckReport grad_check(const std::function<Var(Graph&)>& build,
                           const std::vector<Param*>& params, double eps,
                           double tol) {
  for (Param* p : params) p->zero_grad();
  {
    Graph g;
    Var loss = build(g);
    g.backward(loss);
  }
  auto eval = [&]() {
    Graph g;
    Var loss = build(g);
    return loss.val().v[0];
  };
  GradCheckReport report;
  for (Param* p : params) {
    if (!p->trainable) continue;
    for (int64_t i = 0; i < p->value.numel(); ++i) {
      double saved = p->value.v[static_cast<size_t>(i)];
      p->value.v[static_cast<size_t>(i)] = saved + eps;
      double up = eval();
      p->value.v[static_cast<size_t>(i)] = saved - eps;
      double down = eval();
      p->value.v[static_cast<size_t>(i)] = saved;
      double fd = (up - down) / (2.0 * eps);
      double an = p->grad[static_cast<size_t>(i)];
      // near-zero pairs are finite-difference noise, not disagreement
      double rel = std::abs(an - fd) < 1e-7
                       ? 0.0
                       : std::abs(an - fd) /
                             std::max({std::abs(an), std::abs(fd), 1e-8});
      ++report.checked;
      if (rel > report.max_rel_error) report.max_rel_error = rel;
      if (rel >= tol)
        report.failures.push_back({p->name, i, an, fd, rel});
    }
  }
  return report;
}

}  // namespace adsf
