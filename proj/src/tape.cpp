#include "xda/tape.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>

#include "xda/error.hpp"

namespace xda {

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;
using MapV = Eigen::Map<Eigen::VectorXd>;
using CMapV = Eigen::Map<const Eigen::VectorXd>;

std::atomic<bool> g_finite_checks{false};

}  // namespace

void Tape::set_finite_checks(bool on) { g_finite_checks.store(on); }
bool Tape::finite_checks() { return g_finite_checks.load(); }

const Tape::Node& Tape::at(Var v) const {
  if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size())
    throw ContractError("invalid graph node handle");
  return nodes_[static_cast<size_t>(v.id)];
}

Tape::Node& Tape::at(Var v) {
  return const_cast<Node&>(static_cast<const Tape*>(this)->at(v));
}

Var Tape::leaf(Tensor& t) {
  Node n;
  n.external = &t;
  n.needs_grad = t.requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

Var Tape::node(Tensor value, std::span<const Var> inputs, BackwardFn bwd) {
  if (finite_checks() && !value.all_finite())
    throw ContractError("op produced a non-finite value (shape " +
                        value.shape_str() + ")");
  Node n;
  n.owned = std::move(value);
  n.inputs.assign(inputs.begin(), inputs.end());
  n.bwd = std::move(bwd);
  for (Var in : inputs) {
    if (at(in).needs_grad) {
      n.needs_grad = true;
      break;
    }
  }
  nodes_.push_back(std::move(n));
  return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

const Tensor& Tape::value(Var v) const {
  const Node& n = at(v);
  return n.external ? *n.external : n.owned;
}

double Tape::scalar_value(Var v) const { return value(v).item(); }

bool Tape::needs_grad(Var v) const { return at(v).needs_grad; }

std::vector<double>& Tape::adjoint(Var v) { return at(v).adj; }

bool Tape::has_adjoint(Var v) const { return !at(v).adj.empty(); }

void Tape::backward(Var loss) {
  const Tensor& lv = value(loss);
  if (lv.numel() != 1)
    throw ContractError("backward requires a scalar loss, got shape " +
                        lv.shape_str());

  // Mark ancestors of the loss that can carry gradient.
  std::vector<char> live(nodes_.size(), 0);
  std::vector<int32_t> stack{loss.id};
  live[static_cast<size_t>(loss.id)] = 1;
  while (!stack.empty()) {
    const int32_t id = stack.back();
    stack.pop_back();
    for (Var in : nodes_[static_cast<size_t>(id)].inputs) {
      auto& inode = nodes_[static_cast<size_t>(in.id)];
      if (!live[static_cast<size_t>(in.id)] && inode.needs_grad) {
        live[static_cast<size_t>(in.id)] = 1;
        stack.push_back(in.id);
      }
    }
  }

  for (size_t i = 0; i <= static_cast<size_t>(loss.id); ++i) {
    if (live[i] && nodes_[i].needs_grad)
      nodes_[i].adj.assign(
          static_cast<size_t>((nodes_[i].external ? *nodes_[i].external
                                                  : nodes_[i].owned)
                                  .numel()),
          0.0);
  }
  at(loss).adj.assign(1, 1.0);

  for (int32_t id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (live[static_cast<size_t>(id)] && n.needs_grad && n.bwd)
      n.bwd(*this, n.adj);
  }

  for (Node& n : nodes_) {
    if (n.external && n.external->requires_grad) {
      if (!n.adj.empty())
        n.external->grad = std::move(n.adj);
      else
        n.external->grad.assign(n.external->data.size(), 0.0);
    }
    n.adj.clear();
  }
}

// ---------------------------------------------------------------------------
// ops

Var affine(Tape& t, Var x, Var w, Var b) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  const Tensor& bv = t.value(b);
  if (xv.rank() != 2 || wv.rank() != 2 || bv.rank() != 1 ||
      xv.dim(1) != wv.dim(0) || wv.dim(1) != bv.dim(0))
    throw DimensionError("affine: incompatible shapes x" + xv.shape_str() +
                         " W" + wv.shape_str() + " b" + bv.shape_str());

  const int64_t B = xv.dim(0), I = xv.dim(1), O = wv.dim(1);
  Tensor out = Tensor::zeros({B, O});
  {
    CMapM X(xv.data.data(), B, I), W(wv.data.data(), I, O);
    MapM Y(out.data.data(), B, O);
    Y.noalias() = X * W;
    CMapV bb(bv.data.data(), O);
    Y.rowwise() += bb.transpose();
  }

  const Var ins[] = {x, w, b};
  return t.node(std::move(out), ins,
                [x, w, b, B, I, O](Tape& tp, const std::vector<double>& dy) {
                  CMapM dY(dy.data(), B, O);
                  const Tensor& xv2 = tp.value(x);
                  const Tensor& wv2 = tp.value(w);
                  if (tp.needs_grad(x)) {
                    MapM dX(tp.adjoint(x).data(), B, I);
                    CMapM W(wv2.data.data(), I, O);
                    dX.noalias() += dY * W.transpose();
                  }
                  if (tp.needs_grad(w)) {
                    MapM dW(tp.adjoint(w).data(), I, O);
                    CMapM X(xv2.data.data(), B, I);
                    dW.noalias() += X.transpose() * dY;
                  }
                  if (tp.needs_grad(b)) {
                    MapV db(tp.adjoint(b).data(), O);
                    db += dY.colwise().sum().transpose();
                  }
                });
}

Var relu(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  Tensor out = xv;
  out.requires_grad = false;
  out.grad.clear();
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;

  const Var ins[] = {x};
  return t.node(std::move(out), ins,
                [x](Tape& tp, const std::vector<double>& dy) {
                  if (!tp.needs_grad(x)) return;
                  const Tensor& xv2 = tp.value(x);
                  auto& dx = tp.adjoint(x);
                  for (size_t i = 0; i < dy.size(); ++i)
                    if (xv2.data[i] > 0.0) dx[i] += dy[i];
                });
}

Var sigmoid(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  Tensor out = xv;
  out.requires_grad = false;
  out.grad.clear();
  for (double& v : out.data) {
    if (v >= 0.0) {
      v = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      v = e / (1.0 + e);
    }
  }
  std::vector<double> saved = out.data;

  const Var ins[] = {x};
  return t.node(std::move(out), ins,
                [x, saved = std::move(saved)](Tape& tp,
                                              const std::vector<double>& dy) {
                  if (!tp.needs_grad(x)) return;
                  auto& dx = tp.adjoint(x);
                  for (size_t i = 0; i < dy.size(); ++i) {
                    const double s = saved[i];
                    dx[i] += dy[i] * s * (1.0 - s);
                  }
                });
}

Var pairwise_euclidean(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(1))
    throw DimensionError("pairwise_euclidean: feature dims differ, A" +
                         av.shape_str() + " vs B" + bv.shape_str());
  const int64_t M = av.dim(0), N = bv.dim(0), D = av.dim(1);

  Tensor out = Tensor::zeros({M, N});
  for (int64_t i = 0; i < M; ++i) {
    const double* ai = av.data.data() + i * D;
    for (int64_t j = 0; j < N; ++j) {
      const double* bj = bv.data.data() + j * D;
      double s = 0.0;
      for (int64_t d = 0; d < D; ++d) {
        const double diff = ai[d] - bj[d];
        s += diff * diff;
      }
      out(i, j) = std::sqrt(s);
    }
  }

  const Var ins[] = {a, b};
  return t.node(
      std::move(out), ins,
      [a, b, M, N, D](Tape& tp, const std::vector<double>& dy) {
        const Tensor& av2 = tp.value(a);
        const Tensor& bv2 = tp.value(b);
        const bool ga = tp.needs_grad(a), gb = tp.needs_grad(b);
        double* da = ga ? tp.adjoint(a).data() : nullptr;
        double* db = gb ? tp.adjoint(b).data() : nullptr;
        for (int64_t i = 0; i < M; ++i) {
          const double* ai = av2.data.data() + i * D;
          for (int64_t j = 0; j < N; ++j) {
            const double g = dy[static_cast<size_t>(i * N + j)];
            if (g == 0.0) continue;
            const double* bj = bv2.data.data() + j * D;
            double dist = 0.0;
            for (int64_t d = 0; d < D; ++d) {
              const double diff = ai[d] - bj[d];
              dist += diff * diff;
            }
            dist = std::sqrt(dist);
            if (dist == 0.0) continue;  // subgradient 0 at coincident points
            const double scale = g / dist;
            for (int64_t d = 0; d < D; ++d) {
              const double diff = (ai[d] - bj[d]) * scale;
              if (ga) da[i * D + d] += diff;
              if (gb) db[j * D + d] -= diff;
            }
          }
        }
      });
}

Var gather_rows(Tape& t, Var x, std::vector<int64_t> rows) {
  const Tensor& xv = t.value(x);
  if (xv.rank() != 2)
    throw DimensionError("gather_rows expects a matrix, got " +
                         xv.shape_str());
  if (rows.empty()) throw ContractError("gather_rows: empty row selection");
  const int64_t B = xv.dim(0), D = xv.dim(1);
  for (int64_t r : rows)
    if (r < 0 || r >= B)
      throw ContractError("gather_rows: row " + std::to_string(r) +
                          " out of range [0," + std::to_string(B) + ")");

  Tensor out = Tensor::zeros({static_cast<int64_t>(rows.size()), D});
  for (size_t k = 0; k < rows.size(); ++k)
    std::copy_n(xv.data.data() + rows[k] * D, D, out.data.data() + k * D);

  const Var ins[] = {x};
  return t.node(std::move(out), ins,
                [x, rows = std::move(rows), D](Tape& tp,
                                               const std::vector<double>& dy) {
                  if (!tp.needs_grad(x)) return;
                  double* dx = tp.adjoint(x).data();
                  for (size_t k = 0; k < rows.size(); ++k)
                    for (int64_t d = 0; d < D; ++d)
                      dx[rows[k] * D + d] += dy[k * static_cast<size_t>(D) +
                                                static_cast<size_t>(d)];
                });
}

Var sum_all(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  double s = 0.0;
  for (double v : xv.data) s += v;

  const Var ins[] = {x};
  return t.node(Tensor::scalar(s), ins,
                [x](Tape& tp, const std::vector<double>& dy) {
                  if (!tp.needs_grad(x)) return;
                  auto& dx = tp.adjoint(x);
                  for (double& v : dx) v += dy[0];
                });
}

Var mean_all(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  const double inv = 1.0 / static_cast<double>(xv.numel());
  double s = 0.0;
  for (double v : xv.data) s += v;

  const Var ins[] = {x};
  return t.node(Tensor::scalar(s * inv), ins,
                [x, inv](Tape& tp, const std::vector<double>& dy) {
                  if (!tp.needs_grad(x)) return;
                  const double g = dy[0] * inv;
                  auto& dx = tp.adjoint(x);
                  for (double& v : dx) v += g;
                });
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         a.shape_str() + " vs " + b.shape_str());
}

}  // namespace

Var add(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  check_same_shape(av, bv, "add");
  Tensor out = av;
  out.requires_grad = false;
  out.grad.clear();
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];

  const Var ins[] = {a, b};
  return t.node(std::move(out), ins,
                [a, b](Tape& tp, const std::vector<double>& dy) {
                  for (Var v : {a, b}) {
                    if (!tp.needs_grad(v)) continue;
                    auto& d = tp.adjoint(v);
                    for (size_t i = 0; i < dy.size(); ++i) d[i] += dy[i];
                  }
                });
}

Var sub(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  check_same_shape(av, bv, "sub");
  Tensor out = av;
  out.requires_grad = false;
  out.grad.clear();
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bv.data[i];

  const Var ins[] = {a, b};
  return t.node(std::move(out), ins,
                [a, b](Tape& tp, const std::vector<double>& dy) {
                  if (tp.needs_grad(a)) {
                    auto& d = tp.adjoint(a);
                    for (size_t i = 0; i < dy.size(); ++i) d[i] += dy[i];
                  }
                  if (tp.needs_grad(b)) {
                    auto& d = tp.adjoint(b);
                    for (size_t i = 0; i < dy.size(); ++i) d[i] -= dy[i];
                  }
                });
}

Var mul(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  check_same_shape(av, bv, "mul");
  Tensor out = av;
  out.requires_grad = false;
  out.grad.clear();
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv.data[i];

  const Var ins[] = {a, b};
  return t.node(std::move(out), ins,
                [a, b](Tape& tp, const std::vector<double>& dy) {
                  const Tensor& av2 = tp.value(a);
                  const Tensor& bv2 = tp.value(b);
                  if (tp.needs_grad(a)) {
                    auto& d = tp.adjoint(a);
                    for (size_t i = 0; i < dy.size(); ++i)
                      d[i] += dy[i] * bv2.data[i];
                  }
                  if (tp.needs_grad(b)) {
                    auto& d = tp.adjoint(b);
                    for (size_t i = 0; i < dy.size(); ++i)
                      d[i] += dy[i] * av2.data[i];
                  }
                });
}

Var scale(Tape& t, Var a, double c) {
  const Tensor& av = t.value(a);
  Tensor out = av;
  out.requires_grad = false;
  out.grad.clear();
  for (double& v : out.data) v *= c;

  const Var ins[] = {a};
  return t.node(std::move(out), ins,
                [a, c](Tape& tp, const std::vector<double>& dy) {
                  if (!tp.needs_grad(a)) return;
                  auto& d = tp.adjoint(a);
                  for (size_t i = 0; i < dy.size(); ++i) d[i] += c * dy[i];
                });
}

Var add_const(Tape& t, Var a, double c) {
  const Tensor& av = t.value(a);
  Tensor out = av;
  out.requires_grad = false;
  out.grad.clear();
  for (double& v : out.data) v += c;

  const Var ins[] = {a};
  return t.node(std::move(out), ins,
                [a](Tape& tp, const std::vector<double>& dy) {
                  if (!tp.needs_grad(a)) return;
                  auto& d = tp.adjoint(a);
                  for (size_t i = 0; i < dy.size(); ++i) d[i] += dy[i];
                });
}

Var bce_mean(Tape& t, Var probs, const Tensor& labels) {
  const Tensor& pv = t.value(probs);
  const int64_t B = pv.numel();
  if (B < 1) throw ContractError("classification loss over an empty batch");
  if (labels.numel() != B)
    throw DimensionError("bce_mean: " + std::to_string(B) + " probs vs " +
                         std::to_string(labels.numel()) + " labels");
  for (double y : labels.data)
    if (y != 0.0 && y != 1.0)
      throw ContractError("labels must be exactly 0 or 1, got " +
                          std::to_string(y));

  constexpr double kEps = 1e-12;
  double loss = 0.0;
  for (int64_t i = 0; i < B; ++i) {
    double p = pv.data[static_cast<size_t>(i)];
    p = std::min(std::max(p, kEps), 1.0 - kEps);
    const double y = labels.data[static_cast<size_t>(i)];
    loss += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
  }
  loss /= static_cast<double>(B);

  const Var ins[] = {probs};
  return t.node(
      Tensor::scalar(loss), ins,
      [probs, labels, B](Tape& tp, const std::vector<double>& dy) {
        if (!tp.needs_grad(probs)) return;
        const Tensor& pv2 = tp.value(probs);
        auto& dp = tp.adjoint(probs);
        const double g = dy[0] / static_cast<double>(B);
        for (int64_t i = 0; i < B; ++i) {
          const double p = pv2.data[static_cast<size_t>(i)];
          if (p <= kEps || p >= 1.0 - kEps) continue;  // clamped: flat
          const double y = labels.data[static_cast<size_t>(i)];
          dp[static_cast<size_t>(i)] += g * (p - y) / (p * (1.0 - p));
        }
      });
}

Var conv2d(Tape& t, Var x, Var k, Var bias) {
  const Tensor& xv = t.value(x);
  const Tensor& kv = t.value(k);
  const Tensor& bv = t.value(bias);
  if (xv.rank() != 3 || kv.rank() != 3 || bv.rank() != 1 ||
      kv.dim(0) != bv.dim(0) || kv.dim(1) > xv.dim(1) ||
      kv.dim(2) > xv.dim(2))
    throw DimensionError("conv2d: incompatible shapes x" + xv.shape_str() +
                         " k" + kv.shape_str() + " b" + bv.shape_str());
  const int64_t B = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  const int64_t C = kv.dim(0), KH = kv.dim(1), KW = kv.dim(2);
  const int64_t OH = H - KH + 1, OW = W - KW + 1;

  Tensor out = Tensor::zeros({B, C, OH, OW});
  for (int64_t n = 0; n < B; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < OH; ++i)
        for (int64_t j = 0; j < OW; ++j) {
          double s = bv.data[static_cast<size_t>(c)];
          for (int64_t u = 0; u < KH; ++u)
            for (int64_t v = 0; v < KW; ++v)
              s += xv.data[static_cast<size_t>((n * H + i + u) * W + j + v)] *
                   kv.data[static_cast<size_t>((c * KH + u) * KW + v)];
          out.data[static_cast<size_t>(((n * C + c) * OH + i) * OW + j)] = s;
        }

  const Var ins[] = {x, k, bias};
  return t.node(
      std::move(out), ins,
      [x, k, bias, B, H, W, C, KH, KW, OH, OW](
          Tape& tp, const std::vector<double>& dy) {
        const Tensor& xv2 = tp.value(x);
        const Tensor& kv2 = tp.value(k);
        const bool gx = tp.needs_grad(x), gk = tp.needs_grad(k),
                   gb = tp.needs_grad(bias);
        double* dx = gx ? tp.adjoint(x).data() : nullptr;
        double* dk = gk ? tp.adjoint(k).data() : nullptr;
        double* db = gb ? tp.adjoint(bias).data() : nullptr;
        for (int64_t n = 0; n < B; ++n)
          for (int64_t c = 0; c < C; ++c)
            for (int64_t i = 0; i < OH; ++i)
              for (int64_t j = 0; j < OW; ++j) {
                const double g =
                    dy[static_cast<size_t>(((n * C + c) * OH + i) * OW + j)];
                if (g == 0.0) continue;
                if (gb) db[c] += g;
                for (int64_t u = 0; u < KH; ++u)
                  for (int64_t v = 0; v < KW; ++v) {
                    const size_t xi =
                        static_cast<size_t>((n * H + i + u) * W + j + v);
                    const size_t ki =
                        static_cast<size_t>((c * KH + u) * KW + v);
                    if (gx) dx[xi] += g * kv2.data[ki];
                    if (gk) dk[ki] += g * xv2.data[xi];
                  }
              }
      });
}

Var flatten_rows(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  if (xv.rank() < 2)
    throw DimensionError("flatten_rows expects rank >= 2, got " +
                         xv.shape_str());
  int64_t rest = 1;
  for (size_t i = 1; i < xv.rank(); ++i) rest *= xv.dim(i);
  Tensor out = Tensor::of({xv.dim(0), rest}, xv.data);

  const Var ins[] = {x};
  return t.node(std::move(out), ins,
                [x](Tape& tp, const std::vector<double>& dy) {
                  if (!tp.needs_grad(x)) return;
                  auto& dx = tp.adjoint(x);
                  for (size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
                });
}

}  // namespace xda
