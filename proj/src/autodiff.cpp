#include "metadetector/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <utility>

#include "metadetector/errors.hpp"

namespace metadet::ad {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), values_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_size(shape_) != values_.size()) {
    throw DimensionError("tensor shape " + shape_str(shape_) + " holds " +
                         std::to_string(shape_size(shape_)) +
                         " values, got " + std::to_string(values_.size()));
  }
}

double Tensor::item() const {
  if (values_.size() != 1) {
    throw DimensionError("item() on non-scalar tensor " + shape_str(shape_));
  }
  return values_[0];
}

void Tensor::set_requires_grad(bool on) {
  requires_grad_ = on;
  if (on) {
    grad_.assign(values_.size(), 0.0);
  } else {
    grad_.clear();
  }
}

void Tensor::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kConstant: return "constant";
    case OpKind::kParameter: return "parameter";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAddBias: return "add_bias";
    case OpKind::kAdd: return "add";
    case OpKind::kScale: return "scale";
    case OpKind::kMulConst: return "mul_const";
    case OpKind::kAffine: return "affine";
    case OpKind::kLogClamped: return "log_clamped";
    case OpKind::kSum: return "sum";
    case OpKind::kRelu: return "relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kSoftmaxRows: return "softmax_rows";
    case OpKind::kConvText: return "conv_text";
    case OpKind::kMaxPoolFull: return "max_pool_full";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kSliceRows: return "slice_rows";
    case OpKind::kReshape: return "reshape";
    case OpKind::kDropout: return "dropout";
    case OpKind::kGrl: return "grl";
    case OpKind::kDetach: return "detach";
    case OpKind::kEmbedding: return "embedding";
  }
  return "unknown";
}

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " +
                         std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

// Value-only copy; never carries a parameter's grad buffer into the tape.
Tensor plain_copy(const Tensor& t) {
  return Tensor(t.shape(),
                std::vector<double>(t.values().begin(), t.values().end()));
}

double stable_sigmoid(double x) {
  if (x >= 0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var Graph::push(OpKind kind, std::vector<std::size_t> inputs, Tensor value,
                std::function<void(Graph&, std::size_t)> backprop) {
  Node node;
  node.kind = kind;
  node.inputs = std::move(inputs);
  node.value = std::move(value);
  for (std::size_t in : node.inputs) {
    node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
  }
  if (node.requires_grad) node.backprop = std::move(backprop);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

const Tensor& Graph::val(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.param ? *n.param : n.value;
}

std::span<double> Graph::grad_buf(std::size_t id) {
  Node& n = nodes_[id];
  if (n.param) return n.param->grad();
  return n.grad;
}

Var Graph::constant(Tensor value) {
  return push(OpKind::kConstant, {}, std::move(value), nullptr);
}

Var Graph::parameter(Tensor& param) {
  Node node;
  node.kind = OpKind::kParameter;
  node.param = &param;
  node.requires_grad = param.requires_grad();
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

const Tensor& Graph::value(Var v) const { return val(v.id); }

std::span<const double> Graph::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.param) return std::as_const(*n.param).grad();
  return n.grad;
}

Var Graph::matmul(Var a, Var b) {
  const Tensor& A = val(a.id);
  const Tensor& B = val(b.id);
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(A.shape()) +
                         " and " + shape_str(B.shape()));
  }
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor out({m, n});
  const double* pa = A.values().data();
  const double* pb = B.values().data();
  double* po = out.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = pa[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = pb + p * n;
      double* orow = po + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  return push(OpKind::kMatmul, {a.id, b.id}, std::move(out),
              [m, k, n](Graph& g, std::size_t self) {
                const std::size_t ia = g.nodes_[self].inputs[0];
                const std::size_t ib = g.nodes_[self].inputs[1];
                auto up = g.upstream(self);
                const double* pa = g.val(ia).values().data();
                const double* pb = g.val(ib).values().data();
                if (g.nodes_[ia].requires_grad) {
                  // dA = G · Bᵀ
                  auto ga = g.grad_buf(ia);
                  for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                      double acc = 0.0;
                      for (std::size_t j = 0; j < n; ++j) {
                        acc += up[i * n + j] * pb[p * n + j];
                      }
                      ga[i * k + p] += acc;
                    }
                  }
                }
                if (g.nodes_[ib].requires_grad) {
                  // dB = Aᵀ · G
                  auto gb = g.grad_buf(ib);
                  for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                      const double aip = pa[i * k + p];
                      if (aip == 0.0) continue;
                      for (std::size_t j = 0; j < n; ++j) {
                        gb[p * n + j] += aip * up[i * n + j];
                      }
                    }
                  }
                }
              });
}

Var Graph::add_bias(Var x, Var bias) {
  const Tensor& X = val(x.id);
  const Tensor& b = val(bias.id);
  require_rank(X, 2, "add_bias");
  if (b.size() != X.dim(1)) {
    throw DimensionError("add_bias: bias " + shape_str(b.shape()) +
                         " does not match " + shape_str(X.shape()));
  }
  const std::size_t m = X.dim(0), n = X.dim(1);
  Tensor out = plain_copy(X);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += b[j];
  }
  return push(OpKind::kAddBias, {x.id, bias.id}, std::move(out),
              [m, n](Graph& g, std::size_t self) {
                const std::size_t ix = g.nodes_[self].inputs[0];
                const std::size_t ib = g.nodes_[self].inputs[1];
                auto up = g.upstream(self);
                if (g.nodes_[ix].requires_grad) {
                  auto gx = g.grad_buf(ix);
                  for (std::size_t i = 0; i < m * n; ++i) gx[i] += up[i];
                }
                if (g.nodes_[ib].requires_grad) {
                  auto gb = g.grad_buf(ib);
                  for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < n; ++j) gb[j] += up[i * n + j];
                  }
                }
              });
}

Var Graph::add(Var a, Var b) {
  const Tensor& A = val(a.id);
  const Tensor& B = val(b.id);
  if (A.shape() != B.shape()) {
    throw DimensionError("add: shape mismatch " + shape_str(A.shape()) +
                         " vs " + shape_str(B.shape()));
  }
  Tensor out = plain_copy(A);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  return push(OpKind::kAdd, {a.id, b.id}, std::move(out),
              [](Graph& g, std::size_t self) {
                auto up = g.upstream(self);
                for (std::size_t in : g.nodes_[self].inputs) {
                  if (!g.nodes_[in].requires_grad) continue;
                  auto gi = g.grad_buf(in);
                  for (std::size_t i = 0; i < up.size(); ++i) gi[i] += up[i];
                }
              });
}

Var Graph::scale(Var x, double factor) { return affine(x, factor, 0.0); }

Var Graph::affine(Var x, double a, double b) {
  Tensor out = plain_copy(val(x.id));
  for (double& v : out.values()) v = a * v + b;
  return push(OpKind::kAffine, {x.id}, std::move(out),
              [a](Graph& g, std::size_t self) {
                auto up = g.upstream(self);
                auto gx = g.grad_buf(g.nodes_[self].inputs[0]);
                for (std::size_t i = 0; i < up.size(); ++i) gx[i] += a * up[i];
              });
}

Var Graph::mul_const(Var x, const Tensor& factor) {
  const Tensor& X = val(x.id);
  if (X.shape() != factor.shape()) {
    throw DimensionError("mul_const: shape mismatch " + shape_str(X.shape()) +
                         " vs " + shape_str(factor.shape()));
  }
  Tensor out = plain_copy(X);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor[i];
  return push(OpKind::kMulConst, {x.id}, std::move(out),
              [factor](Graph& g, std::size_t self) {
                auto up = g.upstream(self);
                auto gx = g.grad_buf(g.nodes_[self].inputs[0]);
                for (std::size_t i = 0; i < up.size(); ++i) {
                  gx[i] += factor[i] * up[i];
                }
              });
}

Var Graph::log_clamped(Var x, double eps) {
  Tensor out = plain_copy(val(x.id));
  for (double& v : out.values()) v = std::log(std::max(v, eps));
  return push(OpKind::kLogClamped, {x.id}, std::move(out),
              [eps](Graph& g, std::size_t self) {
                const std::size_t ix = g.nodes_[self].inputs[0];
                auto up = g.upstream(self);
                auto xv = g.val(ix).values();
                auto gx = g.grad_buf(ix);
                for (std::size_t i = 0; i < up.size(); ++i) {
                  if (xv[i] > eps) gx[i] += up[i] / xv[i];
                }
              });
}

Var Graph::sum(Var x) {
  const Tensor& X = val(x.id);
  double s = 0.0;
  for (double v : X.values()) s += v;
  return push(OpKind::kSum, {x.id}, Tensor::scalar(s),
              [](Graph& g, std::size_t self) {
                const double up = g.upstream(self)[0];
                auto gx = g.grad_buf(g.nodes_[self].inputs[0]);
                for (double& v : gx) v += up;
              });
}

Var Graph::relu(Var x) {
  Tensor out = plain_copy(val(x.id));
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return push(OpKind::kRelu, {x.id}, std::move(out),
              [](Graph& g, std::size_t self) {
                auto up = g.upstream(self);
                auto yv = g.nodes_[self].value.values();
                auto gx = g.grad_buf(g.nodes_[self].inputs[0]);
                // Output > 0 exactly when input > 0; subgradient 0 at 0.
                for (std::size_t i = 0; i < up.size(); ++i) {
                  if (yv[i] > 0.0) gx[i] += up[i];
                }
              });
}

Var Graph::sigmoid(Var x) {
  Tensor out = plain_copy(val(x.id));
  for (double& v : out.values()) v = stable_sigmoid(v);
  return push(OpKind::kSigmoid, {x.id}, std::move(out),
              [](Graph& g, std::size_t self) {
                auto up = g.upstream(self);
                auto yv = g.nodes_[self].value.values();
                auto gx = g.grad_buf(g.nodes_[self].inputs[0]);
                for (std::size_t i = 0; i < up.size(); ++i) {
                  gx[i] += up[i] * yv[i] * (1.0 - yv[i]);
                }
              });
}

Var Graph::softmax_rows(Var x) {
  const Tensor& X = val(x.id);
  require_rank(X, 2, "softmax_rows");
  const std::size_t m = X.dim(0), n = X.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = X.values().data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(row[j] - mx);
      z += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  return push(OpKind::kSoftmaxRows, {x.id}, std::move(out),
              [m, n](Graph& g, std::size_t self) {
                auto up = g.upstream(self);
                auto yv = g.nodes_[self].value.values();
                auto gx = g.grad_buf(g.nodes_[self].inputs[0]);
                for (std::size_t i = 0; i < m; ++i) {
                  double dot = 0.0;
                  for (std::size_t j = 0; j < n; ++j) {
                    dot += up[i * n + j] * yv[i * n + j];
                  }
                  for (std::size_t j = 0; j < n; ++j) {
                    gx[i * n + j] += yv[i * n + j] * (up[i * n + j] - dot);
                  }
                }
              });
}

Var Graph::conv_text(Var x, Var filters, Var bias) {
  const Tensor& X = val(x.id);
  const Tensor& F = val(filters.id);
  const Tensor& b = val(bias.id);
  if (X.rank() != 2 && X.rank() != 3) {
    throw DimensionError("conv_text: input must be [d×k] or [B×d×k], got " +
                         shape_str(X.shape()));
  }
  require_rank(F, 3, "conv_text filters");
  const bool batched = X.rank() == 3;
  const std::size_t batch = batched ? X.dim(0) : 1;
  const std::size_t d = X.dim(batched ? 1 : 0);
  const std::size_t k = X.dim(batched ? 2 : 1);
  const std::size_t nc = F.dim(0), h = F.dim(2);
  if (F.dim(1) != d) {
    throw DimensionError("conv_text: filter " + shape_str(F.shape()) +
                         " does not match input " + shape_str(X.shape()));
  }
  if (b.size() != nc) {
    throw DimensionError("conv_text: bias " + shape_str(b.shape()) +
                         " does not match " + std::to_string(nc) + " filters");
  }
  if (h == 0 || h > k) {
    throw ConfigError("conv_text: window " + std::to_string(h) +
                      " exceeds sequence length " + std::to_string(k));
  }
  const std::size_t L = k - h + 1;
  const std::size_t win = h * d;

  // Filters as [n_c][h][d] and each post as [k][d] so every window is one
  // contiguous run of h·d values.
  std::vector<double> ft(nc * win);
  for (std::size_t f = 0; f < nc; ++f) {
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t r = 0; r < h; ++r) {
        ft[f * win + r * d + i] = F[(f * d + i) * h + r];
      }
    }
  }
  Tensor out = batched ? Tensor({batch, nc, L}) : Tensor({nc, L});
  std::vector<double> xt(k * d);
  for (std::size_t s = 0; s < batch; ++s) {
    const double* xs = X.values().data() + s * d * k;
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < k; ++j) xt[j * d + i] = xs[i * k + j];
    }
    double* os = out.values().data() + s * nc * L;
    for (std::size_t f = 0; f < nc; ++f) {
      const double* fw = ft.data() + f * win;
      for (std::size_t p = 0; p < L; ++p) {
        const double* xw = xt.data() + p * d;
        double acc = b[f];
        for (std::size_t q = 0; q < win; ++q) acc += fw[q] * xw[q];
        os[f * L + p] = acc;
      }
    }
  }
  return push(
      OpKind::kConvText, {x.id, filters.id, bias.id}, std::move(out),
      [batch, d, k, nc, h, L, win](Graph& g, std::size_t self) {
        const auto& ins = g.nodes_[self].inputs;
        const bool need_x = g.nodes_[ins[0]].requires_grad;
        const bool need_f = g.nodes_[ins[1]].requires_grad;
        const bool need_b = g.nodes_[ins[2]].requires_grad;
        auto up = g.upstream(self);
        const Tensor& X = g.val(ins[0]);
        const Tensor& F = g.val(ins[1]);
        std::vector<double> ft(nc * win);
        for (std::size_t f = 0; f < nc; ++f) {
          for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t r = 0; r < h; ++r) {
              ft[f * win + r * d + i] = F[(f * d + i) * h + r];
            }
          }
        }
        std::vector<double> gft(need_f ? nc * win : 0, 0.0);
        std::vector<double> xt(k * d), gxt(k * d);
        for (std::size_t s = 0; s < batch; ++s) {
          const double* xs = X.values().data() + s * d * k;
          for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < k; ++j) xt[j * d + i] = xs[i * k + j];
          }
          std::fill(gxt.begin(), gxt.end(), 0.0);
          const double* us = up.data() + s * nc * L;
          for (std::size_t f = 0; f < nc; ++f) {
            const double* fw = ft.data() + f * win;
            double* gfw = need_f ? gft.data() + f * win : nullptr;
            for (std::size_t p = 0; p < L; ++p) {
              const double u = us[f * L + p];
              if (u == 0.0) continue;
              if (need_x) {
                double* gw = gxt.data() + p * d;
                for (std::size_t q = 0; q < win; ++q) gw[q] += u * fw[q];
              }
              if (need_f) {
                const double* xw = xt.data() + p * d;
                for (std::size_t q = 0; q < win; ++q) gfw[q] += u * xw[q];
              }
            }
          }
          if (need_x) {
            auto gx = g.grad_buf(ins[0]);
            double* gxs = gx.data() + s * d * k;
            for (std::size_t i = 0; i < d; ++i) {
              for (std::size_t j = 0; j < k; ++j) {
                gxs[i * k + j] += gxt[j * d + i];
              }
            }
          }
        }
        if (need_f) {
          auto gf = g.grad_buf(ins[1]);
          for (std::size_t f = 0; f < nc; ++f) {
            for (std::size_t i = 0; i < d; ++i) {
              for (std::size_t r = 0; r < h; ++r) {
                gf[(f * d + i) * h + r] += gft[f * win + r * d + i];
              }
            }
          }
        }
        if (need_b) {
          auto gb = g.grad_buf(ins[2]);
          for (std::size_t s = 0; s < batch; ++s) {
            for (std::size_t f = 0; f < nc; ++f) {
              for (std::size_t p = 0; p < L; ++p) {
                gb[f] += up[(s * nc + f) * L + p];
              }
            }
          }
        }
      });
}

Var Graph::max_pool_full(Var c) {
  const Tensor& C = val(c.id);
  if (C.rank() != 2 && C.rank() != 3) {
    throw DimensionError("max_pool_full: expected [n_c×L] or [B×n_c×L], got " +
                         shape_str(C.shape()));
  }
  const std::size_t L = C.dim(C.rank() - 1);
  if (L == 0) throw DataError("max_pool_full: empty sequence");
  const std::size_t rows = C.size() / L;
  Shape out_shape(C.shape().begin(), C.shape().end() - 1);
  Tensor out(out_shape);
  std::vector<std::size_t> argmax(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = C.values().data() + r * L;
    std::size_t best = 0;
    for (std::size_t p = 1; p < L; ++p) {
      if (row[p] > row[best]) best = p;
    }
    argmax[r] = r * L + best;
    out[r] = row[best];
  }
  return push(OpKind::kMaxPoolFull, {c.id}, std::move(out),
              [argmax = std::move(argmax)](Graph& g, std::size_t self) {
                auto up = g.upstream(self);
                auto gc = g.grad_buf(g.nodes_[self].inputs[0]);
                for (std::size_t r = 0; r < argmax.size(); ++r) {
                  gc[argmax[r]] += up[r];
                }
              });
}

Var Graph::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = val(parts[0].id).dim(0);
  std::vector<std::size_t> widths;
  std::vector<std::size_t> ids;
  std::size_t total = 0;
  for (Var p : parts) {
    const Tensor& t = val(p.id);
    require_rank(t, 2, "concat_cols");
    if (t.dim(0) != m) {
      throw DimensionError("concat_cols: row mismatch " + shape_str(t.shape()));
    }
    widths.push_back(t.dim(1));
    ids.push_back(p.id);
    total += t.dim(1);
  }
  Tensor out({m, total});
  std::size_t off = 0;
  for (std::size_t q = 0; q < ids.size(); ++q) {
    const Tensor& t = val(ids[q]);
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(t.values().data() + i * widths[q], widths[q],
                  out.values().data() + i * total + off);
    }
    off += widths[q];
  }
  return push(OpKind::kConcatCols, ids, std::move(out),
              [m, total, widths](Graph& g, std::size_t self) {
                auto up = g.upstream(self);
                std::size_t off = 0;
                for (std::size_t q = 0; q < widths.size(); ++q) {
                  const std::size_t in = g.nodes_[self].inputs[q];
                  if (g.nodes_[in].requires_grad) {
                    auto gi = g.grad_buf(in);
                    for (std::size_t i = 0; i < m; ++i) {
                      for (std::size_t j = 0; j < widths[q]; ++j) {
                        gi[i * widths[q] + j] += up[i * total + off + j];
                      }
                    }
                  }
                  off += widths[q];
                }
              });
}

Var Graph::slice_rows(Var x, std::size_t begin, std::size_t end) {
  const Tensor& X = val(x.id);
  if (X.rank() < 1 || begin > end || end > X.dim(0)) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") out of range for " +
                         shape_str(X.shape()));
  }
  const std::size_t row = X.dim(0) ? X.size() / X.dim(0) : 0;
  Shape shape = X.shape();
  shape[0] = end - begin;
  Tensor out(shape, std::vector<double>(X.values().begin() + begin * row,
                                        X.values().begin() + end * row));
  return push(OpKind::kSliceRows, {x.id}, std::move(out),
              [begin, row](Graph& g, std::size_t self) {
                auto up = g.upstream(self);
                auto gx = g.grad_buf(g.nodes_[self].inputs[0]);
                for (std::size_t i = 0; i < up.size(); ++i) {
                  gx[begin * row + i] += up[i];
                }
              });
}

Var Graph::reshape(Var x, Shape shape) {
  const Tensor& X = val(x.id);
  if (shape_size(shape) != X.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(X.shape()) +
                         " as " + shape_str(shape));
  }
  Tensor out(std::move(shape),
             std::vector<double>(X.values().begin(), X.values().end()));
  return push(OpKind::kReshape, {x.id}, std::move(out),
              [](Graph& g, std::size_t self) {
                auto up = g.upstream(self);
                auto gx = g.grad_buf(g.nodes_[self].inputs[0]);
                for (std::size_t i = 0; i < up.size(); ++i) gx[i] += up[i];
              });
}

Var Graph::dropout(Var x, double rate, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " +
                      std::to_string(rate));
  }
  Tensor out = plain_copy(val(x.id));
  std::vector<double> mask;
  if (training && rate > 0.0) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double keep_scale = 1.0 / (1.0 - rate);
    mask.resize(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      mask[i] = unif(rng_) < rate ? 0.0 : keep_scale;
      out[i] *= mask[i];
    }
  }
  return push(OpKind::kDropout, {x.id}, std::move(out),
              [mask = std::move(mask)](Graph& g, std::size_t self) {
                auto up = g.upstream(self);
                auto gx = g.grad_buf(g.nodes_[self].inputs[0]);
                if (mask.empty()) {
                  for (std::size_t i = 0; i < up.size(); ++i) gx[i] += up[i];
                } else {
                  for (std::size_t i = 0; i < up.size(); ++i) {
                    gx[i] += mask[i] * up[i];
                  }
                }
              });
}

Var Graph::grl(Var x, double lambda) {
  Tensor out = plain_copy(val(x.id));
  return push(OpKind::kGrl, {x.id}, std::move(out),
              [lambda](Graph& g, std::size_t self) {
                auto up = g.upstream(self);
                auto gx = g.grad_buf(g.nodes_[self].inputs[0]);
                for (std::size_t i = 0; i < up.size(); ++i) {
                  gx[i] += -lambda * up[i];
                }
              });
}

Var Graph::detach(Var x) {
  Node node;
  node.kind = OpKind::kDetach;
  node.inputs = {x.id};
  node.value = plain_copy(val(x.id));
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Graph::embedding(Var table, std::span<const std::int32_t> ids,
                     std::size_t batch, std::size_t k) {
  const Tensor& T = val(table.id);
  require_rank(T, 2, "embedding");
  if (ids.size() != batch * k) {
    throw DimensionError("embedding: " + std::to_string(ids.size()) +
                         " ids for batch " + std::to_string(batch) + "×" +
                         std::to_string(k));
  }
  const std::size_t vocab = T.dim(0), d = T.dim(1);
  for (std::int32_t id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw DataError("embedding: token id " + std::to_string(id) +
                      " outside vocabulary of size " + std::to_string(vocab));
    }
  }
  Tensor out({batch, d, k});
  for (std::size_t s = 0; s < batch; ++s) {
    for (std::size_t j = 0; j < k; ++j) {
      const double* row = T.values().data() + ids[s * k + j] * d;
      for (std::size_t i = 0; i < d; ++i) out[(s * d + i) * k + j] = row[i];
    }
  }
  std::vector<std::int32_t> kept(ids.begin(), ids.end());
  return push(OpKind::kEmbedding, {table.id}, std::move(out),
              [kept = std::move(kept), batch, k, d](Graph& g, std::size_t self) {
                auto up = g.upstream(self);
                auto gt = g.grad_buf(g.nodes_[self].inputs[0]);
                for (std::size_t s = 0; s < batch; ++s) {
                  for (std::size_t j = 0; j < k; ++j) {
                    const std::int32_t id = kept[s * k + j];
                    if (id == 0) continue;
                    double* row = gt.data() + id * d;
                    for (std::size_t i = 0; i < d; ++i) {
                      row[i] += up[(s * d + i) * k + j];
                    }
                  }
                }
              });
}

void Graph::backward(Var seed) {
  if (seed.id >= nodes_.size()) {
    throw ContractError("backward: seed does not belong to this graph");
  }
  if (val(seed.id).size() != 1) {
    throw ContractError("backward: seed must be scalar, got " +
                        shape_str(val(seed.id).shape()));
  }
  for (Node& n : nodes_) {
    if (!n.param && n.requires_grad) n.grad.assign(n.value.size(), 0.0);
  }
  if (!nodes_[seed.id].requires_grad) return;
  if (nodes_[seed.id].param) {
    nodes_[seed.id].param->grad()[0] += 1.0;
    return;
  }
  nodes_[seed.id].grad[0] = 1.0;
  for (std::size_t i = seed.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.backprop) n.backprop(*this, i);
  }
}

}  // namespace metadet::ad
