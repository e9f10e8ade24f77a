#include "tsdf/nn/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>

namespace tsdf::nn {
namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <class T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

template <class T>
MatMap<T> mat(Tensor<T>& t) {
  return MatMap<T>(t.data(), Eigen::Index(t.rows()), Eigen::Index(t.cols()));
}
template <class T>
ConstMatMap<T> mat(const Tensor<T>& t) {
  return ConstMatMap<T>(t.data(), Eigen::Index(t.rows()), Eigen::Index(t.cols()));
}

[[noreturn]] void shape_error(const char* kernel, const std::string& detail) {
  throw DimensionError(std::string(kernel) + ": " + detail);
}

template <class T>
Graph<T>& graph_of(const char* kernel, std::initializer_list<Var<T>> vars) {
  Graph<T>* g = vars.begin()->graph;
  for (const auto& v : vars) {
    if (v.graph == nullptr || v.graph != g) {
      throw InternalError(std::string(kernel) + ": operands recorded on different graphs");
    }
  }
  return *g;
}

template <class T>
void require_rank2(const char* kernel, const Tensor<T>& t) {
  if (t.rank() != 2) shape_error(kernel, "expected a rank-2 operand, got " + shape_string(t.shape()));
}

template <class T>
void require_same_shape(const char* kernel, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    shape_error(kernel, shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

template <class T>
void accumulate(Graph<T>& g, Var<T> target, const Tensor<T>& delta, T factor = T{1}) {
  if (!g.requires_grad(target)) return;
  auto& dst = g.grad(target);
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += factor * delta[i];
}

}  // namespace

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  auto& g = graph_of("matmul", {a, b});
  const auto& av = a.value();
  const auto& bv = b.value();
  require_rank2("matmul", av);
  require_rank2("matmul", bv);
  if (av.cols() != bv.rows()) {
    shape_error("matmul", "inner dimensions differ: " + shape_string(av.shape()) + " * " +
                              shape_string(bv.shape()));
  }
  Tensor<T> out({av.rows(), bv.cols()});
  mat(out).noalias() = mat(av) * mat(bv);
  return g.record("matmul", std::move(out), {a, b}, [a, b](Graph<T>& g, std::size_t self) {
    const auto& dy = g.grad(self);
    if (g.requires_grad(a)) mat(g.grad(a)).noalias() += mat(dy) * mat(b.value()).transpose();
    if (g.requires_grad(b)) mat(g.grad(b)).noalias() += mat(a.value()).transpose() * mat(dy);
  });
}

template <class T>
Var<T> transpose(Var<T> a) {
  auto& g = graph_of("transpose", {a});
  const auto& av = a.value();
  require_rank2("transpose", av);
  Tensor<T> out({av.cols(), av.rows()});
  mat(out) = mat(av).transpose();
  return g.record("transpose", std::move(out), {a}, [a](Graph<T>& g, std::size_t self) {
    mat(g.grad(a)) += mat(g.grad(self)).transpose();
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  auto& g = graph_of("add", {a, b});
  require_same_shape("add", a.value(), b.value());
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return g.record("add", std::move(out), {a, b}, [a, b](Graph<T>& g, std::size_t self) {
    const auto& dy = g.grad(self);
    accumulate(g, a, dy);
    accumulate(g, b, dy);
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  auto& g = graph_of("sub", {a, b});
  require_same_shape("sub", a.value(), b.value());
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return g.record("sub", std::move(out), {a, b}, [a, b](Graph<T>& g, std::size_t self) {
    const auto& dy = g.grad(self);
    accumulate(g, a, dy);
    accumulate(g, b, dy, T{-1});
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  auto& g = graph_of("mul", {a, b});
  require_same_shape("mul", a.value(), b.value());
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return g.record("mul", std::move(out), {a, b}, [a, b](Graph<T>& g, std::size_t self) {
    const auto& dy = g.grad(self);
    const auto& av = a.value();
    const auto& bv = b.value();
    if (g.requires_grad(a)) {
      auto& da = g.grad(a);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i] * bv[i];
    }
    if (g.requires_grad(b)) {
      auto& db = g.grad(b);
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += dy[i] * av[i];
    }
  });
}

template <class T>
Var<T> scale(Var<T> a, T factor) {
  auto& g = graph_of("scale", {a});
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= factor;
  return g.record("scale", std::move(out), {a}, [a, factor](Graph<T>& g, std::size_t self) {
    accumulate(g, a, g.grad(self), factor);
  });
}

template <class T>
Var<T> add_repeat(Var<T> x, Var<T> v) {
  auto& g = graph_of("add_repeat", {x, v});
  const auto& xv = x.value();
  const auto& vv = v.value();
  const std::size_t n = xv.rows(), d = xv.cols(), m = vv.rows();
  if (vv.cols() != d || n % m != 0) {
    shape_error("add_repeat", shape_string(xv.shape()) + " + " + shape_string(vv.shape()));
  }
  const std::size_t group = n / m;
  Tensor<T> out = xv;
  for (std::size_t r = 0; r < n; ++r) {
    const T* src = vv.data() + (r / group) * d;
    T* dst = out.data() + r * d;
    for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
  }
  return g.record("add_repeat", std::move(out), {x, v},
                  [x, v, n, d, group](Graph<T>& g, std::size_t self) {
                    const auto& dy = g.grad(self);
                    accumulate(g, x, dy);
                    if (g.requires_grad(v)) {
                      auto& dv = g.grad(v);
                      for (std::size_t r = 0; r < n; ++r) {
                        T* dst = dv.data() + (r / group) * d;
                        const T* src = dy.data() + r * d;
                        for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
                      }
                    }
                  });
}

template <class T>
Var<T> add_tile(Var<T> x, Var<T> v) {
  auto& g = graph_of("add_tile", {x, v});
  const auto& xv = x.value();
  const auto& vv = v.value();
  const std::size_t n = xv.rows(), d = xv.cols(), m = vv.rows();
  if (vv.cols() != d || n % m != 0) {
    shape_error("add_tile", shape_string(xv.shape()) + " + " + shape_string(vv.shape()));
  }
  Tensor<T> out = xv;
  for (std::size_t r = 0; r < n; ++r) {
    const T* src = vv.data() + (r % m) * d;
    T* dst = out.data() + r * d;
    for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
  }
  return g.record("add_tile", std::move(out), {x, v}, [x, v, n, d, m](Graph<T>& g, std::size_t self) {
    const auto& dy = g.grad(self);
    accumulate(g, x, dy);
    if (g.requires_grad(v)) {
      auto& dv = g.grad(v);
      for (std::size_t r = 0; r < n; ++r) {
        T* dst = dv.data() + (r % m) * d;
        const T* src = dy.data() + r * d;
        for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
      }
    }
  });
}

template <class T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
  return add_repeat(matmul(x, weight), bias);
}

template <class T>
Var<T> softmax(Var<T> a) {
  auto& g = graph_of("softmax", {a});
  Tensor<T> out = a.value();
  const std::size_t n = out.rows(), d = out.cols();
  for (std::size_t r = 0; r < n; ++r) {
    T* row = out.data() + r * d;
    T peak = *std::max_element(row, row + d);
    T total{0};
    for (std::size_t c = 0; c < d; ++c) {
      row[c] = std::exp(row[c] - peak);
      total += row[c];
    }
    for (std::size_t c = 0; c < d; ++c) row[c] /= total;
  }
  return g.record("softmax", std::move(out), {a}, [a, n, d](Graph<T>& g, std::size_t self) {
    const auto& y = g.value(g.var(self));
    const auto& dy = g.grad(self);
    auto& dx = g.grad(a);
    for (std::size_t r = 0; r < n; ++r) {
      const T* yr = y.data() + r * d;
      const T* dyr = dy.data() + r * d;
      T dot{0};
      for (std::size_t c = 0; c < d; ++c) dot += yr[c] * dyr[c];
      T* dxr = dx.data() + r * d;
      for (std::size_t c = 0; c < d; ++c) dxr[c] += yr[c] * (dyr[c] - dot);
    }
  });
}

template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  auto& g = graph_of("layer_norm", {x, gamma, beta});
  if (!(eps > T{0})) throw ConfigError("layer_norm: epsilon must be positive");
  const auto& xv = x.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  if (gamma.value().size() != d || beta.value().size() != d) {
    shape_error("layer_norm", "input " + shape_string(xv.shape()) + " with gamma " +
                                  shape_string(gamma.value().shape()) + ", beta " +
                                  shape_string(beta.value().shape()));
  }
  auto xhat = std::make_shared<Tensor<T>>(xv.shape());
  auto inv_std = std::make_shared<std::vector<T>>(n);
  Tensor<T> out(xv.shape());
  const T* gv = gamma.value().data();
  const T* bv = beta.value().data();
  for (std::size_t r = 0; r < n; ++r) {
    const T* xr = xv.data() + r * d;
    T mu{0};
    for (std::size_t c = 0; c < d; ++c) mu += xr[c];
    mu /= T(d);
    T var{0};
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= T(d);
    const T inv = T{1} / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    T* hr = xhat->data() + r * d;
    T* yr = out.data() + r * d;
    for (std::size_t c = 0; c < d; ++c) {
      hr[c] = (xr[c] - mu) * inv;
      yr[c] = gv[c] * hr[c] + bv[c];
    }
  }
  return g.record(
      "layer_norm", std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat, inv_std, n, d](Graph<T>& g, std::size_t self) {
        const auto& dy = g.grad(self);
        const T* gv = gamma.value().data();
        if (g.requires_grad(gamma) || g.requires_grad(beta)) {
          std::vector<T> dg(d, T{0}), db(d, T{0});
          for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < d; ++c) {
              dg[c] += dy[r * d + c] * (*xhat)[r * d + c];
              db[c] += dy[r * d + c];
            }
          }
          if (g.requires_grad(gamma)) {
            auto& dst = g.grad(gamma);
            for (std::size_t c = 0; c < d; ++c) dst[c] += dg[c];
          }
          if (g.requires_grad(beta)) {
            auto& dst = g.grad(beta);
            for (std::size_t c = 0; c < d; ++c) dst[c] += db[c];
          }
        }
        if (!g.requires_grad(x)) return;
        auto& dx = g.grad(x);
        std::vector<T> dxhat(d);
        for (std::size_t r = 0; r < n; ++r) {
          const T* hr = xhat->data() + r * d;
          T s1{0}, s2{0};
          for (std::size_t c = 0; c < d; ++c) {
            dxhat[c] = dy[r * d + c] * gv[c];
            s1 += dxhat[c];
            s2 += dxhat[c] * hr[c];
          }
          const T k = (*inv_std)[r] / T(d);
          for (std::size_t c = 0; c < d; ++c) {
            dx[r * d + c] += k * (T(d) * dxhat[c] - s1 - hr[c] * s2);
          }
        }
      });
}

template <class T>
Var<T> gelu(Var<T> x) {
  auto& g = graph_of("gelu", {x});
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = T(gelu_value(double(v)));
  return g.record("gelu", std::move(out), {x}, [x](Graph<T>& g, std::size_t self) {
    const auto& xv = x.value();
    const auto& dy = g.grad(self);
    auto& dx = g.grad(x);
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double z = double(xv[i]);
      const double cdf = 0.5 * (1.0 + std::erf(z / std::numbers::sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * z * z);
      dx[i] += dy[i] * T(cdf + z * pdf);
    }
  });
}

template <class T>
Var<T> mean_pool(Var<T> x, std::size_t group) {
  auto& g = graph_of("mean_pool", {x});
  const auto& xv = x.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  if (group == 0 || n % group != 0) {
    shape_error("mean_pool", "cannot pool " + shape_string(xv.shape()) + " in groups of " +
                                 std::to_string(group));
  }
  Tensor<T> out({n / group, d});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) out(r / group, c) += xv[r * d + c];
  }
  for (auto& v : out.values()) v /= T(group);
  return g.record("mean_pool", std::move(out), {x}, [x, n, d, group](Graph<T>& g, std::size_t self) {
    const auto& dy = g.grad(self);
    auto& dx = g.grad(x);
    const T w = T{1} / T(group);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < d; ++c) dx[r * d + c] += w * dy[(r / group) * d + c];
    }
  });
}

template <class T>
Var<T> reshape(Var<T> x, Shape shape) {
  auto& g = graph_of("reshape", {x});
  if (shape_size(shape) != x.value().size()) {
    shape_error("reshape", shape_string(x.value().shape()) + " -> " + shape_string(shape));
  }
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return g.record("reshape", std::move(out), {x}, [x](Graph<T>& g, std::size_t self) {
    accumulate(g, x, g.grad(self));
  });
}

template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) shape_error("concat_rows", "no operands");
  Graph<T>& g = *parts.front().graph;
  std::size_t rows = 0;
  const std::size_t d = parts.front().value().cols();
  for (const auto& p : parts) {
    if (p.graph != &g) throw InternalError("concat_rows: operands recorded on different graphs");
    require_rank2("concat_rows", p.value());
    if (p.value().cols() != d) {
      shape_error("concat_rows", "column mismatch " + shape_string(parts.front().value().shape()) +
                                     " vs " + shape_string(p.value().shape()));
    }
    rows += p.value().rows();
  }
  Tensor<T> out({rows, d});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + offset);
    offset += p.value().size();
  }
  // record() takes an initializer list; the parents are tracked by the closure.
  bool needs = false;
  for (const auto& p : parts) needs = needs || g.requires_grad(p);
  Var<T> anchor = needs ? *std::find_if(parts.begin(), parts.end(),
                                        [&](const Var<T>& p) { return g.requires_grad(p); })
                        : parts.front();
  return g.record("concat_rows", std::move(out), {anchor}, [parts](Graph<T>& g, std::size_t self) {
    const auto& dy = g.grad(self);
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t len = p.value().size();
      if (g.requires_grad(p)) {
        auto& dst = g.grad(p);
        for (std::size_t i = 0; i < len; ++i) dst[i] += dy[offset + i];
      }
      offset += len;
    }
  });
}

template <class T>
Var<T> dropout(Var<T> x, double p, Rng* rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: rate must lie in [0, 1)");
  if (p == 0.0 || rng == nullptr) return x;
  auto& g = graph_of("dropout", {x});
  auto mask = std::make_shared<Tensor<T>>(x.value().shape());
  const T keep = T(1.0 / (1.0 - p));
  for (auto& m : mask->values()) m = rng->uniform() < p ? T{0} : keep;
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*mask)[i];
  return g.record("dropout", std::move(out), {x}, [x, mask](Graph<T>& g, std::size_t self) {
    const auto& dy = g.grad(self);
    auto& dx = g.grad(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * (*mask)[i];
  });
}

template <class T>
Var<T> multi_head_attention(Var<T> q, Var<T> k, Var<T> v, std::size_t seq_len, std::size_t heads,
                            std::vector<Tensor<T>>* probs) {
  auto& g = graph_of("multi_head_attention", {q, k, v});
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  require_rank2("multi_head_attention", qv);
  require_same_shape("multi_head_attention", qv, kv);
  require_same_shape("multi_head_attention", qv, vv);
  const std::size_t rows = qv.rows(), width = qv.cols();
  if (seq_len == 0 || heads == 0 || rows % seq_len != 0 || width % heads != 0) {
    shape_error("multi_head_attention", "operand " + shape_string(qv.shape()) + " with seq_len " +
                                            std::to_string(seq_len) + " and " +
                                            std::to_string(heads) + " heads");
  }
  const std::size_t batch = rows / seq_len, dh = width / heads;
  const T inv_scale = T{1} / std::sqrt(T(dh));
  const auto L = Eigen::Index(seq_len), D = Eigen::Index(dh);
  const Eigen::OuterStride<> stride{Eigen::Index(width)};

  auto weights = std::make_shared<std::vector<RowMat<T>>>(batch * heads);
  Tensor<T> out(qv.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t offset = b * seq_len * width + h * dh;
      ConstStridedMap<T> Q(qv.data() + offset, L, D, stride);
      ConstStridedMap<T> K(kv.data() + offset, L, D, stride);
      ConstStridedMap<T> V(vv.data() + offset, L, D, stride);
      RowMat<T> P = (Q * K.transpose()) * inv_scale;
      for (Eigen::Index r = 0; r < L; ++r) {
        P.row(r).array() -= P.row(r).maxCoeff();
        P.row(r) = P.row(r).array().exp().matrix();
        P.row(r) /= P.row(r).sum();
      }
      StridedMap<T> O(out.data() + offset, L, D, stride);
      O.noalias() = P * V;
      if (probs) probs->emplace_back(Shape{seq_len, seq_len}, std::vector<T>(P.data(), P.data() + P.size()));
      (*weights)[b * heads + h] = std::move(P);
    }
  }
  return g.record(
      "multi_head_attention", std::move(out), {q, k, v},
      [q, k, v, weights, batch, heads, seq_len, width, dh, inv_scale](Graph<T>& g, std::size_t self) {
        const auto& dy = g.grad(self);
        const auto L = Eigen::Index(seq_len), D = Eigen::Index(dh);
        const Eigen::OuterStride<> stride{Eigen::Index(width)};
        const bool need_q = g.requires_grad(q), need_k = g.requires_grad(k), need_v = g.requires_grad(v);
        T* dq = need_q ? g.grad(q).data() : nullptr;
        T* dk = need_k ? g.grad(k).data() : nullptr;
        T* dv = need_v ? g.grad(v).data() : nullptr;
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t offset = b * seq_len * width + h * dh;
            const RowMat<T>& P = (*weights)[b * heads + h];
            ConstStridedMap<T> dO(dy.data() + offset, L, D, stride);
            ConstStridedMap<T> Q(q.value().data() + offset, L, D, stride);
            ConstStridedMap<T> K(k.value().data() + offset, L, D, stride);
            ConstStridedMap<T> V(v.value().data() + offset, L, D, stride);
            if (need_v) StridedMap<T>(dv + offset, L, D, stride).noalias() += P.transpose() * dO;
            if (!need_q && !need_k) continue;
            RowMat<T> dP = dO * V.transpose();
            RowMat<T> dS(L, L);
            for (Eigen::Index r = 0; r < L; ++r) {
              const T dot = P.row(r).dot(dP.row(r));
              dS.row(r) = (P.row(r).array() * (dP.row(r).array() - dot)).matrix();
            }
            dS *= inv_scale;
            if (need_q) StridedMap<T>(dq + offset, L, D, stride).noalias() += dS * K;
            if (need_k) StridedMap<T>(dk + offset, L, D, stride).noalias() += dS.transpose() * Q;
          }
        }
      });
}

template <class T>
Var<T> sum(Var<T> x) {
  auto& g = graph_of("sum", {x});
  T total{0};
  for (T v : x.value().values()) total += v;
  return g.record("sum", Tensor<T>({1}, total), {x}, [x](Graph<T>& g, std::size_t self) {
    const T dy = g.grad(self)[0];
    for (auto& d : g.grad(x).values()) d += dy;
  });
}

template <class T>
Var<T> mean(Var<T> x) {
  return scale(sum(x), T{1} / T(x.value().size()));
}

template <class T>
Var<T> mse_loss(Var<T> a, Var<T> b) {
  auto& g = graph_of("mse_loss", {a, b});
  require_same_shape("mse_loss", a.value(), b.value());
  const auto& av = a.value();
  const auto& bv = b.value();
  T total{0};
  for (std::size_t i = 0; i < av.size(); ++i) {
    const T diff = av[i] - bv[i];
    total += diff * diff;
  }
  const T n = T(av.size());
  return g.record("mse_loss", Tensor<T>({1}, total / n), {a, b}, [a, b, n](Graph<T>& g, std::size_t self) {
    const T w = T{2} * g.grad(self)[0] / n;
    const auto& av = a.value();
    const auto& bv = b.value();
    if (g.requires_grad(a)) {
      auto& da = g.grad(a);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += w * (av[i] - bv[i]);
    }
    if (g.requires_grad(b)) {
      auto& db = g.grad(b);
      for (std::size_t i = 0; i < db.size(); ++i) db[i] -= w * (av[i] - bv[i]);
    }
  });
}

template <class T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels) {
  auto& g = graph_of("softmax_cross_entropy", {logits});
  const auto& lv = logits.value();
  require_rank2("softmax_cross_entropy", lv);
  const std::size_t n = lv.rows(), c = lv.cols();
  if (labels.size() != n) {
    shape_error("softmax_cross_entropy", std::to_string(labels.size()) + " labels for logits " +
                                             shape_string(lv.shape()));
  }
  auto probs = std::make_shared<Tensor<T>>(lv.shape());
  std::vector<int> targets(labels.begin(), labels.end());
  T total{0};
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] < 0 || std::size_t(targets[r]) >= c) {
      throw IndexError("softmax_cross_entropy: label " + std::to_string(targets[r]) +
                       " outside [0, " + std::to_string(c) + ")");
    }
    const T* row = lv.data() + r * c;
    const T peak = *std::max_element(row, row + c);
    T z{0};
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - peak);
    for (std::size_t j = 0; j < c; ++j) (*probs)(r, j) = std::exp(row[j] - peak) / z;
    total -= row[targets[r]] - peak - std::log(z);
  }
  return g.record("softmax_cross_entropy", Tensor<T>({1}, total / T(n)), {logits},
                  [logits, probs, targets, n, c](Graph<T>& g, std::size_t self) {
                    const T w = g.grad(self)[0] / T(n);
                    auto& dl = g.grad(logits);
                    for (std::size_t r = 0; r < n; ++r) {
                      for (std::size_t j = 0; j < c; ++j) {
                        const T onehot = int(j) == targets[r] ? T{1} : T{0};
                        dl(r, j) += w * ((*probs)(r, j) - onehot);
                      }
                    }
                  });
}

#define TSDF_INSTANTIATE_OPS(T)                                                            \
  template Var<T> matmul(Var<T>, Var<T>);                                                  \
  template Var<T> transpose(Var<T>);                                                       \
  template Var<T> add(Var<T>, Var<T>);                                                     \
  template Var<T> sub(Var<T>, Var<T>);                                                     \
  template Var<T> mul(Var<T>, Var<T>);                                                     \
  template Var<T> scale(Var<T>, T);                                                        \
  template Var<T> add_repeat(Var<T>, Var<T>);                                              \
  template Var<T> add_tile(Var<T>, Var<T>);                                                \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                          \
  template Var<T> softmax(Var<T>);                                                         \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                   \
  template Var<T> gelu(Var<T>);                                                            \
  template Var<T> mean_pool(Var<T>, std::size_t);                                          \
  template Var<T> reshape(Var<T>, Shape);                                                  \
  template Var<T> concat_rows(const std::vector<Var<T>>&);                                 \
  template Var<T> dropout(Var<T>, double, Rng*);                                           \
  template Var<T> multi_head_attention(Var<T>, Var<T>, Var<T>, std::size_t, std::size_t,   \
                                       std::vector<Tensor<T>>*);                           \
  template Var<T> sum(Var<T>);                                                             \
  template Var<T> mean(Var<T>);                                                            \
  template Var<T> mse_loss(Var<T>, Var<T>);                                                \
  template Var<T> softmax_cross_entropy(Var<T>, std::span<const int>);

TSDF_INSTANTIATE_OPS(float)
TSDF_INSTANTIATE_OPS(double)

#undef TSDF_INSTANTIATE_OPS

}  // namespace tsdf::nn
