#include "grokforget/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include "grokforget/errors.hpp"

namespace gf {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(const Tensor& t, std::int64_t rows, std::int64_t cols) {
  return ConstMap(t.ptr(), rows, cols);
}
MutMap as_matrix(Tensor& t, std::int64_t rows, std::int64_t cols) { return MutMap(t.ptr(), rows, cols); }

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

Var finish(Graph& g, Tensor out, std::initializer_list<Var> parents, Graph::BackwardFn fn,
           const char* op) {
  check_finite(out, op);
  return g.record(std::move(out), parents, std::move(fn));
}

// Row-wise log-softmax of logits/temperature, max-subtracted.
void log_softmax_into(const float* in, float* out, std::int64_t rows, std::int64_t cols, float temperature) {
  const float inv_t = 1.0f / temperature;
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* x = in + r * cols;
    float* y = out + r * cols;
    float mx = x[0] * inv_t;
    for (std::int64_t c = 1; c < cols; ++c) mx = std::max(mx, x[c] * inv_t);
    double s = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) s += std::exp(static_cast<double>(x[c] * inv_t - mx));
    const float lse = mx + static_cast<float>(std::log(s));
    for (std::int64_t c = 0; c < cols; ++c) y[c] = x[c] * inv_t - lse;
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_rank(av, 2, "matmul");
  require_rank(bv, 2, "matmul");
  const auto m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions disagree " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  }
  Tensor out({m, n});
  as_matrix(out, m, n).noalias() = as_matrix(av, m, k) * as_matrix(bv, k, n);
  const int ia = a.id, ib = b.id;
  return finish(*a.graph, std::move(out), {a, b}, [ia, ib, m, k, n](Graph& g, const Tensor& go) {
    auto G = as_matrix(go, m, n);
    if (g.requires_grad(ia)) {
      as_matrix(g.grad_buffer(ia), m, k).noalias() += G * as_matrix(g.value(ib), k, n).transpose();
    }
    if (g.requires_grad(ib)) {
      as_matrix(g.grad_buffer(ib), k, n).noalias() += as_matrix(g.value(ia), m, k).transpose() * G;
    }
  }, "matmul");
}

namespace {

template <typename Fwd>
Var elementwise2(Var a, Var b, const char* op, Fwd fwd, float da_sign, float db_sign, bool product) {
  require_same_shape(a.value(), b.value(), op);
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor out(av.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = fwd(av[i], bv[i]);
  const int ia = a.id, ib = b.id;
  return finish(*a.graph, std::move(out), {a, b},
                [ia, ib, da_sign, db_sign, product](Graph& g, const Tensor& go) {
                  if (g.requires_grad(ia)) {
                    auto& ga = g.grad_buffer(ia);
                    const auto& bv = g.value(ib);
                    for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += product ? go[i] * bv[i] : da_sign * go[i];
                  }
                  if (g.requires_grad(ib)) {
                    auto& gb = g.grad_buffer(ib);
                    const auto& av = g.value(ia);
                    for (std::int64_t i = 0; i < go.numel(); ++i) gb[i] += product ? go[i] * av[i] : db_sign * go[i];
                  }
                },
                op);
}

}  // namespace

Var add(Var a, Var b) {
  return elementwise2(a, b, "add", [](float x, float y) { return x + y; }, 1.0f, 1.0f, false);
}

Var sub(Var a, Var b) {
  return elementwise2(a, b, "sub", [](float x, float y) { return x - y; }, 1.0f, -1.0f, false);
}

Var mul(Var a, Var b) {
  return elementwise2(a, b, "mul", [](float x, float y) { return x * y; }, 0.0f, 0.0f, true);
}

Var scale(Var a, float s) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= s;
  const int ia = a.id;
  return finish(*a.graph, std::move(out), {a}, [ia, s](Graph& g, const Tensor& go) {
    auto& ga = g.grad_buffer(ia);
    for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += s * go[i];
  }, "scale");
}

Var add_bias(Var x, Var bias) {
  const auto& xv = x.value();
  const auto& bv = bias.value();
  require_rank(xv, 2, "add_bias");
  require_rank(bv, 1, "add_bias");
  const auto m = xv.dim(0), n = xv.dim(1);
  if (bv.dim(0) != n) throw ShapeError("add_bias: bias length " + std::to_string(bv.dim(0)) + " != " + std::to_string(n));
  Tensor out = xv;
  for (std::int64_t r = 0; r < m; ++r)
    for (std::int64_t c = 0; c < n; ++c) out[r * n + c] += bv[c];
  const int ix = x.id, ib = bias.id;
  return finish(*x.graph, std::move(out), {x, bias}, [ix, ib, m, n](Graph& g, const Tensor& go) {
    if (g.requires_grad(ix)) {
      auto& gx = g.grad_buffer(ix);
      for (std::int64_t i = 0; i < m * n; ++i) gx[i] += go[i];
    }
    if (g.requires_grad(ib)) {
      auto& gb = g.grad_buffer(ib);
      for (std::int64_t r = 0; r < m; ++r)
        for (std::int64_t c = 0; c < n; ++c) gb[c] += go[r * n + c];
    }
  }, "add_bias");
}

Var relu(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = v > 0.0f ? v : 0.0f;
  const int ix = x.id;
  return finish(*x.graph, std::move(out), {x}, [ix](Graph& g, const Tensor& go) {
    auto& gx = g.grad_buffer(ix);
    const auto& xv = g.value(ix);
    for (std::int64_t i = 0; i < go.numel(); ++i)
      if (xv[i] > 0.0f) gx[i] += go[i];
  }, "relu");
}

namespace {
constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2/pi)
constexpr float kGeluA = 0.044715f;
}  // namespace

Var gelu(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) {
    const float u = kGeluC * (v + kGeluA * v * v * v);
    v = 0.5f * v * (1.0f + std::tanh(u));
  }
  const int ix = x.id;
  return finish(*x.graph, std::move(out), {x}, [ix](Graph& g, const Tensor& go) {
    auto& gx = g.grad_buffer(ix);
    const auto& xv = g.value(ix);
    for (std::int64_t i = 0; i < go.numel(); ++i) {
      const float v = xv[i];
      const float u = kGeluC * (v + kGeluA * v * v * v);
      const float t = std::tanh(u);
      const float du = kGeluC * (1.0f + 3.0f * kGeluA * v * v);
      gx[i] += go[i] * (0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * du);
    }
  }, "gelu");
}

Var sum(Var x) {
  double s = 0.0;
  for (float v : x.value().data()) s += v;
  const int ix = x.id;
  return finish(*x.graph, Tensor::scalar(static_cast<float>(s)), {x}, [ix](Graph& g, const Tensor& go) {
    auto& gx = g.grad_buffer(ix);
    for (auto& v : gx.data()) v += go[0];
  }, "sum");
}

Var mean(Var x) { return scale(sum(x), 1.0f / static_cast<float>(x.value().numel())); }

Var cross_entropy(Var logits, std::span<const std::int32_t> labels) {
  const auto& lv = logits.value();
  require_rank(lv, 2, "cross_entropy");
  const auto n = lv.dim(0), c = lv.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n) throw ShapeError("cross_entropy: label count mismatch");
  validate_labels(labels, c);
  auto logp = std::make_shared<Tensor>(lv.shape());
  log_softmax_into(lv.ptr(), logp->ptr(), n, c, 1.0f);
  double total = 0.0;
  for (std::int64_t r = 0; r < n; ++r) total -= (*logp)[r * c + labels[static_cast<std::size_t>(r)]];
  const float loss = static_cast<float>(total / static_cast<double>(n));
  std::vector<std::int32_t> lab(labels.begin(), labels.end());
  const int il = logits.id;
  return finish(*logits.graph, Tensor::scalar(loss), {logits},
                [il, logp, lab = std::move(lab), n, c](Graph& g, const Tensor& go) {
                  auto& gl = g.grad_buffer(il);
                  const float s = go[0] / static_cast<float>(n);
                  for (std::int64_t r = 0; r < n; ++r) {
                    for (std::int64_t k = 0; k < c; ++k) gl[r * c + k] += s * std::exp((*logp)[r * c + k]);
                    gl[r * c + lab[static_cast<std::size_t>(r)]] -= s;
                  }
                },
                "cross_entropy");
}

Var kl_divergence(Var p_logits, Var q_logits, float temperature) {
  const auto& pv = p_logits.value();
  const auto& qv = q_logits.value();
  require_rank(pv, 2, "kl_divergence");
  require_same_shape(pv, qv, "kl_divergence");
  if (!(temperature > 0.0f)) throw ValidationError("kl_divergence: temperature must be positive");
  const auto n = pv.dim(0), c = pv.dim(1);
  auto logp = std::make_shared<Tensor>(pv.shape());
  auto logq = std::make_shared<Tensor>(qv.shape());
  log_softmax_into(pv.ptr(), logp->ptr(), n, c, temperature);
  log_softmax_into(qv.ptr(), logq->ptr(), n, c, temperature);
  auto row_kl = std::make_shared<std::vector<float>>(static_cast<std::size_t>(n));
  double total = 0.0;
  for (std::int64_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::int64_t k = 0; k < c; ++k) {
      const auto i = r * c + k;
      s += std::exp(static_cast<double>((*logp)[i])) * ((*logp)[i] - (*logq)[i]);
    }
    (*row_kl)[static_cast<std::size_t>(r)] = static_cast<float>(s);
    total += s;
  }
  const int ip = p_logits.id, iq = q_logits.id;
  return finish(*p_logits.graph, Tensor::scalar(static_cast<float>(total / static_cast<double>(n))),
                {p_logits, q_logits},
                [ip, iq, logp, logq, row_kl, n, c, temperature](Graph& g, const Tensor& go) {
                  const float s = go[0] / (static_cast<float>(n) * temperature);
                  const bool gp = g.requires_grad(ip), gq = g.requires_grad(iq);
                  for (std::int64_t r = 0; r < n; ++r) {
                    const float kl = (*row_kl)[static_cast<std::size_t>(r)];
                    for (std::int64_t k = 0; k < c; ++k) {
                      const auto i = r * c + k;
                      const float p = std::exp((*logp)[i]);
                      if (gp) g.grad_buffer(ip)[i] += s * p * (((*logp)[i] - (*logq)[i]) - kl);
                      if (gq) g.grad_buffer(iq)[i] += s * (std::exp((*logq)[i]) - p);
                    }
                  }
                },
                "kl_divergence");
}

Var embedding(Var table, std::span<const std::int32_t> ids) {
  const auto& tv = table.value();
  require_rank(tv, 2, "embedding");
  const auto v = tv.dim(0), d = tv.dim(1);
  validate_labels(ids, v);
  const auto n = static_cast<std::int64_t>(ids.size());
  Tensor out({n, d});
  for (std::int64_t r = 0; r < n; ++r)
    std::copy_n(tv.ptr() + ids[static_cast<std::size_t>(r)] * d, d, out.ptr() + r * d);
  std::vector<std::int32_t> idv(ids.begin(), ids.end());
  const int it = table.id;
  return finish(*table.graph, std::move(out), {table}, [it, idv = std::move(idv), d](Graph& g, const Tensor& go) {
    auto& gt = g.grad_buffer(it);
    for (std::size_t r = 0; r < idv.size(); ++r)
      for (std::int64_t k = 0; k < d; ++k) gt[idv[r] * d + k] += go[static_cast<std::int64_t>(r) * d + k];
  }, "embedding");
}

Var layer_norm(Var x, Var gamma, Var beta, float eps) {
  const auto& xv = x.value();
  require_rank(xv, 2, "layer_norm");
  const auto m = xv.dim(0), n = xv.dim(1);
  if (gamma.value().numel() != n || beta.value().numel() != n) throw ShapeError("layer_norm: affine size mismatch");
  auto xhat = std::make_shared<Tensor>(xv.shape());
  auto rstd = std::make_shared<std::vector<float>>(static_cast<std::size_t>(m));
  Tensor out(xv.shape());
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::int64_t r = 0; r < m; ++r) {
    double mu = 0.0, var = 0.0;
    for (std::int64_t c = 0; c < n; ++c) mu += xv[r * n + c];
    mu /= static_cast<double>(n);
    for (std::int64_t c = 0; c < n; ++c) {
      const double dlt = xv[r * n + c] - mu;
      var += dlt * dlt;
    }
    var /= static_cast<double>(n);
    const float rs = static_cast<float>(1.0 / std::sqrt(var + eps));
    (*rstd)[static_cast<std::size_t>(r)] = rs;
    for (std::int64_t c = 0; c < n; ++c) {
      const float h = static_cast<float>(xv[r * n + c] - mu) * rs;
      (*xhat)[r * n + c] = h;
      out[r * n + c] = h * gv[c] + bv[c];
    }
  }
  const int ix = x.id, ig = gamma.id, ib = beta.id;
  return finish(*x.graph, std::move(out), {x, gamma, beta},
                [ix, ig, ib, xhat, rstd, m, n](Graph& g, const Tensor& go) {
                  const auto& gv = g.value(ig);
                  if (g.requires_grad(ig) || g.requires_grad(ib)) {
                    for (std::int64_t r = 0; r < m; ++r)
                      for (std::int64_t c = 0; c < n; ++c) {
                        if (g.requires_grad(ig)) g.grad_buffer(ig)[c] += go[r * n + c] * (*xhat)[r * n + c];
                        if (g.requires_grad(ib)) g.grad_buffer(ib)[c] += go[r * n + c];
                      }
                  }
                  if (!g.requires_grad(ix)) return;
                  auto& gx = g.grad_buffer(ix);
                  for (std::int64_t r = 0; r < m; ++r) {
                    double m1 = 0.0, m2 = 0.0;
                    for (std::int64_t c = 0; c < n; ++c) {
                      const double dh = go[r * n + c] * gv[c];
                      m1 += dh;
                      m2 += dh * (*xhat)[r * n + c];
                    }
                    m1 /= static_cast<double>(n);
                    m2 /= static_cast<double>(n);
                    const float rs = (*rstd)[static_cast<std::size_t>(r)];
                    for (std::int64_t c = 0; c < n; ++c) {
                      const double dh = go[r * n + c] * gv[c];
                      gx[r * n + c] += static_cast<float>(rs * (dh - m1 - (*xhat)[r * n + c] * m2));
                    }
                  }
                },
                "layer_norm");
}

Var causal_attention(Var qkv, std::int64_t batch, std::int64_t seq, std::int64_t heads) {
  const auto& in = qkv.value();
  require_rank(in, 2, "causal_attention");
  if (in.dim(0) != batch * seq || in.dim(1) % 3 != 0) throw ShapeError("causal_attention: bad qkv shape " + shape_str(in.shape()));
  const auto dim = in.dim(1) / 3;
  if (heads <= 0 || dim % heads != 0) throw ShapeError("causal_attention: dim not divisible by heads");
  const auto hd = dim / heads;
  const auto stride = 3 * dim;
  const float sc = 1.0f / std::sqrt(static_cast<float>(hd));
  // probs[b][h][t][s]
  auto probs = std::make_shared<std::vector<float>>(static_cast<std::size_t>(batch * heads * seq * seq), 0.0f);
  Tensor out({batch * seq, dim});
  std::vector<float> row(static_cast<std::size_t>(seq));
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t h = 0; h < heads; ++h)
      for (std::int64_t t = 0; t < seq; ++t) {
        const float* q = in.ptr() + (b * seq + t) * stride + h * hd;
        float mx = -std::numeric_limits<float>::infinity();
        for (std::int64_t s = 0; s <= t; ++s) {
          const float* k = in.ptr() + (b * seq + s) * stride + dim + h * hd;
          float d = 0.0f;
          for (std::int64_t j = 0; j < hd; ++j) d += q[j] * k[j];
          row[static_cast<std::size_t>(s)] = d * sc;
          mx = std::max(mx, d * sc);
        }
        double z = 0.0;
        for (std::int64_t s = 0; s <= t; ++s) z += std::exp(static_cast<double>(row[static_cast<std::size_t>(s)] - mx));
        float* p = probs->data() + ((b * heads + h) * seq + t) * seq;
        float* o = out.ptr() + (b * seq + t) * dim + h * hd;
        for (std::int64_t s = 0; s <= t; ++s) {
          p[s] = static_cast<float>(std::exp(static_cast<double>(row[static_cast<std::size_t>(s)] - mx)) / z);
          const float* v = in.ptr() + (b * seq + s) * stride + 2 * dim + h * hd;
          for (std::int64_t j = 0; j < hd; ++j) o[j] += p[s] * v[j];
        }
      }
  const int iq = qkv.id;
  return finish(*qkv.graph, std::move(out), {qkv},
                [iq, probs, batch, seq, heads, dim, hd, stride, sc](Graph& g, const Tensor& go) {
                  const auto& in = g.value(iq);
                  auto& gi = g.grad_buffer(iq);
                  std::vector<float> da(static_cast<std::size_t>(seq));
                  for (std::int64_t b = 0; b < batch; ++b)
                    for (std::int64_t h = 0; h < heads; ++h)
                      for (std::int64_t t = 0; t < seq; ++t) {
                        const float* p = probs->data() + ((b * heads + h) * seq + t) * seq;
                        const float* dout = go.ptr() + (b * seq + t) * dim + h * hd;
                        double dot_pa = 0.0;
                        for (std::int64_t s = 0; s <= t; ++s) {
                          const float* v = in.ptr() + (b * seq + s) * stride + 2 * dim + h * hd;
                          float* dv = gi.ptr() + (b * seq + s) * stride + 2 * dim + h * hd;
                          float d = 0.0f;
                          for (std::int64_t j = 0; j < hd; ++j) {
                            d += dout[j] * v[j];
                            dv[j] += p[s] * dout[j];
                          }
                          da[static_cast<std::size_t>(s)] = d;
                          dot_pa += static_cast<double>(p[s]) * d;
                        }
                        const float* q = in.ptr() + (b * seq + t) * stride + h * hd;
                        float* dq = gi.ptr() + (b * seq + t) * stride + h * hd;
                        for (std::int64_t s = 0; s <= t; ++s) {
                          const float ds = p[s] * (da[static_cast<std::size_t>(s)] - static_cast<float>(dot_pa)) * sc;
                          const float* k = in.ptr() + (b * seq + s) * stride + dim + h * hd;
                          float* dk = gi.ptr() + (b * seq + s) * stride + dim + h * hd;
                          for (std::int64_t j = 0; j < hd; ++j) {
                            dq[j] += ds * k[j];
                            dk[j] += ds * q[j];
                          }
                        }
                      }
                },
                "causal_attention");
}

Var select_rows(Var x, std::span<const std::int64_t> rows) {
  const auto& xv = x.value();
  require_rank(xv, 2, "select_rows");
  Tensor out = xv.gather_rows(rows);
  std::vector<std::int64_t> rv(rows.begin(), rows.end());
  const auto c = xv.dim(1);
  const int ix = x.id;
  return finish(*x.graph, std::move(out), {x}, [ix, rv = std::move(rv), c](Graph& g, const Tensor& go) {
    auto& gx = g.grad_buffer(ix);
    for (std::size_t i = 0; i < rv.size(); ++i)
      for (std::int64_t k = 0; k < c; ++k) gx[rv[i] * c + k] += go[static_cast<std::int64_t>(i) * c + k];
  }, "select_rows");
}

Var conv2d(Var x, Var weight, Var bias, const ConvGeometry& geom) {
  const auto& xv = x.value();
  const auto& wv = weight.value();
  require_rank(xv, 2, "conv2d");
  const auto in_size = geom.in_channels * geom.height * geom.width;
  if (xv.dim(1) != in_size) throw ShapeError("conv2d: input row size " + std::to_string(xv.dim(1)) + " != " + std::to_string(in_size));
  const auto patch = geom.in_channels * geom.kernel * geom.kernel;
  if (wv.shape() != Shape{geom.out_channels, patch}) throw ShapeError("conv2d: weight shape " + shape_str(wv.shape()));
  if (bias.value().shape() != Shape{geom.out_channels}) throw ShapeError("conv2d: bias shape");
  const auto batch = xv.dim(0);
  const auto ho = geom.out_height(), wo = geom.out_width();
  const auto npos = ho * wo;
  if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: empty output");

  // Column buffer per example: [patch, npos].
  auto cols = std::make_shared<Tensor>(Shape{batch, patch * npos});
  for (std::int64_t b = 0; b < batch; ++b) {
    const float* img = xv.ptr() + b * in_size;
    float* col = cols->ptr() + b * patch * npos;
    for (std::int64_t ci = 0; ci < geom.in_channels; ++ci)
      for (std::int64_t ky = 0; ky < geom.kernel; ++ky)
        for (std::int64_t kx = 0; kx < geom.kernel; ++kx) {
          const auto prow = (ci * geom.kernel + ky) * geom.kernel + kx;
          for (std::int64_t oy = 0; oy < ho; ++oy)
            for (std::int64_t ox = 0; ox < wo; ++ox) {
              const auto iy = oy * geom.stride - geom.padding + ky;
              const auto ix = ox * geom.stride - geom.padding + kx;
              float v = 0.0f;
              if (iy >= 0 && iy < geom.height && ix >= 0 && ix < geom.width) v = img[(ci * geom.height + iy) * geom.width + ix];
              col[prow * npos + oy * wo + ox] = v;
            }
        }
  }
  Tensor out({batch, geom.out_channels * npos});
  const auto W = as_matrix(wv, geom.out_channels, patch);
  const auto& bv = bias.value();
  for (std::int64_t b = 0; b < batch; ++b) {
    MutMap o(out.ptr() + b * geom.out_channels * npos, geom.out_channels, npos);
    o.noalias() = W * ConstMap(cols->ptr() + b * patch * npos, patch, npos);
    for (std::int64_t co = 0; co < geom.out_channels; ++co) o.row(co).array() += bv[co];
  }
  const int ix = x.id, iw = weight.id, ib = bias.id;
  return finish(*x.graph, std::move(out), {x, weight, bias},
                [ix, iw, ib, cols, geom, batch, patch, npos, in_size, ho, wo](Graph& g, const Tensor& go) {
                  const auto co_n = geom.out_channels;
                  for (std::int64_t b = 0; b < batch; ++b) {
                    ConstMap G(go.ptr() + b * co_n * npos, co_n, npos);
                    ConstMap C(cols->ptr() + b * patch * npos, patch, npos);
                    if (g.requires_grad(iw)) as_matrix(g.grad_buffer(iw), co_n, patch).noalias() += G * C.transpose();
                    if (g.requires_grad(ib)) {
                      auto& gb = g.grad_buffer(ib);
                      for (std::int64_t co = 0; co < co_n; ++co) gb[co] += G.row(co).sum();
                    }
                    if (g.requires_grad(ix)) {
                      RowMat dcol = as_matrix(g.value(iw), co_n, patch).transpose() * G;
                      float* dimg = g.grad_buffer(ix).ptr() + b * in_size;
                      for (std::int64_t ci = 0; ci < geom.in_channels; ++ci)
                        for (std::int64_t ky = 0; ky < geom.kernel; ++ky)
                          for (std::int64_t kx = 0; kx < geom.kernel; ++kx) {
                            const auto prow = (ci * geom.kernel + ky) * geom.kernel + kx;
                            for (std::int64_t oy = 0; oy < ho; ++oy)
                              for (std::int64_t ox = 0; ox < wo; ++ox) {
                                const auto iy = oy * geom.stride - geom.padding + ky;
                                const auto ixx = ox * geom.stride - geom.padding + kx;
                                if (iy >= 0 && iy < geom.height && ixx >= 0 && ixx < geom.width)
                                  dimg[(ci * geom.height + iy) * geom.width + ixx] += dcol(prow, oy * wo + ox);
                              }
                          }
                    }
                  }
                },
                "conv2d");
}

Tensor log_softmax_rows(const Tensor& logits, float temperature) {
  require_rank(logits, 2, "log_softmax_rows");
  Tensor out(logits.shape());
  log_softmax_into(logits.ptr(), out.ptr(), logits.dim(0), logits.dim(1), temperature);
  return out;
}

std::vector<double> per_example_cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels) {
  const auto logp = log_softmax_rows(logits, 1.0f);
  const auto n = logits.dim(0), c = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n) throw ShapeError("per_example_cross_entropy: label count mismatch");
  validate_labels(labels, c);
  std::vector<double> out(static_cast<std::size_t>(n));
  for (std::int64_t r = 0; r < n; ++r) out[static_cast<std::size_t>(r)] = -logp[r * c + labels[static_cast<std::size_t>(r)]];
  return out;
}

std::vector<std::int32_t> argmax_rows(const Tensor& logits) {
  require_rank(logits, 2, "argmax_rows");
  const auto n = logits.dim(0), c = logits.dim(1);
  std::vector<std::int32_t> out(static_cast<std::size_t>(n));
  for (std::int64_t r = 0; r < n; ++r) {
    const float* row = logits.ptr() + r * c;
    out[static_cast<std::size_t>(r)] = static_cast<std::int32_t>(std::max_element(row, row + c) - row);
  }
  return out;
}

void validate_labels(std::span<const std::int32_t> labels, std::int64_t classes) {
  for (auto l : labels) {
    if (l < 0 || l >= classes) {
      throw ValidationError("label " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

}  // namespace gf
