#pragma once

// Double-precision re-implementation of the three model families, written
// independently of the tape engine and used as the finite-difference oracle.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "grokforget/model.hpp"

namespace ref {

using Vec = std::vector<double>;

struct Mat {
  std::int64_t r = 0, c = 0;
  Vec v;
  Mat() = default;
  Mat(std::int64_t rows, std::int64_t cols) : r(rows), c(cols), v(static_cast<std::size_t>(rows * cols), 0.0) {}
  double& operator()(std::int64_t i, std::int64_t j) { return v[static_cast<std::size_t>(i * c + j)]; }
  double operator()(std::int64_t i, std::int64_t j) const { return v[static_cast<std::size_t>(i * c + j)]; }
};

class Model {
 public:
  Model(const gf::zoo::ModelSpec& spec, std::vector<double> flat)
      : spec_(spec), layout_(gf::zoo::parameter_layout(spec)), w_(std::move(flat)) {}

  std::vector<double>& weights() { return w_; }

  // Mean cross-entropy of the classification output; relu_signs collects the
  // sign of every ReLU pre-activation so callers can detect kink crossings.
  double loss(const gf::Tensor& x, const std::vector<std::int32_t>& y, std::vector<bool>* relu_signs = nullptr) const {
    signs_ = relu_signs;
    if (signs_) signs_->clear();
    Mat logits;
    switch (spec_.family) {
      case gf::zoo::Family::mlp: logits = mlp(x); break;
      case gf::zoo::Family::cnn_lite: logits = cnn(x); break;
      case gf::zoo::Family::transformer_lite: logits = transformer(x); break;
    }
    double total = 0.0;
    for (std::int64_t i = 0; i < logits.r; ++i) {
      double mx = -1e300;
      for (std::int64_t j = 0; j < logits.c; ++j) mx = std::max(mx, logits(i, j));
      double z = 0.0;
      for (std::int64_t j = 0; j < logits.c; ++j) z += std::exp(logits(i, j) - mx);
      total += -(logits(i, y[static_cast<std::size_t>(i)]) - mx - std::log(z));
    }
    return total / static_cast<double>(logits.r);
  }

 private:
  Mat param(const std::string& name) const {
    const auto& e = layout_->find(name);
    Mat m(e.shape[0], e.shape.size() > 1 ? e.shape[1] : 1);
    for (std::int64_t i = 0; i < e.length; ++i) m.v[static_cast<std::size_t>(i)] = w_[static_cast<std::size_t>(e.offset + i)];
    return m;
  }

  Mat linear(const Mat& x, const std::string& prefix) const {
    const Mat w = param(prefix + ".weight");
    const Mat b = param(prefix + ".bias");
    Mat out(x.r, w.c);
    for (std::int64_t i = 0; i < x.r; ++i)
      for (std::int64_t j = 0; j < w.c; ++j) {
        double s = b.v[static_cast<std::size_t>(j)];
        for (std::int64_t k = 0; k < x.c; ++k) s += x(i, k) * w(k, j);
        out(i, j) = s;
      }
    return out;
  }

  Mat relu(Mat x) const {
    for (auto& v : x.v) {
      if (signs_) signs_->push_back(v > 0.0);
      v = v > 0.0 ? v : 0.0;
    }
    return x;
  }

  static Mat from_tensor(const gf::Tensor& t) {
    Mat m(t.dim(0), t.dim(1));
    for (std::int64_t i = 0; i < t.numel(); ++i) m.v[static_cast<std::size_t>(i)] = t[i];
    return m;
  }

  Mat mlp(const gf::Tensor& xt) const {
    Mat x = from_tensor(xt);
    const auto layers = spec_.layer_sizes.size() - 1;
    for (std::size_t i = 0; i < layers; ++i) {
      x = linear(x, "fc" + std::to_string(i));
      if (i + 1 < layers) x = relu(x);
    }
    return x;
  }

  Mat conv(const Mat& x, std::int64_t cin, std::int64_t h, std::int64_t w, std::int64_t cout, std::int64_t stride,
           const std::string& name, std::int64_t& ho, std::int64_t& wo) const {
    ho = (h + 2 - 3) / stride + 1;
    wo = (w + 2 - 3) / stride + 1;
    const Mat k = param(name + ".weight");
    const Mat b = param(name + ".bias");
    Mat out(x.r, cout * ho * wo);
    for (std::int64_t n = 0; n < x.r; ++n)
      for (std::int64_t co = 0; co < cout; ++co)
        for (std::int64_t oy = 0; oy < ho; ++oy)
          for (std::int64_t ox = 0; ox < wo; ++ox) {
            double s = b.v[static_cast<std::size_t>(co)];
            for (std::int64_t ci = 0; ci < cin; ++ci)
              for (std::int64_t ky = 0; ky < 3; ++ky)
                for (std::int64_t kx = 0; kx < 3; ++kx) {
                  const auto iy = oy * stride - 1 + ky, ix = ox * stride - 1 + kx;
                  if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                  s += k(co, (ci * 3 + ky) * 3 + kx) * x(n, (ci * h + iy) * w + ix);
                }
            out(n, (co * ho + oy) * wo + ox) = s;
          }
    return out;
  }

  Mat cnn(const gf::Tensor& xt) const {
    Mat x = from_tensor(xt);
    std::int64_t c = spec_.channels, h = spec_.height, w = spec_.width;
    for (int i = 0; i < 3; ++i) {
      std::int64_t ho = 0, wo = 0;
      const auto co = spec_.conv_channels[static_cast<std::size_t>(i)];
      x = relu(conv(x, c, h, w, co, i == 0 ? 1 : 2, "conv" + std::to_string(i), ho, wo));
      c = co;
      h = ho;
      w = wo;
    }
    x = relu(linear(x, "fc0"));
    return linear(x, "fc1");
  }

  Mat layer_norm(const Mat& x, const std::string& prefix) const {
    const Mat g = param(prefix + ".gamma");
    const Mat b = param(prefix + ".beta");
    Mat out(x.r, x.c);
    for (std::int64_t i = 0; i < x.r; ++i) {
      double mu = 0.0, var = 0.0;
      for (std::int64_t j = 0; j < x.c; ++j) mu += x(i, j);
      mu /= static_cast<double>(x.c);
      for (std::int64_t j = 0; j < x.c; ++j) var += (x(i, j) - mu) * (x(i, j) - mu);
      var /= static_cast<double>(x.c);
      for (std::int64_t j = 0; j < x.c; ++j)
        out(i, j) = (x(i, j) - mu) / std::sqrt(var + 1e-5) * g.v[static_cast<std::size_t>(j)] + b.v[static_cast<std::size_t>(j)];
    }
    return out;
  }

  Mat transformer(const gf::Tensor& xt) const {
    const auto batch = xt.dim(0), seq = xt.dim(1), d = spec_.embed_dim, heads = spec_.heads, hd = d / heads;
    const Mat tok = param("tok_emb");
    const Mat pos = param("pos_emb");
    Mat x(batch * seq, d);
    for (std::int64_t b = 0; b < batch; ++b)
      for (std::int64_t t = 0; t < seq; ++t) {
        const auto id = static_cast<std::int64_t>(xt.at(b, t));
        for (std::int64_t j = 0; j < d; ++j) x(b * seq + t, j) = tok(id, j) + pos(t, j);
      }
    for (std::int64_t blk = 0; blk < spec_.blocks; ++blk) {
      const auto pre = "block" + std::to_string(blk) + ".";
      const Mat qkv = linear(layer_norm(x, pre + "ln1"), pre + "attn.qkv");
      Mat att(batch * seq, d);
      for (std::int64_t b = 0; b < batch; ++b)
        for (std::int64_t h = 0; h < heads; ++h)
          for (std::int64_t t = 0; t < seq; ++t) {
            Vec sc(static_cast<std::size_t>(t + 1));
            double mx = -1e300;
            for (std::int64_t s = 0; s <= t; ++s) {
              double dot = 0.0;
              for (std::int64_t j = 0; j < hd; ++j) dot += qkv(b * seq + t, h * hd + j) * qkv(b * seq + s, d + h * hd + j);
              sc[static_cast<std::size_t>(s)] = dot / std::sqrt(static_cast<double>(hd));
              mx = std::max(mx, sc[static_cast<std::size_t>(s)]);
            }
            double z = 0.0;
            for (auto& v : sc) z += (v = std::exp(v - mx));
            for (std::int64_t s = 0; s <= t; ++s)
              for (std::int64_t j = 0; j < hd; ++j)
                att(b * seq + t, h * hd + j) += sc[static_cast<std::size_t>(s)] / z * qkv(b * seq + s, 2 * d + h * hd + j);
          }
      const Mat proj = linear(att, pre + "attn.proj");
      for (std::size_t i = 0; i < x.v.size(); ++i) x.v[i] += proj.v[i];
      Mat hmid = linear(layer_norm(x, pre + "ln2"), pre + "mlp.fc");
      for (auto& v : hmid.v) v = 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v)));
      const Mat out = linear(hmid, pre + "mlp.proj");
      for (std::size_t i = 0; i < x.v.size(); ++i) x.v[i] += out.v[i];
    }
    x = layer_norm(x, "ln_f");
    Mat last(batch, d);
    for (std::int64_t b = 0; b < batch; ++b)
      for (std::int64_t j = 0; j < d; ++j) last(b, j) = x(b * seq + seq - 1, j);
    return linear(last, "head");
  }

  gf::zoo::ModelSpec spec_;
  std::shared_ptr<const gf::IndexMap> layout_;
  std::vector<double> w_;
  mutable std::vector<bool>* signs_ = nullptr;
};

}  // namespace ref
