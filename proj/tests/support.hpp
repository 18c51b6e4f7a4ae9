#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "grokforget/data.hpp"
#include "grokforget/model.hpp"
#include "grokforget/objective.hpp"
#include "grokforget/rng.hpp"
#include "reference_model.hpp"

namespace support {

inline gf::zoo::ModelSpec small_mlp() {
  gf::zoo::ModelSpec s;
  s.family = gf::zoo::Family::mlp;
  s.layer_sizes = {6, 10, 8, 4};
  return s;
}

inline gf::zoo::ModelSpec small_cnn() {
  gf::zoo::ModelSpec s;
  s.family = gf::zoo::Family::cnn_lite;
  s.channels = 2;
  s.height = 6;
  s.width = 6;
  s.conv_channels = {3, 4, 4};
  s.hidden = 8;
  s.classes = 3;
  return s;
}

inline gf::zoo::ModelSpec small_transformer() {
  gf::zoo::ModelSpec s;
  s.family = gf::zoo::Family::transformer_lite;
  s.vocab_size = 7;
  s.seq_len = 5;
  s.embed_dim = 8;
  s.heads = 2;
  s.blocks = 2;
  return s;
}

// Classification dataset around the given rows and labels.
inline gf::data::Dataset classification(gf::Tensor x, gf::Labels y, std::int64_t classes, bool tokens = false) {
  gf::data::Dataset d;
  d.inputs = std::move(x);
  d.labels = std::move(y);
  d.num_classes = classes;
  d.token_input = tokens;
  d.input_min = -1e6f;
  d.input_max = 1e6f;
  return d;
}

inline gf::data::Dataset random_inputs(const gf::zoo::ModelSpec& spec, std::int64_t n, gf::Rng& rng) {
  const auto w = spec.input_width();
  gf::Tensor x({n, w});
  const bool tokens = spec.family == gf::zoo::Family::transformer_lite;
  for (std::int64_t i = 0; i < x.numel(); ++i)
    x[i] = tokens ? static_cast<float>(rng.below(static_cast<std::uint64_t>(spec.vocab_size)))
                  : static_cast<float>(spec.family == gf::zoo::Family::cnn_lite ? rng.uniform() : rng.uniform(-1, 1));
  gf::Labels y(static_cast<std::size_t>(n));
  for (auto& v : y) v = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(spec.num_classes())));
  return classification(std::move(x), std::move(y), spec.num_classes(), tokens);
}

struct GradCheck {
  double max_rel_err = 0.0;
  std::int64_t checked = 0;
  std::int64_t kink_skipped = 0;
  std::int64_t below_floor = 0;  // both gradients under kGradFloor
  double max_loss_gap = 0.0;     // |reference loss - engine loss|
};

// Gradients this small are float32 rounding residue at the loss scales used
// here (for example key biases, whose true gradient is exactly zero).
inline constexpr double kGradFloor = 1e-6;

// Analytic gradients from the engine against central differences of the
// double-precision reference, on `coords` random coordinates for each of
// `draws` random input batches. Coordinates whose +-h perturbation flips a
// ReLU sign are non-differentiable there and are counted, not compared.
inline GradCheck gradcheck(gf::zoo::ModelSpec spec, std::uint64_t seed, std::int64_t coords = 100,
                           std::int64_t draws = 3, double h = 1e-3, std::int64_t batch = 2) {
  GradCheck out;
  gf::Rng rng(seed, 11);
  for (std::int64_t d = 0; d < draws; ++d) {
    spec.seed = seed + static_cast<std::uint64_t>(d);
    const auto params = gf::zoo::build_model(spec, gf::Rng(spec.seed, 1));
    const auto ds = random_inputs(spec, batch, rng);
    const auto rows = gf::all_rows(ds);
    const auto lg = gf::loss_and_grad(spec, params, ds, rows);
    ref::Model m(spec, std::vector<double>(params.flat().begin(), params.flat().end()));
    out.max_loss_gap = std::max(out.max_loss_gap, std::abs(m.loss(ds.inputs, ds.labels) - lg.loss));
    const auto n = params.total_count();
    for (std::int64_t k = 0; k < coords; ++k) {
      const auto i = static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(n)));
      const double w0 = m.weights()[i];
      std::vector<bool> s_plus, s_minus;
      m.weights()[i] = w0 + h;
      const double lp = m.loss(ds.inputs, ds.labels, &s_plus);
      m.weights()[i] = w0 - h;
      const double lm = m.loss(ds.inputs, ds.labels, &s_minus);
      m.weights()[i] = w0;
      if (s_plus != s_minus) {
        ++out.kink_skipped;
        continue;
      }
      const double numeric = (lp - lm) / (2.0 * h);
      const double analytic = lg.grad.values[i];
      const double scale = std::max(std::abs(numeric), std::abs(analytic));
      if (scale <= kGradFloor) {
        ++out.below_floor;
        continue;
      }
      out.max_rel_err = std::max(out.max_rel_err, std::abs(numeric - analytic) / scale);
      ++out.checked;
    }
  }
  return out;
}

}  // namespace support
