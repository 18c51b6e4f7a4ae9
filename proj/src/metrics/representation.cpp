#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "grokforget/errors.hpp"
#include "grokforget/metrics.hpp"
#include "grokforget/objective.hpp"
#include "grokforget/rng.hpp"

namespace gf::metrics {
namespace {

constexpr std::int64_t kGradChunk = 2048;

using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

MatD to_centered(const Tensor& t) {
  if (t.rank() != 2) throw ShapeError("representation matrix must be 2-D");
  MatD m(t.dim(0), t.dim(1));
  for (std::int64_t r = 0; r < t.dim(0); ++r)
    for (std::int64_t c = 0; c < t.dim(1); ++c) m(r, c) = t.at(r, c);
  m.rowwise() -= m.colwise().mean();
  return m;
}

}  // namespace

GradVector mean_gradient(const zoo::ModelSpec& spec, const zoo::Params& params, const data::Dataset& ds,
                         std::span<const std::int64_t> rows) {
  if (rows.empty()) throw ValidationError("mean gradient over an empty set");
  const auto n = static_cast<std::int64_t>(rows.size());
  std::vector<double> acc(static_cast<std::size_t>(params.total_count()), 0.0);
  for (std::int64_t start = 0; start < n; start += kGradChunk) {
    const auto len = std::min(kGradChunk, n - start);
    const auto g = loss_and_grad(spec, params, ds, rows.subspan(static_cast<std::size_t>(start), static_cast<std::size_t>(len)));
    const double w = static_cast<double>(len) / static_cast<double>(n);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * g.grad.values[i];
  }
  return GradVector(params.layout_ptr(), std::vector<float>(acc.begin(), acc.end()));
}

CosineResult grad_correlation(const zoo::ModelSpec& spec, const zoo::Params& params, const data::Dataset& train,
                              const data::DataSplit& split) {
  if (split.forget_ids.empty() || split.retain_ids.empty()) throw ValidationError("gradient correlation needs both sets");
  const auto gf_ = mean_gradient(spec, params, train, train.rows_of(split.forget_ids));
  const auto gr = mean_gradient(spec, params, train, train.rows_of(split.retain_ids));
  return cosine_similarity(gf_, gr);
}

double cka(const Tensor& x, const Tensor& y) {
  const MatD a = to_centered(x);
  const MatD b = to_centered(y);
  if (a.rows() != b.rows()) throw ShapeError("CKA needs equal row counts");
  const double xx = (a.transpose() * a).norm();
  const double yy = (b.transpose() * b).norm();
  if (xx == 0.0 || yy == 0.0) throw DegenerateInputError("CKA of a zero-variance matrix");
  const double yx = (b.transpose() * a).squaredNorm();
  return yx / (xx * yy);
}

double representation_cka(const zoo::ModelSpec& spec, const zoo::Params& params, const data::Dataset& train,
                          const data::DataSplit& split, const CkaPairing& pairing) {
  const auto nf = static_cast<std::int64_t>(split.forget_ids.size());
  const auto nr = static_cast<std::int64_t>(split.retain_ids.size());
  if (nf == 0 || nr == 0) throw ValidationError("CKA needs both sets");
  const auto n = std::min({nf, nr, pairing.max_rows});
  Rng rng(pairing.seed, 0x636b61);
  auto pick = [&](const std::vector<std::int64_t>& ids) {
    std::vector<std::int64_t> chosen;
    for (auto i : rng.sample_without_replacement(static_cast<std::int64_t>(ids.size()), n))
      chosen.push_back(ids[static_cast<std::size_t>(i)]);
    return train.inputs.gather_rows(train.rows_of(chosen));
  };
  const Tensor xf = pick(split.forget_ids);
  const Tensor xr = pick(split.retain_ids);
  return cka(zoo::penultimate_activations(spec, params, xf), zoo::penultimate_activations(spec, params, xr));
}

std::vector<std::vector<double>> random_orthonormal_frame(std::int64_t dim, std::int64_t count, std::uint64_t seed) {
  if (count < 1 || count > dim) throw ValidationError("frame size must be in [1, input dim]");
  Rng rng(seed, 0x6c63);
  std::vector<std::vector<double>> frame;
  while (static_cast<std::int64_t>(frame.size()) < count) {
    std::vector<double> v(static_cast<std::size_t>(dim));
    for (auto& e : v) e = rng.normal();
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& q : frame) {
        double d = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) d += v[i] * q[i];
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= d * q[i];
      }
    double norm = 0.0;
    for (double e : v) norm += e * e;
    norm = std::sqrt(norm);
    if (norm < 1e-8) continue;
    for (auto& e : v) e /= norm;
    frame.push_back(std::move(v));
  }
  return frame;
}

std::vector<double> local_complexity_per_point(const zoo::ModelSpec& spec, const zoo::Params& params,
                                               const Tensor& points, double radius,
                                               std::span<const std::vector<double>> frame) {
  if (!spec.uses_relu()) throw UnsupportedFamilyError("local complexity needs a ReLU family");
  if (!(radius > 0.0)) throw ValidationError("local complexity radius must be positive");
  if (frame.empty()) throw ValidationError("local complexity frame must be nonempty");
  const auto n = points.rows();
  const auto d = points.cols();
  const auto p = static_cast<std::int64_t>(frame.size());
  const auto per_point = 2 * p + 1;
  const std::int64_t batch = std::max<std::int64_t>(1, 4096 / per_point);
  std::vector<double> out(static_cast<std::size_t>(n), 0.0);
  for (std::int64_t start = 0; start < n; start += batch) {
    const auto len = std::min(batch, n - start);
    Tensor stacked({len * per_point, d});
    for (std::int64_t i = 0; i < len; ++i) {
      const float* x = points.ptr() + (start + i) * d;
      for (std::int64_t v = 0; v < per_point; ++v) {
        float* row = stacked.ptr() + (i * per_point + v) * d;
        const double sign = v == 0 ? 0.0 : (v % 2 == 1 ? 1.0 : -1.0);
        const auto* dir = v == 0 ? nullptr : &frame[static_cast<std::size_t>((v - 1) / 2)];
        for (std::int64_t c = 0; c < d; ++c)
          row[c] = dir ? static_cast<float>(x[c] + sign * radius * (*dir)[static_cast<std::size_t>(c)]) : x[c];
      }
    }
    const Tensor z = zoo::relu_preactivations(spec, params, stacked);
    const auto units = z.cols();
    for (std::int64_t i = 0; i < len; ++i) {
      const float* center = z.ptr() + (i * per_point) * units;
      std::int64_t count = 0;
      for (std::int64_t u = 0; u < units; ++u) {
        const bool s0 = center[u] > 0.0f;
        for (std::int64_t v = 1; v < per_point; ++v) {
          if ((z.ptr()[(i * per_point + v) * units + u] > 0.0f) != s0) {
            ++count;
            break;
          }
        }
      }
      out[static_cast<std::size_t>(start + i)] = static_cast<double>(count);
    }
  }
  return out;
}

namespace {

double mean_row_norm(const Tensor& points) {
  const auto d = points.cols();
  double total = 0.0;
  for (std::int64_t r = 0; r < points.rows(); ++r) {
    double s = 0.0;
    for (std::int64_t c = 0; c < d; ++c) s += static_cast<double>(points[r * d + c]) * points[r * d + c];
    total += std::sqrt(s);
  }
  return total / static_cast<double>(points.rows());
}

Tensor limit_points(const Tensor& points, std::int64_t max_points, std::uint64_t seed) {
  if (max_points <= 0 || points.rows() <= max_points) return points;
  Rng rng(seed, 0x6c7070);
  auto rows = rng.sample_without_replacement(points.rows(), max_points);
  std::sort(rows.begin(), rows.end());
  return points.gather_rows(rows);
}

}  // namespace

double local_complexity(const zoo::ModelSpec& spec, const zoo::Params& params, const Tensor& points,
                        const LocalComplexityConfig& cfg) {
  if (!spec.uses_relu()) throw UnsupportedFamilyError("local complexity needs a ReLU family");
  if (points.rows() == 0 || points.rank() != 2) throw ValidationError("local complexity needs a nonempty point set");
  const Tensor pts = limit_points(points, cfg.max_points, cfg.seed);
  const double r = cfg.radius ? *cfg.radius : 0.05 * mean_row_norm(pts);
  const auto p = cfg.frame_size ? *cfg.frame_size : std::min<std::int64_t>(pts.cols(), 32);
  const auto frame = random_orthonormal_frame(pts.cols(), p, cfg.seed);
  const auto lc = local_complexity_per_point(spec, params, pts, r, frame);
  double s = 0.0;
  for (double v : lc) s += v;
  return s / static_cast<double>(lc.size());
}

LocalComplexityReport local_complexity_by_split(const zoo::ModelSpec& spec, const zoo::Params& params,
                                                const data::Dataset& train, const data::Dataset& test,
                                                const data::DataSplit& split, const LocalComplexityConfig& cfg) {
  auto points = [](const data::Dataset& ds, const std::vector<std::int64_t>& ids) {
    return ds.inputs.gather_rows(ds.rows_of(ids));
  };
  LocalComplexityReport r;
  r.retain = local_complexity(spec, params, points(train, split.retain_ids), cfg);
  r.test = local_complexity(spec, params, points(test, split.test_ids), cfg);
  r.forget = local_complexity(spec, params, points(train, split.forget_ids), cfg);
  return r;
}

}  // namespace gf::metrics
