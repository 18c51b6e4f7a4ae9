#include "grokforget/modsim.hpp"

#include <cmath>
#include <fstream>

#include "grokforget/errors.hpp"

namespace gf::modsim {
namespace {

constexpr std::uint64_t kFrameStream = 0x6672616d65;
constexpr std::uint64_t kPairStream = 0x70616972;

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  const double c = dot(a, b) / std::sqrt(dot(a, a) * dot(b, b));
  return std::clamp(c, -1.0, 1.0);
}

struct Moments {
  double sum = 0.0;
  double sum_sq = 0.0;
  std::int64_t n = 0;

  void add(double v) {
    sum += v;
    sum_sq += v * v;
    ++n;
  }
  double mean() const { return sum / static_cast<double>(n); }
  double se() const {
    if (n < 2) return 0.0;
    const double m = mean();
    const double var = std::max(0.0, (sum_sq - static_cast<double>(n) * m * m) / static_cast<double>(n - 1));
    return std::sqrt(var / static_cast<double>(n));
  }
};

// Redraws until at least one module is active.
std::vector<double> nonzero_gradient(const ModularModelCfg& cfg, std::span<const std::vector<double>> frame, Rng& rng,
                                     std::int64_t& resampled) {
  for (;;) {
    std::vector<bool> active;
    auto g = sample_gradient(cfg, frame, rng, &active);
    for (bool a : active)
      if (a) return g;
    ++resampled;
  }
}

SimResult predictions(const ModularModelCfg& cfg) {
  SimResult r;
  const double s2d = cfg.sigma * cfg.sigma * static_cast<double>(cfg.d);
  r.predicted = cfg.p * cfg.rho;
  r.predicted_inner_product = cfg.p * cfg.p * cfg.rho * s2d;
  r.predicted_norm_sq = cfg.p * s2d;
  return r;
}

}  // namespace

void ModularModelCfg::validate() const {
  if (m < 1) throw ValidationError("module count must be >= 1");
  if (d < m || d % m != 0) throw ValidationError("d must be a positive multiple of m");
  if (!(p > 0.0 && p <= 1.0)) throw ValidationError("p must lie in (0, 1]");
  if (!(rho >= 0.0 && rho <= 1.0)) throw ValidationError("rho must lie in [0, 1]");
  if (!(sigma > 0.0)) throw ValidationError("sigma must be positive");
  if (rho < 1.0 && block() < 2) throw ValidationError("blocks of size 1 leave no room for an orthogonal noise direction");
}

nlohmann::json ModularModelCfg::to_json() const {
  return {{"m", m}, {"d", d}, {"p", p}, {"rho", rho}, {"sigma", sigma}, {"n_pairs", n_pairs}, {"seed", seed}};
}

ModularModelCfg ModularModelCfg::from_json(const nlohmann::json& j) {
  ModularModelCfg c;
  c.m = j.value("m", c.m);
  c.d = j.value("d", c.d);
  c.p = j.value("p", c.p);
  c.rho = j.value("rho", c.rho);
  c.sigma = j.value("sigma", c.sigma);
  c.n_pairs = j.value("n_pairs", c.n_pairs);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

nlohmann::json SimResult::to_json() const {
  return {{"empirical_corr_mean", empirical_corr_mean},
          {"standard_error", standard_error},
          {"predicted", predicted},
          {"inner_product_mean", inner_product_mean},
          {"inner_product_se", inner_product_se},
          {"predicted_inner_product", predicted_inner_product},
          {"norm_sq_mean", norm_sq_mean},
          {"norm_sq_se", norm_sq_se},
          {"predicted_norm_sq", predicted_norm_sq},
          {"resampled", resampled}};
}

std::vector<std::vector<double>> sample_module_frame(const ModularModelCfg& cfg, Rng& rng) {
  cfg.validate();
  const auto b = cfg.block();
  std::vector<std::vector<double>> frame;
  for (std::int64_t i = 0; i < cfg.m; ++i) {
    std::vector<double> u(static_cast<std::size_t>(cfg.d), 0.0);
    double norm = 0.0;
    while (norm < 1e-12) {
      norm = 0.0;
      for (std::int64_t k = 0; k < b; ++k) {
        const double v = rng.normal();
        u[static_cast<std::size_t>(i * b + k)] = v;
        norm += v * v;
      }
    }
    norm = std::sqrt(norm);
    for (std::int64_t k = 0; k < b; ++k) u[static_cast<std::size_t>(i * b + k)] /= norm;
    frame.push_back(std::move(u));
  }
  return frame;
}

std::vector<double> sample_gradient(const ModularModelCfg& cfg, std::span<const std::vector<double>> frame, Rng& rng,
                                    std::vector<bool>* active_out) {
  cfg.validate();
  if (static_cast<std::int64_t>(frame.size()) != cfg.m) throw ValidationError("frame does not match module count");
  const auto b = cfg.block();
  const double scale = std::sqrt(cfg.sigma * cfg.sigma * static_cast<double>(cfg.d) / static_cast<double>(cfg.m));
  const double a = std::sqrt(cfg.rho);
  const double c = std::sqrt(1.0 - cfg.rho);
  std::vector<double> g(static_cast<std::size_t>(cfg.d), 0.0);
  std::vector<double> eps(static_cast<std::size_t>(b));
  if (active_out) active_out->assign(static_cast<std::size_t>(cfg.m), false);
  for (std::int64_t i = 0; i < cfg.m; ++i) {
    if (rng.uniform() >= cfg.p) continue;
    if (active_out) (*active_out)[static_cast<std::size_t>(i)] = true;
    const double* u = frame[static_cast<std::size_t>(i)].data() + i * b;
    double* out = g.data() + i * b;
    if (cfg.rho >= 1.0) {
      for (std::int64_t k = 0; k < b; ++k) out[k] = scale * u[k];
      continue;
    }
    double norm = 0.0;
    while (norm < 1e-12) {
      for (auto& e : eps) e = rng.normal();
      double proj = 0.0;
      for (std::int64_t k = 0; k < b; ++k) proj += eps[static_cast<std::size_t>(k)] * u[k];
      for (std::int64_t k = 0; k < b; ++k) eps[static_cast<std::size_t>(k)] -= proj * u[k];
      norm = 0.0;
      for (double e : eps) norm += e * e;
      norm = std::sqrt(norm);
    }
    for (std::int64_t k = 0; k < b; ++k) out[k] = scale * (a * u[k] + c * eps[static_cast<std::size_t>(k)] / norm);
  }
  return g;
}

GradVector to_grad_vector(std::span<const double> g) {
  return GradVector(std::vector<float>(g.begin(), g.end()));
}

SimResult estimate_correlation(const ModularModelCfg& cfg) {
  cfg.validate();
  if (cfg.n_pairs < 100) throw ValidationError("n_pairs must be >= 100");
  Rng frame_rng(cfg.seed, kFrameStream);
  const auto frame = sample_module_frame(cfg, frame_rng);
  Moments corr, inner, norm_sq;
  SimResult r = predictions(cfg);
  for (std::int64_t k = 0; k < cfg.n_pairs; ++k) {
    Rng rng(cfg.seed, hash_combine(kPairStream, static_cast<std::uint64_t>(k)));
    const auto g1 = nonzero_gradient(cfg, frame, rng, r.resampled);
    const auto g2 = nonzero_gradient(cfg, frame, rng, r.resampled);
    corr.add(cosine(g1, g2));
    inner.add(dot(g1, g2));
    norm_sq.add(dot(g1, g1));
    norm_sq.add(dot(g2, g2));
  }
  r.empirical_corr_mean = corr.mean();
  r.standard_error = corr.se();
  r.inner_product_mean = inner.mean();
  r.inner_product_se = inner.se();
  r.norm_sq_mean = norm_sq.mean();
  r.norm_sq_se = norm_sq.se();
  return r;
}

SimResult aggregate_correlation(const ModularModelCfg& cfg, std::int64_t forget_size, std::int64_t retain_size) {
  cfg.validate();
  if (forget_size < 1 || retain_size < 1) throw ValidationError("set sizes must be >= 1");
  Rng frame_rng(cfg.seed, kFrameStream);
  const auto frame = sample_module_frame(cfg, frame_rng);
  Moments corr, inner, norm_sq;
  SimResult r = predictions(cfg);
  auto mean_of = [&](std::int64_t n, Rng& rng) {
    std::vector<double> acc(static_cast<std::size_t>(cfg.d), 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
      const auto g = nonzero_gradient(cfg, frame, rng, r.resampled);
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += g[k];
    }
    for (auto& v : acc) v /= static_cast<double>(n);
    return acc;
  };
  for (std::int64_t k = 0; k < cfg.n_pairs; ++k) {
    Rng rng(cfg.seed, hash_combine(kPairStream, static_cast<std::uint64_t>(k)));
    const auto f = mean_of(forget_size, rng);
    const auto t = mean_of(retain_size, rng);
    corr.add(cosine(f, t));
    inner.add(dot(f, t));
    norm_sq.add(dot(f, f));
    norm_sq.add(dot(t, t));
  }
  r.empirical_corr_mean = corr.mean();
  r.standard_error = corr.se();
  r.inner_product_mean = inner.mean();
  r.inner_product_se = inner.se();
  r.norm_sq_mean = norm_sq.mean();
  r.norm_sq_se = norm_sq.se();
  return r;
}

std::vector<SweepRow> sweep(const ModularModelCfg& base, std::span<const double> ps, std::span<const double> rhos) {
  std::vector<SweepRow> rows;
  for (double p : ps)
    for (double rho : rhos) {
      ModularModelCfg c = base;
      c.p = p;
      c.rho = rho;
      rows.push_back({c, estimate_correlation(c)});
    }
  return rows;
}

void write_sweep_csv(std::span<const SweepRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "m,d,p,rho,n_pairs,empirical,predicted,stderr\n";
  out.precision(10);
  for (const auto& r : rows)
    out << r.cfg.m << ',' << r.cfg.d << ',' << r.cfg.p << ',' << r.cfg.rho << ',' << r.cfg.n_pairs << ','
        << r.result.empirical_corr_mean << ',' << r.result.predicted << ',' << r.result.standard_error << '\n';
}

}  // namespace gf::modsim
