#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "grokforget/errors.hpp"
#include "grokforget/modsim.hpp"

using namespace gf;
using namespace gf::modsim;

namespace {

ModularModelCfg small(double p, double rho) {
  ModularModelCfg c;
  c.m = 8;
  c.d = 128;
  c.p = p;
  c.rho = rho;
  c.n_pairs = 400;
  c.seed = 3;
  return c;
}

double block_dot(const std::vector<double>& a, const std::vector<double>& b, std::int64_t i, std::int64_t bs) {
  double s = 0.0;
  for (std::int64_t k = i * bs; k < (i + 1) * bs; ++k) s += a[static_cast<std::size_t>(k)] * b[static_cast<std::size_t>(k)];
  return s;
}

}  // namespace

TEST_CASE("module frame is unit norm and block supported") {
  auto c = small(0.5, 0.9);
  Rng rng(1);
  const auto frame = sample_module_frame(c, rng);
  REQUIRE(frame.size() == 8);
  for (std::int64_t i = 0; i < 8; ++i) {
    const auto& u = frame[static_cast<std::size_t>(i)];
    CHECK(block_dot(u, u, i, 16) == doctest::Approx(1.0).epsilon(1e-6));
    for (std::int64_t k = 0; k < 128; ++k)
      if (k / 16 != i) CHECK(u[static_cast<std::size_t>(k)] == 0.0);
  }
  c.m = 1;
  Rng rng1(1);
  const auto one = sample_module_frame(c, rng1);
  REQUIRE(one.size() == 1);
  CHECK(block_dot(one[0], one[0], 0, 128) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("without noise every active block is the scaled frame vector") {
  auto c = small(0.5, 1.0);
  c.sigma = 1.5;
  Rng fr(2);
  const auto frame = sample_module_frame(c, fr);
  Rng rng(3);
  std::vector<bool> active;
  const auto g = sample_gradient(c, frame, rng, &active);
  const double scale = std::sqrt(1.5 * 1.5 * 128.0 / 8.0);
  for (std::int64_t i = 0; i < 8; ++i)
    for (std::int64_t k = i * 16; k < (i + 1) * 16; ++k) {
      const double expect = active[static_cast<std::size_t>(i)] ? scale * frame[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] : 0.0;
      CHECK(g[static_cast<std::size_t>(k)] == expect);
    }
}

TEST_CASE("active block norms are exact and inner products match in expectation") {
  auto c = small(1.0, 0.6);
  Rng fr(2);
  const auto frame = sample_module_frame(c, fr);
  Rng rng(4);
  const auto g = sample_gradient(c, frame, rng);
  for (std::int64_t i = 0; i < 8; ++i) CHECK(block_dot(g, g, i, 16) == doctest::Approx(128.0 / 8.0).epsilon(1e-5));

  // Shared module 0: expected block inner product rho * sigma^2 * d / m.
  const int draws = 10000;
  double sum = 0.0, sum_sq = 0.0;
  for (int t = 0; t < draws; ++t) {
    const auto a = sample_gradient(c, frame, rng);
    const auto b = sample_gradient(c, frame, rng);
    const double v = block_dot(a, b, 0, 16);
    sum += v;
    sum_sq += v * v;
  }
  const double mean = sum / draws;
  const double se = std::sqrt((sum_sq / draws - mean * mean) / draws);
  CHECK(std::abs(mean - 0.6 * 16.0) <= 3.0 * se);
}

TEST_CASE("identical directions give correlation one") {
  auto c = small(1.0, 1.0);
  c.n_pairs = 100;
  const auto r = estimate_correlation(c);
  CHECK(r.empirical_corr_mean == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.predicted == 1.0);
  CHECK(aggregate_correlation(c, 5, 7).empirical_corr_mean == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("predictions at the inferred operating point") {
  const auto r = estimate_correlation(small(0.5, 0.9));
  CHECK(r.predicted == doctest::Approx(0.45));
  CHECK(r.predicted_inner_product == doctest::Approx(0.25 * 0.9 * 128));
  CHECK(r.predicted_norm_sq == doctest::Approx(0.5 * 128));
}

TEST_CASE("aggregate correlation with singleton sets is the pairwise estimate") {
  const auto c = small(0.5, 0.9);
  const auto a = estimate_correlation(c);
  const auto b = aggregate_correlation(c, 1, 1);
  CHECK(a.empirical_corr_mean == b.empirical_corr_mean);
  CHECK(a.standard_error == b.standard_error);
}

TEST_CASE("larger sets concentrate the aggregate estimate") {
  auto c = small(0.5, 0.9);
  c.n_pairs = 100;
  const auto pair = aggregate_correlation(c, 1, 1);
  const auto big = aggregate_correlation(c, 50, 50);
  CHECK(big.standard_error < pair.standard_error);
}

TEST_CASE("estimation is reproducible and seed dependent") {
  const auto c = small(0.5, 0.5);
  CHECK(estimate_correlation(c).empirical_corr_mean == estimate_correlation(c).empirical_corr_mean);
  auto d = c;
  d.seed = 4;
  CHECK(estimate_correlation(d).empirical_corr_mean != estimate_correlation(c).empirical_corr_mean);
}

TEST_CASE("config validation") {
  auto c = small(0.5, 0.5);
  c.d = 100;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = small(0.0, 0.5);
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = small(0.5, 1.2);
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = small(0.5, 0.5);
  c.d = 8;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = small(0.5, 0.5);
  c.n_pairs = 10;
  CHECK_THROWS_AS(estimate_correlation(c), ValidationError);
  CHECK(ModularModelCfg::from_json(small(0.3, 0.7).to_json()).to_json() == small(0.3, 0.7).to_json());
}

TEST_CASE("sweep csv layout") {
  const std::vector<double> ps{0.5, 1.0}, rhos{0.9};
  auto c = small(0.5, 0.9);
  c.n_pairs = 100;
  const auto rows = sweep(c, ps, rhos);
  REQUIRE(rows.size() == 2);
  const auto path = std::filesystem::temp_directory_path() / "gf_sweep.csv";
  write_sweep_csv(rows, path);
  std::ifstream in(path);
  std::string header, line;
  std::getline(in, header);
  CHECK(header == "m,d,p,rho,n_pairs,empirical,predicted,stderr");
  int n = 0;
  while (std::getline(in, line)) n += !line.empty();
  CHECK(n == 2);
  std::filesystem::remove(path);
}
