#include "vrs/estimators.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace vrs;

namespace {

Eigen::MatrixXd
uniform_points(Eigen::Index n, int d, std::uint64_t seed, double lo = 0.0, double hi = 1.0)
{
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::MatrixXd z(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      z(i, j) = u(rng);
  return z;
}

// Points with density proportional to 1 + 0.5 q1(x) q1(y) on [0,1]^2, by rejection.
Eigen::MatrixXd
tilted_points(Eigen::Index n, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd z(n, 2);
  for (Eigen::Index i = 0; i < n;) {
    const double x = u(rng), y = u(rng);
    const double p = 1 + 1.5 * (2 * x - 1) * (2 * y - 1);
    if (u(rng) * 2.5 < p) {
      z(i, 0) = x;
      z(i, 1) = y;
      ++i;
    }
  }
  return z;
}

// Expands an estimate back to its m^d coefficient tensor over the family.
DenseTensor
expand(const VrsEstimate& est)
{
  const int d = est.mode_count();
  std::vector<int> shape;
  for (const auto& f : est.factors())
    shape.push_back(f.m());
  DenseTensor out(shape);
  std::vector<int> mu(d), rho(d);
  for (std::size_t a = 0; a < out.data.size(); ++a) {
    std::size_t rem = a;
    for (int j = d - 1; j >= 0; --j) {
      mu[j] = static_cast<int>(rem % shape[j]);
      rem /= shape[j];
    }
    double s = 0.0;
    for (std::size_t b = 0; b < est.core().data.size(); ++b) {
      std::size_t r = b;
      double p = est.core().data[b];
      for (int j = d - 1; j >= 0; --j) {
        rho[j] = static_cast<int>(r % est.core().shape[j]);
        r /= est.core().shape[j];
        p *= est.factors()[j].coeffs(mu[j], rho[j]);
      }
      s += p;
    }
    out.data[a] = s;
  }
  return out;
}

double
max_diff(const DenseTensor& a, const DenseTensor& b)
{
  REQUIRE(a.shape == b.shape);
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

VrsConfig
fixed(int m, int l, std::vector<int> ranks)
{
  VrsConfig c;
  c.m = m;
  c.l = l;
  c.ranks = FixedRanks{ std::move(ranks) };
  return c;
}

} // namespace

TEST_CASE("select_rank examples")
{
  const double a[] = { 10, 5, 0.1, 0.05 };
  CHECK(select_rank(a, 3, 1e-12) == 2);
  const double b[] = { 1, 1, 1, 1e-15 };
  CHECK(select_rank(b, 3, 1e-12) == 3);
  CHECK(select_rank(b, 10, 1e-12) == 3);
  const double c[] = { 7, 3.5 };
  CHECK(select_rank(c, 1, 1e-12) == 1);
  // ties go to the smaller index
  const double t[] = { 8, 4, 2, 1 };
  CHECK(select_rank(t, 3, 1e-12) == 1);
  // all values at or below the floor still give rank 1
  const double z[] = { 0, 0, 0 };
  CHECK(select_rank(z, 2, 0.0) == 1);
  const double one[] = { 1 };
  CHECK_THROWS_AS(select_rank(one, 1, 0.0), EstimateError);
}

TEST_CASE("density floor")
{
  CHECK(density_floor(std::exp(4.0)) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(density_floor(3.0) < 1.0);
  CHECK_THROWS_AS(density_floor(1.0), EstimateError);
}

TEST_CASE("exact two-variable fixture is reconstructed")
{
  // p = 1 + 0.5 q1(z1) q1(z2)
  DenseTensor c({ 4, 4 });
  c.data[0] = 1.0;
  c.data[1 * 4 + 1] = 0.5;
  const auto est = fit(CoefficientFunctional(c), fixed(4, 4, { 2, 2 }));
  CHECK(est.ranks() == std::vector<int>{ 2, 2 });
  CHECK(max_diff(expand(est), c) < 1e-10);

  const double z[] = { 0.2, 0.9 };
  const double truth = 1 + 0.5 * 3 * (2 * 0.2 - 1) * (2 * 0.9 - 1);
  CHECK(est(z) == doctest::Approx(truth).epsilon(1e-12));

  // adaptive selection finds the rank as well
  VrsConfig adaptive;
  adaptive.m = adaptive.l = 4;
  CHECK(fit(CoefficientFunctional(c), adaptive).ranks() == std::vector<int>{ 2, 2 });
}

TEST_CASE("m = l = 1 on uniform samples gives the constant one")
{
  const SampleFunctional f(uniform_points(2000, 2, 1));
  const auto est = fit(f, fixed(1, 1, { 1, 1 }));
  const auto vals = est.evaluate(uniform_points(50, 2, 2));
  for (Eigen::Index i = 0; i < vals.size(); ++i)
    CHECK(vals[i] == 1.0);
}

TEST_CASE("full ranks reproduce the plain projection estimator")
{
  const Eigen::Index n = 1000;
  const auto z = uniform_points(n, 3, 33);
  const auto leg = BasisFamily::legendre();
  const int m = 3;
  const auto est = fit(SampleFunctional(z), fixed(m, m, { m, m, m }));

  DenseTensor naive({ m, m, m });
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b)
      for (int c = 0; c < m; ++c) {
        double s = 0.0;
        for (Eigen::Index i = 0; i < n; ++i)
          s += leg.eval(a, z(i, 0)) * leg.eval(b, z(i, 1)) * leg.eval(c, z(i, 2));
        naive.data[(a * m + b) * m + c] = s / n;
      }
  CHECK(max_diff(expand(est), naive) < 1e-10);
  CHECK(max_diff(projection_coefficients(SampleFunctional(z), leg, m), naive) < 1e-12);
}

TEST_CASE("L2 norm is the core norm")
{
  const auto z = tilted_points(5000, 4);
  VrsConfig cfg;
  cfg.m = 6;
  cfg.l = 3;
  const auto est = fit(SampleFunctional(z), cfg);
  CHECK(std::abs(est.l2_norm() - est.core().frobenius_norm()) <= 1e-12);

  // against a 64-node tensor quadrature
  const auto rule = gauss_legendre_rule(64);
  Eigen::MatrixXd grid(64 * 64, 2);
  Eigen::VectorXd w(64 * 64);
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j) {
      grid(i * 64 + j, 0) = rule.nodes[i];
      grid(i * 64 + j, 1) = rule.nodes[j];
      w[i * 64 + j] = rule.weights[i] * rule.weights[j];
    }
  const Eigen::VectorXd v = est.evaluate(grid);
  CHECK(std::abs(std::sqrt(w.dot(v.cwiseAbs2())) - est.l2_norm()) < 1e-6);
}

TEST_CASE("density on a box integrates like the original density")
{
  const auto z = uniform_points(20000, 2, 8, -1.0, 1.0);
  VrsConfig cfg;
  cfg.m = 4;
  cfg.l = 3;
  const auto est = fit_density(z, BoxDomain::cube(2, -1.0, 1.0), cfg);
  CHECK(est.value_scale() == doctest::Approx(0.25));
  CHECK(std::abs(est.integral() - 1.0) < 0.01);
  const double mid[] = { 0.0, 0.0 };
  CHECK(std::abs(est(mid) - 0.25) < 0.05);
  const double out[] = { 1.5, 0.0 };
  CHECK_THROWS_AS(est(out), EstimateError);
  const double edge[] = { 1.0, -1.0 };
  CHECK(std::isfinite(est(edge)));
}

TEST_CASE("permuting coordinate axes permutes the estimate")
{
  const auto z = uniform_points(3000, 3, 12);
  Eigen::MatrixXd y(z.rows(), 3);
  y.col(0) = z.col(2).array().square();
  y.col(1) = z.col(0);
  y.col(2) = z.col(1).array().sqrt();
  Eigen::MatrixXd yp(z.rows(), 3);
  yp << y.col(2), y.col(0), y.col(1);

  VrsConfig cfg;
  cfg.m = 5;
  cfg.l = 3;
  const auto a = fit(SampleFunctional(y), cfg);
  const auto b = fit(SampleFunctional(yp), cfg);
  CHECK(b.ranks() == std::vector<int>{ a.ranks()[2], a.ranks()[0], a.ranks()[1] });

  const auto q = uniform_points(200, 3, 13);
  Eigen::MatrixXd qp(q.rows(), 3);
  qp << q.col(2), q.col(0), q.col(1);
  CHECK((a.evaluate(q) - b.evaluate(qp)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("fit argument errors")
{
  const SampleFunctional one_mode(uniform_points(10, 1, 1));
  CHECK_THROWS_AS(fit(one_mode, VrsConfig{}), EstimateError);
  const SampleFunctional f(uniform_points(10, 2, 1));
  CHECK_THROWS_AS(fit(f, fixed(3, 2, { 3, 3 })), EstimateError);
  CHECK_THROWS_AS(fit(f, fixed(3, 2, { 1, 1, 1 })), EstimateError);
  CHECK_THROWS_AS(fit(f, fixed(0, 2, { 1 })), EstimateError);
}

TEST_CASE("regression with constant responses")
{
  const Eigen::Index n = 10000;
  const auto z = uniform_points(n, 2, 3);
  const auto box = BoxDomain::unit(2);
  const auto q = uniform_points(100, 2, 4);
  for (double c : { 2.5, -1.5 }) {
    const auto est = fit_regression(z, Eigen::VectorXd::Constant(n, c), box, VrsConfig{}, VrsConfig{});
    CHECK(est.floor == doctest::Approx(1 / std::sqrt(std::log(10000.0))));
    const auto pred = est.evaluate(q);
    CHECK((pred.array() - c).abs().maxCoeff() < 0.05 * std::abs(c));
  }
  const auto zero = fit_regression(z, Eigen::VectorXd::Zero(n), box, VrsConfig{}, VrsConfig{});
  const auto pred = zero.evaluate(q);
  CHECK(pred.cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(fit_regression(z.topRows(1), Eigen::VectorXd::Zero(1), box, VrsConfig{}, VrsConfig{}),
                  EstimateError);
  Eigen::VectorXd bad = Eigen::VectorXd::Zero(n);
  bad[5] = NAN;
  CHECK_THROWS_AS(fit_regression(z, bad, box, VrsConfig{}, VrsConfig{}), EstimateError);
}

TEST_CASE("regression predictions stay finite under a poor density estimate")
{
  // Design concentrated in one corner leaves the density near zero elsewhere.
  auto z = uniform_points(3000, 2, 6, 0.0, 0.2);
  Eigen::VectorXd y = z.col(0) + z.col(1);
  VrsConfig cfg;
  cfg.m = 10;
  cfg.l = 4;
  const auto est = fit_regression(z, y, BoxDomain::unit(2), cfg, cfg);
  const auto pred = est.evaluate(uniform_points(2000, 2, 7));
  CHECK(pred.allFinite());
}

TEST_CASE("cross-validation")
{
  const auto z = uniform_points(300, 2, 14);
  VrsConfig cfg;
  cfg.cv = CvGrid{ 5, { 6 }, { 2 } };
  auto res = cross_validate_density(z, cfg);
  CHECK(res.best_m == 6);
  CHECK(res.best_l == 2);
  REQUIRE(res.table.size() == 1);

  // uniform density is rank one and lies in span{q0}
  cfg.cv = CvGrid{ 5, { 64, 1 }, { 1, 2 } };
  res = cross_validate_density(z, cfg);
  CHECK(res.best_m == 1);
  REQUIRE(res.table.size() == 4);
  CHECK(res.table[0].m == 1);
  CHECK(res.table[0].l == 1);

  // the table is a pure function of the seed
  const auto again = cross_validate_density(z, cfg);
  for (std::size_t i = 0; i < res.table.size(); ++i)
    CHECK(res.table[i].score == again.table[i].score);

  // equal scores resolve to the smallest cell: (m, l) = (1, 1) and (1, 2)
  // give the same constant estimate
  CHECK(res.table[0].score == res.table[1].score);
  CHECK(res.best_l == 1);

  cfg.cv = CvGrid{ 5, {}, { 2 } };
  CHECK_THROWS_AS(cross_validate_density(z, cfg), EstimateError);
  cfg.cv = CvGrid{ 1, { 2 }, { 2 } };
  CHECK_THROWS_AS(cross_validate_density(z, cfg), EstimateError);
  cfg.cv = CvGrid{ 5, { 2 }, { 2 } };
  CHECK_THROWS_AS(cross_validate_density(z.topRows(3), cfg), EstimateError);
}

TEST_CASE("cross-validation table matches a direct computation")
{
  const auto z = tilted_points(400, 9);
  VrsConfig cfg;
  cfg.cv = CvGrid{ 4, { 2, 5 }, { 2 } };
  cfg.seed = 77;
  const auto res = cross_validate_density(z, cfg);

  const auto fold = fold_assignment(z.rows(), 4, 77);
  for (const auto& row : res.table) {
    double total = 0.0;
    for (int k = 0; k < 4; ++k) {
      std::vector<Eigen::Index> tr, va;
      for (Eigen::Index i = 0; i < z.rows(); ++i)
        (fold[i] == k ? va : tr).push_back(i);
      Eigen::MatrixXd train(tr.size(), 2), val(va.size(), 2);
      for (std::size_t i = 0; i < tr.size(); ++i)
        train.row(i) = z.row(tr[i]);
      for (std::size_t i = 0; i < va.size(); ++i)
        val.row(i) = z.row(va[i]);
      VrsConfig c = cfg;
      c.cv.reset();
      c.m = row.m;
      c.l = row.l;
      const auto est = fit(SampleFunctional(train), c);
      total += std::pow(est.core().frobenius_norm(), 2) - 2 * est.evaluate(val).mean();
    }
    CHECK(row.score == doctest::Approx(total / 4).epsilon(1e-12));
  }
  // the tilted density lies in span{q0, q1} per mode
  CHECK(res.best_m == 2);
}

TEST_CASE("fold assignment")
{
  const auto a = fold_assignment(103, 5, 1);
  std::vector<int> count(5, 0);
  for (int f : a)
    ++count[f];
  for (int c : count)
    CHECK((c == 20 || c == 21));
  CHECK(a == fold_assignment(103, 5, 1));
  CHECK(a != fold_assignment(103, 5, 2));
}
