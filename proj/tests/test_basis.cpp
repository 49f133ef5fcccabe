#include "vrs/basis.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace vrs;

namespace {

// Dense composite Gauss quadrature of (f - sum c_k phi_k)^2 over [0, 1],
// split at the given interior points.
double
residual_norm(const std::function<double(double)>& f,
              const BasisFamily& fam,
              const Eigen::VectorXd& c,
              std::vector<double> cuts = {})
{
  cuts.insert(cuts.begin(), 0.0);
  cuts.push_back(1.0);
  const auto ref = gauss_legendre_rule(200);
  double s = 0.0;
  for (std::size_t p = 0; p + 1 < cuts.size(); ++p) {
    const auto rule = ref.mapped_to(Domain1D(cuts[p], cuts[p + 1]));
    for (std::size_t i = 0; i < rule.size(); ++i) {
      const double x = rule.nodes[i];
      const double approx = c.dot(fam.eval_all(static_cast<int>(c.size()), x));
      s += rule.weights[i] * std::pow(f(x) - approx, 2);
    }
  }
  return std::sqrt(s);
}

} // namespace

TEST_CASE("legendre evaluation at reference points")
{
  const auto leg = BasisFamily::legendre();
  CHECK(leg.eval(0, 0.3) == 1.0);
  CHECK(leg.eval(1, 0.5) == 0.0);
  CHECK(leg.eval(1, 1.0) == doctest::Approx(std::sqrt(3.0)).epsilon(1e-15));

  const auto two = leg.eval_all(2, 0.5);
  CHECK(two[0] == 1.0);
  CHECK(two[1] == 0.0);
  const auto three = leg.eval_all(3, 1.0);
  CHECK(three[0] == 1.0);
  CHECK(three[1] == doctest::Approx(std::sqrt(3.0)).epsilon(1e-15));
  CHECK(three[2] == doctest::Approx(std::sqrt(5.0)).epsilon(1e-15));
}

TEST_CASE("legendre matches the explicit low-order polynomials")
{
  // q_k(x) = sqrt(2) p_k(2x - 1) with the explicit orthonormal p_1, p_2 on [-1, 1]
  const auto leg = BasisFamily::legendre();
  for (double x : { 0.0, 0.1, 0.37, 0.5, 0.81, 1.0 }) {
    const double t = 2 * x - 1;
    CHECK(leg.eval(1, x) == doctest::Approx(std::sqrt(2.0) * std::sqrt(1.5) * t));
    CHECK(leg.eval(2, x) ==
          doctest::Approx(std::sqrt(2.0) * std::sqrt(5.0 / 2.0) * (3 * t * t - 1) / 2));
    CHECK(leg.eval(2, x) == doctest::Approx(std::sqrt(5.0) * (6 * x * x - 6 * x + 1)));
  }
}

TEST_CASE("legendre polynomial k has degree exactly k")
{
  // The (k+1)-th finite difference on k+2 equispaced points vanishes for
  // degree <= k, and the k-th does not.
  const auto leg = BasisFamily::legendre();
  for (int k = 0; k <= 8; ++k) {
    auto diff = [&](int order) {
      std::vector<double> v;
      for (int i = 0; i <= order; ++i)
        v.push_back(leg.eval(k, 0.1 + 0.08 * i));
      for (int o = 0; o < order; ++o)
        for (int i = 0; i + 1 < static_cast<int>(v.size()) - o; ++i)
          v[i] = v[i + 1] - v[i];
      return v[0];
    };
    CHECK(std::abs(diff(k + 1)) < 1e-9);
    CHECK(std::abs(diff(k)) > 1e-6);
  }
}

TEST_CASE("eval_all agrees bit for bit with eval")
{
  const auto spline = orthonormalize_spline(4, 3);
  for (const auto& fam : { BasisFamily::legendre(), spline }) {
    const int count = std::min(fam.size(), 40);
    for (double x : { 0.0, 0.13, 0.5, 0.77, 1.0 }) {
      const auto all = fam.eval_all(count, x);
      for (int k = 0; k < count; ++k)
        CHECK(all[k] == fam.eval(k, x));
    }
  }
  const auto haar = BasisFamily::haar(8);
  for (int x = 1; x <= 8; ++x) {
    const auto all = haar.eval_all(8, x);
    for (int k = 0; k < 8; ++k)
      CHECK(all[k] == haar.eval(k, x));
  }
}

TEST_CASE("evaluation errors")
{
  const auto leg = BasisFamily::legendre();
  CHECK_THROWS_AS(leg.eval(-1, 0.5), BasisError);
  CHECK_THROWS_AS(leg.eval(leg.size(), 0.5), BasisError);
  CHECK_THROWS_AS(leg.eval(0, 1.5), BasisError);
  CHECK_THROWS_AS(leg.eval_all(leg.size() + 1, 0.5), BasisError);
  CHECK_THROWS_AS(BasisFamily::haar(6), BasisError);
  CHECK_THROWS_AS(BasisFamily::haar(4).eval(1, 2.5), BasisError);
  CHECK_THROWS_AS(Domain1D(1.0, 1.0), BasisError);
  CHECK(leg.size() == kMaxLegendreDegree + 1);
}

TEST_CASE("haar pair on a two-point grid")
{
  const auto haar = BasisFamily::haar(2);
  CHECK(haar.size() == 2);
  CHECK(haar.eval_all(2, 1.0)[0] == 1.0);
  CHECK(haar.eval_all(2, 2.0)[0] == 1.0);
  CHECK(haar.eval_all(2, 1.0)[1] == 1.0);
  CHECK(haar.eval_all(2, 2.0)[1] == -1.0);
}

TEST_CASE("gauss-legendre rules")
{
  const auto one = gauss_legendre_rule(1);
  REQUIRE(one.size() == 1);
  CHECK(one.nodes[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(one.weights[0] == doctest::Approx(1.0).epsilon(1e-15));

  const auto two = gauss_legendre_rule(2);
  CHECK(two.nodes[0] == doctest::Approx(0.5 - 1 / (2 * std::sqrt(3.0))).epsilon(1e-15));
  CHECK(two.nodes[1] == doctest::Approx(0.5 + 1 / (2 * std::sqrt(3.0))).epsilon(1e-15));
  CHECK(two.weights[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(two.weights[1] == doctest::Approx(0.5).epsilon(1e-15));

  const auto three = gauss_legendre_rule(3);
  CHECK(std::abs(three.integrate([](double x) { return std::pow(x, 5); }) - 1.0 / 6.0) < 1e-14);

  CHECK_THROWS_AS(gauss_legendre_rule(0), BasisError);

  for (int n : { 1, 2, 5, 16, 64, 100 }) {
    const auto rule = gauss_legendre_rule(n, Domain1D(-1.0, 3.0));
    double sum = 0.0;
    for (double w : rule.weights)
      sum += w;
    CHECK(std::abs(sum - 4.0) < 1e-12);
    for (std::size_t i = 1; i < rule.size(); ++i)
      CHECK(rule.nodes[i] > rule.nodes[i - 1]);
    // exact for every monomial of degree <= 2n - 1 on [0, 1]
    const auto unit = gauss_legendre_rule(n);
    for (int p = 0; p <= 2 * n - 1 && p <= 40; ++p)
      CHECK(std::abs(unit.integrate([p](double x) { return std::pow(x, p); }) - 1.0 / (p + 1)) <
            1e-12);
  }
}

TEST_CASE("spline orthonormalization")
{
  const auto s = orthonormalize_spline(1, 1);
  CHECK(s.size() == 3);
  CHECK((s.gram(3) - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() <= 1e-10);

  const auto c = project_coeffs([](double x) { return x; }, s, s.size(), gauss_legendre_rule(8));
  CHECK(residual_norm([](double x) { return x; }, s, c, { 0.5 }) < 1e-12);

  for (auto [knots, degree] : { std::pair{ 8, 3 }, std::pair{ 16, 2 }, std::pair{ 28, 1 } }) {
    const auto fam = orthonormalize_spline(knots, degree);
    const int n = std::min(fam.size(), 30);
    CHECK(fam.size() == knots + degree + 1);
    CHECK((fam.gram(n) - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff() <= 1e-10);
  }

  CHECK_THROWS_AS(orthonormalize_spline(0, 1), BasisError);
  CHECK_THROWS_AS(orthonormalize_spline(2, 0), BasisError);
  // truncated powers of high degree on dense knots are numerically dependent
  CHECK_THROWS_WITH_AS(orthonormalize_spline(200, 7),
                       doctest::Contains("singular at dimension"),
                       BasisError);
}

TEST_CASE("projection coefficients")
{
  const auto leg = BasisFamily::legendre();
  const auto phi2 = project_coeffs([&](double x) { return leg.eval(2, x); }, leg, 4);
  CHECK(std::abs(phi2[0]) < 1e-14);
  CHECK(std::abs(phi2[1]) < 1e-14);
  CHECK(std::abs(phi2[2] - 1.0) < 1e-14);
  CHECK(std::abs(phi2[3]) < 1e-14);

  const auto lin = project_coeffs([](double x) { return x; }, leg, 2);
  CHECK(lin[0] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(lin[1] == doctest::Approx(1 / (2 * std::sqrt(3.0))).epsilon(1e-14));

  auto sine = [](double x) { return std::sin(2 * std::numbers::pi * x); };
  double prev = INFINITY;
  for (int m : { 4, 8, 16 }) {
    const double r = residual_norm(sine, leg, project_coeffs(sine, leg, m));
    CHECK(r < prev);
    prev = r;
  }
  CHECK(prev < 1e-6);
}

TEST_CASE("orthonormality of every shipped family")
{
  const std::vector<BasisFamily> families{ BasisFamily::legendre(),
                                           BasisFamily::legendre(Domain1D(-1.0, 1.0)),
                                           orthonormalize_spline(8, 3),
                                           orthonormalize_spline(28, 1),
                                           BasisFamily::haar(32),
                                           BasisFamily::haar(64) };
  for (const auto& fam : families) {
    const int n = std::min(fam.size(), 31);
    const Eigen::MatrixXd g = fam.gram(n, 64);
    CHECK((g - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("projection residual decays for limited smoothness")
{
  const auto leg = BasisFamily::legendre();
  for (int alpha : { 1, 2 }) {
    auto f = [alpha](double x) { return std::pow(std::abs(x - 0.5), alpha + 0.5); };
    // composite quadrature split at the kink keeps coefficients exact enough
    auto coeffs = [&](int m) {
      Eigen::VectorXd c = Eigen::VectorXd::Zero(m);
      for (auto piece : { Domain1D(0.0, 0.5), Domain1D(0.5, 1.0) }) {
        const auto rule = gauss_legendre_rule(120, piece);
        for (std::size_t i = 0; i < rule.size(); ++i)
          c += rule.weights[i] * f(rule.nodes[i]) * leg.eval_all(m, rule.nodes[i]);
      }
      return c;
    };
    double prev = INFINITY;
    for (int m : { 4, 8, 16, 32 }) {
      const double r = residual_norm(f, leg, coeffs(m), { 0.5 });
      CHECK(r < prev);
      prev = r;
    }
  }
}

TEST_CASE("affine map consistency of legendre coefficients")
{
  const double lo = -1.0, hi = 3.0;
  auto f = [](double x) { return std::exp(x) * std::cos(3 * x); };
  auto g = [&](double y) { return f((y - lo) / (hi - lo)); };
  const auto unit = project_coeffs(f, BasisFamily::legendre(), 12);
  const auto wide = project_coeffs(g, BasisFamily::legendre(Domain1D(lo, hi)), 12);
  CHECK((wide / std::sqrt(hi - lo) - unit).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("fast haar transform equals naive inner products")
{
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal;
  for (int kappa : { 1, 2, 4, 16, 64 }) {
    std::vector<double> row(kappa);
    for (auto& v : row)
      v = normal(rng);
    std::vector<double> fast = row;
    haar_forward(fast);
    if (kappa >= 2) {
      const auto fam = BasisFamily::haar(kappa);
      for (int k = 0; k < kappa; ++k) {
        double naive = 0.0;
        for (int x = 1; x <= kappa; ++x)
          naive += row[x - 1] * fam.eval(k, x);
        CHECK(std::abs(fast[k] - naive / kappa) < 1e-12);
      }
    }
    haar_inverse(fast);
    for (int i = 0; i < kappa; ++i)
      CHECK(std::abs(fast[i] - row[i]) < 1e-12);
  }
}
