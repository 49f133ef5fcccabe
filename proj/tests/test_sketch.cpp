#include "vrs/sketch.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

using namespace vrs;

namespace {

Eigen::MatrixXd
uniform_points(Eigen::Index n, int d, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd z(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      z(i, j) = u(rng);
  return z;
}

// Random rank-r coefficient tensor of extent n per mode: sum of r outer
// products of random vectors. Returns the tensor and the mode-0 factors.
DenseTensor
random_low_rank(int d, int n, int r, std::uint64_t seed, Eigen::MatrixXd* first_factor = nullptr)
{
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<Eigen::MatrixXd> f(d, Eigen::MatrixXd(n, r));
  for (auto& m : f)
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m.data()[i] = g(rng);
  if (first_factor)
    *first_factor = f[0];
  DenseTensor t(std::vector<int>(d, n));
  std::vector<int> idx(d, 0);
  for (std::size_t flat = 0; flat < t.data.size(); ++flat) {
    std::size_t rem = flat;
    for (int j = d - 1; j >= 0; --j) {
      idx[j] = static_cast<int>(rem % n);
      rem /= n;
    }
    double s = 0.0;
    for (int k = 0; k < r; ++k) {
      double p = 1.0;
      for (int j = 0; j < d; ++j)
        p *= f[j](idx[j], k);
      s += p;
    }
    t.data[flat] = s;
  }
  return t;
}

// Mode-j unfolding of the full tensor, rows indexed by the mode-j index.
Eigen::MatrixXd
unfold(const DenseTensor& t, int mode)
{
  const int d = static_cast<int>(t.rank());
  const int n = t.shape[mode];
  Eigen::MatrixXd out(n, static_cast<Eigen::Index>(t.data.size() / n));
  std::vector<int> idx(d, 0);
  std::vector<Eigen::Index> col_of(n, 0);
  for (std::size_t flat = 0; flat < t.data.size(); ++flat) {
    std::size_t rem = flat;
    for (int j = d - 1; j >= 0; --j) {
      idx[j] = static_cast<int>(rem % t.shape[j]);
      rem /= t.shape[j];
    }
    out(idx[mode], col_of[idx[mode]]++) = t.data[flat];
  }
  return out;
}

Eigen::MatrixXd
leading_left(const Eigen::MatrixXd& a, int r)
{
  Eigen::BDCSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU);
  return svd.matrixU().leftCols(r);
}

} // namespace

TEST_CASE("sketch of a single midpoint sample")
{
  Eigen::MatrixXd z(1, 2);
  z << 0.5, 0.5;
  const auto s = sketch_matrix(SampleFunctional(z), 0, BasisFamily::legendre(), 2, 2);
  REQUIRE(s.values.rows() == 2);
  REQUIRE(s.values.cols() == 2);
  CHECK(s.values(0, 0) == 1.0);
  CHECK(s.values(0, 1) == 0.0);
  CHECK(s.values(1, 0) == 0.0);
  CHECK(s.values(1, 1) == 0.0);
}

TEST_CASE("sketch on the corners of the cube")
{
  Eigen::MatrixXd z(2, 3);
  z << 0, 0, 0, 1, 1, 1;
  const auto s = sketch_matrix(SampleFunctional(z), 1, BasisFamily::legendre(), 2, 2);
  REQUIRE(s.values.cols() == 4);
  // eta = (1, 1) flattens to column 3
  CHECK(std::abs(s.values(1, 3)) < 1e-14);
  // eta = (0, 0): mean of q1 at mode 1 over the two corners
  CHECK(std::abs(s.values(1, 0)) < 1e-14);
  // mu = 0, eta = (1, 1): mean of q1(z0) q1(z2) = 3
  CHECK(s.values(0, 3) == doctest::Approx(3.0).epsilon(1e-14));
}

TEST_CASE("all-constant sketch entry is exactly one")
{
  for (int d : { 2, 3, 4 }) {
    const auto z = uniform_points(3001, d, 11 + d);
    const SampleFunctional f(z);
    for (int mode = 0; mode < d; ++mode) {
      const auto s = sketch_matrix(f, mode, BasisFamily::legendre(), 4, 3);
      CHECK(s.values(0, 0) == 1.0);
    }
  }
  const auto z = uniform_points(500, 2, 3);
  const auto s = sketch_matrix(SampleFunctional(z), 0, orthonormalize_spline(4, 2), 5, 3);
  CHECK(s.values(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("sketch entries match a direct sum over samples")
{
  const auto z = uniform_points(300, 3, 5);
  Eigen::VectorXd w = Eigen::VectorXd::LinSpaced(300, -1.0, 2.0);
  const auto leg = BasisFamily::legendre();
  const SampleFunctional f(z, w);
  const int m = 4, l = 3;
  const auto s = sketch_matrix(f, 2, leg, m, l);
  for (int mu = 0; mu < m; ++mu)
    for (int a = 0; a < l; ++a)
      for (int b = 0; b < l; ++b) {
        double sum = 0.0;
        for (int i = 0; i < 300; ++i)
          sum += w[i] * leg.eval(mu, z(i, 2)) * leg.eval(a, z(i, 0)) * leg.eval(b, z(i, 1));
        CHECK(std::abs(s.values(mu, a * l + b) - sum / 300) < 1e-13);
      }
}

TEST_CASE("sketch argument errors")
{
  const SampleFunctional f(uniform_points(10, 3, 1));
  const auto leg = BasisFamily::legendre();
  CHECK_THROWS_AS(sketch_matrix(f, 3, leg, 2, 2), SketchError);
  CHECK_THROWS_AS(sketch_matrix(f, -1, leg, 2, 2), SketchError);
  CHECK_THROWS_AS(sketch_matrix(f, 0, leg, 0, 2), SketchError);
  CHECK_THROWS_AS(sketch_matrix(f, 0, leg, leg.size() + 1, 2), SketchError);
  SketchOptions tight;
  tight.memory_budget_bytes = 1024;
  CHECK_THROWS_WITH_AS(sketch_matrix(f, 0, leg, 8, 8, tight), doctest::Contains("bytes"), SketchError);
}

TEST_CASE("sample permutation leaves the sketch unchanged")
{
  const Eigen::Index n = 5000;
  const auto z = uniform_points(n, 3, 21);
  std::vector<Eigen::Index> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(4));
  const SampleFunctional f(z);
  const SampleFunctional g = f.subset(perm);
  for (int mode = 0; mode < 3; ++mode) {
    const auto a = sketch_matrix(f, mode, BasisFamily::legendre(), 6, 4);
    const auto b = sketch_matrix(g, mode, BasisFamily::legendre(), 6, 4);
    CHECK((a.values - b.values).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("sketch is linear in the functional")
{
  const SampleFunctional a(uniform_points(700, 3, 8), Eigen::VectorXd::Constant(700, 1.5));
  const SampleFunctional b(uniform_points(400, 3, 9));
  const double alpha = 0.75, beta = -2.0;
  const auto merged = SampleFunctional::merge(a, alpha, b, beta);
  const auto leg = BasisFamily::legendre();
  for (int mode = 0; mode < 3; ++mode) {
    const auto sm = sketch_matrix(merged, mode, leg, 5, 3).values;
    const auto sa = sketch_matrix(a, mode, leg, 5, 3).values;
    const auto sb = sketch_matrix(b, mode, leg, 5, 3).values;
    const Eigen::MatrixXd expect = (700 * alpha * sa + 400 * beta * sb) / 1100.0;
    CHECK((sm - expect).cwiseAbs().maxCoeff() < 1e-13);
  }
}

TEST_CASE("sketch is identical for every worker count")
{
  const SampleFunctional f(uniform_points(9000, 3, 2));
  SketchOptions small;
  small.chunk_size = 100;
  const auto a = sketch_matrix(f, 1, BasisFamily::legendre(), 5, 4, small);
  setenv("VRS_THREADS", "3", 1);
  const auto b = sketch_matrix(f, 1, BasisFamily::legendre(), 5, 4, small);
  unsetenv("VRS_THREADS");
  CHECK(a.values == b.values);
}

TEST_CASE("range estimate examples")
{
  const auto leg = BasisFamily::legendre();
  SketchMatrix id{ Eigen::MatrixXd::Identity(2, 2), 0, 2, 2 };
  const auto r1 = range_estimate(id, 1, leg);
  CHECK(r1.singular_values[0] == doctest::Approx(1.0));
  CHECK(r1.singular_values[1] == doctest::Approx(1.0));
  CHECK(r1.basis.coeffs.rows() == 2);
  CHECK(r1.basis.coeffs.cols() == 1);
  CHECK(r1.basis.coeffs(0, 0) == doctest::Approx(1.0));
  CHECK(r1.basis.coeffs(1, 0) == doctest::Approx(0.0));

  SketchMatrix diag{ Eigen::Vector2d(3.0, 1.0).asDiagonal(), 0, 2, 2 };
  const auto r2 = range_estimate(diag, 1, leg);
  CHECK(r2.singular_values[0] == doctest::Approx(3.0));
  CHECK(r2.basis.coeffs(0, 0) == doctest::Approx(1.0));
  CHECK(std::abs(r2.basis.coeffs(1, 0)) < 1e-15);

  // A(x, y) = 2 phi0(x) phi1(y) + phi1(x) phi0(y) in a 4 x 4 coefficient block
  DenseTensor c({ 4, 4 });
  c.data[0 * 4 + 1] = 2.0;
  c.data[1 * 4 + 0] = 1.0;
  const auto s = sketch_matrix(CoefficientFunctional(c), 0, 4, 4);
  const auto est = range_estimate(s, 2, leg);
  Eigen::MatrixXd truth = Eigen::MatrixXd::Zero(4, 2);
  truth(0, 0) = truth(1, 1) = 1.0;
  CHECK(subspace_distance(est.basis.coeffs, truth) < 1e-10);
  CHECK(est.singular_values[0] == doctest::Approx(2.0));
  CHECK(est.singular_values[1] == doctest::Approx(1.0));

  CHECK_THROWS_AS(range_estimate(s, 0, leg), SketchError);
  CHECK_THROWS_AS(range_estimate(s, 5, leg), SketchError);
}

TEST_CASE("range basis columns are orthonormal and signed")
{
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  for (int cols : { 5, 40 }) {
    Eigen::MatrixXd b(6, cols);
    for (Eigen::Index i = 0; i < b.size(); ++i)
      b.data()[i] = g(rng);
    const auto est = range_estimate(SketchMatrix{ b, 0, 6, 2 }, 4, BasisFamily::legendre());
    const auto& u = est.basis.coeffs;
    CHECK((u.transpose() * u - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-10);
    for (int c = 0; c < 4; ++c) {
      Eigen::Index at;
      u.col(c).cwiseAbs().maxCoeff(&at);
      CHECK(u(at, c) > 0);
    }
    for (Eigen::Index k = 1; k < est.singular_values.size(); ++k)
      CHECK(est.singular_values[k] <= est.singular_values[k - 1]);
    // both routes agree with a reference SVD
    Eigen::JacobiSVD<Eigen::MatrixXd> ref(b);
    CHECK((est.singular_values - ref.singularValues()).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(subspace_distance(u, leading_left(b, 4)) < 1e-10);
  }
}

TEST_CASE("subspace distance examples")
{
  const auto leg = BasisFamily::legendre();
  const RangeBasis e0{ Eigen::Vector2d(1, 0), leg, 0 };
  const RangeBasis e1{ Eigen::Vector2d(0, 1), leg, 0 };
  const RangeBasis diag{ Eigen::Vector2d(1, 1) / std::sqrt(2.0), leg, 0 };
  CHECK(subspace_distance(ProjectionPair{ e0, e0 }) == doctest::Approx(0.0));
  CHECK(subspace_distance(ProjectionPair{ e0, e1 }) == doctest::Approx(1.0));
  CHECK(subspace_distance(ProjectionPair{ e0, diag }) == doctest::Approx(std::sqrt(2.0) / 2).epsilon(1e-14));

  const RangeBasis spline{ Eigen::Vector2d(1, 0), orthonormalize_spline(2, 1), 0 };
  CHECK_THROWS_AS(subspace_distance(ProjectionPair{ e0, spline }), SketchError);
  const RangeBasis longer{ Eigen::Vector3d(1, 0, 0), leg, 0 };
  CHECK_THROWS_AS(subspace_distance(ProjectionPair{ e0, longer }), SketchError);
}

TEST_CASE("functional norms")
{
  auto n1 = functional_svd_norms(Eigen::Matrix2d::Identity());
  CHECK(n1.frobenius == doctest::Approx(std::sqrt(2.0)));
  CHECK(n1.op == doctest::Approx(1.0));
  auto n0 = functional_svd_norms(Eigen::Matrix2d::Zero());
  CHECK(n0.frobenius == 0.0);
  CHECK(n0.op == 0.0);
  auto n2 = functional_svd_norms(Eigen::Vector2d(3, 4).asDiagonal().toDenseMatrix());
  CHECK(n2.frobenius == doctest::Approx(5.0));
  CHECK(n2.op == doctest::Approx(4.0));
}

TEST_CASE("exact recovery of in-span low-rank functions")
{
  // The sketch sees the first l functions of each other mode; the truth is
  // the dense SVD of the full unfolding.
  for (int d : { 2, 3 }) {
    for (int r : { 1, 2, 3 }) {
      const int n = 5;
      const auto t = random_low_rank(d, n, r, 100 * d + r);
      const CoefficientFunctional f(t);
      for (int mode = 0; mode < d; ++mode) {
        const auto truth = leading_left(unfold(t, mode), r);
        const int l = d == 2 ? std::max(r, 3) : 2;
        const auto est = range_estimate(sketch_matrix(f, mode, n, l), r, BasisFamily::legendre());
        CHECK(subspace_distance(est.basis.coeffs, truth) < 1e-8);
      }
    }
  }
}

TEST_CASE("enlarging l never moves the range away from the truth")
{
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const int r = 2;
    const auto t = random_low_rank(3, 6, r, seed);
    const CoefficientFunctional f(t);
    const auto truth = leading_left(unfold(t, 0), r);
    double prev = INFINITY;
    for (int l : { r, r + 1, r + 2 }) {
      const auto est = range_estimate(sketch_matrix(f, 0, 6, l), r, BasisFamily::legendre());
      const double dist = subspace_distance(est.basis.coeffs, truth);
      CHECK(dist <= prev + 1e-12);
      prev = dist;
    }
  }
}

TEST_CASE("core contraction against a naive sum")
{
  const auto z = uniform_points(400, 3, 17);
  const SampleFunctional f(z);
  const auto leg = BasisFamily::legendre();
  std::vector<RangeBasis> factors;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  for (int j = 0; j < 3; ++j) {
    Eigen::MatrixXd a(4, 2);
    for (Eigen::Index i = 0; i < a.size(); ++i)
      a.data()[i] = g(rng);
    factors.push_back(RangeBasis{ Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ() *
                                    Eigen::MatrixXd::Identity(4, 2),
                                  leg,
                                  j });
  }
  const auto core = contract_core(f, factors);
  REQUIRE(core.shape == std::vector<int>{ 2, 2, 2 });
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 2; ++c) {
        double s = 0.0;
        for (int i = 0; i < 400; ++i)
          s += factors[0].eval(z(i, 0))[a] * factors[1].eval(z(i, 1))[b] * factors[2].eval(z(i, 2))[c];
        const int idx[] = { a, b, c };
        CHECK(std::abs(core(idx) - s / 400) < 1e-13);
      }
}
