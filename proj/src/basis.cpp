#include "vrs/basis.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numbers>

namespace vrs {

Domain1D::Domain1D(double lo, double hi)
  : lo_(lo)
  , hi_(hi)
{
  if (!(hi > lo) || !std::isfinite(lo) || !std::isfinite(hi))
    throw BasisError("Domain1D requires finite lo < hi");
}

double
QuadratureRule::integrate(const std::function<double(double)>& f) const
{
  double sum = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i)
    sum += weights[i] * f(nodes[i]);
  return sum;
}

QuadratureRule
QuadratureRule::mapped_to(const Domain1D& target) const
{
  QuadratureRule out;
  out.domain = target;
  out.nodes.resize(nodes.size());
  out.weights.resize(weights.size());
  const double scale = target.length() / domain.length();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    out.nodes[i] = target.from_unit(domain.to_unit(nodes[i]));
    out.weights[i] = weights[i] * scale;
  }
  return out;
}

QuadratureRule
gauss_legendre_rule(int n, const Domain1D& domain)
{
  if (n < 1)
    throw BasisError("gauss_legendre_rule: n must be >= 1");

  // Newton iteration on P_n over [-1, 1]; roots are symmetric so only the
  // upper half is solved for.
  std::vector<double> x(n), w(n);
  const int half = (n + 1) / 2;
  for (int i = 0; i < half; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = z;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      if (n == 1)
        p0 = 1.0;
      const double pn = (n == 1) ? z : p1;
      const double pnm1 = (n == 1) ? 1.0 : p0;
      dp = n * (z * pn - pnm1) / (z * z - 1.0);
      const double dz = pn / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16)
        break;
    }
    // final derivative at the converged root
    double p0 = 1.0, p1 = z;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    const double pn = (n == 1) ? z : p1;
    const double pnm1 = (n == 1) ? 1.0 : p0;
    dp = n * (z * pn - pnm1) / (z * z - 1.0);
    const double weight = 2.0 / ((1.0 - z * z) * dp * dp);
    x[i] = -z;
    x[n - 1 - i] = z;
    w[i] = weight;
    w[n - 1 - i] = weight;
  }
  if (n % 2 == 1)
    x[n / 2] = 0.0;

  QuadratureRule rule;
  rule.domain = domain;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const double half_len = 0.5 * domain.length();
  const double mid = 0.5 * (domain.lo() + domain.hi());
  for (int i = 0; i < n; ++i) {
    rule.nodes[i] = mid + half_len * x[i];
    rule.weights[i] = half_len * w[i];
  }
  return rule;
}

bool
is_power_of_two(int n) noexcept
{
  return n > 0 && std::has_single_bit(static_cast<unsigned>(n));
}

BasisFamily
BasisFamily::legendre(const Domain1D& domain)
{
  BasisFamily f;
  f.kind_ = LegendreKind{};
  f.domain_ = domain;
  f.size_ = kMaxLegendreDegree + 1;
  return f;
}

BasisFamily
BasisFamily::haar(int grid_size)
{
  if (!is_power_of_two(grid_size))
    throw BasisError("HaarDiscrete grid_size must be a power of two, got " +
                     std::to_string(grid_size));
  BasisFamily f;
  f.kind_ = HaarKind{ grid_size };
  f.domain_ = Domain1D(1.0, std::max(2.0, static_cast<double>(grid_size)));
  f.size_ = grid_size;
  return f;
}

std::string
BasisFamily::name() const
{
  return std::visit(
    [](const auto& k) -> std::string {
      using K = std::decay_t<decltype(k)>;
      if constexpr (std::is_same_v<K, LegendreKind>)
        return "legendre";
      else if constexpr (std::is_same_v<K, SplineKind>)
        return "spline";
      else
        return "haar";
    },
    kind_);
}

bool
BasisFamily::operator==(const BasisFamily& other) const
{
  return kind_ == other.kind_ && domain_ == other.domain_ && size_ == other.size_;
}

void
BasisFamily::check(int count, double x) const
{
  if (count < 0 || count > size_)
    throw BasisError("basis index out of range: requested " + std::to_string(count) +
                     " functions of " + std::to_string(size_));
  if (!domain_.contains(x))
    throw BasisError("basis evaluation point " + std::to_string(x) + " outside [" +
                     std::to_string(domain_.lo()) + ", " + std::to_string(domain_.hi()) + "]");
  if (is_haar()) {
    const int kappa = std::get<HaarKind>(kind_).grid_size;
    if (x != std::floor(x) || x < 1.0 || x > kappa)
      throw BasisError("Haar evaluation requires an integer grid point in [1, kappa]");
  }
}

void
BasisFamily::truncated_powers(double x, std::span<double> out) const
{
  const auto& sk = std::get<SplineKind>(kind_);
  const double u = domain_.to_unit(x);
  out[0] = 1.0;
  double p = 1.0;
  for (int j = 1; j <= sk.degree; ++j) {
    p *= u;
    out[j] = p;
  }
  for (int k = 0; k < sk.knot_count; ++k) {
    const double t = u - knots_[k];
    out[sk.degree + 1 + k] = t > 0.0 ? std::pow(t, sk.degree) : 0.0;
  }
}

double
BasisFamily::eval(int k, double x) const
{
  if (k < 0 || k >= size_)
    throw BasisError("basis index " + std::to_string(k) + " out of range [0, " +
                     std::to_string(size_) + ")");
  std::vector<double> buf(k + 1);
  eval_all(k + 1, x, buf);
  return buf[k];
}

Eigen::VectorXd
BasisFamily::eval_all(int count, double x) const
{
  Eigen::VectorXd out(count);
  eval_all(count, x, std::span<double>(out.data(), static_cast<std::size_t>(count)));
  return out;
}

void
BasisFamily::eval_all(int count, double x, std::span<double> out) const
{
  check(count, x);
  if (count == 0)
    return;

  if (is_legendre()) {
    const double u = 2.0 * domain_.to_unit(x) - 1.0;
    const double inv_len = 1.0 / domain_.length();
    double p0 = 1.0;
    double p1 = u;
    out[0] = std::sqrt(inv_len);
    if (count > 1)
      out[1] = std::sqrt(3.0 * inv_len) * p1;
    for (int k = 1; k + 1 < count; ++k) {
      const double p2 = ((2.0 * k + 1.0) * u * p1 - k * p0) / (k + 1.0);
      p0 = p1;
      p1 = p2;
      out[k + 1] = std::sqrt((2.0 * (k + 1) + 1.0) * inv_len) * p2;
    }
    return;
  }

  if (is_haar()) {
    const int kappa = std::get<HaarKind>(kind_).grid_size;
    const int i = static_cast<int>(x) - 1;
    out[0] = 1.0;
    for (int k = 1; k < count; ++k) {
      const int s = std::bit_width(static_cast<unsigned>(k)) - 1;
      const int t = k - (1 << s);
      const int len = kappa >> s;
      if (i / len != t) {
        out[k] = 0.0;
        continue;
      }
      const double amp = std::sqrt(static_cast<double>(1 << s));
      out[k] = (i % len) < len / 2 ? amp : -amp;
    }
    return;
  }

  // spline
  std::vector<double> b(size_);
  truncated_powers(x, b);
  const double norm = 1.0 / std::sqrt(domain_.length());
  for (int k = 0; k < count; ++k) {
    double s = 0.0;
    for (int j = 0; j <= k; ++j)
      s += spline_transform_(k, j) * b[j];
    out[k] = norm * s;
  }
}

std::vector<double>
BasisFamily::breakpoints() const
{
  std::vector<double> bp{ domain_.lo() };
  for (double k : knots_)
    bp.push_back(domain_.from_unit(k));
  bp.push_back(domain_.hi());
  return bp;
}

Eigen::MatrixXd
BasisFamily::gram(int count, int nodes_per_piece) const
{
  if (count > size_)
    throw BasisError("gram: count exceeds family size");
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(count, count);
  Eigen::VectorXd v(count);

  if (is_haar()) {
    const int kappa = std::get<HaarKind>(kind_).grid_size;
    for (int x = 1; x <= kappa; ++x) {
      eval_all(count, x, std::span<double>(v.data(), count));
      g.noalias() += v * v.transpose();
    }
    return g / kappa;
  }

  const auto ref = gauss_legendre_rule(nodes_per_piece);
  const auto bp = breakpoints();
  for (std::size_t p = 0; p + 1 < bp.size(); ++p) {
    const auto rule = ref.mapped_to(Domain1D(bp[p], bp[p + 1]));
    for (std::size_t i = 0; i < rule.size(); ++i) {
      eval_all(count, rule.nodes[i], std::span<double>(v.data(), count));
      g.noalias() += rule.weights[i] * (v * v.transpose());
    }
  }
  return g;
}

Eigen::VectorXd
BasisFamily::integrals(int count) const
{
  if (count > size_)
    throw BasisError("integrals: count exceeds family size");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(count);
  if (count == 0)
    return out;
  if (is_legendre()) {
    out[0] = std::sqrt(domain_.length());
    return out;
  }
  if (is_haar()) {
    // mean under the 1/kappa-weighted counting measure
    out[0] = 1.0;
    return out;
  }
  return project_coeffs([](double) { return 1.0; }, *this, count, gauss_legendre_rule(16));
}

BasisFamily
orthonormalize_spline(int knot_count, int degree, const Domain1D& domain, const QuadratureRule& quad)
{
  if (knot_count < 1 || degree < 1)
    throw BasisError("orthonormalize_spline requires knot_count >= 1 and degree >= 1");
  if (2 * static_cast<int>(quad.size()) - 1 < 2 * degree)
    throw BasisError("orthonormalize_spline: quadrature not exact for degree 2*degree");

  BasisFamily f;
  f.kind_ = SplineKind{ knot_count, degree };
  f.domain_ = domain;
  f.size_ = knot_count + degree + 1;
  f.knots_.resize(knot_count);
  for (int k = 0; k < knot_count; ++k)
    f.knots_[k] = static_cast<double>(k + 1) / (knot_count + 1);

  const int n = f.size_;
  f.spline_transform_ = Eigen::MatrixXd::Identity(n, n);

  // Nodes and weights of the composite rule on [lo, hi], one copy of `quad`
  // per knot interval.
  std::vector<double> nodes, weights;
  const auto bp = f.breakpoints();
  for (std::size_t p = 0; p + 1 < bp.size(); ++p) {
    const auto rule = quad.mapped_to(Domain1D(bp[p], bp[p + 1]));
    nodes.insert(nodes.end(), rule.nodes.begin(), rule.nodes.end());
    weights.insert(weights.end(), rule.weights.begin(), rule.weights.end());
  }

  // Two sweeps: the second re-orthonormalizes the functions produced by the
  // first, removing the rounding left by an ill-conditioned Gram matrix.
  for (int sweep = 0; sweep < 2; ++sweep) {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd v(n);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      f.eval_all(n, nodes[i], std::span<double>(v.data(), n));
      g.noalias() += weights[i] * (v * v.transpose());
    }

    Eigen::MatrixXd chol = Eigen::MatrixXd::Zero(n, n);
    for (int j = 0; j < n; ++j) {
      double d = g(j, j);
      for (int k = 0; k < j; ++k)
        d -= chol(j, k) * chol(j, k);
      if (!(d > 64.0 * std::numeric_limits<double>::epsilon() * g(j, j)))
        throw BasisError("spline Gram matrix singular at dimension " + std::to_string(j) +
                         " (knot_count=" + std::to_string(knot_count) +
                         ", degree=" + std::to_string(degree) + ")");
      chol(j, j) = std::sqrt(d);
      for (int i = j + 1; i < n; ++i) {
        double s = g(i, j);
        for (int k = 0; k < j; ++k)
          s -= chol(i, k) * chol(j, k);
        chol(i, j) = s / chol(j, j);
      }
    }
    const Eigen::MatrixXd inv =
      chol.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(n, n));
    f.spline_transform_ = (inv * f.spline_transform_).triangularView<Eigen::Lower>();
  }
  return f;
}

Eigen::VectorXd
project_coeffs(const std::function<double(double)>& f,
               const BasisFamily& family,
               int count,
               const QuadratureRule& quad)
{
  if (count < 0 || count > family.size())
    throw BasisError("project_coeffs: count exceeds family size");
  Eigen::VectorXd c = Eigen::VectorXd::Zero(count);
  Eigen::VectorXd v(count);

  if (family.is_haar()) {
    const int kappa = std::get<HaarKind>(family.kind()).grid_size;
    for (int x = 1; x <= kappa; ++x) {
      family.eval_all(count, x, std::span<double>(v.data(), count));
      c += f(x) * v;
    }
    return c / kappa;
  }

  const auto bp = family.breakpoints();
  for (std::size_t p = 0; p + 1 < bp.size(); ++p) {
    const auto rule = quad.mapped_to(Domain1D(bp[p], bp[p + 1]));
    for (std::size_t i = 0; i < rule.size(); ++i) {
      family.eval_all(count, rule.nodes[i], std::span<double>(v.data(), count));
      c += (rule.weights[i] * f(rule.nodes[i])) * v;
    }
  }
  return c;
}

void
haar_forward(std::span<double> values)
{
  const int kappa = static_cast<int>(values.size());
  if (!is_power_of_two(kappa))
    throw BasisError("haar_forward: length must be a power of two");
  std::vector<double> avg(values.begin(), values.end());
  std::vector<double> out(kappa);
  // At length 2^(s+1) the block means produce the 2^s details of scale s.
  for (int len = kappa; len > 1; len /= 2) {
    const int half = len / 2;
    const double amp = std::sqrt(static_cast<double>(half));
    for (int t = 0; t < half; ++t) {
      const double a = avg[2 * t], b = avg[2 * t + 1];
      out[half + t] = amp * (a - b) / len;
      avg[t] = 0.5 * (a + b);
    }
  }
  out[0] = avg[0];
  std::copy(out.begin(), out.end(), values.begin());
}

void
haar_inverse(std::span<double> coeffs)
{
  const int kappa = static_cast<int>(coeffs.size());
  if (!is_power_of_two(kappa))
    throw BasisError("haar_inverse: length must be a power of two");
  std::vector<double> avg(kappa);
  avg[0] = coeffs[0];
  for (int len = 2; len <= kappa; len *= 2) {
    const int half = len / 2;
    const double amp = std::sqrt(static_cast<double>(half));
    for (int t = half - 1; t >= 0; --t) {
      const double mean = avg[t];
      const double diff = coeffs[half + t] * half / amp;
      avg[2 * t] = mean + diff;
      avg[2 * t + 1] = mean - diff;
    }
  }
  std::copy(avg.begin(), avg.end(), coeffs.begin());
}

} // namespace vrs
