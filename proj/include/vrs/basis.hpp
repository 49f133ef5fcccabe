#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace vrs {

/// Raised for invalid arguments to basis construction or evaluation.
class BasisError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

/// Closed interval [lo, hi] with lo < hi.
class Domain1D
{
public:
  Domain1D() = default;
  Domain1D(double lo, double hi);

  double lo() const noexcept { return lo_; }
  double hi() const noexcept { return hi_; }
  double length() const noexcept { return hi_ - lo_; }
  bool contains(double x) const noexcept { return x >= lo_ && x <= hi_; }

  /// Affine map of x in this domain onto [0, 1].
  double to_unit(double x) const noexcept { return (x - lo_) / (hi_ - lo_); }
  double from_unit(double u) const noexcept { return lo_ + u * (hi_ - lo_); }

  bool operator==(const Domain1D&) const = default;

private:
  double lo_ = 0.0;
  double hi_ = 1.0;
};

struct QuadratureRule
{
  std::vector<double> nodes;
  std::vector<double> weights;
  Domain1D domain;

  std::size_t size() const noexcept { return nodes.size(); }

  /// Sum of w_i f(x_i).
  double integrate(const std::function<double(double)>& f) const;

  /// The same rule affinely moved onto another interval.
  QuadratureRule mapped_to(const Domain1D& target) const;
};

/// n-node Gauss-Legendre rule on `domain`; nodes strictly increasing.
QuadratureRule gauss_legendre_rule(int n, const Domain1D& domain = {});

struct LegendreKind
{
  bool operator==(const LegendreKind&) const = default;
};

struct SplineKind
{
  int knot_count = 1;
  int degree = 1;
  bool operator==(const SplineKind&) const = default;
};

struct HaarKind
{
  int grid_size = 2;
  bool operator==(const HaarKind&) const = default;
};

using BasisKind = std::variant<LegendreKind, SplineKind, HaarKind>;

/// Largest polynomial degree served by the Legendre family.
inline constexpr int kMaxLegendreDegree = 256;

/// An ordered orthonormal system {phi_k} on a 1-D domain.
///
/// Legendre: shifted, normalized Legendre polynomials; phi_k has degree k.
/// Spline: Gram-orthonormalized truncated-power basis
///   1, x, ..., x^a, (x - xi_1)_+^a, ..., (x - xi_n)_+^a
/// with equispaced interior knots xi_k = lo + k (hi - lo) / (n + 1).
/// HaarDiscrete: functions on the integer grid {1, ..., kappa} (domain
///   [1, kappa]) orthonormal under <u, v> = (1/kappa) sum u(x) v(x). Scaling
///   function first, then wavelets coarse to fine, left to right.
class BasisFamily
{
public:
  /// Legendre on [0, 1].
  BasisFamily() = default;

  static BasisFamily legendre(const Domain1D& domain = {});
  static BasisFamily haar(int grid_size);

  const BasisKind& kind() const noexcept { return kind_; }
  const Domain1D& domain() const noexcept { return domain_; }
  int size() const noexcept { return size_; }
  std::string name() const;

  bool is_legendre() const noexcept { return std::holds_alternative<LegendreKind>(kind_); }
  bool is_spline() const noexcept { return std::holds_alternative<SplineKind>(kind_); }
  bool is_haar() const noexcept { return std::holds_alternative<HaarKind>(kind_); }

  /// phi_k(x).
  double eval(int k, double x) const;

  /// (phi_0(x), ..., phi_{count-1}(x)) written into `out` (size >= count).
  void eval_all(int count, double x, std::span<double> out) const;
  Eigen::VectorXd eval_all(int count, double x) const;

  /// <phi_j, phi_k> for j, k < count under the family's reference inner
  /// product (composite Gauss for continuous kinds, weighted sum for Haar).
  Eigen::MatrixXd gram(int count, int nodes_per_piece = 64) const;

  /// (integral of phi_k over the domain) for k < count.
  Eigen::VectorXd integrals(int count) const;

  /// Breakpoints of the piecewise structure (domain ends plus spline knots).
  std::vector<double> breakpoints() const;

  /// Spline only: row k holds the truncated-power coefficients of phi_k.
  const Eigen::MatrixXd& spline_transform() const noexcept { return spline_transform_; }

  bool operator==(const BasisFamily& other) const;

private:
  friend BasisFamily orthonormalize_spline(int knot_count,
                                           int degree,
                                           const Domain1D& domain,
                                           const QuadratureRule& quad);

  void check(int count, double x) const;
  void truncated_powers(double x, std::span<double> out) const;

  BasisKind kind_ = LegendreKind{};
  Domain1D domain_;
  int size_ = kMaxLegendreDegree + 1;
  std::vector<double> knots_;
  Eigen::MatrixXd spline_transform_;
};

/// Spline family of size knot_count + degree + 1, orthonormalized by Gram
/// Cholesky (with one re-orthonormalization sweep) under `quad` applied
/// piecewise between knots. Throws BasisError if the Gram matrix is singular
/// at working precision.
BasisFamily orthonormalize_spline(int knot_count,
                                  int degree,
                                  const Domain1D& domain = {},
                                  const QuadratureRule& quad = gauss_legendre_rule(16));

/// (<f, phi_0>, ..., <f, phi_{count-1}>) by quadrature. Continuous kinds
/// apply `quad` on every piece between breakpoints; Haar sums over the grid.
Eigen::VectorXd project_coeffs(const std::function<double(double)>& f,
                               const BasisFamily& family,
                               int count,
                               const QuadratureRule& quad = gauss_legendre_rule(64));

/// In-place fast Haar analysis of `values` (length kappa, a power of two):
/// on return values[k] = (1/kappa) sum_x v(x) phi_k(x) in family order.
void haar_forward(std::span<double> values);

/// Inverse of haar_forward.
void haar_inverse(std::span<double> coeffs);

bool is_power_of_two(int n) noexcept;

} // namespace vrs
