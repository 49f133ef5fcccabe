#pragma once

#include "vrs/basis.hpp"
#include "vrs/sketch.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <variant>
#include <vector>

namespace vrs {

class EstimateError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Axis-aligned box; estimates are fitted on its image in [0, 1]^d.
class BoxDomain
{
public:
  BoxDomain() = default;
  explicit BoxDomain(std::vector<Domain1D> axes);
  static BoxDomain unit(int d);
  static BoxDomain cube(int d, double lo, double hi);

  int dim() const noexcept { return static_cast<int>(axes_.size()); }
  const std::vector<Domain1D>& axes() const noexcept { return axes_; }
  double volume() const noexcept;
  bool contains(std::span<const double> z) const noexcept;

  /// Maps rows of `points` (N x d) into [0, 1]^d; throws on points outside.
  Eigen::MatrixXd to_unit(const Eigen::MatrixXd& points) const;

  bool operator==(const BoxDomain&) const = default;

private:
  std::vector<Domain1D> axes_;
};

struct FixedRanks
{
  std::vector<int> ranks;
};

/// Rank per mode by the largest ratio of consecutive sketch singular values.
struct AdaptiveRanks
{
  int max_rank = 10;
  /// Gaps are only considered above relative_floor * sigma_1.
  double relative_floor = 1e-12;
};

using RankRule = std::variant<FixedRanks, AdaptiveRanks>;

struct CvGrid
{
  int folds = 5;
  std::vector<int> m_grid{ 4, 8, 16, 32 };
  std::vector<int> l_grid{ 2, 3, 4 };
};

struct VrsConfig
{
  int m = 8;
  /// Sketching dimension per mode, shared by all modes.
  int l = 3;
  RankRule ranks = AdaptiveRanks{};
  /// Family on [0, 1]; the box map handles other domains.
  BasisFamily family = BasisFamily::legendre();
  std::optional<CvGrid> cv;
  std::uint64_t seed = 0;
  SketchOptions sketch;
};

/// f(z) = value_scale * sum_rho core[rho] prod_j Phi_{j, rho_j}(u_j), with
/// u the image of z in [0, 1]^d. value_scale is 1 / vol(box) for densities
/// so the estimate integrates like the original density.
class VrsEstimate
{
public:
  VrsEstimate(DenseTensor core,
              std::vector<RangeBasis> factors,
              BoxDomain domain,
              double value_scale = 1.0);

  int mode_count() const noexcept { return static_cast<int>(factors_.size()); }
  const DenseTensor& core() const noexcept { return core_; }
  const std::vector<RangeBasis>& factors() const noexcept { return factors_; }
  const BoxDomain& domain() const noexcept { return domain_; }
  double value_scale() const noexcept { return value_scale_; }
  const BasisFamily& family() const { return factors_.front().family; }
  std::vector<int> ranks() const;

  /// Throws EstimateError outside the domain.
  double operator()(std::span<const double> z) const;
  Eigen::VectorXd evaluate(const Eigen::MatrixXd& points) const;
  /// Evaluation at points already mapped into [0, 1]^d, without value_scale.
  Eigen::VectorXd evaluate_unit(const Eigen::MatrixXd& unit_points) const;

  /// L2 norm over the box, exact through the core (orthonormal factors).
  double l2_norm() const;
  /// Integral over the box: core contracted with each factor's integrals.
  double integral() const;

  /// Tuning used for the fit, for reporting.
  struct FitInfo
  {
    int m = 0;
    int l = 0;
    /// Singular values of each mode's sketch.
    std::vector<Eigen::VectorXd> spectra;
  };
  FitInfo info;

private:
  double contract(const std::vector<Eigen::VectorXd>& phi) const;

  DenseTensor core_;
  std::vector<RangeBasis> factors_;
  BoxDomain domain_;
  double value_scale_ = 1.0;
};

/// numerator(z) / max(floor, density(z)), both evaluated on the unit box.
struct RatioEstimate
{
  VrsEstimate numerator;
  VrsEstimate density;
  double floor = 1.0;
  long long sample_count = 0;

  double operator()(std::span<const double> z) const;
  Eigen::VectorXd evaluate(const Eigen::MatrixXd& points) const;
};

/// 1 / sqrt(log N).
double density_floor(double n);

/// Adaptive thresholding: the k in [1, min(max_rank, len - 1)] maximizing
/// sigma_k / sigma_{k+1}, ties toward smaller k. A drop to or below `floor`
/// inside that range is an unbounded gap, so the count of values above
/// `floor` (at least 1) is returned instead.
int select_rank(std::span<const double> singular_values, int max_rank, double floor);

VrsEstimate fit(const SampleFunctional& f, const VrsConfig& cfg);
VrsEstimate fit(const CoefficientFunctional& f, const VrsConfig& cfg);

/// Plain projection series estimator sum A[phi_mu...] prod phi_mu with m
/// functions per mode, computed by direct accumulation (no sketching).
DenseTensor projection_coefficients(const SampleFunctional& f, const BasisFamily& family, int m);

struct CvRow
{
  int m = 0;
  int l = 0;
  double score = 0.0;
};

struct CvResult
{
  int best_m = 0;
  int best_l = 0;
  std::vector<CvRow> table;
};

/// K-fold CV of (m, l) for densities with the ISE surrogate
///   ||p||^2 - (2 / |val|) sum_val p(Z).
/// Points must already be in [0, 1]^d.
CvResult cross_validate_density(const Eigen::MatrixXd& unit_points, const VrsConfig& cfg);

/// K-fold CV of the numerator's (m, l) by validation MSE of the ratio
/// predictor; the density model uses density_cfg as given.
CvResult cross_validate_regression(const Eigen::MatrixXd& unit_points,
                                   const Eigen::VectorXd& responses,
                                   const VrsConfig& cfg,
                                   const VrsConfig& density_cfg);

/// Density estimate on `box`; runs cross_validate_density first when
/// cfg.cv is set.
VrsEstimate fit_density(const Eigen::MatrixXd& points, const BoxDomain& box, const VrsConfig& cfg);

/// Regression through the ratio of a weighted fit (of f p) to a density fit
/// (of p). Each config is cross-validated when its cv grid is set.
RatioEstimate fit_regression(const Eigen::MatrixXd& points,
                             const Eigen::VectorXd& responses,
                             const BoxDomain& box,
                             const VrsConfig& cfg,
                             const VrsConfig& density_cfg);

/// Deterministic K-fold assignment: fold index per sample from a seeded shuffle.
std::vector<int> fold_assignment(Eigen::Index n, int folds, std::uint64_t seed);

} // namespace vrs
