#pragma once

#include "vrs/basis.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

namespace vrs {

class SketchError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Dense d-way array, row-major with the first axis slowest.
struct DenseTensor
{
  std::vector<int> shape;
  std::vector<double> data;

  DenseTensor() = default;
  explicit DenseTensor(std::vector<int> shape_);

  std::size_t rank() const noexcept { return shape.size(); }
  std::size_t flat(std::span<const int> index) const;
  double& operator()(std::span<const int> index) { return data[flat(index)]; }
  double operator()(std::span<const int> index) const { return data[flat(index)]; }
  double frobenius_norm() const;
};

struct SketchOptions
{
  /// Cap on the bytes needed for the m x l^(d-1) sketch and one chunk of
  /// Kronecker rows.
  std::size_t memory_budget_bytes = std::size_t{ 2 } << 30;
  /// Samples per accumulation chunk. Fixed so that the summation order, and
  /// therefore every bit of the result, is independent of the thread count.
  int chunk_size = 2048;
};

/// The empirical functional
///   A[g_1, ..., g_d] = (1/N) sum_i w_i prod_j g_j(Z_ij).
/// Points are stored N x d and must lie in the domain of the basis family
/// they are paired with.
class SampleFunctional
{
public:
  SampleFunctional(Eigen::MatrixXd points, Eigen::VectorXd weights);
  /// Unit weights: the empirical measure of the points.
  explicit SampleFunctional(Eigen::MatrixXd points);

  Eigen::Index size() const noexcept { return points_.rows(); }
  int mode_count() const noexcept { return static_cast<int>(points_.cols()); }
  const Eigen::MatrixXd& points() const noexcept { return points_; }
  const Eigen::VectorXd& weights() const noexcept { return weights_; }

  double apply(std::span<const std::function<double(double)>> g) const;

  SampleFunctional subset(std::span<const Eigen::Index> rows) const;

  /// alpha * a (+) beta * b as one weighted sample set over the union of
  /// the points. Normalized by the combined count, so sketches satisfy
  /// sketch(merge) = (Na * alpha * sketch(a) + Nb * beta * sketch(b)) / (Na + Nb).
  static SampleFunctional merge(const SampleFunctional& a,
                                double alpha,
                                const SampleFunctional& b,
                                double beta);

  /// Per-mode tables V_j(i, k) = phi_k(Z_ij) for k < count. Cached so that
  /// repeated sketches over one sample set evaluate each basis once.
  /// Tables may carry more than `count` columns when served from the cache.
  void cache_basis(const BasisFamily& family, int count);
  std::shared_ptr<const std::vector<Eigen::MatrixXd>> basis_table(const BasisFamily& family,
                                                                  int count) const;

private:
  Eigen::MatrixXd points_;
  Eigen::VectorXd weights_;
  struct Cache
  {
    BasisFamily family;
    int count;
    std::shared_ptr<const std::vector<Eigen::MatrixXd>> tables;
  };
  std::shared_ptr<const Cache> cache_;
};

/// A functional known through its exact coefficients in a basis:
///   A[phi_mu1, ..., phi_mud] = coeffs(mu1, ..., mud).
class CoefficientFunctional
{
public:
  explicit CoefficientFunctional(DenseTensor coeffs);
  int mode_count() const noexcept { return static_cast<int>(coeffs_.rank()); }
  const DenseTensor& coeffs() const noexcept { return coeffs_; }

private:
  DenseTensor coeffs_;
};

/// B[mu][eta] = A[phi_mu at `mode`; phi_eta_k at modes k != mode]. Column
/// index flattens eta over the other modes in ascending order, leftmost
/// slowest. `mode` is zero-based.
struct SketchMatrix
{
  Eigen::MatrixXd values;
  int mode = 0;
  int m = 0;
  int l = 0;
};

SketchMatrix sketch_matrix(const SampleFunctional& f,
                           int mode,
                           const BasisFamily& family,
                           int m,
                           int l,
                           const SketchOptions& options = {});

SketchMatrix sketch_matrix(const CoefficientFunctional& f, int mode, int m, int l);

/// r orthonormal functions Phi_rho = sum_mu coeffs(mu, rho) phi_mu.
struct RangeBasis
{
  Eigen::MatrixXd coeffs;
  BasisFamily family;
  int mode = 0;

  int rank() const noexcept { return static_cast<int>(coeffs.cols()); }
  int m() const noexcept { return static_cast<int>(coeffs.rows()); }
  /// (Phi_0(x), ..., Phi_{r-1}(x)).
  Eigen::VectorXd eval(double x) const;
};

struct RangeEstimate
{
  RangeBasis basis;
  /// All min(m, columns) singular values, non-increasing.
  Eigen::VectorXd singular_values;
};

/// Leading singular values of a sketch without forming singular vectors
/// beyond what the chosen route needs; used for rank selection.
Eigen::VectorXd sketch_singular_values(const Eigen::MatrixXd& sketch);

struct LeftSingular
{
  /// rows x min(rows, cols), columns by decreasing singular value.
  Eigen::MatrixXd vectors;
  Eigen::VectorXd values;
};

/// All left singular vectors of `b`, computed and signed as in range_estimate.
LeftSingular left_singular(const Eigen::MatrixXd& b);

/// Leading r left singular vectors of the sketch as a RangeBasis. Wide
/// sketches (columns > 4m) go through the eigendecomposition of B B^T.
/// Each column is signed so its largest-magnitude entry is positive.
RangeEstimate range_estimate(const SketchMatrix& sketch, int r, const BasisFamily& family);

struct ProjectionPair
{
  const RangeBasis& a;
  const RangeBasis& b;
};

/// Spectral norm of A A^T - B B^T; the sine of the largest principal angle
/// when the ranks agree.
double subspace_distance(const ProjectionPair& pair);
double subspace_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

struct FunctionalNorms
{
  double frobenius = 0.0;
  double op = 0.0;
};

/// L2 (Frobenius) and operator norm of a two-variable function from its
/// coefficient matrix in orthonormal bases.
FunctionalNorms functional_svd_norms(const Eigen::MatrixXd& coeffs);

/// Core tensor (1/N) sum_i w_i prod_j Phi_{j, rho_j}(Z_ij), cost O(N prod r_j).
DenseTensor contract_core(const SampleFunctional& f,
                          std::span<const RangeBasis> factors,
                          const SketchOptions& options = {});

DenseTensor contract_core(const CoefficientFunctional& f, std::span<const RangeBasis> factors);

} // namespace vrs
