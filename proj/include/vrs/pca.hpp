#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace vrs {

class PcaError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// A kappa x kappa image on the grid {1..kappa}^2; pixels(x1 - 1, x2 - 1).
/// Norms and inner products are scaled by 1 / kappa^2.
struct DiscreteImage
{
  Eigen::MatrixXd pixels;

  DiscreteImage() = default;
  /// Throws PcaError unless square with a power-of-two side.
  explicit DiscreteImage(Eigen::MatrixXd p);

  int kappa() const noexcept { return static_cast<int>(pixels.rows()); }
};

double scaled_dot(const DiscreteImage& a, const DiscreteImage& b);
double scaled_norm(const DiscreteImage& a);

/// All kappa^2 coefficients <img, phi_mu1 (x) phi_mu2>, row mu1, column mu2,
/// by fast Haar transforms along both axes.
Eigen::MatrixXd haar_coeff_matrix(const DiscreteImage& img);

/// The first m per axis of haar_coeff_matrix, flattened with mu1 slow.
Eigen::VectorXd haar_coeffs(const DiscreteImage& img, int m);

/// Image with the given m^2 coefficients (mu1 slow) and zeros elsewhere.
DiscreteImage haar_image(const Eigen::VectorXd& coeffs, int m, int kappa);

/// B = A C^T / (N - 1) with A, C the centered m- and l-truncated Haar
/// coefficients of the images (m^2 x l^2). The kappa^2 x kappa^2 covariance
/// is never formed.
Eigen::MatrixXd covariance_sketch(std::span<const DiscreteImage> images, int m, int l);

struct PcaModel
{
  int kappa = 0;
  int m = 0;
  int l = 0;
  DiscreteImage mean;
  /// m^2 x r, orthonormal columns over the truncated Haar tensor basis.
  Eigen::MatrixXd components;
  /// All singular values of the sketch, non-increasing.
  Eigen::VectorXd singular_values;
  /// Set when the sketch is numerically zero (e.g. identical images).
  bool zero_energy = false;

  int rank() const noexcept { return static_cast<int>(components.cols()); }
  DiscreteImage component(int rho) const;
};

/// PCA from the covariance sketch. rank = nullopt selects r adaptively from
/// the sketch spectrum with at most max_rank components.
PcaModel fit_pca(std::span<const DiscreteImage> images,
                 int m,
                 int l,
                 std::optional<int> rank = std::nullopt,
                 int max_rank = 10);

/// mean + sum_rho <img - mean, comp_rho> comp_rho.
DiscreteImage denoise(const PcaModel& model, const DiscreteImage& img);

/// sqrt(mean_i ||estimate_i - truth_i||^2 / ||truth_i||^2).
double relative_denoising_error(std::span<const DiscreteImage> truth,
                                std::span<const DiscreteImage> estimate);

/// sqrt(mean_i ||noisy_i - truth_i||^2 / ||truth_i||^2), the realized noise level.
double relative_noise_level(std::span<const DiscreteImage> truth, std::span<const DiscreteImage> noisy);

/// sigma * kappa * sqrt(mean_i 1 / ||truth_i||_2^2): the expected noise level
/// for i.i.d. pixel noise of standard deviation sigma (Euclidean norms).
double nominal_noise_level(std::span<const DiscreteImage> truth, double sigma);

/// Noise-free images I_i = mean + sum_k a_ik P_k with orthonormal patterns
/// P_k drawn in the leading 4 x 4 Haar block and a_ik ~ N(0, s_k^2),
/// s_k = 3 * 0.7^k.
struct PlantedImages
{
  std::vector<DiscreteImage> images;
  DiscreteImage mean;
  std::vector<DiscreteImage> patterns;

  /// Pattern coefficients truncated to m per axis (m^2 x rank).
  Eigen::MatrixXd span_coeffs(int m) const;
};

PlantedImages planted_images(int kappa, int rank, int count, std::uint64_t seed);

/// Adds i.i.d. N(0, sigma^2) noise to every pixel.
std::vector<DiscreteImage> add_noise(std::span<const DiscreteImage> images, double sigma, std::uint64_t seed);

/// Image batch: one JSON header line {"count", "kappa", "dtype": "f64le"}
/// followed by count * kappa^2 little-endian doubles, row-major per image.
void write_images(std::ostream& out, std::span<const DiscreteImage> images);
std::vector<DiscreteImage> read_images(std::istream& in);
void write_images(const std::filesystem::path& path, std::span<const DiscreteImage> images);
std::vector<DiscreteImage> read_images(const std::filesystem::path& path);

} // namespace vrs
