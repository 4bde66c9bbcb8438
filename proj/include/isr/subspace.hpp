#pragma once

// Subspace recovery from class-conditional moments.
//
// Two decompositions drive everything here:
//   * mean route: stack per-environment class-conditional means, center the
//     columns, eigendecompose the (1/E)-scaled Gram matrix, and read the
//     invariant subspace off the smallest eigenvalues;
//   * covariance route: difference of two environments' class-conditional
//     covariances, eigendecomposed, invariant subspace from the smallest
//     absolute eigenvalues. A robust variant averages per-pair subspaces with
//     a flag mean.
//
// With exact population moments both routes exhibit a clean spectrum phase
// transition (exactly d_inv zero eigenvalues); finite-sample paths never
// threshold and simply take the d_inv smallest, so callers choose d_inv.

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "isr/datamodel.hpp"

namespace isr::subspace {

// Raised when no pair of environments has covariances that differ by more
// than the applicable threshold, i.e. the data cannot support the covariance
// route (every environment looks identically scaled along every direction).
struct DistinctnessError : std::runtime_error {
  explicit DistinctnessError(const std::string& msg) : std::runtime_error(msg) {}
};

// Orthonormal rows spanning a recovered subspace, plus the full spectrum that
// drove the selection (ascending by value for the mean route, ascending by
// absolute value for the covariance route; singular values for flag means).
class SubspaceBasis {
 public:
  Matrix rows;        // k x d, rows orthonormal to 1e-8
  Vector eigenvalues; // full spectrum in selection order

  SubspaceBasis() = default;
  SubspaceBasis(Matrix basis_rows, Vector spectrum);

  Eigen::Index k() const { return rows.rows(); }
  Eigen::Index ambient_dim() const { return rows.cols(); }
};

// Per-environment class-conditional means, one row per contributing
// environment; env_ids records which environment each row came from.
struct MeanMatrix {
  Matrix rows;  // E x d
  std::vector<int> env_ids;

  int n_envs() const { return static_cast<int>(env_ids.size()); }
};

// Per-environment class-conditional covariances. counts are the numbers of
// rows behind each estimate; noise_floor_sq estimates E||Sigma_hat - Sigma||_F^2
// per environment from a deterministic half-split (0 when too few rows).
struct CovarianceSet {
  std::vector<Matrix> covariances;
  std::vector<int> env_ids;
  std::vector<Eigen::Index> counts;
  std::vector<double> noise_floor_sq;

  int n_envs() const { return static_cast<int>(env_ids.size()); }
};

struct SymmetricEigen {
  Vector values;   // ascending
  Matrix vectors;  // columns, orthonormal, sign-normalized
};

// Eigendecomposition of a symmetric matrix (symmetrized as (m + m')/2 first;
// inputs asymmetric beyond 1e-8 relative are rejected). Each eigenvector's
// sign is fixed so its first nonzero component is positive.
SymmetricEigen eigendecompose_symmetric(const Matrix& m);

// lambda_{i+1}/lambda_i diagnostics over a spectrum's absolute values;
// ratios against a zero eigenvalue come out as +inf.
std::vector<double> eigen_gap_ratios(const Vector& spectrum);

// Sample mean of label-matching rows per environment (restricted to rows
// whose environment label is available). Fails naming the environment if one
// contributes no such rows.
MeanMatrix class_conditional_means(const Dataset& data, int label);

// Sample covariance (1/n convention) of label-matching rows per environment;
// each environment needs at least two such rows.
CovarianceSet class_conditional_covariances(const Dataset& data, int label);

// Mean route on a prebuilt mean matrix: center columns, eigendecompose the
// (1/E) M~'M~ matrix, return the d_inv smallest-eigenvalue eigenvectors (or,
// with invert_selection, the d_inv largest -- the identified "changing" side).
SubspaceBasis isr_mean_from_means(const MeanMatrix& means, Eigen::Index d_inv,
                                  bool invert_selection = false);

SubspaceBasis isr_mean(const Dataset& data, Eigen::Index d_inv, int label = 1);

// The min(E-1, k)-dimensional environment-varying mean subspace (largest
// eigenvalues of the centered mean Gram matrix); used by the feature
// post-processing workflow, which removes this side instead.
SubspaceBasis isr_mean_spurious(const MeanMatrix& means, Eigen::Index k);

// Covariance route on prebuilt covariances. When pair is unset, picks the
// pair maximizing ||Sigma_a - Sigma_b||_F. pair_noise_floor_sq, when given,
// is an estimate of E||Sigma_hat_a - Sigma_hat_b||_F^2 under equal population
// covariances; the selected difference must clear both the relative floor
// (1e-8 * max_e ||Sigma_e||_F) and the statistical one.
SubspaceBasis isr_cov_from_covariances(const std::vector<Matrix>& covariances,
                                       Eigen::Index d_inv,
                                       std::optional<std::pair<int, int>> pair = std::nullopt,
                                       double pair_noise_floor_sq = 0.0,
                                       bool invert_selection = false);

SubspaceBasis isr_cov(const Dataset& data, Eigen::Index d_inv, int label = 1,
                      std::optional<std::pair<int, int>> pair = std::nullopt);

// Covariance-route spurious side: the k eigenvectors of largest |lambda|.
SubspaceBasis isr_cov_spurious(const Dataset& data, Eigen::Index k, int label = 1);

// Robust covariance route: run the per-pair recovery over up to max_pairs
// pairs ranked by ||Sigma_a - Sigma_b||_F (keeping only pairs that clear the
// distinctness thresholds) and flag-average the resulting subspaces.
SubspaceBasis isr_cov_robust(const Dataset& data, Eigen::Index d_inv, int label = 1,
                             int max_pairs = 10);

// Flag mean: stack all basis rows as columns and take the top-k left singular
// vectors as the averaged subspace.
SubspaceBasis flag_mean(const std::vector<SubspaceBasis>& bases, Eigen::Index k);

// Principal angles (radians, ascending, length min(k_a, k_b)) between two
// subspaces of the same ambient dimension.
Vector principal_angles(const SubspaceBasis& a, const SubspaceBasis& b);

}  // namespace isr::subspace
