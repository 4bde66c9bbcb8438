#pragma once

// Linear Gaussian environment model: labeled samples whose latent features
// split into an invariant block (class-conditional distribution shared by all
// environments) and a spurious block (per-environment mean and scale), mixed
// into observation space by a fixed full-rank linear transform.
//
// This module owns the generative parameters, exact population moments, the
// closed-form invariant-optimal linear predictor, and sampling.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace isr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IntVector = Eigen::VectorXi;

// Linear classifier x -> sign(w'x + b).
struct LinearPredictor {
  Vector weights;
  double bias = 0.0;

  double score(const Eigen::Ref<const Vector>& x) const { return weights.dot(x) + bias; }
  Vector scores(const Eigen::Ref<const Matrix>& features) const {
    return (features * weights).array() + bias;
  }
  // Sign with ties mapped to +1, so predictions are a total function.
  int predict(const Eigen::Ref<const Vector>& x) const { return score(x) >= 0.0 ? 1 : -1; }
};

// A labeled sample table. labels are {+1,-1}; env_ids index environments from
// zero; group_ids (optional) index (label x environment)-style groups;
// env_known (optional, 0/1) marks rows whose environment label is available.
class Dataset {
 public:
  Matrix features;                      // n x d
  IntVector labels;                     // n, values in {+1,-1}
  IntVector env_ids;                    // n, values >= 0
  std::optional<IntVector> group_ids;   // n, values >= 0
  std::optional<IntVector> env_known;   // n, values in {0,1}

  Dataset() = default;

  static Dataset make(Matrix features, IntVector labels, IntVector env_ids,
                      std::optional<IntVector> group_ids = std::nullopt,
                      std::optional<IntVector> env_known = std::nullopt);

  Eigen::Index n() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }

  // True when the row's environment label may be used (mask absent => all).
  bool env_label_available(Eigen::Index row) const {
    return !env_known.has_value() || (*env_known)[row] != 0;
  }

  // Sorted distinct environment ids, optionally restricted to env-known rows.
  std::vector<int> environment_ids(bool restrict_to_known = false) const;

  void validate() const;
};

namespace datamodel {

struct EnvParams {
  Vector mu_spu;     // per-environment spurious mean
  double sigma_spu;  // per-environment spurious standard deviation
};

// Generative parameters of the environment family. Construct through make()
// (validates) or unchecked() (test-only bypass, e.g. for zero-noise cases).
class EnvironmentSpec {
 public:
  Vector mu_inv;
  double sigma_inv = 1.0;
  std::vector<EnvParams> env_params;
  Matrix transform;  // d x d, columns [invariant block | spurious block]
  double class_prior = 0.5;

  static EnvironmentSpec make(Vector mu_inv, double sigma_inv, std::vector<EnvParams> env_params,
                              Matrix transform, double class_prior);

  // No validation; lets tests build degenerate specs (e.g. sigma == 0).
  static EnvironmentSpec unchecked(Vector mu_inv, double sigma_inv,
                                   std::vector<EnvParams> env_params, Matrix transform,
                                   double class_prior);

  Eigen::Index d_inv() const { return mu_inv.size(); }
  Eigen::Index d_spu() const { return env_params.empty() ? 0 : env_params.front().mu_spu.size(); }
  Eigen::Index d() const { return d_inv() + d_spu(); }
  int n_envs() const { return static_cast<int>(env_params.size()); }

  Matrix invariant_block() const { return transform.leftCols(d_inv()); }
  Matrix spurious_block() const { return transform.rightCols(d_spu()); }

  void validate() const;
};

struct Moments {
  Vector mean;
  Matrix covariance;
};

// Draws n samples from environment `env_index`: label from the class prior,
// latent blocks from their Gaussians, observation = transform * latent.
// Deterministic given (spec, env_index, n, seed); n == 0 yields an empty set.
Dataset sample_environment(const EnvironmentSpec& spec, int env_index, Eigen::Index n,
                           std::uint64_t seed);

// Exact class-conditional observation mean and covariance for one environment.
Moments population_moments(const EnvironmentSpec& spec, int env_index, int label);

// Closed-form invariant-optimal predictor in observation space. Its score
// depends only on the invariant latent block, for any full-rank transform.
LinearPredictor oracle_predictor(const EnvironmentSpec& spec);

// Orthonormalization of a seeded Gaussian matrix (QR with the triangular
// factor's diagonal made positive, so results are reproducible bit-for-bit).
Matrix random_orthonormal_transform(Eigen::Index d, std::uint64_t seed);

}  // namespace datamodel
}  // namespace isr
