#include "isr/datamodel.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include <Eigen/Dense>

#include "isr/rng.hpp"

namespace isr {

Dataset Dataset::make(Matrix features, IntVector labels, IntVector env_ids,
                      std::optional<IntVector> group_ids, std::optional<IntVector> env_known) {
  Dataset d;
  d.features = std::move(features);
  d.labels = std::move(labels);
  d.env_ids = std::move(env_ids);
  d.group_ids = std::move(group_ids);
  d.env_known = std::move(env_known);
  d.validate();
  return d;
}

void Dataset::validate() const {
  const Eigen::Index rows = features.rows();
  if (labels.size() != rows || env_ids.size() != rows)
    throw std::invalid_argument("Dataset: labels/env_ids length must equal feature row count");
  if (group_ids && group_ids->size() != rows)
    throw std::invalid_argument("Dataset: group_ids length must equal feature row count");
  if (env_known && env_known->size() != rows)
    throw std::invalid_argument("Dataset: env_known length must equal feature row count");
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (labels[i] != 1 && labels[i] != -1)
      throw std::invalid_argument("Dataset: labels must be +1 or -1");
    if (env_ids[i] < 0) throw std::invalid_argument("Dataset: env_ids must be non-negative");
    if (env_known && ((*env_known)[i] < 0 || (*env_known)[i] > 1))
      throw std::invalid_argument("Dataset: env_known entries must be 0 or 1");
  }
}

std::vector<int> Dataset::environment_ids(bool restrict_to_known) const {
  std::set<int> ids;
  for (Eigen::Index i = 0; i < n(); ++i) {
    if (restrict_to_known && !env_label_available(i)) continue;
    ids.insert(env_ids[i]);
  }
  return std::vector<int>(ids.begin(), ids.end());
}

namespace datamodel {

EnvironmentSpec EnvironmentSpec::unchecked(Vector mu_inv, double sigma_inv,
                                           std::vector<EnvParams> env_params, Matrix transform,
                                           double class_prior) {
  EnvironmentSpec s;
  s.mu_inv = std::move(mu_inv);
  s.sigma_inv = sigma_inv;
  s.env_params = std::move(env_params);
  s.transform = std::move(transform);
  s.class_prior = class_prior;
  return s;
}

EnvironmentSpec EnvironmentSpec::make(Vector mu_inv, double sigma_inv,
                                      std::vector<EnvParams> env_params, Matrix transform,
                                      double class_prior) {
  EnvironmentSpec s = unchecked(std::move(mu_inv), sigma_inv, std::move(env_params),
                                std::move(transform), class_prior);
  s.validate();
  return s;
}

void EnvironmentSpec::validate() const {
  if (mu_inv.size() < 1) throw std::invalid_argument("EnvironmentSpec: d_inv must be positive");
  if (env_params.empty())
    throw std::invalid_argument("EnvironmentSpec: at least one environment is required");
  const Eigen::Index ds = env_params.front().mu_spu.size();
  if (ds < 1) throw std::invalid_argument("EnvironmentSpec: d_spu must be positive");
  for (const auto& e : env_params) {
    if (e.mu_spu.size() != ds)
      throw std::invalid_argument("EnvironmentSpec: all spurious means must share one dimension");
    if (!(e.sigma_spu > 0.0))
      throw std::invalid_argument("EnvironmentSpec: spurious sigma must be strictly positive");
  }
  if (!(sigma_inv > 0.0))
    throw std::invalid_argument("EnvironmentSpec: invariant sigma must be strictly positive");
  if (!(class_prior > 0.0 && class_prior < 1.0))
    throw std::invalid_argument("EnvironmentSpec: class prior must lie strictly inside (0,1)");
  if (transform.rows() != d() || transform.cols() != d())
    throw std::invalid_argument("EnvironmentSpec: transform must be d x d with d = d_inv + d_spu");
  // Relative full-rank check: the smallest singular value must clear a
  // scale-invariant threshold.
  Eigen::JacobiSVD<Matrix> svd(transform);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || !(sv(sv.size() - 1) > 1e-10 * sv(0)))
    throw std::invalid_argument("EnvironmentSpec: transform is rank deficient");
}

Dataset sample_environment(const EnvironmentSpec& spec, int env_index, Eigen::Index n,
                           std::uint64_t seed) {
  if (env_index < 0 || env_index >= spec.n_envs())
    throw std::domain_error("sample_environment: env_index out of range");
  if (n < 0) throw std::invalid_argument("sample_environment: n must be non-negative");

  const Eigen::Index dc = spec.d_inv(), ds = spec.d_spu(), d = spec.d();
  Matrix latent(n, d);
  IntVector labels(n);
  RandomStream rng = RandomStream::derived(
      seed, {stream_tag::kEnvironmentSample, static_cast<std::uint64_t>(env_index)});
  const EnvParams& env = spec.env_params[static_cast<std::size_t>(env_index)];

  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = rng.bernoulli(spec.class_prior) ? 1 : -1;
    labels[i] = y;
    for (Eigen::Index j = 0; j < dc; ++j)
      latent(i, j) = y * spec.mu_inv[j] + spec.sigma_inv * rng.normal();
    for (Eigen::Index j = 0; j < ds; ++j)
      latent(i, dc + j) = y * env.mu_spu[j] + env.sigma_spu * rng.normal();
  }

  Dataset out;
  out.features = latent * spec.transform.transpose();
  out.labels = std::move(labels);
  out.env_ids = IntVector::Constant(n, env_index);
  out.validate();
  return out;
}

Moments population_moments(const EnvironmentSpec& spec, int env_index, int label) {
  if (env_index < 0 || env_index >= spec.n_envs())
    throw std::domain_error("population_moments: env_index out of range");
  if (label != 1 && label != -1)
    throw std::invalid_argument("population_moments: label must be +1 or -1");
  const EnvParams& env = spec.env_params[static_cast<std::size_t>(env_index)];
  const Matrix a = spec.invariant_block();
  const Matrix b = spec.spurious_block();

  Moments m;
  m.mean = label * (a * spec.mu_inv + b * env.mu_spu);
  m.covariance = spec.sigma_inv * spec.sigma_inv * (a * a.transpose()) +
                 env.sigma_spu * env.sigma_spu * (b * b.transpose());
  // Symmetrize away rounding so downstream eigensolvers see an exactly
  // symmetric matrix.
  m.covariance = 0.5 * (m.covariance + m.covariance.transpose()).eval();
  return m;
}

LinearPredictor oracle_predictor(const EnvironmentSpec& spec) {
  Vector latent_weights = Vector::Zero(spec.d());
  latent_weights.head(spec.d_inv()) = 2.0 * spec.mu_inv / (spec.sigma_inv * spec.sigma_inv);
  LinearPredictor p;
  // w'x = latent_weights' z for x = transform * z.
  p.weights = spec.transform.transpose().partialPivLu().solve(latent_weights);
  p.bias = std::log(spec.class_prior / (1.0 - spec.class_prior));
  return p;
}

Matrix random_orthonormal_transform(Eigen::Index d, std::uint64_t seed) {
  if (d < 1) throw std::invalid_argument("random_orthonormal_transform: d must be positive");
  RandomStream rng = RandomStream::derived(seed, {stream_tag::kTransform});
  const Matrix gaussian = rng.normal_matrix(d, d);
  Eigen::HouseholderQR<Matrix> qr(gaussian);
  Matrix q = qr.householderQ() * Matrix::Identity(d, d);
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < d; ++j)
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  return q;
}

}  // namespace datamodel
}  // namespace isr
