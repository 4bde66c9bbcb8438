#include "isr/subspace.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

namespace isr::subspace {

namespace {

constexpr double kOrthonormalTol = 1e-8;
constexpr double kRelativeDistinctnessTol = 1e-8;
// Multiplier on the estimated sampling-noise floor below which covariance
// differences are treated as indistinguishable from noise.
constexpr double kNoiseFloorFactor = 1.5;

// Fix eigenvector sign: first component of magnitude above 1e-12 is positive.
void normalize_sign(Eigen::Ref<Matrix> vectors) {
  for (Eigen::Index c = 0; c < vectors.cols(); ++c) {
    for (Eigen::Index r = 0; r < vectors.rows(); ++r) {
      const double v = vectors(r, c);
      if (std::abs(v) > 1e-12) {
        if (v < 0.0) vectors.col(c) = -vectors.col(c);
        break;
      }
    }
  }
}

// Sample covariance with the 1/n convention over the given rows.
Matrix covariance_of_rows(const Matrix& features, const std::vector<Eigen::Index>& rows) {
  const Eigen::Index d = features.cols();
  Vector mean = Vector::Zero(d);
  for (Eigen::Index r : rows) mean += features.row(r).transpose();
  mean /= static_cast<double>(rows.size());
  Matrix cov = Matrix::Zero(d, d);
  for (Eigen::Index r : rows) {
    const Vector delta = features.row(r).transpose() - mean;
    cov.noalias() += delta * delta.transpose();
  }
  cov /= static_cast<double>(rows.size());
  return cov;
}

// Label-matching row indices per environment, restricted to rows whose
// environment label is available; environments are keyed in ascending order.
std::map<int, std::vector<Eigen::Index>> rows_by_environment(const Dataset& data, int label) {
  if (label != 1 && label != -1)
    throw std::invalid_argument("class conditioning label must be +1 or -1");
  std::map<int, std::vector<Eigen::Index>> by_env;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    if (!data.env_label_available(i)) continue;
    auto& rows = by_env[data.env_ids[i]];  // environment counts as present
    if (data.labels[i] == label) rows.push_back(i);
  }
  return by_env;
}

struct PairChoice {
  int a = 0, b = 0;          // indices into the covariance list
  double diff_norm = 0.0;
  Matrix delta;
};

double pair_noise_floor_sq(const CovarianceSet& covs, int a, int b) {
  return covs.noise_floor_sq[static_cast<std::size_t>(a)] +
         covs.noise_floor_sq[static_cast<std::size_t>(b)];
}

std::string describe_env(const CovarianceSet& covs, int idx) {
  return std::to_string(covs.env_ids[static_cast<std::size_t>(idx)]);
}

}  // namespace

SubspaceBasis::SubspaceBasis(Matrix basis_rows, Vector spectrum)
    : rows(std::move(basis_rows)), eigenvalues(std::move(spectrum)) {
  if (rows.rows() > rows.cols())
    throw std::invalid_argument("SubspaceBasis: more rows than the ambient dimension");
  const Matrix gram = rows * rows.transpose();
  const double dev = (gram - Matrix::Identity(rows.rows(), rows.rows())).cwiseAbs().maxCoeff();
  if (!(dev <= kOrthonormalTol))
    throw std::invalid_argument("SubspaceBasis: rows are not orthonormal (max deviation " +
                                std::to_string(dev) + ")");
}

SymmetricEigen eigendecompose_symmetric(const Matrix& m) {
  if (m.rows() != m.cols())
    throw std::invalid_argument("eigendecompose_symmetric: matrix must be square");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-8 * scale)
    throw std::invalid_argument("eigendecompose_symmetric: matrix is not symmetric");
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> solver(sym);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("eigendecompose_symmetric: eigensolver failed to converge");
  SymmetricEigen out;
  out.values = solver.eigenvalues();
  out.vectors = solver.eigenvectors();
  normalize_sign(out.vectors);
  return out;
}

std::vector<double> eigen_gap_ratios(const Vector& spectrum) {
  std::vector<double> ratios;
  for (Eigen::Index i = 0; i + 1 < spectrum.size(); ++i) {
    const double lo = std::abs(spectrum[i]), hi = std::abs(spectrum[i + 1]);
    ratios.push_back(lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity());
  }
  return ratios;
}

MeanMatrix class_conditional_means(const Dataset& data, int label) {
  const auto by_env = rows_by_environment(data, label);
  MeanMatrix out;
  out.rows.resize(static_cast<Eigen::Index>(by_env.size()), data.dim());
  Eigen::Index r = 0;
  for (const auto& [env, rows] : by_env) {
    if (rows.empty())
      throw std::runtime_error("class_conditional_means: environment " + std::to_string(env) +
                               " has no samples with label " + std::to_string(label));
    Vector mean = Vector::Zero(data.dim());
    for (Eigen::Index i : rows) mean += data.features.row(i).transpose();
    out.rows.row(r++) = (mean / static_cast<double>(rows.size())).transpose();
    out.env_ids.push_back(env);
  }
  return out;
}

CovarianceSet class_conditional_covariances(const Dataset& data, int label) {
  const auto by_env = rows_by_environment(data, label);
  CovarianceSet out;
  for (const auto& [env, rows] : by_env) {
    if (rows.size() < 2)
      throw std::runtime_error("class_conditional_covariances: environment " +
                               std::to_string(env) + " has fewer than 2 samples with label " +
                               std::to_string(label));
    out.covariances.push_back(covariance_of_rows(data.features, rows));
    out.env_ids.push_back(env);
    out.counts.push_back(static_cast<Eigen::Index>(rows.size()));

    // Half-split estimate of this environment's covariance sampling noise,
    // rescaled from the split sizes to the full sample size.
    double floor_sq = 0.0;
    if (rows.size() >= 4) {
      std::vector<Eigen::Index> half1, half2;
      for (std::size_t i = 0; i < rows.size(); ++i)
        (i % 2 == 0 ? half1 : half2).push_back(rows[i]);
      const Matrix delta =
          covariance_of_rows(data.features, half1) - covariance_of_rows(data.features, half2);
      const double inv_split = 1.0 / static_cast<double>(half1.size()) +
                               1.0 / static_cast<double>(half2.size());
      floor_sq = delta.squaredNorm() * (1.0 / static_cast<double>(rows.size())) / inv_split;
    }
    out.noise_floor_sq.push_back(floor_sq);
  }
  return out;
}

SubspaceBasis isr_mean_from_means(const MeanMatrix& means, Eigen::Index d_inv,
                                  bool invert_selection) {
  const Eigen::Index n_envs = means.rows.rows();
  const Eigen::Index d = means.rows.cols();
  if (n_envs < 2)
    throw std::runtime_error("isr_mean: at least 2 environments with data are required");
  if (d_inv < 1 || d_inv > d)
    throw std::invalid_argument("isr_mean: d_inv must lie in [1, d]");

  Matrix centered = means.rows;
  const Vector column_mean = centered.colwise().mean().transpose();
  centered.rowwise() -= column_mean.transpose();
  const Matrix gram =
      (centered.transpose() * centered) / static_cast<double>(n_envs);

  const SymmetricEigen eig = eigendecompose_symmetric(gram);
  if (!invert_selection)
    return SubspaceBasis(eig.vectors.leftCols(d_inv).transpose(), eig.values);

  // Spurious side: the d_inv largest eigenvalues, selection order descending.
  return SubspaceBasis(eig.vectors.rightCols(d_inv).rowwise().reverse().transpose(),
                       eig.values.reverse());
}

SubspaceBasis isr_mean(const Dataset& data, Eigen::Index d_inv, int label) {
  return isr_mean_from_means(class_conditional_means(data, label), d_inv, false);
}

SubspaceBasis isr_mean_spurious(const MeanMatrix& means, Eigen::Index k) {
  const Eigen::Index usable = std::min<Eigen::Index>(k, means.rows.rows() - 1);
  if (usable < 1)
    throw std::runtime_error("isr_mean_spurious: need k >= 1 and at least 2 environments");
  return isr_mean_from_means(means, usable, true);
}

namespace {

// Orders eigenpairs of a (possibly indefinite) symmetric matrix by ascending
// |lambda|, breaking ties by signed value then original position.
SymmetricEigen abs_sorted_eigen(const Matrix& m) {
  SymmetricEigen eig = eigendecompose_symmetric(m);
  const Eigen::Index d = eig.values.size();
  std::vector<Eigen::Index> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](Eigen::Index i, Eigen::Index j) {
    const double ai = std::abs(eig.values[i]), aj = std::abs(eig.values[j]);
    if (ai != aj) return ai < aj;
    if (eig.values[i] != eig.values[j]) return eig.values[i] < eig.values[j];
    return i < j;
  });
  SymmetricEigen out;
  out.values.resize(d);
  out.vectors.resize(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    out.values[i] = eig.values[order[i]];
    out.vectors.col(i) = eig.vectors.col(order[i]);
  }
  return out;
}

SubspaceBasis basis_from_delta(const Matrix& delta, Eigen::Index d_inv, bool invert_selection) {
  const SymmetricEigen eig = abs_sorted_eigen(delta);
  if (!invert_selection)
    return SubspaceBasis(eig.vectors.leftCols(d_inv).transpose(), eig.values);
  return SubspaceBasis(eig.vectors.rightCols(d_inv).rowwise().reverse().transpose(),
                       eig.values.reverse());
}

void check_covariance_shapes(const std::vector<Matrix>& covariances) {
  if (covariances.size() < 2)
    throw std::runtime_error("isr_cov: at least 2 environments are required");
  const Eigen::Index d = covariances.front().rows();
  for (const auto& c : covariances)
    if (c.rows() != d || c.cols() != d)
      throw std::invalid_argument("isr_cov: covariances must be square with equal dimensions");
}

double max_covariance_norm(const std::vector<Matrix>& covariances) {
  double max_norm = 0.0;
  for (const auto& c : covariances) max_norm = std::max(max_norm, c.norm());
  return max_norm;
}

DistinctnessError make_distinctness_error(double best_norm, double threshold) {
  std::ostringstream msg;
  msg << "isr_cov requires a pair of training environments with distinct class-conditional "
         "covariances; the largest pairwise difference has Frobenius norm "
      << best_norm << ", below the distinctness threshold " << threshold;
  return DistinctnessError(msg.str());
}

}  // namespace

SubspaceBasis isr_cov_from_covariances(const std::vector<Matrix>& covariances, Eigen::Index d_inv,
                                       std::optional<std::pair<int, int>> pair,
                                       double pair_noise_floor_sq, bool invert_selection) {
  check_covariance_shapes(covariances);
  const Eigen::Index d = covariances.front().rows();
  if (d_inv < 1 || d_inv > d)
    throw std::invalid_argument("isr_cov: d_inv must lie in [1, d]");

  const int count = static_cast<int>(covariances.size());
  PairChoice choice;
  if (pair) {
    const auto [a, b] = *pair;
    if (a < 0 || b < 0 || a >= count || b >= count || a == b)
      throw std::invalid_argument("isr_cov: invalid environment pair");
    choice = {a, b, 0.0, covariances[a] - covariances[b]};
    choice.diff_norm = choice.delta.norm();
  } else {
    for (int a = 0; a < count; ++a)
      for (int b = a + 1; b < count; ++b) {
        const double norm = (covariances[a] - covariances[b]).norm();
        if (norm > choice.diff_norm) choice = {a, b, norm, Matrix()};
      }
    choice.delta = covariances[choice.a] - covariances[choice.b];
  }

  const double threshold =
      std::max(kRelativeDistinctnessTol * max_covariance_norm(covariances),
               kNoiseFloorFactor * std::sqrt(std::max(0.0, pair_noise_floor_sq)));
  if (!(choice.diff_norm > threshold)) throw make_distinctness_error(choice.diff_norm, threshold);

  return basis_from_delta(choice.delta, d_inv, invert_selection);
}

namespace {

// Between-environment covariance scatter versus what sampling noise alone
// would produce. Fails when the whole covariance family is statistically
// indistinguishable from a single shared covariance.
void check_environment_distinctness(const CovarianceSet& covs) {
  const Eigen::Index d = covs.covariances.front().rows();
  const int count = covs.n_envs();
  Matrix mean_cov = Matrix::Zero(d, d);
  for (const auto& c : covs.covariances) mean_cov += c;
  mean_cov /= static_cast<double>(count);

  double scatter = 0.0;
  for (const auto& c : covs.covariances) scatter += (c - mean_cov).squaredNorm();
  double noise_sum = 0.0;
  for (double f : covs.noise_floor_sq) noise_sum += f;
  const double null_scatter = (1.0 - 1.0 / static_cast<double>(count)) * noise_sum;

  if (scatter <= kNoiseFloorFactor * kNoiseFloorFactor * null_scatter) {
    std::ostringstream msg;
    msg << "isr_cov requires a pair of training environments with distinct class-conditional "
           "covariances; the observed between-environment covariance scatter (" << scatter
        << ") is within the sampling-noise floor (" << null_scatter
        << "), so all environments look identically distributed along every direction";
    throw DistinctnessError(msg.str());
  }
}

}  // namespace

SubspaceBasis isr_cov(const Dataset& data, Eigen::Index d_inv, int label,
                      std::optional<std::pair<int, int>> pair) {
  const CovarianceSet covs = class_conditional_covariances(data, label);
  check_covariance_shapes(covs.covariances);
  check_environment_distinctness(covs);

  std::optional<std::pair<int, int>> index_pair;
  double floor_sq = 0.0;
  if (pair) {
    // Callers name environments by id; translate to positions in the set.
    const auto find = [&](int env) {
      const auto it = std::find(covs.env_ids.begin(), covs.env_ids.end(), env);
      if (it == covs.env_ids.end())
        throw std::invalid_argument("isr_cov: environment " + std::to_string(env) +
                                    " contributed no data");
      return static_cast<int>(it - covs.env_ids.begin());
    };
    index_pair = std::make_pair(find(pair->first), find(pair->second));
    floor_sq = pair_noise_floor_sq(covs, index_pair->first, index_pair->second);
  } else {
    // The selection below recomputes the argmax; the floor must match it.
    PairChoice best;
    for (int a = 0; a < covs.n_envs(); ++a)
      for (int b = a + 1; b < covs.n_envs(); ++b) {
        const double norm = (covs.covariances[a] - covs.covariances[b]).norm();
        if (norm > best.diff_norm) best = {a, b, norm, Matrix()};
      }
    floor_sq = pair_noise_floor_sq(covs, best.a, best.b);
  }
  return isr_cov_from_covariances(covs.covariances, d_inv, index_pair, floor_sq, false);
}

SubspaceBasis isr_cov_spurious(const Dataset& data, Eigen::Index k, int label) {
  const CovarianceSet covs = class_conditional_covariances(data, label);
  check_covariance_shapes(covs.covariances);
  check_environment_distinctness(covs);
  PairChoice best;
  for (int a = 0; a < covs.n_envs(); ++a)
    for (int b = a + 1; b < covs.n_envs(); ++b) {
      const double norm = (covs.covariances[a] - covs.covariances[b]).norm();
      if (norm > best.diff_norm) best = {a, b, norm, Matrix()};
    }
  const double floor_sq = pair_noise_floor_sq(covs, best.a, best.b);
  return isr_cov_from_covariances(covs.covariances, k, std::nullopt, floor_sq, true);
}

SubspaceBasis isr_cov_robust(const Dataset& data, Eigen::Index d_inv, int label, int max_pairs) {
  if (max_pairs < 1) throw std::invalid_argument("isr_cov_robust: max_pairs must be >= 1");
  const CovarianceSet covs = class_conditional_covariances(data, label);
  check_covariance_shapes(covs.covariances);
  check_environment_distinctness(covs);

  struct RankedPair {
    double norm;
    int a, b;
  };
  std::vector<RankedPair> ranked;
  const double rel_threshold = kRelativeDistinctnessTol * max_covariance_norm(covs.covariances);
  for (int a = 0; a < covs.n_envs(); ++a)
    for (int b = a + 1; b < covs.n_envs(); ++b) {
      const double norm = (covs.covariances[a] - covs.covariances[b]).norm();
      const double threshold = std::max(
          rel_threshold, kNoiseFloorFactor * std::sqrt(pair_noise_floor_sq(covs, a, b)));
      if (norm > threshold) ranked.push_back({norm, a, b});
    }
  if (ranked.empty()) {
    double best = 0.0;
    for (int a = 0; a < covs.n_envs(); ++a)
      for (int b = a + 1; b < covs.n_envs(); ++b)
        best = std::max(best, (covs.covariances[a] - covs.covariances[b]).norm());
    throw make_distinctness_error(best, rel_threshold);
  }
  std::sort(ranked.begin(), ranked.end(), [](const RankedPair& x, const RankedPair& y) {
    if (x.norm != y.norm) return x.norm > y.norm;
    return std::tie(x.a, x.b) < std::tie(y.a, y.b);
  });
  if (static_cast<int>(ranked.size()) > max_pairs) ranked.resize(static_cast<std::size_t>(max_pairs));

  std::vector<SubspaceBasis> bases;
  bases.reserve(ranked.size());
  for (const auto& p : ranked) {
    const Matrix delta = covs.covariances[p.a] - covs.covariances[p.b];
    bases.push_back(basis_from_delta(delta, d_inv, false));
  }
  if (bases.size() == 1) return bases.front();
  return flag_mean(bases, d_inv);
}

SubspaceBasis flag_mean(const std::vector<SubspaceBasis>& bases, Eigen::Index k) {
  if (bases.empty()) throw std::invalid_argument("flag_mean: empty basis list");
  const Eigen::Index d = bases.front().ambient_dim();
  Eigen::Index total = 0;
  for (const auto& b : bases) {
    if (b.ambient_dim() != d)
      throw std::invalid_argument("flag_mean: bases must share one ambient dimension");
    total += b.k();
  }
  if (k < 1 || k > d || k > total)
    throw std::invalid_argument("flag_mean: k must lie in [1, min(d, total basis rows)]");

  Matrix stacked(d, total);
  Eigen::Index col = 0;
  for (const auto& b : bases)
    for (Eigen::Index r = 0; r < b.k(); ++r) stacked.col(col++) = b.rows.row(r).transpose();

  Eigen::BDCSVD<Matrix> svd(stacked, Eigen::ComputeThinU);
  Matrix u = svd.matrixU().leftCols(k);
  normalize_sign(u);
  return SubspaceBasis(u.transpose(), svd.singularValues());
}

Vector principal_angles(const SubspaceBasis& a, const SubspaceBasis& b) {
  if (a.ambient_dim() != b.ambient_dim())
    throw std::invalid_argument("principal_angles: ambient dimensions differ");
  const Matrix overlap = a.rows * b.rows.transpose();
  Eigen::JacobiSVD<Matrix> svd(overlap);
  Vector angles = svd.singularValues();
  for (Eigen::Index i = 0; i < angles.size(); ++i)
    angles[i] = std::acos(std::min(1.0, std::max(0.0, angles[i])));
  // Singular values come out descending, so angles are already ascending.
  return angles;
}

}  // namespace isr::subspace
