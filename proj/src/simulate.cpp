#include "sslb/simulate.hpp"

#include "sslb/outcome.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sslb {

namespace {

// Distinct RNG streams per generator block so the expression data is
// identical across outcome regimes sharing a seed.
enum Stream : std::uint64_t {
  kLoadings = 11,
  kFactors = 12,
  kNoise = 13,
  kWeightsInformative = 14,
  kOutcomesInformative = 15,
  kWeightsNoninformative = 16,
  kOutcomesNoninformative = 17,
};

std::vector<int> sample_without_replacement(int n, int count, Rng& rng) {
  std::vector<int> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  for (int t = 0; t < count; ++t) {
    const int pick = t + rng.uniform_int(0, n - t - 1);
    std::swap(pool[t], pool[pick]);
  }
  std::vector<int> out(pool.begin(), pool.begin() + count);
  std::sort(out.begin(), out.end());
  return out;
}

std::pair<Matrix, std::vector<std::vector<int>>> simulate_sparse_columns(
    int rows, int k, int size_lo, int size_hi, Rng& rng) {
  Matrix m(rows, k);
  std::vector<std::vector<int>> members(k);
  for (int c = 0; c < k; ++c) {
    const int count = rng.uniform_int(size_lo, size_hi);
    members[c] = sample_without_replacement(rows, count, rng);
    const double mean = rng.bernoulli(0.5) ? 2.0 : -2.0;
    std::vector<char> in(rows, 0);
    for (int idx : members[c]) in[idx] = 1;
    for (int r = 0; r < rows; ++r)
      m(r, c) = in[r] ? rng.normal(mean, 1.0) : rng.normal(0.0, 0.2);
  }
  return {m, members};
}

}  // namespace

std::pair<Matrix, std::vector<std::vector<int>>> simulate_loadings(int n, int k,
                                                                   Rng& rng) {
  if (n < 20)
    throw Error(ErrorCode::DimensionMismatch,
                "loading simulation needs at least 20 samples");
  return simulate_sparse_columns(n, k, 5, 20, rng);
}

std::pair<Matrix, std::vector<std::vector<int>>> simulate_factors(int g, int k,
                                                                  Rng& rng) {
  if (g < 50)
    throw Error(ErrorCode::DimensionMismatch,
                "factor simulation needs at least 50 genes");
  return simulate_sparse_columns(g, k, 10, 50, rng);
}

Matrix build_weight_matrix(int k, int c, double epsilon, bool informative,
                           Rng& rng) {
  if (c < 2)
    throw Error(ErrorCode::DimensionMismatch,
                "weight matrix needs at least 2 classes");
  Matrix w = Matrix::Zero(k + 1, c);
  const int reference = 0;
  if (!informative) {
    for (int r = 0; r < k + 1; ++r)
      for (int l = 0; l < c; ++l) w(r, l) = rng.normal(0.0, 0.01);
    w.col(reference).setZero();
    return w;
  }
  for (int l = 0; l < c; ++l)
    if (l != reference) w(0, l) = std::log(epsilon);
  for (int r = 1; r < k + 1; ++r) {
    // one randomly chosen non-reference class per bicluster row
    const int pick = rng.uniform_int(1, c - 1);
    w(r, pick) = std::log(1.0 / epsilon);
  }
  return w;
}

OutcomeMatrix simulate_outcomes(const Matrix& w, const Matrix& memberships,
                                Rng& rng) {
  const Eigen::Index n = memberships.rows();
  const Eigen::Index c = w.cols();
  const AugmentedIndicatorSample aug = augment_indicators(memberships);
  const Matrix probs = mlr_probabilities(w, aug);

  OutcomeMatrix y;
  y.values = Matrix::Zero(n, c);
  y.reference_class = 0;
  y.class_labels.resize(c);
  y.class_labels[0] = "HC";
  for (Eigen::Index l = 1; l < c; ++l)
    y.class_labels[l] = "D" + std::to_string(l);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double u = rng.uniform();
    double acc = 0.0;
    Eigen::Index pick = c - 1;
    for (Eigen::Index l = 0; l < c; ++l) {
      acc += probs(i, l);
      if (u < acc) {
        pick = l;
        break;
      }
    }
    y.values(i, pick) = 1.0;
  }
  return y;
}

SimulatedDataset simulate_dataset(const SimConfig& cfg) {
  const RngKey key(cfg.seed);
  SimulatedDataset out;
  out.seed = cfg.seed;

  Rng rng_load = key.at(kLoadings).rng();
  auto [lambda, sample_sets] =
      simulate_loadings(cfg.n_samples, cfg.n_biclusters, rng_load);
  Rng rng_fact = key.at(kFactors).rng();
  auto [z, gene_sets] =
      simulate_factors(cfg.n_genes, cfg.n_biclusters, rng_fact);

  Rng rng_noise = key.at(kNoise).rng();
  Matrix noise(cfg.n_samples, cfg.n_genes);
  for (int i = 0; i < cfg.n_samples; ++i)
    for (int j = 0; j < cfg.n_genes; ++j) noise(i, j) = rng_noise.normal();

  out.true_lambda = lambda;
  out.true_z = z;
  out.x.values = lambda * z.transpose() + noise;
  out.x.sample_ids.resize(cfg.n_samples);
  out.x.gene_ids.resize(cfg.n_genes);
  for (int i = 0; i < cfg.n_samples; ++i)
    out.x.sample_ids[i] = "S" + std::to_string(i + 1);
  for (int j = 0; j < cfg.n_genes; ++j)
    out.x.gene_ids[j] = "G" + std::to_string(j + 1);

  for (int c = 0; c < cfg.n_biclusters; ++c) {
    Bicluster b;
    b.samples = sample_sets[c];
    b.genes = gene_sets[c];
    out.truth.biclusters.push_back(std::move(b));
  }

  Matrix memberships = Matrix::Zero(cfg.n_samples, cfg.n_biclusters);
  for (int c = 0; c < cfg.n_biclusters; ++c)
    for (int idx : sample_sets[c]) memberships(idx, c) = 1.0;

  Rng rng_w = key.at(cfg.informative ? kWeightsInformative
                                     : kWeightsNoninformative)
                  .rng();
  out.true_w = build_weight_matrix(cfg.n_biclusters, cfg.n_classes, cfg.epsilon,
                                   cfg.informative, rng_w);
  Rng rng_y = key.at(cfg.informative ? kOutcomesInformative
                                     : kOutcomesNoninformative)
                  .rng();
  out.y = simulate_outcomes(out.true_w, memberships, rng_y);
  return out;
}

}  // namespace sslb
