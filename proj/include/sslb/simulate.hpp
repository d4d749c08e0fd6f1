#pragma once

#include "sslb/rng.hpp"
#include "sslb/types.hpp"

#include <vector>

namespace sslb {

struct SimConfig {
  int n_samples = 300;
  int n_genes = 1000;
  int n_biclusters = 15;
  int n_classes = 3;
  double epsilon = 0.25;
  bool informative = true;
  std::uint64_t seed = 1;
};

struct SimulatedDataset {
  ExpressionMatrix x;
  OutcomeMatrix y;
  BiclusterSet truth;
  Matrix true_lambda;
  Matrix true_z;
  Matrix true_w;
  std::uint64_t seed = 0;
};

// Loading columns: bicluster size ~ U{5..20}, member values N(+-2, 1) with
// the sign drawn per column, non-members N(0, 0.2^2).
std::pair<Matrix, std::vector<std::vector<int>>> simulate_loadings(int n, int k,
                                                                   Rng& rng);

// Factor columns: as loadings but bicluster size ~ U{10..50}.
std::pair<Matrix, std::vector<std::vector<int>>> simulate_factors(int g, int k,
                                                                  Rng& rng);

// Outcome weight matrix: informative regime puts log(eps) intercepts and one
// log(1/eps) cell per bicluster row in a random non-reference column;
// non-informative jitters every entry around log(1) = 0.
Matrix build_weight_matrix(int k, int c, double epsilon, bool informative,
                           Rng& rng);

OutcomeMatrix simulate_outcomes(const Matrix& w, const Matrix& memberships,
                                Rng& rng);

SimulatedDataset simulate_dataset(const SimConfig& cfg);

}  // namespace sslb
