#pragma once

#include "sslb/em.hpp"
#include "sslb/simulate.hpp"
#include "sslb/types.hpp"

#include <string>
#include <vector>

namespace sslb {

enum class Method { Sslb, OgSslbInformative, OgSslbNoninformative };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

// Jaccard similarity of two biclusters over their cell sets
// (sample set x gene set).
double jaccard(const Bicluster& a, const Bicluster& b);

// FABIA-style consensus: optimal one-to-one assignment of pairwise Jaccard
// similarities divided by the larger set size.
double consensus_score(const BiclusterSet& found, const BiclusterSet& truth);

// Maximum-weight one-to-one assignment of a (padded) similarity matrix;
// returns the total matched weight.
double max_weight_assignment(const Matrix& similarity);

struct ReplicateRecord {
  Method method = Method::Sslb;
  PriorVariant variant = PriorVariant::BB;
  std::uint64_t seed = 0;
  double score = 0.0;
  int k_hat = 0;
  double runtime_seconds = 0.0;
};

struct ReplicateSummary {
  std::string method_label;
  std::string prior_variant;
  std::vector<double> consensus_scores;
  std::vector<int> k_hats;
  std::vector<std::uint64_t> seeds;

  double mean_score() const;
  double median_score() const;
  double mean_k_hat() const;
};

struct StudyConfig {
  int n_replicates = 10;
  std::vector<Method> methods = {Method::Sslb, Method::OgSslbInformative};
  std::vector<PriorVariant> prior_variants = {PriorVariant::BB,
                                              PriorVariant::IBP,
                                              PriorVariant::PY};
  FitConfig base_fit;
  SimConfig simulation;
  std::uint64_t dataset_seed = 20240601;
  std::uint64_t algo_seed_base = 100;  // replicate r uses base + r
  int workers = 1;
};

struct StudyResult {
  std::vector<ReplicateRecord> records;    // ordered (method, variant, rep)
  std::vector<ReplicateSummary> summaries; // same order, one per cell
};

StudyResult run_replicate_study(const StudyConfig& cfg);

}  // namespace sslb
