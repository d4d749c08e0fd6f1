#include "sslb/evaluate.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <thread>

namespace sslb {

std::string to_string(Method m) {
  switch (m) {
    case Method::Sslb: return "SSLB";
    case Method::OgSslbInformative: return "OG-SSLB-inf";
    case Method::OgSslbNoninformative: return "OG-SSLB-noninf";
  }
  return "SSLB";
}

Method method_from_string(const std::string& s) {
  if (s == "SSLB" || s == "sslb") return Method::Sslb;
  if (s == "OG-SSLB-inf" || s == "og-sslb-informative")
    return Method::OgSslbInformative;
  if (s == "OG-SSLB-noninf" || s == "og-sslb-noninformative")
    return Method::OgSslbNoninformative;
  throw Error(ErrorCode::ConfigParse, "unknown method: " + s);
}

namespace {

std::size_t intersection_size(const std::vector<int>& a,
                              const std::vector<int>& b) {
  std::size_t count = 0, i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j])
      ++i;
    else if (a[i] > b[j])
      ++j;
    else {
      ++count;
      ++i;
      ++j;
    }
  }
  return count;
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 == 1 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

}  // namespace

double jaccard(const Bicluster& a, const Bicluster& b) {
  const double inter =
      static_cast<double>(intersection_size(a.samples, b.samples)) *
      static_cast<double>(intersection_size(a.genes, b.genes));
  const double cells_a =
      static_cast<double>(a.samples.size()) * static_cast<double>(a.genes.size());
  const double cells_b =
      static_cast<double>(b.samples.size()) * static_cast<double>(b.genes.size());
  const double uni = cells_a + cells_b - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double max_weight_assignment(const Matrix& similarity) {
  const int n = static_cast<int>(
      std::max(similarity.rows(), similarity.cols()));
  if (n == 0) return 0.0;
  const double smax = similarity.size() > 0 ? similarity.maxCoeff() : 0.0;
  // Square cost matrix for the minimizing Hungarian routine; padding cells
  // carry similarity 0.
  Matrix cost = Matrix::Constant(n, n, smax);
  cost.topLeftCorner(similarity.rows(), similarity.cols()) =
      smax - similarity.array();

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0);
  }

  double total = 0.0;
  for (int j = 1; j <= n; ++j) {
    const int i = match[j];
    if (i >= 1 && i <= similarity.rows() && j <= similarity.cols())
      total += similarity(i - 1, j - 1);
  }
  return total;
}

double consensus_score(const BiclusterSet& found, const BiclusterSet& truth) {
  const int kf = found.k_hat();
  const int kt = truth.k_hat();
  if (kf == 0 && kt == 0) return 1.0;
  if (kf == 0 || kt == 0) return 0.0;
  Matrix sim(kf, kt);
  for (int a = 0; a < kf; ++a)
    for (int b = 0; b < kt; ++b)
      sim(a, b) = jaccard(found.biclusters[a], truth.biclusters[b]);
  return max_weight_assignment(sim) / std::max(kf, kt);
}

double ReplicateSummary::mean_score() const {
  if (consensus_scores.empty()) return 0.0;
  double s = 0.0;
  for (double v : consensus_scores) s += v;
  return s / consensus_scores.size();
}

double ReplicateSummary::median_score() const {
  return median_of(consensus_scores);
}

double ReplicateSummary::mean_k_hat() const {
  if (k_hats.empty()) return 0.0;
  double s = 0.0;
  for (int v : k_hats) s += v;
  return s / k_hats.size();
}

StudyResult run_replicate_study(const StudyConfig& cfg) {
  SimConfig sim_inf = cfg.simulation;
  sim_inf.informative = true;
  sim_inf.seed = cfg.dataset_seed;
  const SimulatedDataset ds_inf = simulate_dataset(sim_inf);

  bool need_noninf = false;
  for (Method m : cfg.methods)
    if (m == Method::OgSslbNoninformative) need_noninf = true;
  SimulatedDataset ds_non;
  if (need_noninf) {
    SimConfig sim_non = cfg.simulation;
    sim_non.informative = false;
    sim_non.seed = cfg.dataset_seed;
    ds_non = simulate_dataset(sim_non);
  }

  struct Task {
    Method method;
    PriorVariant variant;
    int replicate;
  };
  std::vector<Task> tasks;
  for (Method m : cfg.methods)
    for (PriorVariant v : cfg.prior_variants)
      for (int r = 0; r < cfg.n_replicates; ++r) tasks.push_back({m, v, r});

  std::vector<ReplicateRecord> records(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t idx = next.fetch_add(1);
      if (idx >= tasks.size()) return;
      const Task& task = tasks[idx];
      FitConfig fc = cfg.base_fit;
      fc.prior_variant = task.variant;
      fc.d = task.variant == PriorVariant::PY ? (cfg.base_fit.d > 0.0 ? cfg.base_fit.d : 0.5)
                                              : 0.0;
      fc.outcome_guided = task.method != Method::Sslb;
      fc.seed = cfg.algo_seed_base + static_cast<std::uint64_t>(task.replicate);
      const OutcomeMatrix* y = nullptr;
      if (task.method == Method::OgSslbInformative) y = &ds_inf.y;
      if (task.method == Method::OgSslbNoninformative) y = &ds_non.y;

      const auto t0 = std::chrono::steady_clock::now();
      const FitResult fit = run_sslb(ds_inf.x, y, fc);
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();

      ReplicateRecord rec;
      rec.method = task.method;
      rec.variant = task.variant;
      rec.seed = fc.seed;
      rec.score = consensus_score(fit.biclusters, ds_inf.truth);
      rec.k_hat = fit.biclusters.k_hat();
      rec.runtime_seconds = secs;
      records[idx] = rec;
    }
  };

  const int workers = std::max(1, cfg.workers);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  StudyResult result;
  result.records = std::move(records);
  for (Method m : cfg.methods) {
    for (PriorVariant v : cfg.prior_variants) {
      ReplicateSummary s;
      s.method_label = to_string(m);
      s.prior_variant = to_string(v);
      for (const ReplicateRecord& rec : result.records) {
        if (rec.method == m && rec.variant == v) {
          s.consensus_scores.push_back(rec.score);
          s.k_hats.push_back(rec.k_hat);
          s.seeds.push_back(rec.seed);
        }
      }
      result.summaries.push_back(std::move(s));
    }
  }
  return result;
}

}  // namespace sslb
