#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace sslb {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class ErrorCode {
  DimensionMismatch,
  NonFiniteEntry,
  NotOneHot,
  DuplicateId,
  ZeroVarianceColumn,
  SingularPrecision,
  NonFiniteState,
  ConfigParse,
  Io,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

// Observed N x G expression matrix (rows = samples, columns = genes).
struct ExpressionMatrix {
  Matrix values;
  std::vector<std::string> sample_ids;
  std::vector<std::string> gene_ids;

  Eigen::Index n_samples() const { return values.rows(); }
  Eigen::Index n_genes() const { return values.cols(); }
};

// One-hot N x C outcome matrix; each sample carries exactly one class,
// including the reference ("healthy control") class.
struct OutcomeMatrix {
  Matrix values;
  std::vector<std::string> class_labels;
  int reference_class = 0;

  Eigen::Index n_samples() const { return values.rows(); }
  Eigen::Index n_classes() const { return values.cols(); }

  // Index of the observed class of sample i.
  int observed_class(Eigen::Index i) const {
    for (Eigen::Index l = 0; l < values.cols(); ++l)
      if (values(i, l) == 1.0) return static_cast<int>(l);
    return -1;
  }
};

enum class PriorVariant { BB, IBP, PY };

std::string to_string(PriorVariant v);
PriorVariant prior_variant_from_string(const std::string& s);

// Stochastic-optimisation settings for the ridge hyperparameter search.
// Non-positive delta_ula / c0 mean "auto".
struct SoulConfig {
  int n_iters = 150;
  int burn_in = 75;
  int inner_samples = 1;
  double delta_ula = 0.0;  // auto: 0.95 / L_f
  double c0 = 0.0;         // auto: 1 / (lambda0 * dimension)
  double p_exponent = 0.8;
  double theta_low = 1e-4;
  double theta_high = 1e4;
  bool log_scale = true;

  void validate() const;
};

// Every hyperparameter and schedule of a fit. Non-positive alpha, a_tilde
// and xi mean "auto" (1/K_init, 1/K_init and quantile-matched respectively).
struct FitConfig {
  int K_init = 30;
  PriorVariant prior_variant = PriorVariant::BB;
  std::vector<double> omega0_ladder = {1.0, 5.0,  10.0, 50.0, 100.0, 500.0,
                                       1e3, 1e4, 1e5,  1e6,  1e7};
  double omega1 = 1.0;
  std::vector<double> omega0_tilde_ladder =
      std::vector<double>(11, 5.0);
  double omega1_tilde = 1.0;
  double alpha = 0.0;        // auto: 1 / K_init
  double alpha_tilde = 1.0;
  double d = 0.0;            // Pitman-Yor discount
  double a_tilde = 0.0;      // auto: 1 / K_init
  double b_tilde = 1.0;
  double eta = 3.0;
  double xi = 0.0;           // auto: quantile calibration
  bool outcome_guided = false;
  int mc_gamma_samples = 50;     // M
  int mc_logsumexp_samples = 50; // m
  int mc_grad_samples = 30;      // J
  int agd_steps = 30;            // S
  SoulConfig soul;
  int soul_refresh_period = 0;   // 0: once per rung (first iteration)
  int em_max_iters_per_rung = 500;
  double em_tolerance = 1e-3;
  std::uint64_t seed = 1;

  void validate() const;
};

// Latent/parameter blocks of one EM run. All probability entries live in
// [0,1]; variances are floored strictly above zero; K-indexed blocks share
// K_current columns.
struct EmState {
  Matrix Z;                   // G x K gene loadings
  Matrix lambda_mean;         // N x K posterior means <lambda_i>
  std::vector<Matrix> lambda_second_moment;  // N matrices K x K, <l l^T>
  Matrix T;                   // N x K auxiliary variances tau_ik
  Vector sigma2;              // G noise variances
  Matrix gamma_tilde;         // N x K sample-membership expectations
  Matrix gamma;               // G x K gene-membership expectations
  Vector theta;               // K gene-side sparsity weights
  // IBP/PY: stick fractions nu_(l); BB: theta_tilde_k directly.
  Vector stick;
  Matrix W;                   // (K+1) x C MLR weights (row 0 = bias)
  double lambda_w = 1.0;
  int K_current = 0;
  PriorVariant variant = PriorVariant::BB;

  // theta_tilde_(k): product of stick fractions for IBP/PY, stick entry
  // itself for BB.
  Vector theta_tilde() const;
};

// Discrete biclusters: paired (sample indices, gene indices) sets.
struct Bicluster {
  std::vector<int> samples;
  std::vector<int> genes;
};

struct BiclusterSet {
  std::vector<Bicluster> biclusters;

  int k_hat() const { return static_cast<int>(biclusters.size()); }
};

// --- model_core operations ---

void validate_inputs(const ExpressionMatrix& x,
                     const OutcomeMatrix* y = nullptr);

// Unbiased per-column sample variances.
Vector column_variances(const Matrix& values);

// Single shared xi such that the 0.95 quantile of the
// inverse-gamma(eta/2, eta*xi/2) prior equals the median column variance.
double calibrate_xi(const ExpressionMatrix& x, double eta);

// Regularized lower incomplete gamma P(a, x) (Boost-backed).
double regularized_gamma_p(double a, double x);

// Inverse-gamma(shape, scale) CDF at x, i.e. P(sigma2 <= x).
double inv_gamma_cdf(double x, double shape, double scale);

}  // namespace sslb
