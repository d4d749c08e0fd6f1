#pragma once

#include "sslb/types.hpp"

#include <optional>
#include <vector>

namespace sslb {

// Numerical floors shared by the EM updates.
inline constexpr double kTauMin = 1e-12;
inline constexpr double kSigma2Min = 1e-12;
inline constexpr double kThetaClip = 1e-6;
inline constexpr double kZZeroTol = 1e-10;
inline constexpr double kMembershipTol = 0.025;

struct RungResult {
  EmState state;
  double q_value = 0.0;
  int iterations_used = 0;
  bool converged = false;
};

struct TraceRow {
  int rung = 0;
  int iteration = 0;
  double q_value = 0.0;
  int K_current = 0;
  double max_abs_delta_z = 0.0;
};

struct SoulRunSummary {
  int rung = 0;
  double lambda_hat = 0.0;
  bool projection_saturated = false;
  std::vector<double> lambda_path;
};

struct FitResult {
  BiclusterSet biclusters;
  EmState state;
  std::vector<TraceRow> trace;
  std::vector<SoulRunSummary> soul_runs;
  bool budget_exhausted = false;
  int budget_rung = -1;
  int budget_iteration = -1;
};

struct LambdaMoments {
  Matrix mean;                 // N x K
  std::vector<Matrix> second;  // N of K x K
};

EmState init_state(const ExpressionMatrix& x, const OutcomeMatrix* y,
                   const FitConfig& cfg, std::uint64_t rng_seed);

// Gaussian posterior moments of the sample loadings given (Z, Sigma, T).
LambdaMoments e_step_lambda(const ExpressionMatrix& x, const EmState& state);

Matrix e_step_gamma_tilde_unsupervised(const EmState& state,
                                       double omega0_tilde,
                                       double omega1_tilde);

Matrix e_step_gamma(const EmState& state, double omega0, double omega1);

// Exact argmax of the 1-D spike-and-slab Lasso coordinate objective
//   -(s z^2 - 2 u z) / (2 sigma2) + log p_ssl(z | theta, omega0, omega1).
double ssl_coordinate_argmax(double u, double s, double sigma2, double theta,
                             double omega0, double omega1);

// Adaptive penalty omega1*p + omega0*(1-p) at the posterior slab weight of z.
double ssl_lambda_star(double z, double theta, double omega0, double omega1);

// Log of the marginal SSL prior density at z (theta fixed).
double ssl_log_prior(double z, double theta, double omega0, double omega1);

Matrix m_step_z(const ExpressionMatrix& x, const EmState& state, double omega0,
                double omega1);

Vector m_step_sigma(const ExpressionMatrix& x, const EmState& state,
                    double eta, double xi);

Matrix m_step_tau(const EmState& state, double omega0_tilde,
                  double omega1_tilde);

// Stick objective for one coordinate nu_k (IBP/PY), holding the others
// fixed; exposed for the 1-D oracle tests.
double stick_coordinate_objective(const EmState& state,
                                  const Vector& gamma_tilde_colsums, int k,
                                  double nu_k, double alpha_tilde, double d);

double stick_coordinate_update(const EmState& state,
                               const Vector& gamma_tilde_colsums, int k,
                               double alpha_tilde, double d);

// theta update (all variants) and stick update (BB closed form, IBP/PY
// coordinate-wise numeric maximization over `sweeps` passes).
void m_step_sparsity(EmState& state, const FitConfig& cfg, int sweeps = 2);

RungResult run_rung(const ExpressionMatrix& x, const OutcomeMatrix* y,
                    EmState state, double omega0, double omega0_tilde,
                    const FitConfig& cfg, int rung_index,
                    std::vector<TraceRow>* trace = nullptr,
                    std::vector<SoulRunSummary>* soul_runs = nullptr,
                    bool compute_trace_q = false,
                    const double* deadline_seconds = nullptr,
                    const double* elapsed_seconds = nullptr);

FitResult run_sslb(const ExpressionMatrix& x, const OutcomeMatrix* y,
                   const FitConfig& cfg, bool with_trace = false,
                   double time_budget_secs = 0.0);

EmState prune_biclusters(const EmState& state);

BiclusterSet binarize(const EmState& state);

// Complete log posterior (standard-signed, up to additive constants),
// evaluated at the plug-in state; guided terms added when y is present.
double eval_log_posterior(const ExpressionMatrix& x, const OutcomeMatrix* y,
                          const EmState& state, const FitConfig& cfg,
                          double omega0, double omega0_tilde);

// Expected complete-data objective (the EM surrogate, up to constants).
// The guided log-sum-exp expectation is estimated with
// cfg.mc_logsumexp_samples draws from the given stream seed.
double eval_q(const ExpressionMatrix& x, const OutcomeMatrix* y,
              const EmState& state, const FitConfig& cfg, double omega0,
              double omega0_tilde, std::uint64_t lse_stream_seed = 0);

// Resolves auto hyperparameters (alpha, a_tilde, xi) against the data.
FitConfig resolve_config(const ExpressionMatrix& x, const FitConfig& cfg);

}  // namespace sslb
