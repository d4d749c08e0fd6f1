#pragma once

#include "sslb/rng.hpp"
#include "sslb/types.hpp"

#include <vector>

namespace sslb {

// Bias-augmented binary indicator rows: column 0 identically one.
struct AugmentedIndicatorSample {
  Matrix values;  // N x (K+1)

  Eigen::Index n_rows() const { return values.rows(); }
  Eigen::Index k() const { return values.cols() - 1; }
};

// A frozen collection of J augmented indicator draws, stacked row-wise so
// one GEMM evaluates all softmax scores.
struct IndicatorSamples {
  Matrix stacked;  // (J*N) x (K+1)
  int n_draws = 0;
  Eigen::Index n = 0;
};

AugmentedIndicatorSample augment_indicators(const Matrix& indicators);

// J independent Bernoulli(gamma_tilde) indicator matrices, augmented.
IndicatorSamples draw_indicator_samples(const Matrix& gamma_tilde, int j_draws,
                                        Rng& rng);

// Row-stable softmax probabilities exp(w_l' g_i) / sum_l' exp(w_l'' g_i).
Matrix mlr_probabilities(const Matrix& w, const AugmentedIndicatorSample& g);

// Monte Carlo estimate of p(y_ic, gamma_tilde_ik = value | tau, theta_tilde)
// for sample i's observed class c: mean over all M draws of the class-c
// softmax probability restricted to draws whose column k equals `value`
// (divisor M, so the sampling weights stay inside the estimate).
double estimate_class_likelihood(const OutcomeMatrix& y, Eigen::Index i,
                                 Eigen::Index k, int value,
                                 const Matrix& gamma_tilde_unsup,
                                 const Matrix& w, int m_samples, Rng& rng);

// Outcome-guided membership expectations: three-factor odds ratio with the
// conditional class likelihoods, exponential-mixture tau densities, and the
// stick prior. Falls back to the uniform 1/C class likelihood when a
// conditioning subset comes back empty.
Matrix e_step_gamma_tilde_guided(const OutcomeMatrix& y, const EmState& state,
                                 double omega0_tilde, double omega1_tilde,
                                 int m_samples, Rng& rng);

Vector mc_log_sum_exp(const Matrix& w, const Matrix& gamma_tilde,
                      int m_samples, Rng& rng);

// Penalized log-likelihood of the ridge MLR model under frozen indicator
// samples, and its gradient (ascent direction; reference column zeroed).
double ridge_mlr_objective(const IndicatorSamples& samples,
                           const OutcomeMatrix& y, const Matrix& w,
                           double lambda_w);

Matrix ridge_mlr_gradient(const IndicatorSamples& samples,
                          const OutcomeMatrix& y, const Matrix& w,
                          double lambda_w);

Matrix grad_ridge_mlr(const OutcomeMatrix& y, const Matrix& gamma_tilde,
                      const Matrix& w, double lambda_w, int j_draws, Rng& rng);

// Bohning bound: 0.5 * lambda_max(G'G) + lambda_w (C >= 2).
double lipschitz_constant(const AugmentedIndicatorSample& gamma_aug,
                          double lambda_w, int n_classes);

// Accelerated gradient ascent on the frozen-sample ridge MLR objective from
// W = 0, with monotone safeguard (momentum restart on objective decrease).
Matrix agd_maximize_w(const OutcomeMatrix& y, const Matrix& gamma_tilde,
                      double lambda_w, const FitConfig& cfg, Rng& rng);

}  // namespace sslb
