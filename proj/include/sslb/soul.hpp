#pragma once

#include "sslb/outcome.hpp"
#include "sslb/rng.hpp"
#include "sslb/types.hpp"

#include <functional>
#include <vector>

namespace sslb {

struct SoulTrace {
  std::vector<double> lambda_path;  // length n_iters
  std::vector<double> kappa_path;   // length n_iters when log-scale
  double final_estimate = 0.0;
  Matrix w_final;
  bool projection_saturated = false;
  std::vector<double> mean_w_sq;    // mean ||W||_F^2 per outer iteration
};

// A marginal-likelihood problem: Gaussian prior N(0, 1/lambda) on each of
// `dimension` coordinates of W, arbitrary likelihood folded into the
// potential gradient (gradient of the NEGATIVE log posterior).
struct SoulProblem {
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  int pin_col = -1;  // column held at zero, -1 for none
  double dimension = 0.0;
  std::function<Matrix(const Matrix& w, double lambda)> grad_neg_log_post;
};

// One unadjusted Langevin step W - delta * grad + sqrt(2 delta) * noise.
// `grad` is the supplied potential gradient evaluated at w. Throws
// NonFiniteState if the result leaves the finite range.
Matrix ula_step(const Matrix& w, const Matrix& grad, double delta, Rng& rng,
                int pin_col = -1);

double pga_step_size(int i, double c0, double p_exponent);

SoulTrace soul_run(const SoulProblem& problem, const Matrix& w0,
                   double lambda_init, double delta_ula, const SoulConfig& cfg,
                   Rng& rng);

// Ridge-MLR specialization: freezes one indicator-sample set drawn from
// Bernoulli(gamma_tilde), auto-resolves the ULA step from the Bohning bound
// and runs the stochastic search for lambda_w.
SoulTrace soul_estimate_lambda(const OutcomeMatrix& y,
                               const Matrix& gamma_tilde, const Matrix& w0,
                               double lambda_init, int j_draws,
                               const SoulConfig& cfg, Rng& rng);

}  // namespace sslb
