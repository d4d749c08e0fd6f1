#include "sslb/soul.hpp"

#include <algorithm>
#include <cmath>

namespace sslb {

Matrix ula_step(const Matrix& w, const Matrix& grad, double delta, Rng& rng,
                int pin_col) {
  Matrix noise(w.rows(), w.cols());
  for (Eigen::Index i = 0; i < w.rows(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j) noise(i, j) = rng.normal();
  Matrix out = w - delta * grad + std::sqrt(2.0 * delta) * noise;
  if (pin_col >= 0) out.col(pin_col).setZero();
  if (!out.allFinite())
    throw Error(ErrorCode::NonFiniteState,
                "Langevin chain produced a non-finite state");
  return out;
}

double pga_step_size(int i, double c0, double p_exponent) {
  return c0 * std::pow(static_cast<double>(i), -p_exponent);
}

SoulTrace soul_run(const SoulProblem& problem, const Matrix& w0,
                   double lambda_init, double delta_ula, const SoulConfig& cfg,
                   Rng& rng) {
  cfg.validate();
  const double lo = cfg.theta_low;
  const double hi = cfg.theta_high;
  const double klo = std::log(lo);
  const double khi = std::log(hi);

  double lambda = std::clamp(lambda_init, lo, hi);
  double kappa = std::log(lambda);
  const double c0 =
      cfg.c0 > 0.0 ? cfg.c0 : 1.0 / (lambda_init * problem.dimension);

  Matrix w = w0;
  if (problem.pin_col >= 0) w.col(problem.pin_col).setZero();

  SoulTrace trace;
  trace.lambda_path.resize(cfg.n_iters);
  if (cfg.log_scale) trace.kappa_path.resize(cfg.n_iters);
  trace.mean_w_sq.resize(cfg.n_iters);

  for (int i = 1; i <= cfg.n_iters; ++i) {
    double sum_sq = 0.0;
    for (int j = 0; j < cfg.inner_samples; ++j) {
      const Matrix grad = problem.grad_neg_log_post(w, lambda);
      w = ula_step(w, grad, delta_ula, rng, problem.pin_col);
      sum_sq += w.squaredNorm();
    }
    const double mean_sq = sum_sq / cfg.inner_samples;
    // Fisher-identity gradient of the log marginal likelihood in lambda.
    const double grad_lambda = 0.5 * (problem.dimension / lambda - mean_sq);
    const double step = pga_step_size(i, c0, cfg.p_exponent);
    if (cfg.log_scale) {
      kappa = std::clamp(kappa + std::exp(kappa) * step * grad_lambda, klo, khi);
      lambda = std::exp(kappa);
      trace.kappa_path[i - 1] = kappa;
    } else {
      lambda = std::clamp(lambda + step * grad_lambda, lo, hi);
      kappa = std::log(lambda);
    }
    trace.lambda_path[i - 1] = lambda;
    trace.mean_w_sq[i - 1] = mean_sq;
  }

  const int first_kept = std::max(cfg.burn_in, 1);
  const int kept = cfg.n_iters - first_kept + 1;
  double acc = 0.0;
  int on_bound = 0;
  for (int i = first_kept; i <= cfg.n_iters; ++i) {
    const double l = trace.lambda_path[i - 1];
    acc += cfg.log_scale ? trace.kappa_path[i - 1] : l;
    if (l <= lo * (1.0 + 1e-12) || l >= hi * (1.0 - 1e-12)) ++on_bound;
  }
  trace.final_estimate = cfg.log_scale ? std::exp(acc / kept) : acc / kept;
  trace.projection_saturated = 2 * on_bound > kept;
  trace.w_final = w;
  return trace;
}

SoulTrace soul_estimate_lambda(const OutcomeMatrix& y,
                               const Matrix& gamma_tilde, const Matrix& w0,
                               double lambda_init, int j_draws,
                               const SoulConfig& cfg, Rng& rng) {
  const IndicatorSamples samples =
      draw_indicator_samples(gamma_tilde, j_draws, rng);

  double lmax = 0.0;
  for (int j = 0; j < j_draws; ++j) {
    AugmentedIndicatorSample one;
    one.values = samples.stacked.middleRows(
        static_cast<Eigen::Index>(j) * samples.n, samples.n);
    lmax = std::max(lmax, lipschitz_constant(one, lambda_init,
                                             static_cast<int>(y.n_classes())));
  }
  const double delta = cfg.delta_ula > 0.0 ? cfg.delta_ula : 0.95 / lmax;

  SoulProblem problem;
  problem.rows = gamma_tilde.cols() + 1;
  problem.cols = y.n_classes();
  problem.pin_col = y.reference_class;
  problem.dimension =
      static_cast<double>(problem.rows) * static_cast<double>(problem.cols);
  problem.grad_neg_log_post = [&samples, &y](const Matrix& w, double lambda) {
    return (-ridge_mlr_gradient(samples, y, w, lambda)).eval();
  };
  return soul_run(problem, w0, lambda_init, delta, cfg, rng);
}

}  // namespace sslb
