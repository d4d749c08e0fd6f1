#include "sslb/outcome.hpp"

#include "sslb/em.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

namespace sslb {

namespace {

double sigmoid_neg(double log_ratio) {
  if (log_ratio >= 0.0) {
    const double e = std::exp(-log_ratio);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(log_ratio));
}

// In-place row-stable softmax of a score matrix.
void softmax_rows(Matrix& scores) {
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const double m = scores.row(r).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index l = 0; l < scores.cols(); ++l) {
      scores(r, l) = std::exp(scores(r, l) - m);
      sum += scores(r, l);
    }
    scores.row(r) /= sum;
  }
}

double row_log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  const double m = row.maxCoeff();
  double sum = 0.0;
  for (Eigen::Index l = 0; l < row.size(); ++l) sum += std::exp(row(l) - m);
  return m + std::log(sum);
}

}  // namespace

AugmentedIndicatorSample augment_indicators(const Matrix& indicators) {
  AugmentedIndicatorSample out;
  out.values.resize(indicators.rows(), indicators.cols() + 1);
  out.values.col(0).setOnes();
  out.values.rightCols(indicators.cols()) = indicators;
  return out;
}

IndicatorSamples draw_indicator_samples(const Matrix& gamma_tilde, int j_draws,
                                        Rng& rng) {
  const Eigen::Index n = gamma_tilde.rows();
  const Eigen::Index k = gamma_tilde.cols();
  IndicatorSamples out;
  out.n_draws = j_draws;
  out.n = n;
  out.stacked.resize(static_cast<Eigen::Index>(j_draws) * n, k + 1);
  out.stacked.col(0).setOnes();
  for (int j = 0; j < j_draws; ++j)
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index r = static_cast<Eigen::Index>(j) * n + i;
      for (Eigen::Index c = 0; c < k; ++c)
        out.stacked(r, c + 1) = rng.bernoulli(gamma_tilde(i, c)) ? 1.0 : 0.0;
    }
  return out;
}

Matrix mlr_probabilities(const Matrix& w, const AugmentedIndicatorSample& g) {
  Matrix scores = g.values * w;
  softmax_rows(scores);
  return scores;
}

double estimate_class_likelihood(const OutcomeMatrix& y, Eigen::Index i,
                                 Eigen::Index k, int value,
                                 const Matrix& gamma_tilde_unsup,
                                 const Matrix& w, int m_samples, Rng& rng) {
  const Eigen::Index kk = gamma_tilde_unsup.cols();
  const int c = y.observed_class(i);
  Matrix v(m_samples, kk);
  for (int m = 0; m < m_samples; ++m)
    for (Eigen::Index col = 0; col < kk; ++col)
      v(m, col) = rng.bernoulli(gamma_tilde_unsup(i, col)) ? 1.0 : 0.0;
  const AugmentedIndicatorSample aug = augment_indicators(v);
  const Matrix probs = mlr_probabilities(w, aug);

  double sum = 0.0;
  int matched = 0;
  const double target = static_cast<double>(value);
  for (int m = 0; m < m_samples; ++m) {
    if (v(m, k) == target) {
      sum += probs(m, c);
      ++matched;
    }
  }
  if (matched == 0) {
    // Empty conditioning subset: fall back to the uniform class likelihood
    // weighted by the sampling probability of the requested value.
    const double pv = value == 1 ? gamma_tilde_unsup(i, k)
                                 : 1.0 - gamma_tilde_unsup(i, k);
    return pv / static_cast<double>(y.n_classes());
  }
  return sum / static_cast<double>(m_samples);
}

Matrix e_step_gamma_tilde_guided(const OutcomeMatrix& y, const EmState& state,
                                 double omega0_tilde, double omega1_tilde,
                                 int m_samples, Rng& rng) {
  const Eigen::Index n = state.T.rows();
  const int k = state.K_current;
  const Matrix unsup =
      e_step_gamma_tilde_unsupervised(state, omega0_tilde, omega1_tilde);
  const Vector tt = state.theta_tilde();
  const double inv_c = 1.0 / static_cast<double>(y.n_classes());

  Matrix out(n, k);
  const std::uint64_t base = rng.raw();
  Matrix v(m_samples, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    Rng ri(mix_seed(base, static_cast<std::uint64_t>(i)));
    for (int m = 0; m < m_samples; ++m)
      for (int c = 0; c < k; ++c)
        v(m, c) = ri.bernoulli(unsup(i, c)) ? 1.0 : 0.0;
    const AugmentedIndicatorSample aug = augment_indicators(v);
    const Matrix probs = mlr_probabilities(state.W, aug);
    const int cls = y.observed_class(i);

    for (int c = 0; c < k; ++c) {
      double s1 = 0.0, s_all = 0.0;
      int m1 = 0;
      for (int m = 0; m < m_samples; ++m) {
        s_all += probs(m, cls);
        if (v(m, c) == 1.0) {
          s1 += probs(m, cls);
          ++m1;
        }
      }
      const double like1 = m1 > 0 ? s1 / m1 : inv_c;
      const double like0 =
          m1 < m_samples ? (s_all - s1) / (m_samples - m1) : inv_c;
      const double theta_k =
          std::clamp(tt(c), kThetaClip, 1.0 - kThetaClip);
      const double tau = state.T(i, c);
      const double log_tau0 = std::log(omega0_tilde) - 0.5 * omega0_tilde * tau;
      const double log_tau1 = std::log(omega1_tilde) - 0.5 * omega1_tilde * tau;
      const double log_r = std::log(like0) + log_tau0 + std::log1p(-theta_k) -
                           std::log(like1) - log_tau1 - std::log(theta_k);
      out(i, c) = std::clamp(sigmoid_neg(log_r), 1e-300, 1.0 - 1e-16);
    }
  }
  return out;
}

Vector mc_log_sum_exp(const Matrix& w, const Matrix& gamma_tilde,
                      int m_samples, Rng& rng) {
  const Eigen::Index n = gamma_tilde.rows();
  const Eigen::Index k = gamma_tilde.cols();
  Vector out(n);
  const std::uint64_t base = rng.raw();
  Matrix g(m_samples, k + 1);
  g.col(0).setOnes();
  for (Eigen::Index i = 0; i < n; ++i) {
    Rng ri(mix_seed(base, static_cast<std::uint64_t>(i)));
    for (int m = 0; m < m_samples; ++m)
      for (Eigen::Index c = 0; c < k; ++c)
        g(m, c + 1) = ri.bernoulli(gamma_tilde(i, c)) ? 1.0 : 0.0;
    const Matrix scores = g * w;
    double acc = 0.0;
    for (int m = 0; m < m_samples; ++m) acc += row_log_sum_exp(scores.row(m));
    out(i) = acc / m_samples;
  }
  return out;
}

double ridge_mlr_objective(const IndicatorSamples& samples,
                           const OutcomeMatrix& y, const Matrix& w,
                           double lambda_w) {
  const Matrix scores = samples.stacked * w;
  double value = 0.0;
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const Eigen::Index i = r % samples.n;
    value += scores.row(r).dot(y.values.row(i));
    value -= row_log_sum_exp(scores.row(r));
  }
  value /= samples.n_draws;
  value -= 0.5 * lambda_w * w.squaredNorm();
  return value;
}

Matrix ridge_mlr_gradient(const IndicatorSamples& samples,
                          const OutcomeMatrix& y, const Matrix& w,
                          double lambda_w) {
  Matrix probs = samples.stacked * w;
  softmax_rows(probs);
  for (Eigen::Index r = 0; r < probs.rows(); ++r)
    probs.row(r) = y.values.row(r % samples.n) - probs.row(r);
  Matrix grad = samples.stacked.transpose() * probs;
  grad /= samples.n_draws;
  grad -= lambda_w * w;
  grad.col(y.reference_class).setZero();
  return grad;
}

Matrix grad_ridge_mlr(const OutcomeMatrix& y, const Matrix& gamma_tilde,
                      const Matrix& w, double lambda_w, int j_draws, Rng& rng) {
  const IndicatorSamples samples =
      draw_indicator_samples(gamma_tilde, j_draws, rng);
  return ridge_mlr_gradient(samples, y, w, lambda_w);
}

double lipschitz_constant(const AugmentedIndicatorSample& gamma_aug,
                          double lambda_w, int n_classes) {
  (void)n_classes;  // lambda_max(I_C - 11'/C) = 1 for any C >= 2
  const Matrix gram = gamma_aug.values.transpose() * gamma_aug.values;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
  return 0.5 * eig.eigenvalues().maxCoeff() + lambda_w;
}

Matrix agd_maximize_w(const OutcomeMatrix& y, const Matrix& gamma_tilde,
                      double lambda_w, const FitConfig& cfg, Rng& rng) {
  const Eigen::Index k = gamma_tilde.cols();
  const Eigen::Index c = y.n_classes();
  const IndicatorSamples samples =
      draw_indicator_samples(gamma_tilde, cfg.mc_grad_samples, rng);

  double lmax = 0.0;
  for (int j = 0; j < samples.n_draws; ++j) {
    AugmentedIndicatorSample one;
    one.values = samples.stacked.middleRows(
        static_cast<Eigen::Index>(j) * samples.n, samples.n);
    lmax = std::max(lmax, lipschitz_constant(one, lambda_w,
                                             static_cast<int>(c)));
  }
  const double step = 0.95 / lmax;

  Matrix w = Matrix::Zero(k + 1, c);
  Matrix w_prev = w;
  double t = 0.0;
  double f_curr = -ridge_mlr_objective(samples, y, w, lambda_w);
  for (int s = 0; s < cfg.agd_steps; ++s) {
    double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    Matrix v = w + ((t - 1.0) / t_next) * (w - w_prev);
    Matrix w_new = v + step * ridge_mlr_gradient(samples, y, v, lambda_w);
    w_new.col(y.reference_class).setZero();
    double f_new = -ridge_mlr_objective(samples, y, w_new, lambda_w);
    if (f_new > f_curr) {
      // Momentum overshoot: restart and take a plain gradient step.
      t_next = 1.0;
      w_new = w + step * ridge_mlr_gradient(samples, y, w, lambda_w);
      w_new.col(y.reference_class).setZero();
      f_new = -ridge_mlr_objective(samples, y, w_new, lambda_w);
      if (f_new > f_curr) {
        w_new = w;
        f_new = f_curr;
      }
    }
    w_prev = w;
    w = w_new;
    t = t_next;
    f_curr = f_new;
  }
  return w;
}

}  // namespace sslb
