#include "sslb/em.hpp"

#include "sslb/outcome.hpp"
#include "sslb/rng.hpp"
#include "sslb/soul.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

namespace sslb {

namespace {

double sigmoid_neg(double log_ratio) {
  // 1 / (1 + exp(log_ratio)) without overflow.
  if (log_ratio >= 0.0) {
    const double e = std::exp(-log_ratio);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(log_ratio));
}

double clamp_prob(double p) {
  return std::clamp(p, 1e-300, 1.0 - 1e-16);
}

double clamp_weight(double t) {
  return std::clamp(t, kThetaClip, 1.0 - kThetaClip);
}

double log_sum_exp_pair(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Stream tags for derived RNG substreams.
enum Purpose : std::uint64_t {
  kInit = 1,
  kGuidedEStep = 2,
  kSoul = 3,
  kAgd = 4,
  kQLse = 5,
};

RngKey rung_key(std::uint64_t seed, int rung) {
  return RngKey(seed).at(1000 + static_cast<std::uint64_t>(rung));
}

}  // namespace

FitConfig resolve_config(const ExpressionMatrix& x, const FitConfig& cfg) {
  cfg.validate();
  FitConfig out = cfg;
  if (out.alpha <= 0.0) out.alpha = 1.0 / out.K_init;
  if (out.a_tilde <= 0.0) out.a_tilde = 1.0 / out.K_init;
  if (out.xi <= 0.0) out.xi = calibrate_xi(x, out.eta);
  return out;
}

EmState init_state(const ExpressionMatrix& x, const OutcomeMatrix* y,
                   const FitConfig& cfg, std::uint64_t rng_seed) {
  const Eigen::Index n = x.n_samples();
  const Eigen::Index g = x.n_genes();
  const int k = cfg.K_init;
  Rng rng = RngKey(rng_seed).at(kInit).rng();

  EmState s;
  s.variant = cfg.prior_variant;
  s.K_current = k;
  s.Z.resize(g, k);
  for (Eigen::Index j = 0; j < g; ++j)
    for (int c = 0; c < k; ++c) s.Z(j, c) = rng.normal();
  s.T = Matrix::Constant(n, k, 100.0);
  s.theta = Vector::Constant(k, 0.5);
  if (cfg.prior_variant == PriorVariant::BB) {
    s.stick = Vector::Constant(k, 0.5);
  } else {
    s.stick.resize(k);
    for (int c = 0; c < k; ++c) s.stick(c) = clamp_weight(rng.uniform());
    std::sort(s.stick.data(), s.stick.data() + k, std::greater<double>());
  }
  s.sigma2 = column_variances(x.values).cwiseMax(kSigma2Min);
  s.lambda_mean = Matrix::Zero(n, k);
  s.lambda_second_moment.assign(n, Matrix::Identity(k, k) * 100.0);
  s.gamma = Matrix::Constant(g, k, 0.5);
  s.gamma_tilde = Matrix::Constant(n, k, 0.5);
  s.lambda_w = 1.0;
  if (y != nullptr)
    s.W = Matrix::Zero(k + 1, y->n_classes());
  else
    s.W = Matrix::Zero(k + 1, 0);
  return s;
}

LambdaMoments e_step_lambda(const ExpressionMatrix& x, const EmState& state) {
  const Eigen::Index n = x.n_samples();
  const int k = state.K_current;
  const Vector sinv = state.sigma2.cwiseInverse();
  const Matrix zs = state.Z.array().colwise() * sinv.array();
  const Matrix ztsz = state.Z.transpose() * zs;           // K x K
  const Matrix rhs = zs.transpose() * x.values.transpose();  // K x N

  LambdaMoments out;
  out.mean.resize(n, k);
  out.second.assign(n, Matrix(k, k));

  Matrix prec(k, k);
  const Matrix eye = Matrix::Identity(k, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    prec = ztsz;
    for (int c = 0; c < k; ++c)
      prec(c, c) += 1.0 / std::max(state.T(i, c), kTauMin) + 1e-10;
    Eigen::LLT<Matrix> llt(prec);
    if (llt.info() != Eigen::Success) {
      prec.diagonal().array() += 1e-6;
      llt.compute(prec);
      if (llt.info() != Eigen::Success)
        throw Error(ErrorCode::SingularPrecision,
                    "loading-posterior precision matrix is not positive "
                    "definite for sample " + std::to_string(i));
    }
    const Matrix cov = llt.solve(eye);
    const Vector mean = cov * rhs.col(i);
    out.mean.row(i) = mean.transpose();
    out.second[i] = cov + mean * mean.transpose();
  }
  return out;
}

Matrix e_step_gamma_tilde_unsupervised(const EmState& state,
                                       double omega0_tilde,
                                       double omega1_tilde) {
  const Vector tt = state.theta_tilde();
  Matrix out(state.T.rows(), state.T.cols());
  const double log_rate_ratio = std::log(omega0_tilde / omega1_tilde);
  for (Eigen::Index c = 0; c < state.T.cols(); ++c) {
    const double t = clamp_weight(tt(c));
    const double log_prior_odds = std::log1p(-t) - std::log(t);
    for (Eigen::Index i = 0; i < state.T.rows(); ++i) {
      const double log_r = log_rate_ratio -
                           0.5 * (omega0_tilde - omega1_tilde) * state.T(i, c) +
                           log_prior_odds;
      out(i, c) = clamp_prob(sigmoid_neg(log_r));
    }
  }
  return out;
}

Matrix e_step_gamma(const EmState& state, double omega0, double omega1) {
  Matrix out(state.Z.rows(), state.Z.cols());
  for (Eigen::Index c = 0; c < state.Z.cols(); ++c) {
    const double t = clamp_weight(state.theta(c));
    if (omega0 == omega1) {
      out.col(c).setConstant(t);
      continue;
    }
    const double base = std::log1p(-t) - std::log(t) + std::log(omega0 / omega1);
    for (Eigen::Index j = 0; j < state.Z.rows(); ++j) {
      const double log_r = base - (omega0 - omega1) * std::abs(state.Z(j, c));
      out(j, c) = clamp_prob(sigmoid_neg(log_r));
    }
  }
  return out;
}

double ssl_lambda_star(double z, double theta, double omega0, double omega1) {
  if (omega0 == omega1) return omega1;
  const double log_r = std::log1p(-theta) - std::log(theta) +
                       std::log(omega0 / omega1) -
                       (omega0 - omega1) * std::abs(z);
  const double pstar = sigmoid_neg(log_r);
  return pstar * omega1 + (1.0 - pstar) * omega0;
}

double ssl_log_prior(double z, double theta, double omega0, double omega1) {
  const double a1 = std::log(theta * omega1) - omega1 * std::abs(z);
  const double a0 = std::log1p(-theta) + std::log(omega0) - omega0 * std::abs(z);
  return std::log(0.5) + log_sum_exp_pair(a0, a1);
}

namespace {

// Monotone fixed-point iteration for z = (ua - sigma2*lambda_star(z)) / s.
// From above (slab start) it converges to the largest stationary point,
// from zero to the smallest.
double ssl_fixed_point(double start, double ua, double s, double sigma2,
                       double theta, double omega0, double omega1) {
  double z = start;
  for (int it = 0; it < 500; ++it) {
    const double next =
        (ua - sigma2 * ssl_lambda_star(z, theta, omega0, omega1)) / s;
    if (next <= 0.0) return 0.0;
    if (std::abs(next - z) < 1e-13 * std::max(1.0, z)) {
      z = next;
      break;
    }
    z = next;
  }
  // Newton polish on f'(z) = (ua - s z)/sigma2 - lambda_star(z).
  for (int it = 0; it < 4; ++it) {
    const double lr = std::log1p(-theta) - std::log(theta) +
                      std::log(omega0 / omega1) - (omega0 - omega1) * z;
    const double p = sigmoid_neg(lr);
    const double lam = p * omega1 + (1.0 - p) * omega0;
    const double dlam = -(omega0 - omega1) * (omega0 - omega1) * p * (1.0 - p);
    const double f1 = (ua - s * z) / sigma2 - lam;
    const double f2 = -s / sigma2 - dlam;
    if (f2 >= 0.0) break;
    const double step = f1 / f2;
    const double znew = z - step;
    if (!(znew > 0.0)) break;
    z = znew;
    if (std::abs(step) < 1e-15 * std::max(1.0, z)) break;
  }
  return z;
}

}  // namespace

double ssl_coordinate_argmax(double u, double s, double sigma2, double theta,
                             double omega0, double omega1) {
  if (!(s > 0.0)) return 0.0;
  const double ua = std::abs(u);
  const double sgn = u > 0.0 ? 1.0 : -1.0;
  if (omega0 == omega1) {
    const double t = ua - sigma2 * omega1;
    return t > 0.0 ? sgn * t / s : 0.0;
  }
  if (ua <= sigma2 * omega1) return 0.0;

  const double slab_start = (ua - sigma2 * omega1) / s;
  const double z_big =
      ssl_fixed_point(slab_start, ua, s, sigma2, theta, omega0, omega1);
  if (z_big <= 0.0) return 0.0;

  const double log_p0 = ssl_log_prior(0.0, theta, omega0, omega1);
  auto objective = [&](double z) {
    return (2.0 * ua * z - s * z * z) / (2.0 * sigma2) +
           ssl_log_prior(z, theta, omega0, omega1) - log_p0;
  };

  double best_z = 0.0;
  double best_f = 0.0;
  const double f_big = objective(z_big);
  if (f_big > best_f) {
    best_f = f_big;
    best_z = z_big;
  }
  // A smaller local maximum can exist when the penalty transition is steep.
  if (ua > sigma2 * ssl_lambda_star(0.0, theta, omega0, omega1)) {
    const double z_small =
        ssl_fixed_point(0.0, ua, s, sigma2, theta, omega0, omega1);
    if (z_small > 0.0 && std::abs(z_small - z_big) > 1e-10 * (1.0 + z_big)) {
      const double f_small = objective(z_small);
      if (f_small > best_f) {
        best_f = f_small;
        best_z = z_small;
      }
    }
  }
  return sgn * best_z;
}

Matrix m_step_z(const ExpressionMatrix& x, const EmState& state, double omega0,
                double omega1) {
  const Eigen::Index g = x.n_genes();
  const int k = state.K_current;
  const Eigen::Index n = x.n_samples();

  Matrix second_sum = Matrix::Zero(k, k);
  for (Eigen::Index i = 0; i < n; ++i) second_sum += state.lambda_second_moment[i];
  const Matrix b = x.values.transpose() * state.lambda_mean;  // G x K

  Matrix z = state.Z;
  const int max_sweeps = 100;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double max_shift = 0.0;
    for (Eigen::Index j = 0; j < g; ++j) {
      const double sigma2 = state.sigma2(j);
      for (int c = 0; c < k; ++c) {
        const double coupled = second_sum.row(c).dot(z.row(j));
        const double u = b(j, c) - coupled + second_sum(c, c) * z(j, c);
        const double znew = ssl_coordinate_argmax(
            u, second_sum(c, c), sigma2, clamp_weight(state.theta(c)), omega0,
            omega1);
        max_shift = std::max(max_shift, std::abs(znew - z(j, c)));
        z(j, c) = znew;
      }
    }
    if (max_shift < 1e-8 * (1.0 + z.cwiseAbs().maxCoeff())) break;
  }
  return z;
}

Vector m_step_sigma(const ExpressionMatrix& x, const EmState& state,
                    double eta, double xi) {
  const Eigen::Index n = x.n_samples();
  const int k = state.K_current;
  Matrix cov_sum = Matrix::Zero(k, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    cov_sum += state.lambda_second_moment[i];
    cov_sum.noalias() -=
        state.lambda_mean.row(i).transpose() * state.lambda_mean.row(i);
  }
  const Matrix resid = x.values - state.lambda_mean * state.Z.transpose();
  Vector out(x.n_genes());
  for (Eigen::Index j = 0; j < x.n_genes(); ++j) {
    const double quad = state.Z.row(j) * cov_sum * state.Z.row(j).transpose();
    out(j) = (eta * xi + resid.col(j).squaredNorm() + quad) /
             (static_cast<double>(n) + eta + 2.0);
    out(j) = std::max(out(j), kSigma2Min);
  }
  return out;
}

Matrix m_step_tau(const EmState& state, double omega0_tilde,
                  double omega1_tilde) {
  const Eigen::Index n = state.T.rows();
  const int k = state.K_current;
  Matrix out(n, k);
  const double w0sq = omega0_tilde * omega0_tilde;
  const double w1sq = omega1_tilde * omega1_tilde;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int c = 0; c < k; ++c) {
      const double lam2 = state.lambda_second_moment[i](c, c);
      const double wbar2 =
          (1.0 - state.gamma_tilde(i, c)) * w0sq + state.gamma_tilde(i, c) * w1sq;
      const double tau =
          2.0 * lam2 / (1.0 + std::sqrt(1.0 + 4.0 * wbar2 * lam2));
      out(i, c) = std::max(tau, kTauMin);
    }
  }
  return out;
}

double stick_coordinate_objective(const EmState& state,
                                  const Vector& gamma_tilde_colsums, int k,
                                  double nu_k, double alpha_tilde, double d) {
  const int kk = state.K_current;
  const double n = static_cast<double>(state.gamma_tilde.rows());
  double value = 0.0;
  double prod = 1.0;
  for (int m = 0; m < kk; ++m) {
    prod *= (m == k) ? nu_k : state.stick(m);
    if (m < k) continue;
    const double tt = clamp_weight(prod);
    value += gamma_tilde_colsums(m) * std::log(tt) +
             (n - gamma_tilde_colsums(m)) * std::log1p(-tt);
  }
  // Beta(alpha_tilde + l*d, 1-d) prior on the k-th fraction, l 1-based.
  value += (alpha_tilde + (k + 1) * d - 1.0) * std::log(nu_k) -
           d * std::log1p(-nu_k);
  return value;
}

double stick_coordinate_update(const EmState& state,
                               const Vector& gamma_tilde_colsums, int k,
                               double alpha_tilde, double d) {
  const double lo = kThetaClip;
  const double hi = 1.0 - kThetaClip;
  auto f = [&](double v) {
    return stick_coordinate_objective(state, gamma_tilde_colsums, k, v,
                                      alpha_tilde, d);
  };
  // Coarse scan to bracket the global maximum, then golden-section.
  const int grid = 64;
  double best_v = lo;
  double best_f = f(lo);
  for (int t = 1; t <= grid; ++t) {
    const double v = lo + (hi - lo) * static_cast<double>(t) / grid;
    const double fv = f(v);
    if (fv > best_f) {
      best_f = fv;
      best_v = v;
    }
  }
  const double step = (hi - lo) / grid;
  double a = std::max(lo, best_v - step);
  double b = std::min(hi, best_v + step);
  const double invphi = 0.6180339887498949;
  double x1 = b - invphi * (b - a);
  double x2 = a + invphi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  for (int it = 0; it < 80; ++it) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + invphi * (b - a);
      f2 = f(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - invphi * (b - a);
      f1 = f(x1);
    }
    if (b - a < 1e-12) break;
  }
  return 0.5 * (a + b);
}

void m_step_sparsity(EmState& state, const FitConfig& cfg, int sweeps) {
  const double g = static_cast<double>(state.gamma.rows());
  const double n = static_cast<double>(state.gamma_tilde.rows());
  for (int c = 0; c < state.K_current; ++c) {
    const double sg = state.gamma.col(c).sum();
    state.theta(c) = clamp_weight((sg + cfg.alpha - 1.0) / (g + cfg.alpha - 1.0));
  }
  Vector colsums = state.gamma_tilde.colwise().sum();
  if (cfg.prior_variant == PriorVariant::BB) {
    for (int c = 0; c < state.K_current; ++c) {
      state.stick(c) = clamp_weight((colsums(c) + cfg.a_tilde - 1.0) /
                                    (n + cfg.a_tilde + cfg.b_tilde - 2.0));
    }
    return;
  }
  for (int s = 0; s < sweeps; ++s)
    for (int c = 0; c < state.K_current; ++c)
      state.stick(c) = stick_coordinate_update(state, colsums, c,
                                               cfg.alpha_tilde, cfg.d);
}

namespace {

// Stick-breaking priors tie theta_tilde_(k) to column rank, so columns are
// kept sorted by occupancy for IBP/PY.
void reorder_columns_by_occupancy(EmState& state) {
  const int k = state.K_current;
  Vector colsums = state.gamma_tilde.colwise().sum();
  std::vector<int> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return colsums(a) > colsums(b); });
  bool identity = true;
  for (int c = 0; c < k; ++c)
    if (order[c] != c) identity = false;
  if (identity) return;

  auto permute_cols = [&](Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (int c = 0; c < k; ++c) out.col(c) = m.col(order[c]);
    m.swap(out);
  };
  permute_cols(state.gamma_tilde);
  permute_cols(state.gamma);
  permute_cols(state.T);
  permute_cols(state.Z);
  permute_cols(state.lambda_mean);
  for (auto& sec : state.lambda_second_moment) {
    Matrix out(k, k);
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b) out(a, b) = sec(order[a], order[b]);
    sec.swap(out);
  }
  Vector theta(k), stick(k);
  for (int c = 0; c < k; ++c) {
    theta(c) = state.theta(order[c]);
    stick(c) = state.stick(order[c]);
  }
  state.theta = theta;
  state.stick = stick;
  if (state.W.cols() > 0) {
    Matrix w(state.W.rows(), state.W.cols());
    w.row(0) = state.W.row(0);
    for (int c = 0; c < k; ++c) w.row(c + 1) = state.W.row(order[c] + 1);
    state.W = w;
  }
}

double gaussian_q_term(const ExpressionMatrix& x, const EmState& state) {
  const Eigen::Index n = x.n_samples();
  const Vector sinv = state.sigma2.cwiseInverse();
  const Matrix resid = x.values - state.lambda_mean * state.Z.transpose();
  double value = 0.0;
  for (Eigen::Index j = 0; j < x.n_genes(); ++j)
    value -= 0.5 * sinv(j) * resid.col(j).squaredNorm();
  const int k = state.K_current;
  Matrix cov_sum = Matrix::Zero(k, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    cov_sum += state.lambda_second_moment[i];
    cov_sum.noalias() -=
        state.lambda_mean.row(i).transpose() * state.lambda_mean.row(i);
  }
  const Matrix zs = state.Z.array().colwise() * sinv.array();
  const Matrix ztsz = state.Z.transpose() * zs;
  value -= 0.5 * (ztsz.array() * cov_sum.array()).sum();
  return value;
}

double gaussian_plugin_term(const ExpressionMatrix& x, const EmState& state) {
  const Vector sinv = state.sigma2.cwiseInverse();
  const Matrix resid = x.values - state.lambda_mean * state.Z.transpose();
  double value = 0.0;
  for (Eigen::Index j = 0; j < x.n_genes(); ++j)
    value -= 0.5 * sinv(j) * resid.col(j).squaredNorm();
  return value;
}

double sigma_prior_term(const ExpressionMatrix& x, const EmState& state,
                        double eta, double xi) {
  const double n = static_cast<double>(x.n_samples());
  double value = 0.0;
  for (Eigen::Index j = 0; j < state.sigma2.size(); ++j) {
    value -= 0.5 * (n + eta + 2.0) * std::log(state.sigma2(j));
    value -= 0.5 * eta * xi / state.sigma2(j);
  }
  return value;
}

double z_prior_term(const EmState& state, const FitConfig& cfg, double omega0,
                    double omega1) {
  double value = 0.0;
  for (int c = 0; c < state.K_current; ++c) {
    const double t = clamp_weight(state.theta(c));
    for (Eigen::Index j = 0; j < state.Z.rows(); ++j)
      value += ssl_log_prior(state.Z(j, c), t, omega0, omega1);
    value += (cfg.alpha - 1.0) * std::log(t);
  }
  return value;
}

double lambda_tau_q_term(const EmState& state, double omega0_tilde,
                         double omega1_tilde) {
  const double w0sq = omega0_tilde * omega0_tilde;
  const double w1sq = omega1_tilde * omega1_tilde;
  double value = 0.0;
  for (Eigen::Index i = 0; i < state.T.rows(); ++i) {
    for (int c = 0; c < state.K_current; ++c) {
      const double tau = state.T(i, c);
      const double lam2 = state.lambda_second_moment[i](c, c);
      const double wbar2 = (1.0 - state.gamma_tilde(i, c)) * w0sq +
                           state.gamma_tilde(i, c) * w1sq;
      value -= 0.5 * (lam2 / tau + std::log(tau) + wbar2 * tau);
    }
  }
  return value;
}

double lambda_tau_plugin_term(const EmState& state, double omega0_tilde,
                              double omega1_tilde) {
  double value = 0.0;
  for (Eigen::Index i = 0; i < state.T.rows(); ++i) {
    for (int c = 0; c < state.K_current; ++c) {
      const double tau = state.T(i, c);
      const double lam = state.lambda_mean(i, c);
      const double gt = state.gamma_tilde(i, c);
      value -= 0.5 * (lam * lam / tau + std::log(tau));
      const double mix =
          (1.0 - gt) * omega0_tilde * std::exp(-0.5 * omega0_tilde * tau) +
          gt * omega1_tilde * std::exp(-0.5 * omega1_tilde * tau);
      value += std::log(std::max(mix, 1e-300));
    }
  }
  return value;
}

double stick_term(const EmState& state, const FitConfig& cfg) {
  const double n = static_cast<double>(state.gamma_tilde.rows());
  const Vector colsums = state.gamma_tilde.colwise().sum();
  double value = 0.0;
  if (cfg.prior_variant == PriorVariant::BB) {
    for (int c = 0; c < state.K_current; ++c) {
      const double tt = clamp_weight(state.stick(c));
      value += colsums(c) * std::log(tt) + (n - colsums(c)) * std::log1p(-tt);
      value += (cfg.a_tilde - 1.0) * std::log(tt) +
               (cfg.b_tilde - 1.0) * std::log1p(-tt);
    }
    return value;
  }
  double prod = 1.0;
  for (int c = 0; c < state.K_current; ++c) {
    prod *= state.stick(c);
    const double tt = clamp_weight(prod);
    value += colsums(c) * std::log(tt) + (n - colsums(c)) * std::log1p(-tt);
    value += (cfg.alpha_tilde + (c + 1) * cfg.d - 1.0) * std::log(state.stick(c)) -
             cfg.d * std::log1p(-state.stick(c));
  }
  return value;
}

// + sum_i y_i' W' g_i  -  sum_i lse(W' g_i)  -  lambda/2 ||W||^2, with the
// continuous expectations standing in for the binary indicator rows.
double guided_plugin_term(const OutcomeMatrix& y, const EmState& state) {
  const Eigen::Index n = y.n_samples();
  Matrix aug(n, state.K_current + 1);
  aug.col(0).setOnes();
  aug.rightCols(state.K_current) = state.gamma_tilde;
  const Matrix scores = aug * state.W;
  double value = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = scores.row(i).maxCoeff();
    double lse = 0.0;
    for (Eigen::Index l = 0; l < scores.cols(); ++l)
      lse += std::exp(scores(i, l) - m);
    lse = m + std::log(lse);
    value += scores.row(i).dot(y.values.row(i)) - lse;
  }
  value -= 0.5 * state.lambda_w * state.W.squaredNorm();
  return value;
}

double guided_q_term(const OutcomeMatrix& y, const EmState& state,
                     const FitConfig& cfg, std::uint64_t lse_stream_seed) {
  const Eigen::Index n = y.n_samples();
  Matrix aug(n, state.K_current + 1);
  aug.col(0).setOnes();
  aug.rightCols(state.K_current) = state.gamma_tilde;
  const Matrix scores = aug * state.W;
  double value = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    value += scores.row(i).dot(y.values.row(i));
  Rng rng = RngKey(lse_stream_seed).at(kQLse).rng();
  const Vector lse =
      mc_log_sum_exp(state.W, state.gamma_tilde, cfg.mc_logsumexp_samples, rng);
  value -= lse.sum();
  value -= 0.5 * state.lambda_w * state.W.squaredNorm();
  return value;
}

}  // namespace

double eval_log_posterior(const ExpressionMatrix& x, const OutcomeMatrix* y,
                          const EmState& state, const FitConfig& cfg,
                          double omega0, double omega0_tilde) {
  double value = gaussian_plugin_term(x, state) +
                 sigma_prior_term(x, state, cfg.eta, cfg.xi) +
                 z_prior_term(state, cfg, omega0, cfg.omega1) +
                 lambda_tau_plugin_term(state, omega0_tilde, cfg.omega1_tilde) +
                 stick_term(state, cfg);
  if (y != nullptr && state.W.cols() > 0) value += guided_plugin_term(*y, state);
  return value;
}

double eval_q(const ExpressionMatrix& x, const OutcomeMatrix* y,
              const EmState& state, const FitConfig& cfg, double omega0,
              double omega0_tilde, std::uint64_t lse_stream_seed) {
  double value = gaussian_q_term(x, state) +
                 sigma_prior_term(x, state, cfg.eta, cfg.xi) +
                 z_prior_term(state, cfg, omega0, cfg.omega1) +
                 lambda_tau_q_term(state, omega0_tilde, cfg.omega1_tilde) +
                 stick_term(state, cfg);
  if (y != nullptr && state.W.cols() > 0)
    value += guided_q_term(*y, state, cfg, lse_stream_seed);
  return value;
}

RungResult run_rung(const ExpressionMatrix& x, const OutcomeMatrix* y,
                    EmState state, double omega0, double omega0_tilde,
                    const FitConfig& cfg, int rung_index,
                    std::vector<TraceRow>* trace,
                    std::vector<SoulRunSummary>* soul_runs,
                    bool compute_trace_q, const double* deadline_seconds,
                    const double* elapsed_seconds) {
  RungResult result;
  const bool guided = cfg.outcome_guided && y != nullptr;
  const RngKey rkey = rung_key(cfg.seed, rung_index);
  const auto t_start = std::chrono::steady_clock::now();

  int iterations = 0;
  bool converged = false;
  for (int t = 1; t <= cfg.em_max_iters_per_rung; ++t) {
    iterations = t;
    const RngKey ikey = rkey.at(static_cast<std::uint64_t>(t));

    LambdaMoments moments = e_step_lambda(x, state);
    state.lambda_mean = std::move(moments.mean);
    state.lambda_second_moment = std::move(moments.second);

    if (guided) {
      Rng rng = ikey.at(kGuidedEStep).rng();
      state.gamma_tilde = e_step_gamma_tilde_guided(
          *y, state, omega0_tilde, cfg.omega1_tilde, cfg.mc_gamma_samples, rng);
    } else {
      state.gamma_tilde =
          e_step_gamma_tilde_unsupervised(state, omega0_tilde, cfg.omega1_tilde);
    }
    if (cfg.prior_variant != PriorVariant::BB)
      reorder_columns_by_occupancy(state);

    state.gamma = e_step_gamma(state, omega0, cfg.omega1);

    const Matrix z_prev = state.Z;
    state.Z = m_step_z(x, state, omega0, cfg.omega1);
    state.sigma2 = m_step_sigma(x, state, cfg.eta, cfg.xi);
    state.T = m_step_tau(state, omega0_tilde, cfg.omega1_tilde);
    m_step_sparsity(state, cfg);

    if (guided) {
      const bool refresh = (cfg.soul_refresh_period <= 0)
                               ? (t == 1)
                               : ((t - 1) % cfg.soul_refresh_period == 0);
      if (refresh) {
        Rng rng = ikey.at(kSoul).rng();
        SoulTrace soul = soul_estimate_lambda(*y, state.gamma_tilde, state.W,
                                              state.lambda_w,
                                              cfg.mc_grad_samples, cfg.soul, rng);
        state.lambda_w = soul.final_estimate;
        if (soul_runs != nullptr) {
          SoulRunSummary summary;
          summary.rung = rung_index;
          summary.lambda_hat = soul.final_estimate;
          summary.projection_saturated = soul.projection_saturated;
          summary.lambda_path = soul.lambda_path;
          soul_runs->push_back(std::move(summary));
        }
      }
      Rng rng = ikey.at(kAgd).rng();
      state.W = agd_maximize_w(*y, state.gamma_tilde, state.lambda_w, cfg, rng);
    }

    const double prev_norm = z_prev.norm();
    const double rel_change =
        (state.Z - z_prev).norm() / std::max(prev_norm, 1e-12);
    if (trace != nullptr) {
      TraceRow row;
      row.rung = rung_index;
      row.iteration = t;
      row.K_current = state.K_current;
      row.max_abs_delta_z = (state.Z - z_prev).cwiseAbs().maxCoeff();
      row.q_value = compute_trace_q
                        ? eval_q(x, y, state, cfg, omega0, omega0_tilde,
                                 ikey.at(kQLse).key)
                        : std::numeric_limits<double>::quiet_NaN();
      trace->push_back(row);
    }
    if (rel_change < cfg.em_tolerance) {
      converged = true;
      break;
    }
    if (deadline_seconds != nullptr && elapsed_seconds != nullptr) {
      const double here = std::chrono::duration<double>(
                              std::chrono::steady_clock::now() - t_start)
                              .count();
      if (*elapsed_seconds + here > *deadline_seconds) break;
    }
  }

  result.state = std::move(state);
  result.q_value = eval_q(x, y, result.state, cfg, omega0, omega0_tilde,
                          rkey.at(kQLse).key);
  result.iterations_used = iterations;
  result.converged = converged;
  return result;
}

EmState prune_biclusters(const EmState& state) {
  const int k = state.K_current;
  std::vector<int> keep;
  for (int c = 0; c < k; ++c) {
    const double zmax = state.Z.col(c).cwiseAbs().maxCoeff();
    const double gmax = state.gamma_tilde.col(c).maxCoeff();
    if (zmax >= kZZeroTol && gmax >= kMembershipTol) keep.push_back(c);
  }
  if (static_cast<int>(keep.size()) == k) return state;

  const int k2 = static_cast<int>(keep.size());
  EmState out;
  out.variant = state.variant;
  out.K_current = k2;
  out.sigma2 = state.sigma2;
  out.lambda_w = state.lambda_w;
  out.Z.resize(state.Z.rows(), k2);
  out.gamma.resize(state.gamma.rows(), k2);
  out.gamma_tilde.resize(state.gamma_tilde.rows(), k2);
  out.T.resize(state.T.rows(), k2);
  out.lambda_mean.resize(state.lambda_mean.rows(), k2);
  out.theta.resize(k2);
  out.stick.resize(k2);
  for (int m = 0; m < k2; ++m) {
    const int c = keep[m];
    out.Z.col(m) = state.Z.col(c);
    out.gamma.col(m) = state.gamma.col(c);
    out.gamma_tilde.col(m) = state.gamma_tilde.col(c);
    out.T.col(m) = state.T.col(c);
    out.lambda_mean.col(m) = state.lambda_mean.col(c);
    out.theta(m) = state.theta(c);
  }
  if (state.variant == PriorVariant::BB) {
    for (int m = 0; m < k2; ++m) out.stick(m) = state.stick(keep[m]);
  } else {
    // Rebuild stick fractions from the surviving theta_tilde values so the
    // kept columns retain their inclusion probabilities.
    const Vector tt = state.theta_tilde();
    double prev = 1.0;
    for (int m = 0; m < k2; ++m) {
      const double ratio = tt(keep[m]) / prev;
      out.stick(m) = std::clamp(ratio, kThetaClip, 1.0 - 1e-15);
      prev = tt(keep[m]);
    }
  }
  out.lambda_second_moment.assign(state.lambda_second_moment.size(),
                                  Matrix(k2, k2));
  for (std::size_t i = 0; i < state.lambda_second_moment.size(); ++i)
    for (int a = 0; a < k2; ++a)
      for (int b = 0; b < k2; ++b)
        out.lambda_second_moment[i](a, b) =
            state.lambda_second_moment[i](keep[a], keep[b]);
  if (state.W.cols() > 0) {
    out.W.resize(k2 + 1, state.W.cols());
    out.W.row(0) = state.W.row(0);
    for (int m = 0; m < k2; ++m) out.W.row(m + 1) = state.W.row(keep[m] + 1);
  } else {
    out.W = Matrix::Zero(k2 + 1, 0);
  }
  return out;
}

BiclusterSet binarize(const EmState& state) {
  BiclusterSet out;
  for (int c = 0; c < state.K_current; ++c) {
    Bicluster b;
    for (Eigen::Index i = 0; i < state.gamma_tilde.rows(); ++i)
      if (state.gamma_tilde(i, c) > 0.5) b.samples.push_back(static_cast<int>(i));
    for (Eigen::Index j = 0; j < state.Z.rows(); ++j)
      if (state.Z(j, c) != 0.0) b.genes.push_back(static_cast<int>(j));
    if (!b.samples.empty() && !b.genes.empty())
      out.biclusters.push_back(std::move(b));
  }
  return out;
}

FitResult run_sslb(const ExpressionMatrix& x, const OutcomeMatrix* y,
                   const FitConfig& cfg, bool with_trace,
                   double time_budget_secs) {
  validate_inputs(x, y);
  const FitConfig resolved = resolve_config(x, cfg);

  FitResult result;
  EmState state = init_state(x, y, resolved, resolved.seed);
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t r = 0; r < resolved.omega0_ladder.size(); ++r) {
    double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    const double* deadline = time_budget_secs > 0.0 ? &time_budget_secs : nullptr;
    RungResult rung = run_rung(
        x, y, std::move(state), resolved.omega0_ladder[r],
        resolved.omega0_tilde_ladder[r], resolved, static_cast<int>(r),
        with_trace ? &result.trace : nullptr, &result.soul_runs,
        /*compute_trace_q=*/with_trace, deadline,
        deadline != nullptr ? &elapsed : nullptr);
    state = prune_biclusters(rung.state);
    if (state.K_current == 0) break;
    elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    if (time_budget_secs > 0.0 && elapsed > time_budget_secs &&
        r + 1 < resolved.omega0_ladder.size()) {
      result.budget_exhausted = true;
      result.budget_rung = static_cast<int>(r);
      result.budget_iteration = rung.iterations_used;
      break;
    }
  }
  result.biclusters = binarize(state);
  result.state = std::move(state);
  return result;
}

}  // namespace sslb
