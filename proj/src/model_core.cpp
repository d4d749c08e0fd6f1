#include "sslb/types.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <set>

namespace sslb {

std::string to_string(PriorVariant v) {
  switch (v) {
    case PriorVariant::BB: return "BB";
    case PriorVariant::IBP: return "IBP";
    case PriorVariant::PY: return "PY";
  }
  return "BB";
}

PriorVariant prior_variant_from_string(const std::string& s) {
  if (s == "BB") return PriorVariant::BB;
  if (s == "IBP") return PriorVariant::IBP;
  if (s == "PY") return PriorVariant::PY;
  throw Error(ErrorCode::ConfigParse, "unknown prior variant: " + s);
}

void SoulConfig::validate() const {
  if (n_iters < 1) throw Error(ErrorCode::ConfigParse, "soul.n_iters must be >= 1");
  if (burn_in < 0 || burn_in >= n_iters)
    throw Error(ErrorCode::ConfigParse, "soul.burn_in must be in [0, n_iters)");
  if (inner_samples < 1)
    throw Error(ErrorCode::ConfigParse, "soul.inner_samples must be >= 1");
  if (p_exponent < 0.6 || p_exponent > 0.9)
    throw Error(ErrorCode::ConfigParse, "soul.p_exponent must be in [0.6, 0.9]");
  if (!(theta_low > 0.0) || !(theta_low < theta_high))
    throw Error(ErrorCode::ConfigParse,
                "soul.theta bounds must satisfy 0 < low < high");
}

void FitConfig::validate() const {
  if (K_init < 1) throw Error(ErrorCode::ConfigParse, "k_init must be >= 1");
  if (omega0_ladder.empty())
    throw Error(ErrorCode::ConfigParse, "omega0_ladder must be nonempty");
  for (std::size_t i = 0; i < omega0_ladder.size(); ++i) {
    if (!(omega0_ladder[i] > 0.0))
      throw Error(ErrorCode::ConfigParse, "omega0_ladder entries must be positive");
    if (i > 0 && !(omega0_ladder[i] > omega0_ladder[i - 1]))
      throw Error(ErrorCode::ConfigParse, "omega0_ladder must be strictly increasing");
  }
  if (omega0_tilde_ladder.size() != omega0_ladder.size())
    throw Error(ErrorCode::ConfigParse, "omega ladders must have equal length");
  for (double v : omega0_tilde_ladder)
    if (!(v > 0.0))
      throw Error(ErrorCode::ConfigParse, "omega0_tilde_ladder entries must be positive");
  if (!(omega1 > 0.0) || !(omega1_tilde > 0.0))
    throw Error(ErrorCode::ConfigParse, "slab parameters must be positive");
  if (d < 0.0 || d >= 1.0)
    throw Error(ErrorCode::ConfigParse, "discount d must be in [0, 1)");
  if (!(alpha_tilde > -d))
    throw Error(ErrorCode::ConfigParse, "alpha_tilde must exceed -d");
  if (!(eta > 0.0)) throw Error(ErrorCode::ConfigParse, "eta must be positive");
  if (!(b_tilde > 0.0)) throw Error(ErrorCode::ConfigParse, "b_tilde must be positive");
  if (em_max_iters_per_rung < 0)
    throw Error(ErrorCode::ConfigParse, "em_max_iters_per_rung must be >= 0");
  if (!(em_tolerance > 0.0))
    throw Error(ErrorCode::ConfigParse, "em_tolerance must be positive");
  if (mc_gamma_samples < 1 || mc_logsumexp_samples < 1 || mc_grad_samples < 1)
    throw Error(ErrorCode::ConfigParse, "Monte Carlo sample counts must be >= 1");
  if (agd_steps < 0)
    throw Error(ErrorCode::ConfigParse, "agd_steps must be >= 0");
  soul.validate();
}

Vector EmState::theta_tilde() const {
  if (variant == PriorVariant::BB) return stick;
  Vector tt(stick.size());
  double prod = 1.0;
  for (Eigen::Index k = 0; k < stick.size(); ++k) {
    prod *= stick(k);
    tt(k) = prod;
  }
  return tt;
}

namespace {

void check_unique(const std::vector<std::string>& ids, const char* what) {
  std::set<std::string> seen;
  for (const auto& id : ids)
    if (!seen.insert(id).second)
      throw Error(ErrorCode::DuplicateId,
                  std::string("duplicate ") + what + " id: " + id);
}

}  // namespace

void validate_inputs(const ExpressionMatrix& x, const OutcomeMatrix* y) {
  const Eigen::Index n = x.values.rows();
  const Eigen::Index g = x.values.cols();
  if (n < 2 || g < 2)
    throw Error(ErrorCode::DimensionMismatch,
                "expression matrix needs at least 2 samples and 2 genes");
  if (!x.values.allFinite())
    throw Error(ErrorCode::NonFiniteEntry,
                "expression matrix contains non-finite entries");
  if (static_cast<Eigen::Index>(x.sample_ids.size()) != n ||
      static_cast<Eigen::Index>(x.gene_ids.size()) != g)
    throw Error(ErrorCode::DimensionMismatch,
                "id list lengths do not match matrix dimensions");
  check_unique(x.sample_ids, "sample");
  check_unique(x.gene_ids, "gene");

  if (y == nullptr) return;
  if (y->values.rows() != n)
    throw Error(ErrorCode::DimensionMismatch,
                "outcome rows do not match expression rows");
  const Eigen::Index c = y->values.cols();
  if (c < 2)
    throw Error(ErrorCode::NotOneHot, "outcome matrix needs at least 2 classes");
  if (static_cast<Eigen::Index>(y->class_labels.size()) != c)
    throw Error(ErrorCode::DimensionMismatch,
                "class label count does not match outcome columns");
  if (y->reference_class < 0 || y->reference_class >= c)
    throw Error(ErrorCode::DimensionMismatch, "reference class out of range");
  for (Eigen::Index i = 0; i < n; ++i) {
    double row_sum = 0.0;
    for (Eigen::Index l = 0; l < c; ++l) {
      const double v = y->values(i, l);
      if (v != 0.0 && v != 1.0)
        throw Error(ErrorCode::NotOneHot, "outcome entries must be 0 or 1");
      row_sum += v;
    }
    if (row_sum != 1.0)
      throw Error(ErrorCode::NotOneHot,
                  "outcome row " + std::to_string(i) + " is not one-hot");
  }
}

Vector column_variances(const Matrix& values) {
  const Eigen::Index n = values.rows();
  Vector out(values.cols());
  for (Eigen::Index j = 0; j < values.cols(); ++j) {
    const double mean = values.col(j).mean();
    out(j) = (values.col(j).array() - mean).square().sum() /
             static_cast<double>(n - 1);
  }
  return out;
}

double regularized_gamma_p(double a, double x) {
  if (x <= 0.0) return 0.0;
  return boost::math::gamma_p(a, x);
}

double inv_gamma_cdf(double x, double shape, double scale) {
  if (x <= 0.0) return 0.0;
  // sigma2 ~ InvGamma(shape, scale) <=> 1/sigma2 ~ Gamma(shape, rate=scale).
  return 1.0 - regularized_gamma_p(shape, scale / x);
}

double calibrate_xi(const ExpressionMatrix& x, double eta) {
  if (!(eta > 0.0)) throw Error(ErrorCode::ConfigParse, "eta must be positive");
  Vector vars = column_variances(x.values);
  for (Eigen::Index j = 0; j < vars.size(); ++j)
    if (!(vars(j) > 0.0))
      throw Error(ErrorCode::ZeroVarianceColumn,
                  "column " + std::to_string(j) + " has zero sample variance");

  std::vector<double> v(vars.data(), vars.data() + vars.size());
  const std::size_t h = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + h, v.end());
  double med = v[h];
  if (v.size() % 2 == 0) {
    std::nth_element(v.begin(), v.begin() + h - 1, v.begin() + h);
    med = 0.5 * (med + v[h - 1]);
  }

  // Solve P(eta/2, t) = 0.05 by bisection, then xi = 2 * med * t / eta so
  // that P(sigma2 <= med) = 0.95 under InvGamma(eta/2, eta*xi/2).
  const double a = 0.5 * eta;
  const double target = 0.05;
  double lo = 0.0, hi = 1.0;
  while (regularized_gamma_p(a, hi) < target) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (regularized_gamma_p(a, mid) < target)
      lo = mid;
    else
      hi = mid;
    if (hi - lo < 1e-10 * std::max(1.0, hi)) break;
  }
  const double t = 0.5 * (lo + hi);
  return 2.0 * med * t / eta;
}

}  // namespace sslb
