#include "dtgan/accountant.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dtgan/common.hpp"
#include "json.hpp"

namespace dtgan::accountant {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool finite_positive(double x) { return std::isfinite(x) && x > 0.0; }

double log_binomial(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

// log(sum exp(t_i)) with +inf passthrough.
double log_sum_exp(const std::vector<double>& terms) {
  double m = -kInf;
  for (double t : terms) m = std::max(m, t);
  if (m == -kInf) return -kInf;
  if (m == kInf) return kInf;
  double s = 0.0;
  for (double t : terms) s += std::exp(t - m);
  return m + std::log(s);
}

}  // namespace

OrderGrid::OrderGrid() {
  for (int l = 2; l <= 64; ++l) orders_.push_back(l);
  orders_.push_back(128);
  orders_.push_back(256);
  orders_.push_back(512);
}

OrderGrid::OrderGrid(std::vector<int> orders) : orders_(std::move(orders)) {
  if (orders_.empty()) throw ConfigError("order grid must be non-empty");
  int prev = 1;
  for (int l : orders_) {
    if (l < 2) throw ConfigError("Renyi orders must be >= 2");
    if (l <= prev) throw ConfigError("Renyi orders must be strictly increasing");
    prev = l;
  }
}

RdpCurve RdpCurve::zero(const OrderGrid& grid) {
  return RdpCurve{grid, std::vector<double>(grid.size(), 0.0)};
}

double gaussian_rdp(double sigma, double sensitivity, int lambda) {
  if (!finite_positive(sigma)) throw ConfigError("sigma must be finite and > 0");
  if (!finite_positive(sensitivity)) throw ConfigError("sensitivity must be finite and > 0");
  if (lambda < 2) throw ConfigError("order must be >= 2");
  return lambda * sensitivity * sensitivity / (2.0 * sigma * sigma);
}

RdpCurve compose(std::span<const RdpCurve> curves) {
  if (curves.empty()) throw ConfigError("compose needs at least one curve");
  RdpCurve out = curves.front();
  for (size_t c = 1; c < curves.size(); ++c) {
    if (!(curves[c].grid == out.grid)) throw ConfigError("composed curves must share one order grid");
    for (size_t i = 0; i < out.eps.size(); ++i) out.eps[i] += curves[c].eps[i];
  }
  return out;
}

double subsample_amplify(const std::function<double(int)>& base, double gamma, int lambda) {
  if (!(gamma >= 0.0 && gamma <= 1.0) || !std::isfinite(gamma)) {
    throw ConfigError("subsample rate must lie in [0, 1]");
  }
  if (lambda < 2) throw ConfigError("order must be >= 2");
  if (gamma == 0.0) return 0.0;

  double log_gamma = std::log(gamma);
  std::vector<double> terms;  // log of every addend except the leading 1
  terms.reserve(static_cast<size_t>(lambda));

  // j = 2 term: gamma^2 C(lambda,2) min{4(e^{eps2}-1), 2 e^{eps2}}.
  double eps2 = base(2);
  if (!(eps2 >= 0.0)) throw ConfigError("base curve must be non-negative");
  // 4(e^x - 1) < 2 e^x iff x < log 2; both branches evaluated in log space.
  double log_min;
  if (std::isinf(eps2)) {
    log_min = kInf;
  } else if (eps2 < M_LN2) {
    log_min = std::log(4.0 * std::expm1(eps2));
  } else {
    log_min = M_LN2 + eps2;
  }
  if (log_min > -kInf) {
    terms.push_back(2.0 * log_gamma + log_binomial(lambda, 2) + log_min);
  }

  // j >= 3 terms: gamma^j C(lambda,j) e^{(j-1) eps(j)} * 2.
  for (int j = 3; j <= lambda; ++j) {
    double eps_j = base(j);
    if (!(eps_j >= 0.0)) throw ConfigError("base curve must be non-negative");
    terms.push_back(j * log_gamma + log_binomial(lambda, j) + (j - 1.0) * eps_j + M_LN2);
  }

  // log(1 + sum) via log1p so tiny costs keep full relative precision.
  double lse = log_sum_exp(terms);
  if (lse == kInf) return kInf;
  double log_total;
  if (lse == -kInf) {
    log_total = 0.0;
  } else if (lse > 700.0) {
    log_total = lse + std::log1p(std::exp(-lse));
  } else {
    log_total = std::log1p(std::exp(lse));
  }
  return log_total / (lambda - 1.0);
}

DpResult to_dp(const RdpCurve& curve, double delta) {
  if (curve.eps.empty()) throw ConfigError("curve must be non-empty");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
  double log_inv_delta = std::log(1.0 / delta);
  double best = kInf;
  int best_order = curve.grid.orders().front();
  for (size_t i = 0; i < curve.eps.size(); ++i) {
    int lambda = curve.grid.orders()[i];
    double cand = curve.eps[i] + log_inv_delta / (lambda - 1.0);
    if (cand < best) {
      best = cand;
      best_order = lambda;
    }
  }
  return {best, best_order};
}

RdpCurve update_cost(const MechanismSpec& spec, const OrderGrid& grid) {
  if (!finite_positive(spec.sigma)) throw ConfigError("sigma must be finite and > 0");
  if (!finite_positive(spec.sensitivity)) throw ConfigError("sensitivity must be finite and > 0");
  if (spec.compositions < 1) throw ConfigError("compositions must be >= 1");
  RdpCurve out{grid, {}};
  out.eps.reserve(grid.size());
  for (int lambda : grid.orders()) {
    out.eps.push_back(spec.compositions * gaussian_rdp(spec.sigma, spec.sensitivity, lambda));
  }
  return out;
}

RdpCurve discriminator_update_cost(long batch, double sigma, const OrderGrid& grid) {
  if (batch < 1) throw ConfigError("batch must be >= 1");
  return update_cost({sigma, 2.0, batch, 1.0}, grid);
}

RdpCurve generator_update_cost(long batch, double sigma, const OrderGrid& grid) {
  if (batch < 1) throw ConfigError("batch must be >= 1");
  return update_cost({sigma, 2.0, 3 * batch, 1.0}, grid);
}

RdpCurve amplified_step_cost(const MechanismSpec& spec, const OrderGrid& grid) {
  double per_mech = spec.sensitivity * spec.sensitivity / (2.0 * spec.sigma * spec.sigma);
  double k = static_cast<double>(spec.compositions);
  auto base = [per_mech, k](int order) { return k * per_mech * order; };
  RdpCurve out{grid, {}};
  out.eps.reserve(grid.size());
  for (int lambda : grid.orders()) {
    out.eps.push_back(subsample_amplify(base, spec.subsample_rate, lambda));
  }
  return out;
}

Ledger::Ledger(const MechanismSpec& spec, double delta, const OrderGrid& grid)
    : step_curve_(amplified_step_cost(spec, grid)), delta_(delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
}

RdpCurve Ledger::curve_at(long steps) const {
  RdpCurve total = step_curve_;
  for (double& e : total.eps) e *= static_cast<double>(steps);
  return total;
}

double Ledger::peek_next_epsilon() const { return to_dp(curve_at(steps_ + 1), delta_).epsilon; }

void Ledger::spend() {
  ++steps_;
  step_epsilons_.push_back(epsilon());
}

double Ledger::epsilon() const { return steps_ == 0 ? 0.0 : dp().epsilon; }

DpResult Ledger::dp() const {
  if (steps_ == 0) return {0.0, step_curve_.grid.max_order()};
  return to_dp(curve_at(steps_), delta_);
}

RdpCurve Ledger::total_curve() const { return curve_at(steps_); }

LedgerResult run_ledger(const MechanismSpec& spec, long steps, double delta,
                        const OrderGrid& grid) {
  if (steps < 1) throw ConfigError("steps must be >= 1");
  Ledger ledger(spec, delta, grid);
  for (long t = 0; t < steps; ++t) ledger.spend();
  DpResult dp = ledger.dp();
  return {ledger.total_curve(), dp.epsilon, dp.best_order, ledger.step_epsilons()};
}

double calibrate_sigma(const DpBudget& budget, long steps, long compositions,
                       double subsample_rate, double sensitivity, const OrderGrid& grid) {
  if (!(budget.epsilon > 0.0)) throw ConfigError("target epsilon must be > 0");
  if (!(budget.delta > 0.0 && budget.delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
  auto eps_at = [&](double sigma) {
    MechanismSpec spec{sigma, sensitivity, compositions, subsample_rate};
    return run_ledger(spec, steps, budget.delta, grid).epsilon;
  };

  double lo = 1e-2, hi = 1e4;
  double eps_hi = eps_at(hi);
  if (eps_hi > budget.epsilon) {
    throw BudgetError("privacy budget unreachable: epsilon at sigma=1e4 is " +
                      std::to_string(eps_hi));
  }
  double eps_lo = eps_at(lo);
  if (eps_lo <= budget.epsilon) return lo;  // already satisfied at the floor
  if (eps_lo < eps_hi) throw std::logic_error("epsilon not monotone decreasing in sigma");

  // Invariant: eps(lo) > target >= eps(hi). Bisect to 1e-3 relative width,
  // then keep shrinking while the achieved epsilon is > 1% under target.
  for (int it = 0; it < 200; ++it) {
    bool width_ok = (hi - lo) <= 1e-3 * hi;
    if (width_ok && eps_hi >= 0.99 * budget.epsilon) break;
    double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    double eps_mid = eps_at(mid);
    if (eps_mid <= budget.epsilon) {
      hi = mid;
      eps_hi = eps_mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

std::string Transcript::to_json() const {
  nlohmann::json j;
  j["variant"] = variant;
  j["steps"] = steps;
  j["sigma"] = sigma;
  j["gamma"] = gamma;
  j["batch"] = batch;
  j["compositions"] = compositions;
  j["delta"] = delta;
  if (std::isinf(epsilon)) {
    j["epsilon"] = "inf";
  } else {
    j["epsilon"] = epsilon;
  }
  j["best_order"] = best_order;
  j["orders"] = orders;
  nlohmann::json rdp_json = nlohmann::json::array();
  for (double e : rdp) {
    if (std::isinf(e)) {
      rdp_json.push_back("inf");
    } else {
      rdp_json.push_back(e);
    }
  }
  j["rdp"] = rdp_json;
  return j.dump(2);
}

Transcript Transcript::from_json(const std::string& json) {
  nlohmann::json j = nlohmann::json::parse(json);
  Transcript t;
  t.variant = j.at("variant").get<std::string>();
  t.steps = j.at("steps").get<long>();
  t.sigma = j.at("sigma").get<double>();
  t.gamma = j.at("gamma").get<double>();
  t.batch = j.at("batch").get<long>();
  t.compositions = j.at("compositions").get<long>();
  t.delta = j.at("delta").get<double>();
  t.epsilon = j.at("epsilon").is_string() ? kInf : j.at("epsilon").get<double>();
  t.best_order = j.at("best_order").get<int>();
  t.orders = j.at("orders").get<std::vector<int>>();
  for (const auto& e : j.at("rdp")) {
    t.rdp.push_back(e.is_string() ? kInf : e.get<double>());
  }
  return t;
}

}  // namespace dtgan::accountant
