#pragma once

#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace dtgan::accountant {

/// Ascending integer Renyi orders, all >= 2.
class OrderGrid {
 public:
  OrderGrid();  // default grid {2..64, 128, 256, 512}
  explicit OrderGrid(std::vector<int> orders);

  const std::vector<int>& orders() const { return orders_; }
  size_t size() const { return orders_.size(); }
  int max_order() const { return orders_.back(); }
  bool operator==(const OrderGrid& other) const { return orders_ == other.orders_; }

 private:
  std::vector<int> orders_;
};

/// Per-order Renyi privacy cost eps(lambda), in nats. Entries may saturate
/// to +infinity under composition overflow.
struct RdpCurve {
  OrderGrid grid;
  std::vector<double> eps;  // aligned with grid.orders()

  static RdpCurve zero(const OrderGrid& grid);
};

struct DpBudget {
  double epsilon;  // > 0
  double delta;    // in (0, 1)
};

/// One training-update mechanism: `compositions` per-sample Gaussian
/// mechanisms (B for the discriminator, 3B for the generator), run on a
/// `subsample_rate` fraction of the data.
struct MechanismSpec {
  double sigma;          // noise multiplier, > 0
  double sensitivity;    // l2 sensitivity, > 0 (2C with clipping bound C)
  long compositions;     // per-update mechanism count k, >= 1
  double subsample_rate; // gamma in [0, 1]
};

struct DpResult {
  double epsilon;
  int best_order;
};

/// Gaussian-mechanism cost: lambda * sensitivity^2 / (2 sigma^2).
double gaussian_rdp(double sigma, double sensitivity, int lambda);

/// Pointwise sum; all curves must share one grid.
RdpCurve compose(std::span<const RdpCurve> curves);

/// Amplification-by-subsampling upper bound at integer order `lambda` for a
/// mechanism drawn on a `gamma` fraction of the data:
///
///   (1/(lambda-1)) * log( 1
///       + gamma^2 C(lambda,2) min{ 4(e^{eps(2)}-1), 2 e^{eps(2)} }
///       + sum_{j=3}^{lambda} gamma^j C(lambda,j) e^{(j-1) eps(j)} * 2 )
///
/// `base` must be defined for every integer order in [2, lambda]. The base
/// is a Gaussian mechanism, whose eps(inf) is unbounded, so the inner
/// min{2, (e^{eps(inf)}-1)^j} factors are fixed at 2. Evaluated fully in
/// log space (log-binomials + log-sum-exp), so orders up to 512 cannot
/// overflow; saturates to +inf only if the base does.
double subsample_amplify(const std::function<double(int)>& base, double gamma, int lambda);

/// Smallest eps(lambda) + log(1/delta)/(lambda-1) over the grid; ties break
/// toward the smallest order.
DpResult to_dp(const RdpCurve& curve, double delta);

/// Corollary cost of one discriminator update: eps(lambda) = 2 B lambda / sigma^2
/// (B per-sample Gaussian mechanisms of sensitivity 2, C = 1).
RdpCurve discriminator_update_cost(long batch, double sigma, const OrderGrid& grid = OrderGrid());

/// Corollary cost of one generator update: eps(lambda) = 6 B lambda / sigma^2
/// (three sanitized loss gradients per sample).
RdpCurve generator_update_cost(long batch, double sigma, const OrderGrid& grid = OrderGrid());

/// General per-update cost for `spec.compositions` Gaussian mechanisms,
/// before amplification.
RdpCurve update_cost(const MechanismSpec& spec, const OrderGrid& grid = OrderGrid());

/// Subsampling-amplified cost of a single update.
RdpCurve amplified_step_cost(const MechanismSpec& spec, const OrderGrid& grid = OrderGrid());

/// Append-only spend tracker. All steps of one ledger share the same
/// mechanism; spend after every step is recoverable from step_epsilons().
class Ledger {
 public:
  Ledger(const MechanismSpec& spec, double delta, const OrderGrid& grid = OrderGrid());

  /// eps at delta if one more step were taken. Does not commit.
  double peek_next_epsilon() const;
  void spend();

  long steps() const { return steps_; }
  double delta() const { return delta_; }
  double epsilon() const;          // spend so far (0 before any step)
  DpResult dp() const;             // (eps, best order) so far
  RdpCurve total_curve() const;
  const RdpCurve& step_curve() const { return step_curve_; }
  const std::vector<double>& step_epsilons() const { return step_epsilons_; }

 private:
  RdpCurve curve_at(long steps) const;

  RdpCurve step_curve_;
  double delta_;
  long steps_ = 0;
  std::vector<double> step_epsilons_;
};

struct LedgerResult {
  RdpCurve total;
  double epsilon;
  int best_order;
  std::vector<double> epsilon_per_step;
};

/// T identical amplified steps composed, converted at `delta`.
LedgerResult run_ledger(const MechanismSpec& spec, long steps, double delta,
                        const OrderGrid& grid = OrderGrid());

/// Smallest sigma in [1e-2, 1e4] whose T-step ledger satisfies the budget.
/// Bisection to 1e-3 relative width on sigma, continued while the achieved
/// epsilon is more than 1% below target, so the round trip lands in
/// [0.99 target, target]. Throws BudgetError if sigma = 1e4 still exceeds
/// the target.
double calibrate_sigma(const DpBudget& budget, long steps, long compositions,
                       double subsample_rate, double sensitivity = 2.0,
                       const OrderGrid& grid = OrderGrid());

/// Transcript of an accounting run, serializable to JSON.
struct Transcript {
  std::string variant;  // "dp_discriminator" | "dp_generator" | "none"
  long steps = 0;
  double sigma = 0.0;
  double gamma = 0.0;
  long batch = 0;
  long compositions = 0;
  double delta = 0.0;
  double epsilon = 0.0;  // +inf for the non-private variant
  int best_order = 0;
  std::vector<int> orders;
  std::vector<double> rdp;

  std::string to_json() const;
  static Transcript from_json(const std::string& json);
};

}  // namespace dtgan::accountant
