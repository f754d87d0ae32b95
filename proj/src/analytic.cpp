#include "choke/analytic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace choke::analytic {
namespace {

// The overall-loss model is closed-form in L = ln R, R = (1-h0)/(1-2h0):
//   mu0 = L e^{-L} / (1 + L e^{-L})
//   h0 = (1 - e^{-L}) / (2 - e^{-L}),  1 - 2h0 = e^{-L} / (2 - e^{-L})
// and mu0 / (1-2h0) = L (2 - e^{-L}) / (1 + L e^{-L}), increasing in L.
struct LogRatioPoint {
  double mu0;
  double h0;
  double one_minus_2h0;
  double load;  // mu0 / (1 - 2h0)
};

LogRatioPoint point_at(double L) {
  const double e = std::exp(-L);
  const double le = L * e;
  LogRatioPoint p{};
  p.mu0 = le / (1.0 + le);
  p.h0 = (1.0 - e) / (2.0 - e);
  p.one_minus_2h0 = e / (2.0 - e);
  p.load = L * (2.0 - e) / (1.0 + le);
  return p;
}

// 1 / (1 + e^z) without overflow warnings for large z.
double logistic_complement(double z) {
  if (z > 0.0) {
    const double ez = std::exp(-z);
    return ez / (1.0 + ez);
  }
  return 1.0 / (1.0 + std::exp(z));
}

bool within(double value, double lo, double hi) {
  const double slack = 1e-12 * std::max(1.0, std::abs(hi));
  return value >= lo - slack && value <= hi + slack;
}

std::string interval_message(const char* what, double value, double lo,
                             double hi) {
  std::ostringstream os;
  os << what << " = " << value << " outside [" << lo << ", " << hi << "]";
  return os.str();
}

double effective_rate(const DerivedCoefficients& c) { return c.x0 * (1.0 - c.r); }

}  // namespace

SteadyStatePoint solve_steady_state(const SteadyInput& input, double tol) {
  if (!(input.x0_norm >= 0.0) || !std::isfinite(input.x0_norm)) {
    throw std::invalid_argument("x0_norm must be finite and >= 0");
  }
  if (!(input.r >= 0.0 && input.r < 1.0)) {
    throw std::invalid_argument("r must lie in [0, 1)");
  }
  if (!(tol > 0.0)) {
    throw std::invalid_argument("tolerance must be positive");
  }

  SteadyStatePoint out{input.x0_norm, input.r, 0.0, 0.0};
  const double target = input.x0_norm * (1.0 - input.r);
  if (target == 0.0) {
    return out;
  }

  // load(L) >= L / (1 + 1/e), so the root is below target * (1 + 1/e).
  double lo = 0.0;
  double hi = target * (1.0 + std::exp(-1.0)) + 1.0;
  double mid = 0.5 * (lo + hi);
  for (int it = 0; it < kMaxIterations; ++it) {
    mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) {
      break;
    }
    if (point_at(mid).load < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }

  const LogRatioPoint p = point_at(mid);
  out.mu0 = p.mu0;
  out.h0 = p.h0;
  const double residual = std::abs(target * p.one_minus_2h0 - p.mu0);
  if (!(residual < tol)) {
    std::ostringstream os;
    os << "steady-state solve did not converge for x0/C=" << input.x0_norm
       << " (residual " << residual << ")";
    throw SolverError(os.str(), residual);
  }
  return out;
}

double steady_consistency_residual(const SteadyStatePoint& ss) noexcept {
  return std::abs(ss.x0_norm * (1.0 - ss.r) * (1.0 - 2.0 * ss.h0) - ss.mu0);
}

DerivedCoefficients derive_coefficients(const SteadyStatePoint& ss, double b,
                                        double capacity_C) {
  if (!(b >= 2.0) || !std::isfinite(b)) {
    throw InvalidBacklog("backlog b must be >= 2 packets");
  }
  if (!(capacity_C > 0.0) || !std::isfinite(capacity_C)) {
    throw std::invalid_argument("capacity C must be positive");
  }

  DerivedCoefficients c;
  c.b = b;
  c.capacity_C = capacity_C;
  c.x0 = ss.x0_norm * capacity_C;
  c.r = ss.r;
  c.mu0 = ss.mu0;
  c.h0 = ss.h0;
  c.beta = std::log1p(-1.0 / b);
  c.tau_b = b * (1.0 - ss.h0) / (capacity_C * (1.0 - ss.mu0));

  if (c.degenerate()) {
    c.a = std::numeric_limits<double>::infinity();
    c.K = 0.0;
    c.rho0_tail = 0.0;
    c.v_tail = capacity_C;
    c.thinning_horizon = c.tau_b;
    return c;
  }

  const double x0e = effective_rate(c);
  c.a = (1.0 - ss.mu0) * capacity_C / (x0e * (1.0 - ss.h0));
  c.K = x0e * c.beta / ((1.0 - ss.mu0) * capacity_C);
  c.rho0_tail = 1.0 / (1.0 + c.a);
  c.v_tail = x0e * (1.0 - ss.h0) + (1.0 - ss.mu0) * capacity_C;
  if (ss.mu0 > 0.0) {
    const double log_ratio =
        std::log1p(-ss.mu0) - std::log(c.a) - std::log(ss.mu0);
    c.thinning_horizon = log_ratio / (-x0e * c.beta);
  } else {
    c.thinning_horizon = c.tau_b * (-1.0 / (b * c.beta));
  }
  return c;
}

double rho0_of_tau(const DerivedCoefficients& coeff, double tau) {
  if (!within(tau, 0.0, coeff.tau_b)) {
    throw DomainError(interval_message("tau", tau, 0.0, coeff.tau_b));
  }
  if (coeff.degenerate()) {
    return 0.0;
  }
  const double e = std::exp(effective_rate(coeff) * coeff.beta * tau);
  return e / (coeff.a + e);
}

double y_of_rho0(const DerivedCoefficients& coeff, double rho0) {
  if (rho0 == 1.0) {
    throw DomainError("y(rho0) is singular at rho0 = 1");
  }
  if (coeff.degenerate()) {
    throw DomainError("y(rho0) is undefined without UDP traffic");
  }
  if (!within(rho0, coeff.mu0, coeff.rho0_tail)) {
    throw DomainError(
        interval_message("rho0", rho0, coeff.mu0, coeff.rho0_tail));
  }
  const double tail = coeff.rho0_tail;
  const double log_term = std::log(coeff.a * rho0 / (1.0 - rho0));
  const double rational = (rho0 - tail) / ((1.0 - rho0) * (1.0 - tail));
  return (log_term + rational) / coeff.K;
}

double rho0_of_y(const DerivedCoefficients& coeff, double y) {
  if (coeff.degenerate()) return 0.0;
  if (!(y >= 0.0)) throw DomainError("queue position must be >= 0");
  if (y == 0.0) return coeff.rho0_tail;
  if (y >= y_of_rho0(coeff, coeff.mu0)) return coeff.mu0;
  double lo = coeff.mu0;         // y(lo) > y
  double hi = coeff.rho0_tail;   // y(hi) = 0 < y
  for (int i = 0; i < kMaxIterations && hi - lo > 1e-14; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (y_of_rho0(coeff, mid) > y) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

double tau_of_rho0(const DerivedCoefficients& coeff, double rho0) {
  if (coeff.degenerate()) {
    throw DomainError("tau(rho0) is undefined without UDP traffic");
  }
  if (rho0 == 1.0) {
    throw DomainError("tau(rho0) is singular at rho0 = 1");
  }
  if (!within(rho0, coeff.mu0, coeff.rho0_tail)) {
    throw DomainError(
        interval_message("rho0", rho0, coeff.mu0, coeff.rho0_tail));
  }
  return std::log(coeff.a * rho0 / (1.0 - rho0)) /
         (effective_rate(coeff) * coeff.beta);
}

double velocity_of_rho0(const DerivedCoefficients& coeff, double rho0) noexcept {
  return (1.0 - coeff.mu0) * coeff.capacity_C / (1.0 - rho0);
}

std::optional<CriticalPoint> critical_point(const DerivedCoefficients& coeff) {
  if (coeff.degenerate() || coeff.rho0_tail <= 1.0 / 3.0) {
    return std::nullopt;
  }
  const double tail = coeff.rho0_tail;
  CriticalPoint cp;
  cp.y_star = (std::log(coeff.a / 2.0) +
               (1.0 - 3.0 * tail) / (2.0 * (1.0 - tail))) /
              coeff.K;
  return cp;
}

SpatialProfile build_profile(const SteadyStatePoint& ss, double b,
                             double capacity_C, int n_samples) {
  if (n_samples < 3) {
    throw std::invalid_argument("a profile needs at least 3 samples");
  }
  SpatialProfile prof;
  prof.steady = ss;
  prof.coeff = derive_coefficients(ss, b, capacity_C);
  const DerivedCoefficients& c = prof.coeff;
  prof.samples.reserve(static_cast<std::size_t>(n_samples));
  const double last = static_cast<double>(n_samples - 1);

  if (c.degenerate()) {
    for (int k = 0; k < n_samples; ++k) {
      const double y = b * k / last;
      prof.samples.push_back({y, 0.0, capacity_C, y / capacity_C});
    }
    return prof;
  }

  // Uniform in rho0, walking from the tail (rho0(0)) to the head (mu0).
  for (int k = 0; k < n_samples; ++k) {
    SpatialSample s;
    if (k == 0) {
      s.rho0 = c.rho0_tail;
      s.y = 0.0;
      s.tau = 0.0;
    } else {
      s.rho0 = (k == n_samples - 1)
                   ? c.mu0
                   : c.rho0_tail - (c.rho0_tail - c.mu0) * (k / last);
      s.y = y_of_rho0(c, s.rho0);
      s.tau = tau_of_rho0(c, s.rho0);
    }
    s.v = velocity_of_rho0(c, s.rho0);
    prof.samples.push_back(s);
  }
  prof.critical = critical_point(c);
  prof.closure_mismatch = prof.samples.back().y - b;
  return prof;
}

std::vector<ProfileDerivatives> profile_derivatives(
    const SpatialProfile& profile) {
  const DerivedCoefficients& c = profile.coeff;
  const double k = effective_rate(c) * c.beta;
  std::vector<ProfileDerivatives> out;
  out.reserve(profile.samples.size());
  for (const SpatialSample& s : profile.samples) {
    const double rho = s.rho0;
    const double v = s.v;
    ProfileDerivatives d;
    d.y = s.y;
    d.rho0_d1 = k * (rho - rho * rho) / v;
    d.rho0_d2 = k * k * rho * (1.0 - rho) * (1.0 - 3.0 * rho) / (v * v);
    d.v_d1 = k * rho;
    d.v_d2 = k * k * rho * (1.0 - rho) / v;
    d.tau_d1 = 1.0 / v;
    d.tau_d2 = -k * rho / (v * v);
    out.push_back(d);
  }
  return out;
}

double transient_utilization(const DerivedCoefficients& coeff,
                             const TransientQuery& query) {
  if (!(query.alpha >= 0.0) || !std::isfinite(query.alpha)) {
    throw DomainError("alpha must be finite and >= 0");
  }
  if (!within(query.dT, 0.0, coeff.tau_b)) {
    throw DomainError(interval_message("dT", query.dT, 0.0, coeff.tau_b));
  }
  if (coeff.degenerate()) {
    return 0.0;
  }

  // The fluid at the head at dT was thinned at the old rate for the part of
  // the horizon it had already queued and at the new rate for the rest.
  const double x0e = effective_rate(coeff);
  const double x02e = query.alpha * x0e;
  const double horizon = coeff.thinning_horizon;
  const double elapsed =
      horizon * std::clamp(query.dT / coeff.tau_b, 0.0, 1.0);
  const double exponent = -x02e * coeff.beta * horizon +
                          coeff.beta * (horizon - elapsed) * (x02e - x0e);
  return logistic_complement(std::log(coeff.a) + exponent);
}

double extreme_utilization(const SteadyStatePoint& ss,
                           const DerivedCoefficients& coeff, double alpha) {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
    throw DomainError("alpha must be finite and >= 0");
  }
  if (ss.x0_norm <= 0.0) {
    return 0.0;
  }
  if (alpha == 0.0) {
    return 1.0 / (1.0 + coeff.a);
  }
  if (alpha == 1.0) {
    return ss.mu0;
  }
  if (ss.mu0 <= 0.0) {
    throw DegenerateEquilibrium(
        "mu0 = 0: extreme utilization ratio is undefined");
  }
  const double log_a = std::log(coeff.a);
  const double log_ratio = std::log1p(-ss.mu0) - log_a - std::log(ss.mu0);
  return logistic_complement(log_a + alpha * log_ratio);
}

std::vector<TransientSample> transient_curve(const DerivedCoefficients& coeff,
                                             double alpha, int n_points) {
  if (n_points < 2) {
    throw std::invalid_argument("a transient curve needs at least 2 points");
  }
  std::vector<TransientSample> out;
  out.reserve(static_cast<std::size_t>(n_points));
  for (int i = 0; i < n_points; ++i) {
    const double dT = (i == n_points - 1)
                          ? coeff.tau_b
                          : coeff.tau_b * i / static_cast<double>(n_points - 1);
    out.push_back({dT, transient_utilization(coeff, {alpha, dT})});
  }
  return out;
}

}  // namespace choke::analytic
