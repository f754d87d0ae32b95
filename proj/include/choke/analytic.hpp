#pragma once

// Closed-form CHOKe queue models: the overall-loss steady state, the spatial
// distribution of UDP packets through the queue, and the transient UDP
// utilization that follows a step change of the UDP arrival rate.
//
// Rates named *_norm are multiples of the link capacity C. Everything else is
// in packets, packets/second and seconds.

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace choke::analytic {

/// Raised when the equilibrium bisection does not reach the requested residual.
class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// Argument outside the interval on which a formula is defined.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// beta = ln(1 - 1/b) is undefined for b < 2.
class InvalidBacklog : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// mu0 == 0 with x0 > 0: the extreme-utilization ratio (1-mu0)/(a mu0) diverges.
class DegenerateEquilibrium : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline constexpr double kDefaultTolerance = 1e-10;
inline constexpr int kMaxIterations = 200;

struct SteadyInput {
  double x0_norm = 0.0;  // UDP arrival rate / C
  double r = 0.0;        // ambient (RED) drop probability
};

struct SteadyStatePoint {
  double x0_norm = 0.0;
  double r = 0.0;
  double mu0 = 0.0;  // UDP link utilization
  double h0 = 0.0;   // UDP buffer share, b0/b
};

/// Constants of the spatial model for one equilibrium and one backlog b.
struct DerivedCoefficients {
  double b = 0.0;           // backlog, packets
  double capacity_C = 0.0;  // packets/second
  double x0 = 0.0;          // UDP arrival rate, packets/second
  double r = 0.0;
  double mu0 = 0.0;
  double h0 = 0.0;
  double beta = 0.0;       // ln(1 - 1/b) < 0
  double a = 0.0;          // (1-mu0) C / (x0 (1-r) (1-h0))
  double K = 0.0;          // x0 (1-r) beta / ((1-mu0) C), per packet slot
  double tau_b = 0.0;      // full queueing delay by Little's law, seconds
  double rho0_tail = 0.0;  // rho0(0) = 1/(1+a)
  double v_tail = 0.0;     // v(0), packets/second

  /// Delay at which the thinning law carries rho0 from rho0(0) down to mu0.
  /// Equals tau_b * (-1 / (b * beta)); the two coincide as b grows.
  double thinning_horizon = 0.0;

  bool degenerate() const noexcept { return x0 <= 0.0; }
};

struct SpatialSample {
  double y = 0.0;    // queue position from the tail, packet slots
  double rho0 = 0.0;
  double v = 0.0;    // packets/second
  double tau = 0.0;  // seconds from the tail to y
};

struct CriticalPoint {
  double y_star = 0.0;
  double rho0_star = 1.0 / 3.0;
};

struct SpatialProfile {
  SteadyStatePoint steady;
  DerivedCoefficients coeff;
  std::vector<SpatialSample> samples;  // strictly increasing y
  std::optional<CriticalPoint> critical;
  /// y(mu0) - b. Nonzero because beta is exact rather than -1/b.
  double closure_mismatch = 0.0;
};

struct ProfileDerivatives {
  double y = 0.0;
  double rho0_d1 = 0.0;
  double rho0_d2 = 0.0;
  double v_d1 = 0.0;
  double v_d2 = 0.0;
  double tau_d1 = 0.0;
  double tau_d2 = 0.0;
};

struct TransientQuery {
  double alpha = 1.0;  // x02 / x0
  double dT = 0.0;     // seconds since the rate change
};

/// Solves the overall-loss model
///   mu0 = ln R / (R + ln R),   R = (1-h0)/(1-2h0)
///   x0 (1-r) / C = mu0 / (1-2h0)
/// for (mu0, h0). Throws SolverError on non-convergence.
SteadyStatePoint solve_steady_state(const SteadyInput& input,
                                    double tol = kDefaultTolerance);

/// |x0 (1-r) (1-2h0) - mu0|, the equilibrium form of the rate conservation law.
double steady_consistency_residual(const SteadyStatePoint& ss) noexcept;

DerivedCoefficients derive_coefficients(const SteadyStatePoint& ss, double b,
                                        double capacity_C);

/// rho0 as a function of the queueing delay accumulated from the tail.
double rho0_of_tau(const DerivedCoefficients& coeff, double tau);

/// Queue position holding UDP probability rho0; inverse of the spatial profile.
double y_of_rho0(const DerivedCoefficients& coeff, double rho0);

/// Inverse of y_of_rho0 by bisection. Positions past y(mu0) return mu0; the
/// degenerate no-UDP profile is 0 everywhere.
double rho0_of_y(const DerivedCoefficients& coeff, double y);

/// Queueing delay to reach the slot whose UDP probability is rho0.
double tau_of_rho0(const DerivedCoefficients& coeff, double rho0);

/// v = (1-mu0) C / (1-rho0).
double velocity_of_rho0(const DerivedCoefficients& coeff, double rho0) noexcept;

/// Position of the inflection of rho0(y), present only when rho0(0) > 1/3.
std::optional<CriticalPoint> critical_point(const DerivedCoefficients& coeff);

/// Samples the profile on a uniform rho0 grid between mu0 and rho0(0).
SpatialProfile build_profile(const SteadyStatePoint& ss, double b,
                             double capacity_C, int n_samples);

std::vector<ProfileDerivatives> profile_derivatives(
    const SpatialProfile& profile);

/// UDP utilization dT seconds after the arrival rate jumps from x0 to alpha*x0.
double transient_utilization(const DerivedCoefficients& coeff,
                             const TransientQuery& query);

/// Utilization reached at dT = tau_b: the transient minimum (alpha > 1) or
/// maximum (alpha < 1).
double extreme_utilization(const SteadyStatePoint& ss,
                           const DerivedCoefficients& coeff, double alpha);

struct TransientSample {
  double dT = 0.0;
  double mu0 = 0.0;
};

/// Evenly spaced transient curve over [0, tau_b], endpoints included.
std::vector<TransientSample> transient_curve(const DerivedCoefficients& coeff,
                                             double alpha, int n_points);

}  // namespace choke::analytic
