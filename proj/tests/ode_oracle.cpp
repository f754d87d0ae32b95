#include "ode_oracle.hpp"

namespace choke::testing {

std::vector<OdeState> integrate_thinning_ode(double x0, double beta, double mu0,
                                             double capacity_C,
                                             double rho0_tail, double y_end,
                                             int grid_points,
                                             int substeps_per_point) {
  const double tcp_velocity = (1.0 - mu0) * capacity_C;
  auto velocity = [&](double rho) { return tcp_velocity / (1.0 - rho); };
  // Solving the ODE for rho0' gives rho0' = x0 beta rho0 (1-rho0) / v.
  auto d_rho = [&](double rho) {
    return x0 * beta * rho * (1.0 - rho) / velocity(rho);
  };
  auto d_tau = [&](double rho) { return 1.0 / velocity(rho); };

  std::vector<OdeState> out;
  out.reserve(static_cast<std::size_t>(grid_points));
  OdeState s{0.0, rho0_tail, 0.0};
  const double h = y_end / (static_cast<double>(grid_points) * substeps_per_point);
  for (int p = 0; p < grid_points; ++p) {
    for (int k = 0; k < substeps_per_point; ++k) {
      const double r = s.rho0;
      const double k1 = d_rho(r);
      const double k2 = d_rho(r + 0.5 * h * k1);
      const double k3 = d_rho(r + 0.5 * h * k2);
      const double k4 = d_rho(r + h * k3);
      const double t1 = d_tau(r);
      const double t2 = d_tau(r + 0.5 * h * k1);
      const double t3 = d_tau(r + 0.5 * h * k2);
      const double t4 = d_tau(r + h * k3);
      s.rho0 += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
      s.tau += h / 6.0 * (t1 + 2 * t2 + 2 * t3 + t4);
      s.y += h;
    }
    s.y = y_end * (p + 1) / grid_points;
    out.push_back(s);
  }
  return out;
}

}  // namespace choke::testing
