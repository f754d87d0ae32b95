// choke: analytic tools, simulator runs and model validation.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "choke/analytic.hpp"
#include "choke/csv.hpp"
#include "choke/harness.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace choke;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitValidation = 2;
constexpr int kExitSolver = 3;

// Thrown when the command ran but its checks did not hold.
struct ValidationFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Sweep {
  double lo = 0.0;
  double hi = 0.0;
  bool log = false;
};

Sweep parse_sweep(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  if (parts.size() != 2 && parts.size() != 3) {
    throw std::invalid_argument("--sweep expects lo:hi[:log|lin], got '" + text + "'");
  }
  Sweep s;
  try {
    s.lo = std::stod(parts[0]);
    s.hi = std::stod(parts[1]);
  } catch (const std::exception&) {
    throw std::invalid_argument("--sweep bounds are not numbers: '" + text + "'");
  }
  if (parts.size() == 3) {
    if (parts[2] == "log") {
      s.log = true;
    } else if (parts[2] != "lin") {
      throw std::invalid_argument("--sweep spacing must be log or lin");
    }
  }
  if (!(s.lo >= 0.0) || !(s.hi > s.lo) || !std::isfinite(s.hi)) {
    throw std::invalid_argument("--sweep needs 0 <= lo < hi");
  }
  if (s.log && s.lo <= 0.0) throw std::invalid_argument("a log sweep needs lo > 0");
  return s;
}

std::vector<double> grid(const Sweep& s, int points) {
  std::vector<double> v;
  for (int i = 0; i < points; ++i) {
    const double f = points == 1 ? 0.0 : double(i) / (points - 1);
    v.push_back(s.log ? std::exp(std::log(s.lo) + f * (std::log(s.hi) - std::log(s.lo)))
                      : s.lo + f * (s.hi - s.lo));
  }
  return v;
}

// Artifacts go to --out when given, stdout otherwise.
class Output {
 public:
  explicit Output(std::string dir) : dir_(std::move(dir)) {
    if (!dir_.empty()) fs::create_directories(dir_);
  }

  bool to_files() const { return !dir_.empty(); }

  template <class F>
  void write(const std::string& name, F&& body) const {
    if (dir_.empty()) {
      body(std::cout);
      return;
    }
    const fs::path path = fs::path(dir_) / name;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    body(f);
    if (!f) throw std::runtime_error("write failed: " + path.string());
  }

 private:
  std::string dir_;
};

std::string fmt(double v) { return format_double(v); }

// --- steady ------------------------------------------------------------------

struct SteadyArgs {
  std::optional<double> x0;
  double r = 0.0;
  std::string sweep;
  int points = 200;
  std::string out;
};

int run_steady(const SteadyArgs& a) {
  if (!a.x0 && a.sweep.empty()) throw std::invalid_argument("steady needs --x0 or --sweep");
  if (a.x0) {
    const auto ss = analytic::solve_steady_state({*a.x0, a.r});
    std::cout << "x0=" << fmt(*a.x0) << " r=" << fmt(a.r) << " mu0=" << fmt(ss.mu0)
              << " h0=" << fmt(ss.h0) << "\n";
  }
  if (a.sweep.empty()) return kExitOk;
  if (a.points < 2) throw std::invalid_argument("--points must be >= 2");
  const Sweep s = parse_sweep(a.sweep);
  std::vector<analytic::SteadyStatePoint> rows;
  for (double x : grid(s, a.points)) rows.push_back(analytic::solve_steady_state({x, a.r}));
  Output(a.out).write("steady.csv", [&](std::ostream& o) {
    CsvWriter w(o, {"x0", "r", "mu0", "h0"});
    for (const auto& p : rows) w.row({p.x0_norm, p.r, p.mu0, p.h0});
  });
  double best = 0.0, at = 0.0;
  for (const auto& p : rows) {
    if (p.mu0 > best) best = p.mu0, at = p.x0_norm;
  }
  std::cerr << "max mu0=" << fmt(best) << " at x0=" << fmt(at) << "\n";
  return kExitOk;
}

// --- profile -----------------------------------------------------------------

struct ProfileArgs {
  double x0 = 0.0;
  double r = 0.0;
  double b = 1000.0;
  double C = 2500.0;
  int points = 101;
  std::string out;
};

int run_profile(const ProfileArgs& a) {
  const auto ss = analytic::solve_steady_state({a.x0, a.r});
  const auto prof = analytic::build_profile(ss, a.b, a.C, a.points);
  const auto deriv = analytic::profile_derivatives(prof);
  Output(a.out).write("profile.csv", [&](std::ostream& o) {
    CsvWriter w(o, {"y", "rho0", "v", "tau", "rho0_d1", "rho0_d2", "v_d1", "v_d2",
                    "tau_d1", "tau_d2"});
    for (std::size_t i = 0; i < prof.samples.size(); ++i) {
      const auto& s = prof.samples[i];
      const auto& d = deriv[i];
      w.row({s.y, s.rho0, s.v, s.tau, d.rho0_d1, d.rho0_d2, d.v_d1, d.v_d2, d.tau_d1,
             d.tau_d2});
    }
  });
  std::cerr << "rho0(0)=" << fmt(prof.coeff.rho0_tail) << " mu0=" << fmt(ss.mu0)
            << " tau_b=" << fmt(prof.coeff.tau_b);
  if (prof.critical) {
    std::cerr << " y*=" << fmt(prof.critical->y_star);
  }
  std::cerr << "\n";
  return kExitOk;
}

// --- transient / extreme -----------------------------------------------------

struct TransientArgs {
  double x0 = 0.0;
  double alpha = 1.0;
  double r = 0.0;
  double b = 1000.0;
  double C = 2500.0;
  int points = 101;
  std::string out;
};

int run_transient(const TransientArgs& a) {
  const auto ss = analytic::solve_steady_state({a.x0, a.r});
  const auto coeff = analytic::derive_coefficients(ss, a.b, a.C);
  const auto curve = analytic::transient_curve(coeff, a.alpha, a.points);
  Output(a.out).write("transient.csv", [&](std::ostream& o) {
    CsvWriter w(o, {"dT", "mu0"});
    for (const auto& p : curve) w.row({p.dT, p.mu0});
  });
  std::cerr << "tau_b=" << fmt(coeff.tau_b)
            << " extreme=" << fmt(analytic::extreme_utilization(ss, coeff, a.alpha))
            << "\n";
  return kExitOk;
}

int run_extreme(double x0, double alpha, double r) {
  const auto ss = analytic::solve_steady_state({x0, r});
  // The extreme does not depend on the backlog; any b >= 2 will do.
  const auto coeff = analytic::derive_coefficients(ss, 1000.0, 1.0);
  std::cout << fmt(analytic::extreme_utilization(ss, coeff, alpha)) << "\n";
  return kExitOk;
}

// --- simulate ----------------------------------------------------------------

struct SimulateArgs {
  std::string scenario;
  std::string out;
  int jobs = 1;
  std::optional<int> replications;
  std::optional<std::uint64_t> seed;
  std::optional<double> window;
  std::vector<double> compare;
  std::vector<double> spatial;
};

json summary_json(const harness::Replications& reps) {
  json runs = json::array();
  for (const auto& r : reps.runs) {
    const auto& s = r.summary;
    std::int64_t arrivals = 0, transmitted = 0;
    for (const auto& f : s.flows) arrivals += f.arrivals, transmitted += f.transmitted;
    runs.push_back({{"seed", s.seed},
                    {"arrivals", arrivals},
                    {"transmitted", transmitted},
                    {"tcp_losses", s.tcp_losses},
                    {"tcp_timeouts", s.tcp_timeouts},
                    {"fifo_violations", s.fifo_violations},
                    {"window_violations", s.window_violations},
                    {"capacity_violations", s.capacity_violations},
                    {"events", s.events}});
  }
  return {{"replications", reps.runs.size()}, {"runs", runs}};
}

int run_simulate(const SimulateArgs& a) {
  harness::Scenario s = harness::load_scenario(a.scenario);
  if (a.replications) s.replications = *a.replications;
  if (a.seed) s.base_seed = *a.seed;
  if (a.window) s.window = *a.window;
  s.validate();
  if (a.jobs < 1) throw std::invalid_argument("--jobs must be >= 1");
  if (!a.spatial.empty() && !a.compare.empty()) {
    throw std::invalid_argument("--compare and --spatial are separate runs");
  }
  for (double t : a.compare) {
    bool change = false;
    for (const auto& seg : s.udp.segments) change = change || seg.start == t;
    if (!(t > 0.0 && t < s.duration) || !change) {
      throw std::invalid_argument("--compare " + fmt(t) + ": no UDP rate change at that time");
    }
  }
  const Output out(a.out);
  if (!a.spatial.empty()) {
    const auto rep = harness::spatial_comparison(s, a.spatial, a.jobs);
    out.write("spatial.csv", [&](std::ostream& o) {
      CsvWriter w(o, {"y", "sim_rho0", "model_rho0", "samples"});
      for (const auto& slot : rep.slots) {
        w.field(static_cast<long long>(slot.y)).field(slot.sim_rho0).field(slot.model_rho0);
        w.field(static_cast<long long>(slot.samples)).end_row();
      }
    });
    std::cerr << "b=" << fmt(rep.b) << " L1=" << fmt(rep.l1_distance) << "\n";
    return kExitOk;
  }

  harness::RunOptions opt;
  opt.snapshot_times = a.compare;
  const auto reps = harness::run_replications(s, a.jobs, opt);
  out.write("trace.csv", [&](std::ostream& o) { harness::write_trace_csv(o, reps.aggregate); });
  if (out.to_files()) {
    out.write("summary.json", [&](std::ostream& o) { o << summary_json(reps).dump(2) << "\n"; });
  }
  for (double t : a.compare) {
    const auto rep = harness::transient_comparison(s, reps, t);
    const std::string stem = "transient_" + fmt(t);
    out.write(stem + ".json", [&](std::ostream& o) { o << harness::report_to_json(rep) << "\n"; });
    out.write(stem + ".csv", [&](std::ostream& o) { harness::write_curve_csv(o, rep); });
    std::cerr << "t=" << fmt(t) << " alpha=" << fmt(rep.alpha)
              << " model_extreme=" << fmt(rep.model_extreme)
              << " sim_extreme=" << fmt(rep.sim_extreme) << "\n";
  }
  return kExitOk;
}

// --- validate ----------------------------------------------------------------

// Suite document: {"name", "tolerance", "r", "cases": [{"x0", "alpha",
// "expected", "label"?}]}. Each case checks extreme_utilization.
int run_validate(const std::string& path, const std::string& out_dir,
                 std::optional<double> tolerance) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open suite " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("suite " + path + ": " + e.what());
  }
  const double tol = tolerance.value_or(doc.value("tolerance", 0.005));
  const double r = doc.value("r", 0.0);
  if (!doc.contains("cases") || !doc["cases"].is_array() || doc["cases"].empty()) {
    throw std::invalid_argument("suite " + path + " has no cases");
  }

  int failures = 0;
  json results = json::array();
  std::ostringstream csv;
  CsvWriter w(csv, {"label", "x0", "alpha", "expected", "model", "error", "pass"});
  for (const auto& c : doc["cases"]) {
    const double x0 = c.at("x0").get<double>();
    const double alpha = c.at("alpha").get<double>();
    const double expected = c.at("expected").get<double>();
    const std::string label = c.value("label", "");
    const auto ss = analytic::solve_steady_state({x0, r});
    const auto coeff = analytic::derive_coefficients(ss, 1000.0, 1.0);
    const double model = analytic::extreme_utilization(ss, coeff, alpha);
    const double err = model - expected;
    const bool pass = std::abs(err) <= tol;
    failures += pass ? 0 : 1;
    w.field(label).field(x0).field(alpha).field(expected).field(model).field(err);
    w.field(pass ? "true" : "false").end_row();
    results.push_back({{"label", label}, {"x0", x0}, {"alpha", alpha}, {"expected", expected},
                       {"model", model}, {"error", err}, {"pass", pass}});
    std::cout << (pass ? "PASS " : "FAIL ") << label << " x0=" << fmt(x0)
              << " alpha=" << fmt(alpha) << " model=" << fmt(model)
              << " expected=" << fmt(expected) << "\n";
  }
  if (!out_dir.empty()) {
    const Output out(out_dir);
    out.write("validate.csv", [&](std::ostream& o) { o << csv.str(); });
    json report = {{"suite", doc.value("name", path)}, {"tolerance", tol},
                   {"failures", failures}, {"cases", results}};
    out.write("validate.json", [&](std::ostream& o) { o << report.dump(2) << "\n"; });
  }
  if (failures > 0) {
    throw ValidationFailed(std::to_string(failures) + " case(s) outside ±" + fmt(tol));
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CHOKe/RED fluid model and packet simulator"};
  app.require_subcommand(1);

  SteadyArgs steady;
  auto* c_steady = app.add_subcommand("steady", "steady-state UDP utilization and buffer share");
  c_steady->add_option("--x0", steady.x0, "UDP rate, multiple of C")->check(CLI::NonNegativeNumber);
  c_steady->add_option("--r", steady.r, "ambient drop probability")->check(CLI::Range(0.0, 1.0));
  c_steady->add_option("--sweep", steady.sweep, "x0 range lo:hi[:log|lin]");
  c_steady->add_option("--points", steady.points, "sweep points");
  c_steady->add_option("--out", steady.out, "output directory");

  ProfileArgs profile;
  auto* c_profile = app.add_subcommand("profile", "spatial UDP distribution along the queue");
  c_profile->add_option("--x0", profile.x0, "UDP rate, multiple of C")->required()->check(CLI::PositiveNumber);
  c_profile->add_option("--r", profile.r, "ambient drop probability")->check(CLI::Range(0.0, 1.0));
  c_profile->add_option("--b", profile.b, "backlog, packets");
  c_profile->add_option("--C", profile.C, "link rate, packets/second");
  c_profile->add_option("--points", profile.points, "samples");
  c_profile->add_option("--out", profile.out, "output directory");

  TransientArgs transient;
  auto* c_transient = app.add_subcommand("transient", "utilization after a UDP rate change");
  c_transient->add_option("--x0", transient.x0, "UDP rate before the change, multiple of C")->required()->check(CLI::PositiveNumber);
  c_transient->add_option("--alpha", transient.alpha, "rate factor")->required()->check(CLI::NonNegativeNumber);
  c_transient->add_option("--r", transient.r, "ambient drop probability")->check(CLI::Range(0.0, 1.0));
  c_transient->add_option("--b", transient.b, "backlog, packets");
  c_transient->add_option("--C", transient.C, "link rate, packets/second");
  c_transient->add_option("--points", transient.points, "curve points");
  c_transient->add_option("--out", transient.out, "output directory");

  double ex_x0 = 0.0, ex_alpha = 1.0, ex_r = 0.0;
  auto* c_extreme = app.add_subcommand("extreme", "extreme transient utilization");
  c_extreme->add_option("--x0", ex_x0, "UDP rate before the change, multiple of C")->required()->check(CLI::NonNegativeNumber);
  c_extreme->add_option("--alpha", ex_alpha, "rate factor")->required()->check(CLI::NonNegativeNumber);
  c_extreme->add_option("--r", ex_r, "ambient drop probability")->check(CLI::Range(0.0, 1.0));

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "run a scenario file");
  c_sim->add_option("--scenario", sim.scenario, "scenario JSON")->required();
  c_sim->add_option("--out", sim.out, "output directory");
  c_sim->add_option("--jobs", sim.jobs, "replications run in parallel");
  c_sim->add_option("--replications", sim.replications, "override the scenario");
  c_sim->add_option("--seed", sim.seed, "override the base seed");
  c_sim->add_option("--window", sim.window, "override the window, seconds");
  c_sim->add_option("--compare", sim.compare, "rate-change times to compare against the model");
  c_sim->add_option("--spatial", sim.spatial, "snapshot times for the slot profile");

  std::string suite, v_out;
  std::optional<double> v_tol;
  auto* c_validate = app.add_subcommand("validate", "check extreme utilizations against a suite");
  c_validate->add_option("--scenario", suite, "suite JSON")->required();
  c_validate->add_option("--tolerance", v_tol, "absolute tolerance");
  c_validate->add_option("--out", v_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (*c_steady) return run_steady(steady);
    if (*c_profile) return run_profile(profile);
    if (*c_transient) return run_transient(transient);
    if (*c_extreme) return run_extreme(ex_x0, ex_alpha, ex_r);
    if (*c_sim) return run_simulate(sim);
    if (*c_validate) return run_validate(suite, v_out, v_tol);
  } catch (const analytic::SolverError& e) {
    std::cerr << "solver failure: " << e.what() << " (residual " << e.residual() << ")\n";
    return kExitSolver;
  } catch (const ValidationFailed& e) {
    std::cerr << "validation failed: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
