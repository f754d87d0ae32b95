#pragma once

// Scenario execution, replication, windowed traces and model comparisons.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "choke/sim.hpp"
#include "choke/traffic.hpp"

namespace choke::harness {

struct Scenario {
  std::string name;
  int N = 100;                  // TCP flows
  double C = 2500.0;            // packets/second
  std::size_t capacity = 1000;  // buffer, packets
  sim::RedParams red;
  sim::DropOrder drop_order = sim::DropOrder::choke_then_red;
  traffic::UdpSchedule udp;     // rates as multiples of C
  double duration = 25.0;
  double warmup = 5.0;
  double window = 0.01;
  int replications = 1;
  std::uint64_t base_seed = 1;
  int packet_size = 1000;       // bytes
  double link_latency = 0.001;  // one-way, seconds
  double initial_ssthresh = 64.0;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  std::size_t window_count() const;
};

/// Parses a scenario document. Unknown keys are rejected.
Scenario parse_scenario(std::string_view json_text);
Scenario load_scenario(const std::string& path);
std::string scenario_to_json(const Scenario& s);

/// Raw per-window event counts of one run. Departures are counted when
/// transmission completes; sojourn is the time spent in the buffer.
struct WindowCounts {
  std::int64_t udp_arrivals = 0;
  std::int64_t tcp_arrivals = 0;
  std::int64_t udp_admitted = 0;
  std::int64_t udp_matched = 0;  // arriving UDP packets dropped on a match
  std::int64_t udp_victims = 0;  // buffered UDP packets removed on a match
  std::int64_t udp_red = 0;
  std::int64_t udp_overflow = 0;
  std::int64_t tcp_admitted = 0;
  std::int64_t tcp_victims = 0;
  std::int64_t red_tests = 0;  // arrivals, any flow, that reached the RED test
  std::int64_t red_drops = 0;
  std::int64_t udp_departures = 0;
  std::int64_t tcp_departures = 0;
  double udp_share_sum = 0.0;  // b0/b seen by each UDP arrival
  std::int64_t udp_share_samples = 0;
  double tcp_sojourn_sum = 0.0;
  std::int64_t tcp_sojourn_samples = 0;

  WindowCounts& operator+=(const WindowCounts& o);
};

struct RunTrace {
  double window = 0.0;
  std::vector<WindowCounts> windows;
  std::vector<std::int64_t> b_edge;   // backlog at each window boundary
  std::vector<std::int64_t> b0_edge;  // UDP backlog at each window boundary
};

/// Merges `factor` consecutive windows; a trailing partial group is dropped.
RunTrace coarsen(const RunTrace& trace, int factor);

struct TimedSnapshot {
  double time = 0.0;
  sim::QueueSnapshot snapshot;
};

struct RunSummary {
  std::uint64_t seed = 0;
  std::vector<sim::FlowCounters> flows;    // index = flow id
  std::vector<std::int64_t> in_buffer;     // at the end of the run
  std::int64_t in_service = 0;             // 0 or 1 packet on the link
  std::int64_t fifo_violations = 0;
  std::int64_t window_violations = 0;      // TCP sends beyond ceil(cwnd)
  std::int64_t capacity_violations = 0;
  std::int64_t tcp_losses = 0;
  std::int64_t tcp_timeouts = 0;
  std::size_t events = 0;
};

struct RunOptions {
  std::vector<double> snapshot_times;
  std::ostream* event_log = nullptr;
};

struct RunResult {
  RunTrace trace;
  std::vector<TimedSnapshot> snapshots;
  RunSummary summary;
};

RunResult simulate(const Scenario& s, std::uint64_t seed,
                   const RunOptions& options = {});

/// Derived per-window series. Rates are packets/second, utilizations are
/// fractions of C.
enum Column : int {
  kMu0,         // UDP departures / (C W)
  kMuTcp,       // TCP departures / (C W)
  kB,           // backlog, mean of the two window edges
  kB0,          // UDP backlog, mean of the two window edges
  kH0,          // b0 / b, 0 when empty
  kH0Seen,      // mean b0/b seen by UDP arrivals (falls back to kH0)
  kDbDt,        // (b(t+W) - b(t)) / W
  kDb0Dt,
  kDb1Dt,
  kX0,          // UDP arrival rate
  kRHat,        // RED drops / RED tests (0 without tests)
  kTcpSojourn,  // mean TCP time in buffer (0 without departures)
  kColumnCount
};

inline constexpr std::array<std::string_view, kColumnCount> kColumnNames = {
    "mu0", "mu_tcp", "b",  "b0",    "h0",    "h0_seen",
    "db_dt", "db0_dt", "db1_dt", "x0", "r_hat", "tcp_sojourn"};

using Row = std::array<double, kColumnCount>;

std::vector<Row> derive_rows(const RunTrace& trace, double C);

struct AggregateTrace {
  double window = 0.0;
  double C = 0.0;
  int replications = 0;
  std::vector<double> start;  // window start times
  std::vector<Row> mean;
  std::vector<Row> stderr_;   // standard error of the mean; 0 for one run

  std::size_t size() const noexcept { return start.size(); }
  /// Index of the window containing t. Throws std::out_of_range.
  std::size_t index_of(double t) const;
};

/// Window-aligned mean and standard error, reduced in replication order.
AggregateTrace aggregate(const std::vector<RunTrace>& traces, double C);

void write_trace_csv(std::ostream& out, const AggregateTrace& trace);

class ReplicationError : public std::runtime_error {
 public:
  ReplicationError(const std::string& what, int index, std::uint64_t seed)
      : std::runtime_error(what), index_(index), seed_(seed) {}
  int index() const noexcept { return index_; }
  std::uint64_t seed() const noexcept { return seed_; }

 private:
  int index_;
  std::uint64_t seed_;
};

struct Replications {
  std::vector<RunResult> runs;
  AggregateTrace aggregate;
};

/// Runs s.replications independent runs with seeds base_seed + i on up to
/// `jobs` threads. The result does not depend on `jobs`.
Replications run_replications(const Scenario& s, int jobs = 1,
                              const RunOptions& options = {});

struct ResidualPoint {
  double t = 0.0;
  double db0_dt = 0.0;
  double predicted = 0.0;  // x0 (1 - r) (1 - 2 h0) - mu0 C
  double residual = 0.0;
  double x0 = 0.0;
  bool steady = false;
};

/// Rate-conservation residual per window of a trace. A window is steady when
/// the UDP rate is constant over [t - settle, t + W] and |db0/dt| is below
/// steady_fraction * x0.
std::vector<ResidualPoint> rate_conservation_residual(
    const AggregateTrace& trace, const Scenario& s, double settle = 1.0,
    double steady_fraction = 0.25);

struct CurvePoint {
  double dT = 0.0;  // window midpoint minus change time
  double model = 0.0;
  double sim_mean = 0.0;
  double sim_stderr = 0.0;
};

struct ComparisonReport {
  std::string scenario;
  double change_time = 0.0;
  double x0_norm = 0.0;  // rate before the change, multiple of C
  double alpha = 0.0;
  double b = 0.0;        // mean backlog at change_time over replications
  double tau_b = 0.0;
  double mu0_before = 0.0;
  double rho0_tail = 0.0;
  std::vector<CurvePoint> curve;
  double max_abs_error = 0.0;
  double mean_abs_error = 0.0;
  double model_extreme = 0.0;
  double sim_extreme = 0.0;  // max for alpha < 1, min for alpha > 1
};

/// Compares simulated utilization after the rate change at change_time with
/// the transient model fed the simulated backlog at that instant. The runs
/// must carry a snapshot taken at change_time.
ComparisonReport transient_comparison(const Scenario& s,
                                      const Replications& reps,
                                      double change_time);

/// Runs the replications itself, with a snapshot at change_time.
ComparisonReport transient_comparison(const Scenario& s, double change_time,
                                      int jobs = 1);

std::string report_to_json(const ComparisonReport& r);
void write_curve_csv(std::ostream& out, const ComparisonReport& r);

struct SlotComparison {
  int y = 0;  // slot index from the tail
  double sim_rho0 = 0.0;
  double model_rho0 = 0.0;
  std::int64_t samples = 0;  // snapshots long enough to reach this slot
};

struct SpatialReport {
  std::string scenario;
  double x0_norm = 0.0;
  double b = 0.0;  // mean snapshot backlog
  std::vector<SlotComparison> slots;
  double l1_distance = 0.0;  // mean |sim - model| over compared slots
};

/// Time-averaged UDP occupancy per slot against the analytic profile. Slots
/// reached by fewer than half of the snapshots are not compared.
SpatialReport spatial_comparison(const Scenario& s,
                                 const std::vector<double>& sample_times,
                                 int jobs = 1);

/// Means of `values` over consecutive groups of `bin` entries.
std::vector<double> bin_means(const std::vector<double>& values, int bin);

}  // namespace choke::harness
