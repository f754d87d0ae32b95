#include "choke/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <optional>
#include <sstream>
#include <thread>

#include "choke/analytic.hpp"
#include "choke/csv.hpp"
#include "json.hpp"

namespace choke::harness {

using nlohmann::json;

// --- Scenario ---------------------------------------------------------------

std::size_t Scenario::window_count() const {
  const double ratio = duration / window;
  const double nearest = std::round(ratio);
  const double n = std::abs(ratio - nearest) < 1e-9 ? nearest : std::floor(ratio);
  return static_cast<std::size_t>(n);
}

void Scenario::validate() const {
  auto fail = [](const std::string& msg) {
    throw std::invalid_argument("scenario: " + msg);
  };
  if (N < 0) fail("N must be >= 0");
  if (!(C > 0.0) || !std::isfinite(C)) fail("C must be > 0");
  if (capacity == 0) fail("capacity must be > 0");
  red.validate();
  udp.validate();
  if (!(duration > 0.0) || !std::isfinite(duration)) fail("duration must be > 0");
  if (!(warmup >= 0.0 && warmup < duration)) {
    fail("warmup must satisfy 0 <= warmup < duration");
  }
  if (!(window > 0.0 && window <= duration)) {
    fail("window must satisfy 0 < window <= duration");
  }
  if (window_count() < 1) fail("duration holds no complete window");
  if (replications < 1) fail("replications must be >= 1");
  if (packet_size <= 0) fail("packet_size must be > 0");
  if (!(link_latency >= 0.0)) fail("link_latency must be >= 0");
  if (!(initial_ssthresh >= 2.0)) fail("initial_ssthresh must be >= 2");
}

namespace {

void reject_unknown(const json& j, std::initializer_list<std::string_view> known,
                    const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw std::invalid_argument("scenario: unknown key '" + key + "' in " +
                                  where);
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

Scenario parse_scenario(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("scenario: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("scenario: expected an object");
  reject_unknown(j,
                 {"name", "N", "C", "capacity", "red", "drop_order", "udp",
                  "duration", "warmup", "window", "replications", "base_seed",
                  "packet_size", "link_latency", "initial_ssthresh"},
                 "scenario");
  Scenario s;
  try {
    read(j, "name", s.name);
    read(j, "N", s.N);
    read(j, "C", s.C);
    read(j, "capacity", s.capacity);
    if (j.contains("red")) {
      const json& r = j.at("red");
      reject_unknown(r, {"min_th", "max_th", "max_p", "wq", "gentle"}, "red");
      read(r, "min_th", s.red.min_th);
      read(r, "max_th", s.red.max_th);
      read(r, "max_p", s.red.max_p);
      read(r, "wq", s.red.wq);
      read(r, "gentle", s.red.gentle);
    }
    if (j.contains("drop_order")) {
      s.drop_order = sim::parse_drop_order(j.at("drop_order").get<std::string>());
    }
    if (j.contains("udp")) {
      for (const json& seg : j.at("udp")) {
        reject_unknown(seg, {"start", "rate"}, "udp segment");
        s.udp.segments.push_back(
            {seg.at("start").get<double>(), seg.at("rate").get<double>()});
      }
    }
    read(j, "duration", s.duration);
    read(j, "warmup", s.warmup);
    read(j, "window", s.window);
    read(j, "replications", s.replications);
    read(j, "base_seed", s.base_seed);
    read(j, "packet_size", s.packet_size);
    read(j, "link_latency", s.link_latency);
    read(j, "initial_ssthresh", s.initial_ssthresh);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("scenario: ") + e.what());
  }
  s.validate();
  return s;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario file " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_scenario(text.str());
}

std::string scenario_to_json(const Scenario& s) {
  json udp = json::array();
  for (const auto& seg : s.udp.segments) {
    udp.push_back({{"start", seg.start}, {"rate", seg.rate}});
  }
  json j = {{"name", s.name},
            {"N", s.N},
            {"C", s.C},
            {"capacity", s.capacity},
            {"red",
             {{"min_th", s.red.min_th},
              {"max_th", s.red.max_th},
              {"max_p", s.red.max_p},
              {"wq", s.red.wq},
              {"gentle", s.red.gentle}}},
            {"drop_order", std::string(sim::to_string(s.drop_order))},
            {"udp", udp},
            {"duration", s.duration},
            {"warmup", s.warmup},
            {"window", s.window},
            {"replications", s.replications},
            {"base_seed", s.base_seed},
            {"packet_size", s.packet_size},
            {"link_latency", s.link_latency},
            {"initial_ssthresh", s.initial_ssthresh}};
  return j.dump(2);
}

// --- Traces -----------------------------------------------------------------

WindowCounts& WindowCounts::operator+=(const WindowCounts& o) {
  udp_arrivals += o.udp_arrivals;
  tcp_arrivals += o.tcp_arrivals;
  udp_admitted += o.udp_admitted;
  udp_matched += o.udp_matched;
  udp_victims += o.udp_victims;
  udp_red += o.udp_red;
  udp_overflow += o.udp_overflow;
  tcp_admitted += o.tcp_admitted;
  tcp_victims += o.tcp_victims;
  red_tests += o.red_tests;
  red_drops += o.red_drops;
  udp_departures += o.udp_departures;
  tcp_departures += o.tcp_departures;
  udp_share_sum += o.udp_share_sum;
  udp_share_samples += o.udp_share_samples;
  tcp_sojourn_sum += o.tcp_sojourn_sum;
  tcp_sojourn_samples += o.tcp_sojourn_samples;
  return *this;
}

RunTrace coarsen(const RunTrace& trace, int factor) {
  if (factor < 1) throw std::invalid_argument("coarsen factor must be >= 1");
  const std::size_t f = static_cast<std::size_t>(factor);
  const std::size_t n = trace.windows.size() / f;
  RunTrace out;
  out.window = trace.window * factor;
  out.windows.resize(n);
  out.b_edge.resize(n + 1);
  out.b0_edge.resize(n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < f; ++k) out.windows[i] += trace.windows[i * f + k];
    out.b_edge[i] = trace.b_edge[i * f];
    out.b0_edge[i] = trace.b0_edge[i * f];
  }
  out.b_edge[n] = trace.b_edge[n * f];
  out.b0_edge[n] = trace.b0_edge[n * f];
  return out;
}

namespace {

double window_start(std::size_t i, double W) { return static_cast<double>(i) * W; }

// Same boundary arithmetic as the simulator, so a time maps to the window
// whose counters it was recorded in.
std::size_t window_index(double t, double W) {
  auto i = static_cast<std::size_t>(std::max(0.0, std::floor(t / W)));
  while (window_start(i + 1, W) <= t) ++i;
  while (i > 0 && window_start(i, W) > t) --i;
  return i;
}

}  // namespace

std::vector<Row> derive_rows(const RunTrace& trace, double C) {
  const double W = trace.window;
  std::vector<Row> rows(trace.windows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const WindowCounts& w = trace.windows[i];
    Row& r = rows[i];
    const auto b_lo = static_cast<double>(trace.b_edge[i]);
    const auto b_hi = static_cast<double>(trace.b_edge[i + 1]);
    const auto b0_lo = static_cast<double>(trace.b0_edge[i]);
    const auto b0_hi = static_cast<double>(trace.b0_edge[i + 1]);
    r[kMu0] = static_cast<double>(w.udp_departures) / (C * W);
    r[kMuTcp] = static_cast<double>(w.tcp_departures) / (C * W);
    r[kB] = 0.5 * (b_lo + b_hi);
    r[kB0] = 0.5 * (b0_lo + b0_hi);
    r[kH0] = r[kB] > 0.0 ? r[kB0] / r[kB] : 0.0;
    r[kH0Seen] = w.udp_share_samples > 0
                     ? w.udp_share_sum / static_cast<double>(w.udp_share_samples)
                     : r[kH0];
    r[kDbDt] = (b_hi - b_lo) / W;
    r[kDb0Dt] = (b0_hi - b0_lo) / W;
    r[kDb1Dt] = r[kDbDt] - r[kDb0Dt];
    r[kX0] = static_cast<double>(w.udp_arrivals) / W;
    r[kRHat] = w.red_tests > 0 ? static_cast<double>(w.red_drops) /
                                     static_cast<double>(w.red_tests)
                               : 0.0;
    r[kTcpSojourn] =
        w.tcp_sojourn_samples > 0
            ? w.tcp_sojourn_sum / static_cast<double>(w.tcp_sojourn_samples)
            : 0.0;
  }
  return rows;
}

std::size_t AggregateTrace::index_of(double t) const {
  if (!(t >= 0.0) || start.empty() || t >= window_start(start.size(), window)) {
    throw std::out_of_range("time outside the trace");
  }
  return window_index(t, window);
}

AggregateTrace aggregate(const std::vector<RunTrace>& traces, double C) {
  if (traces.empty()) throw std::invalid_argument("nothing to aggregate");
  const std::size_t n = traces.front().windows.size();
  const double W = traces.front().window;
  for (const auto& t : traces) {
    if (t.windows.size() != n || t.window != W) {
      throw std::invalid_argument("traces are not on the same window grid");
    }
  }
  AggregateTrace agg;
  agg.window = W;
  agg.C = C;
  agg.replications = static_cast<int>(traces.size());
  agg.start.resize(n);
  for (std::size_t i = 0; i < n; ++i) agg.start[i] = window_start(i, W);
  agg.mean.assign(n, Row{});
  agg.stderr_.assign(n, Row{});

  std::vector<std::vector<Row>> rows;
  rows.reserve(traces.size());
  for (const auto& t : traces) rows.push_back(derive_rows(t, C));
  const double m = static_cast<double>(traces.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < kColumnCount; ++c) {
      double sum = 0.0;
      for (const auto& r : rows) sum += r[i][c];
      const double mean = sum / m;
      double ss = 0.0;
      for (const auto& r : rows) ss += (r[i][c] - mean) * (r[i][c] - mean);
      agg.mean[i][c] = mean;
      agg.stderr_[i][c] = traces.size() > 1 ? std::sqrt(ss / (m - 1.0) / m) : 0.0;
    }
  }
  return agg;
}

void write_trace_csv(std::ostream& out, const AggregateTrace& trace) {
  std::vector<std::string> header{"t"};
  for (auto name : kColumnNames) header.emplace_back(name);
  for (auto name : kColumnNames) header.push_back(std::string(name) + "_se");
  CsvWriter csv(out, header);
  for (std::size_t i = 0; i < trace.size(); ++i) {
    csv.field(trace.start[i]);
    for (int c = 0; c < kColumnCount; ++c) csv.field(trace.mean[i][c]);
    for (int c = 0; c < kColumnCount; ++c) csv.field(trace.stderr_[i][c]);
    csv.end_row();
  }
}

// --- Simulation -------------------------------------------------------------

namespace {

struct TcpSender {
  traffic::TcpFlowState state;
  double deadline = 0.0;
  bool timer_pending = false;
};

class Run {
 public:
  Run(const Scenario& s, std::uint64_t seed, const RunOptions& options)
      : s_(s),
        options_(options),
        W_(s.window),
        n_(s.window_count()),
        rng_(seed),
        queue_(s.capacity, s.red, s.drop_order, s.N + 1, rng_()),
        udp_(s.udp, s.C),
        last_tx_seq_(static_cast<std::size_t>(s.N + 1), -1) {
    result_.summary.seed = seed;
    result_.trace.window = W_;
    result_.trace.windows.resize(n_);
    result_.trace.b_edge.reserve(n_ + 1);
    result_.trace.b0_edge.reserve(n_ + 1);
    queue_.set_event_log(options.event_log);

    traffic::TcpParams params;
    params.initial_ssthresh = s.initial_ssthresh;
    senders_.resize(static_cast<std::size_t>(s.N));
    for (int f = 1; f <= s.N; ++f) {
      const double rtt = uniform(rng_, 0.9, 1.1) * 2.0 * s.link_latency;
      const double start = uniform(rng_, 0.0, 2.0);
      sender(f).state = traffic::make_tcp_flow(rtt, params);
      if (start < s.duration) {
        loop_.schedule(start, [this, f] { on_tcp_start(f); });
      }
    }
    schedule_udp();
    for (double t : options.snapshot_times) {
      if (!(t >= 0.0 && t <= s.duration)) {
        throw std::invalid_argument("snapshot time outside the run");
      }
      loop_.schedule(t, [this, t] { on_snapshot(t); });
    }
  }

  RunResult execute() {
    result_.summary.events = loop_.run_until(s_.duration);
    advance(s_.duration);
    RunSummary& sum = result_.summary;
    sum.flows.resize(static_cast<std::size_t>(s_.N + 1));
    for (int f = 0; f <= s_.N; ++f) {
      sum.flows[static_cast<std::size_t>(f)] = queue_.counters(f);
    }
    sum.in_buffer = queue_.occupancy_by_flow();
    sum.in_service = busy_ ? 1 : 0;
    for (const auto& snd : senders_) {
      sum.tcp_losses += snd.state.losses;
      sum.tcp_timeouts += snd.state.timeouts;
    }
    std::sort(result_.snapshots.begin(), result_.snapshots.end(),
              [](const TimedSnapshot& a, const TimedSnapshot& b) {
                return a.time < b.time;
              });
    return std::move(result_);
  }

 private:
  TcpSender& sender(int flow) { return senders_[static_cast<std::size_t>(flow - 1)]; }

  // Closes every window boundary at or before t. Counters recorded after this
  // call belong to the window containing t.
  void advance(double t) {
    while (cur_ <= n_ && window_start(cur_, W_) <= t) {
      result_.trace.b_edge.push_back(static_cast<std::int64_t>(queue_.size()));
      result_.trace.b0_edge.push_back(static_cast<std::int64_t>(queue_.udp_size()));
      ++cur_;
    }
  }

  WindowCounts* counts() {
    return cur_ >= 1 && cur_ <= n_ ? &result_.trace.windows[cur_ - 1] : nullptr;
  }

  void schedule_udp() {
    const auto t = udp_.next();
    if (t && *t < s_.duration) {
      loop_.schedule(*t, [this] { on_udp_arrival(); });
    }
  }

  void on_udp_arrival() {
    const double now = loop_.now();
    advance(now);
    sim::Packet p;
    p.flow_id = sim::kUdpFlow;
    p.seq = udp_seq_++;
    p.size = s_.packet_size;
    arrive(p, now);
    schedule_udp();
  }

  void on_tcp_start(int flow) {
    advance(loop_.now());
    emit(flow);
  }

  void emit(int flow) {
    const double now = loop_.now();
    TcpSender& snd = sender(flow);
    auto& st = snd.state;
    const bool was_idle = st.outstanding.empty();
    for (std::size_t k = traffic::tcp_sendable(st); k > 0; --k) {
      const std::int64_t seq = traffic::tcp_send(st, now);
      if (static_cast<double>(st.in_flight()) > std::ceil(st.cwnd)) {
        ++result_.summary.window_violations;
      }
      loop_.schedule(now + 0.5 * st.rtt_base,
                     [this, flow, seq] { on_tcp_arrival(flow, seq); });
    }
    if (was_idle && !st.outstanding.empty()) snd.deadline = now + st.rto;
    arm_timer(flow);
  }

  void arm_timer(int flow) {
    TcpSender& snd = sender(flow);
    if (snd.timer_pending || snd.state.outstanding.empty()) return;
    snd.timer_pending = true;
    loop_.schedule(snd.deadline, [this, flow] { on_timer(flow); });
  }

  void on_timer(int flow) {
    const double now = loop_.now();
    advance(now);
    TcpSender& snd = sender(flow);
    snd.timer_pending = false;
    if (snd.state.outstanding.empty()) return;
    if (now < snd.deadline) {
      arm_timer(flow);
      return;
    }
    traffic::tcp_on_timeout(snd.state);
    emit(flow);
  }

  void on_tcp_arrival(int flow, std::int64_t seq) {
    const double now = loop_.now();
    advance(now);
    sim::Packet p;
    p.flow_id = flow;
    p.seq = seq;
    p.size = s_.packet_size;
    arrive(p, now);
  }

  void arrive(const sim::Packet& p, double now) {
    WindowCounts* w = counts();
    const bool udp = p.flow_id == sim::kUdpFlow;
    const double share = queue_.udp_share();
    const sim::EnqueueResult r = queue_.enqueue(p, now);
    if (queue_.size() > queue_.capacity()) ++result_.summary.capacity_violations;
    if (w != nullptr) {
      if (udp) {
        ++w->udp_arrivals;
        w->udp_share_sum += share;
        ++w->udp_share_samples;
      } else {
        ++w->tcp_arrivals;
      }
      const bool tested = s_.drop_order == sim::DropOrder::red_then_choke ||
                          r.outcome != sim::Admission::choke_matched;
      if (tested) ++w->red_tests;
      switch (r.outcome) {
        case sim::Admission::admitted:
          ++(udp ? w->udp_admitted : w->tcp_admitted);
          break;
        case sim::Admission::choke_matched:
          if (udp) {
            ++w->udp_matched;
            ++w->udp_victims;
          } else {
            ++w->tcp_victims;
          }
          break;
        case sim::Admission::red_dropped:
          ++w->red_drops;
          if (udp) ++w->udp_red;
          break;
        case sim::Admission::overflow_dropped:
          if (udp) ++w->udp_overflow;
          break;
      }
    }
    if (r.outcome == sim::Admission::admitted && !busy_) start_service(now);
  }

  void start_service(double now) {
    if (queue_.empty()) return;
    const sim::ServiceStart s = sim::dequeue_service(queue_, s_.C, now, s_.packet_size);
    const sim::Packet& p = s.packet;
    if (p.enqueue_time < last_tx_enqueue_) ++result_.summary.fifo_violations;
    auto& last_seq = last_tx_seq_[static_cast<std::size_t>(p.flow_id)];
    if (p.seq <= last_seq) ++result_.summary.fifo_violations;
    last_seq = p.seq;
    last_tx_enqueue_ = p.enqueue_time;
    if (p.flow_id != sim::kUdpFlow) {
      if (WindowCounts* w = counts()) {
        w->tcp_sojourn_sum += now - p.enqueue_time;
        ++w->tcp_sojourn_samples;
      }
    }
    busy_ = true;
    const int flow = p.flow_id;
    const std::int64_t seq = p.seq;
    loop_.schedule(s.completion, [this, flow, seq] { on_complete(flow, seq); });
  }

  void on_complete(int flow, std::int64_t seq) {
    const double now = loop_.now();
    advance(now);
    busy_ = false;
    if (WindowCounts* w = counts()) {
      ++(flow == sim::kUdpFlow ? w->udp_departures : w->tcp_departures);
    }
    if (flow != sim::kUdpFlow) {
      loop_.schedule(now + 0.5 * sender(flow).state.rtt_base,
                     [this, flow, seq] { on_ack(flow, seq); });
    }
    start_service(now);
  }

  void on_ack(int flow, std::int64_t seq) {
    const double now = loop_.now();
    advance(now);
    TcpSender& snd = sender(flow);
    const traffic::AckResult r = traffic::tcp_on_ack(snd.state, seq, now);
    if (!r.stale) snd.deadline = now + snd.state.rto;
    emit(flow);
  }

  void on_snapshot(double t) {
    advance(loop_.now());
    result_.snapshots.push_back({t, queue_.snapshot()});
  }

  const Scenario& s_;
  const RunOptions& options_;
  double W_;
  std::size_t n_;
  Rng rng_;
  sim::EventLoop loop_;
  sim::ChokeQueue queue_;
  traffic::UdpSource udp_;
  std::vector<TcpSender> senders_;
  std::vector<std::int64_t> last_tx_seq_;
  double last_tx_enqueue_ = -1.0;
  std::int64_t udp_seq_ = 0;
  bool busy_ = false;
  std::size_t cur_ = 0;  // boundaries closed so far
  RunResult result_;
};

}  // namespace

RunResult simulate(const Scenario& s, std::uint64_t seed,
                   const RunOptions& options) {
  s.validate();
  Run run(s, seed, options);
  return run.execute();
}

Replications run_replications(const Scenario& s, int jobs,
                              const RunOptions& options) {
  s.validate();
  const auto n = static_cast<std::size_t>(s.replications);
  std::vector<std::optional<RunResult>> results(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        RunOptions local = options;
        local.event_log = nullptr;
        results[i] = simulate(s, s.base_seed + i, local);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), 1, n);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i]) continue;
    std::string what = "unknown error";
    try {
      std::rethrow_exception(errors[i]);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    throw ReplicationError("replication " + std::to_string(i) + " (seed " +
                               std::to_string(s.base_seed + i) + ") failed: " + what,
                           static_cast<int>(i), s.base_seed + i);
  }
  Replications reps;
  std::vector<RunTrace> traces;
  traces.reserve(n);
  for (auto& r : results) {
    traces.push_back(r->trace);
    reps.runs.push_back(std::move(*r));
  }
  reps.aggregate = aggregate(traces, s.C);
  return reps;
}

// --- Rate conservation ------------------------------------------------------

std::vector<ResidualPoint> rate_conservation_residual(
    const AggregateTrace& trace, const Scenario& s, double settle,
    double steady_fraction) {
  if (trace.size() < 2) {
    throw std::invalid_argument("rate conservation needs at least two windows");
  }
  std::vector<ResidualPoint> out(trace.size());
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const Row& m = trace.mean[i];
    ResidualPoint& p = out[i];
    p.t = trace.start[i];
    p.x0 = m[kX0];
    p.db0_dt = m[kDb0Dt];
    p.predicted = m[kX0] * (1.0 - m[kRHat]) * (1.0 - 2.0 * m[kH0Seen]) -
                  m[kMu0] * trace.C;
    p.residual = p.db0_dt - p.predicted;
    bool settled = p.t >= s.warmup;
    for (const auto& seg : s.udp.segments) {
      if (seg.start > p.t - settle && seg.start <= p.t + trace.window) {
        settled = false;
      }
    }
    p.steady = settled && std::abs(p.db0_dt) <= steady_fraction * p.x0 + 1e-12;
  }
  return out;
}

// --- Transient comparison ---------------------------------------------------

ComparisonReport transient_comparison(const Scenario& s,
                                      const Replications& reps,
                                      double change_time) {
  if (!(change_time > 0.0 && change_time < s.duration)) {
    throw std::out_of_range("change_time outside the run");
  }
  const auto& segs = s.udp.segments;
  const auto it = std::find_if(segs.begin(), segs.end(), [&](const auto& seg) {
    return std::abs(seg.start - change_time) < 1e-12;
  });
  if (it == segs.end()) {
    throw std::invalid_argument("no UDP rate change at change_time");
  }
  const double before = it == segs.begin() ? 0.0 : std::prev(it)->rate;
  if (!(before > 0.0)) {
    throw std::invalid_argument("rate factor undefined: UDP idle before change");
  }

  ComparisonReport rep;
  rep.scenario = s.name;
  rep.change_time = change_time;
  rep.x0_norm = before;
  rep.alpha = it->rate / before;

  double b_sum = 0.0;
  for (const auto& run : reps.runs) {
    const auto snap = std::find_if(
        run.snapshots.begin(), run.snapshots.end(),
        [&](const TimedSnapshot& t) { return std::abs(t.time - change_time) < 1e-12; });
    if (snap == run.snapshots.end()) {
      throw std::invalid_argument("runs carry no snapshot at change_time");
    }
    b_sum += static_cast<double>(snap->snapshot.b);
  }
  rep.b = b_sum / static_cast<double>(reps.runs.size());

  const auto ss = analytic::solve_steady_state({before, 0.0});
  const auto coeff = analytic::derive_coefficients(ss, rep.b, s.C);
  rep.tau_b = coeff.tau_b;
  rep.mu0_before = ss.mu0;
  rep.rho0_tail = coeff.rho0_tail;
  rep.model_extreme = analytic::extreme_utilization(ss, coeff, rep.alpha);

  const AggregateTrace& agg = reps.aggregate;
  const double W = agg.window;
  double err_sum = 0.0;
  for (std::size_t i = agg.index_of(change_time); i < agg.size(); ++i) {
    const double dT = agg.start[i] + 0.5 * W - change_time;
    if (dT < 0.0) continue;
    if (dT > coeff.tau_b) break;
    CurvePoint p;
    p.dT = dT;
    p.model = analytic::transient_utilization(coeff, {rep.alpha, dT});
    p.sim_mean = agg.mean[i][kMu0];
    p.sim_stderr = agg.stderr_[i][kMu0];
    const double err = std::abs(p.model - p.sim_mean);
    rep.max_abs_error = std::max(rep.max_abs_error, err);
    err_sum += err;
    rep.curve.push_back(p);
  }
  if (rep.curve.empty()) {
    throw std::invalid_argument("no measurement window inside the transient");
  }
  rep.mean_abs_error = err_sum / static_cast<double>(rep.curve.size());
  const auto by_sim = [](const CurvePoint& a, const CurvePoint& b) {
    return a.sim_mean < b.sim_mean;
  };
  rep.sim_extreme =
      rep.alpha > 1.0
          ? std::min_element(rep.curve.begin(), rep.curve.end(), by_sim)->sim_mean
          : std::max_element(rep.curve.begin(), rep.curve.end(), by_sim)->sim_mean;
  return rep;
}

ComparisonReport transient_comparison(const Scenario& s, double change_time,
                                      int jobs) {
  if (!(change_time > 0.0 && change_time < s.duration)) {
    throw std::out_of_range("change_time outside the run");
  }
  RunOptions options;
  options.snapshot_times = {change_time};
  const Replications reps = run_replications(s, jobs, options);
  return transient_comparison(s, reps, change_time);
}

std::string report_to_json(const ComparisonReport& r) {
  json curve = json::array();
  for (const auto& p : r.curve) {
    curve.push_back({{"dT", p.dT},
                     {"model", p.model},
                     {"sim_mean", p.sim_mean},
                     {"sim_stderr", p.sim_stderr}});
  }
  json j = {{"scenario", r.scenario},
            {"change_time", r.change_time},
            {"x0", r.x0_norm},
            {"alpha", r.alpha},
            {"b", r.b},
            {"tau_b", r.tau_b},
            {"mu0_before", r.mu0_before},
            {"rho0_tail", r.rho0_tail},
            {"max_abs_error", r.max_abs_error},
            {"mean_abs_error", r.mean_abs_error},
            {"extreme", {{"model", r.model_extreme}, {"simulated", r.sim_extreme}}},
            {"curve", curve}};
  return j.dump(2);
}

void write_curve_csv(std::ostream& out, const ComparisonReport& r) {
  CsvWriter csv(out, {"dT", "model", "sim_mean", "sim_stderr"});
  for (const auto& p : r.curve) csv.row({p.dT, p.model, p.sim_mean, p.sim_stderr});
}

// --- Spatial comparison -----------------------------------------------------

SpatialReport spatial_comparison(const Scenario& s,
                                 const std::vector<double>& sample_times,
                                 int jobs) {
  if (sample_times.empty()) throw std::invalid_argument("no sample times");
  RunOptions options;
  options.snapshot_times = sample_times;
  const Replications reps = run_replications(s, jobs, options);

  std::vector<std::int64_t> udp;
  std::vector<std::int64_t> reached;
  std::int64_t snapshots = 0;
  double b_sum = 0.0;
  for (const auto& run : reps.runs) {
    for (const auto& ts : run.snapshots) {
      const auto& slots = ts.snapshot.udp_by_slot;
      if (slots.size() > udp.size()) {
        udp.resize(slots.size(), 0);
        reached.resize(slots.size(), 0);
      }
      for (std::size_t y = 0; y < slots.size(); ++y) {
        udp[y] += slots[y];
        ++reached[y];
      }
      b_sum += static_cast<double>(ts.snapshot.b);
      ++snapshots;
    }
  }

  SpatialReport rep;
  rep.scenario = s.name;
  rep.x0_norm = s.udp.rate_at(sample_times.front());
  rep.b = b_sum / static_cast<double>(snapshots);
  if (rep.b < 2.0) {
    throw std::invalid_argument("mean backlog too small for a spatial profile");
  }
  const auto ss = analytic::solve_steady_state({rep.x0_norm, 0.0});
  const auto coeff = analytic::derive_coefficients(ss, rep.b, s.C);
  double l1 = 0.0;
  for (std::size_t y = 0; y < udp.size(); ++y) {
    if (2 * reached[y] < snapshots) break;
    SlotComparison c;
    c.y = static_cast<int>(y);
    c.samples = reached[y];
    c.sim_rho0 = static_cast<double>(udp[y]) / static_cast<double>(reached[y]);
    c.model_rho0 = analytic::rho0_of_y(coeff, static_cast<double>(y) + 0.5);
    l1 += std::abs(c.sim_rho0 - c.model_rho0);
    rep.slots.push_back(c);
  }
  if (!rep.slots.empty()) l1 /= static_cast<double>(rep.slots.size());
  rep.l1_distance = l1;
  return rep;
}

std::vector<double> bin_means(const std::vector<double>& values, int bin) {
  if (bin < 1) throw std::invalid_argument("bin must be >= 1");
  std::vector<double> out;
  const auto b = static_cast<std::size_t>(bin);
  for (std::size_t i = 0; i + b <= values.size(); i += b) {
    double sum = 0.0;
    for (std::size_t k = 0; k < b; ++k) sum += values[i + k];
    out.push_back(sum / static_cast<double>(bin));
  }
  return out;
}

}  // namespace choke::harness
