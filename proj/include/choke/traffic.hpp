#pragma once

// Packet sources: a piecewise-constant UDP schedule and an ACK-clocked AIMD
// TCP sender.

#include <cstdint>
#include <deque>
#include <optional>
#include <string_view>
#include <vector>

namespace choke::traffic {

struct UdpSegment {
  double start = 0.0;  // seconds
  double rate = 0.0;   // multiple of C
};

/// Strictly periodic UDP arrivals. Each segment emits at start + k/(rate C),
/// k = 0, 1, ..., until the next segment begins; the last segment never ends.
struct UdpSchedule {
  std::vector<UdpSegment> segments;

  /// Throws std::invalid_argument on unordered starts or negative rates.
  void validate() const;
  /// Rate (multiple of C) in force at time t; 0 before the first segment.
  double rate_at(double t) const noexcept;
};

/// First arrival strictly after `now`, or nothing if the schedule is silent
/// from then on.
std::optional<double> udp_next_arrival(const UdpSchedule& sched, double C,
                                       double now);

/// Enumerates the arrivals of a schedule in order, starting from time 0.
class UdpSource {
 public:
  UdpSource(UdpSchedule sched, double C);
  std::optional<double> next();

 private:
  UdpSchedule sched_;
  double C_;
  std::size_t seg_ = 0;
  std::int64_t k_ = 0;
};

enum class TcpPhase { slow_start, congestion_avoidance, recovery };

std::string_view to_string(TcpPhase phase);

struct TcpParams {
  double initial_ssthresh = 64.0;
  double min_rto = 0.2;
  double initial_rto = 1.0;
  double max_rto = 60.0;
};

struct Outstanding {
  std::int64_t seq = 0;
  double sent_at = 0.0;
};

struct TcpFlowState {
  double cwnd = 1.0;
  double ssthresh = 64.0;
  double rtt_base = 0.002;  // two-way propagation, seconds
  TcpPhase phase = TcpPhase::slow_start;
  std::int64_t next_seq = 0;
  std::int64_t recover = 0;  // recovery ends once this seq is acknowledged
  std::deque<Outstanding> outstanding;

  bool has_rtt = false;
  double srtt = 0.0;
  double rttvar = 0.0;
  double rto = 1.0;
  double min_rto = 0.2;
  double max_rto = 60.0;

  std::int64_t losses = 0;
  std::int64_t timeouts = 0;

  std::size_t in_flight() const noexcept { return outstanding.size(); }
};

TcpFlowState make_tcp_flow(double rtt_base, const TcpParams& params = {});

/// Packets the window allows right now.
std::size_t tcp_sendable(const TcpFlowState& s) noexcept;

/// Records a transmission and returns its sequence number.
std::int64_t tcp_send(TcpFlowState& s, double now);

struct AckResult {
  bool stale = false;          // not for an outstanding packet; ignored
  std::int64_t lost = 0;       // earlier outstanding packets given up on
  bool window_reduced = false;
};

/// ACK for `seq`. The path is FIFO, so any outstanding packet older than seq
/// was dropped. Slow start adds one packet per ACK, congestion avoidance
/// 1/cwnd; losses trigger at most one reduction per window.
AckResult tcp_on_ack(TcpFlowState& s, std::int64_t seq, double now);

/// Multiplicative decrease. No-op while already recovering.
void tcp_on_loss(TcpFlowState& s);

/// Retransmission timer expiry: window collapses to one packet, everything
/// outstanding is written off, and the timer backs off.
void tcp_on_timeout(TcpFlowState& s);

}  // namespace choke::traffic
