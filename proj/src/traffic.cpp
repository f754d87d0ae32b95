#include "choke/traffic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace choke::traffic {

void UdpSchedule::validate() const {
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& s = segments[i];
    if (!std::isfinite(s.start) || !std::isfinite(s.rate) || s.rate < 0.0) {
      throw std::invalid_argument("UDP segment " + std::to_string(i) +
                                  " needs a finite start and rate >= 0");
    }
    if (i > 0 && !(s.start > segments[i - 1].start)) {
      throw std::invalid_argument(
          "UDP segment start times must be strictly increasing");
    }
  }
}

double UdpSchedule::rate_at(double t) const noexcept {
  double rate = 0.0;
  for (const auto& s : segments) {
    if (s.start > t) break;
    rate = s.rate;
  }
  return rate;
}

namespace {

double segment_end(const UdpSchedule& sched, std::size_t i) {
  return i + 1 < sched.segments.size()
             ? sched.segments[i + 1].start
             : std::numeric_limits<double>::infinity();
}

double arrival_time(const UdpSegment& seg, double C, std::int64_t k) {
  return seg.start + static_cast<double>(k) / (seg.rate * C);
}

}  // namespace

std::optional<double> udp_next_arrival(const UdpSchedule& sched, double C,
                                       double now) {
  for (std::size_t i = 0; i < sched.segments.size(); ++i) {
    const auto& seg = sched.segments[i];
    const double end = segment_end(sched, i);
    if (seg.rate <= 0.0 || end <= now) continue;
    std::int64_t k = 0;
    if (now >= seg.start) {
      k = static_cast<std::int64_t>(std::floor((now - seg.start) * seg.rate * C));
      while (arrival_time(seg, C, k) <= now) ++k;
    }
    const double t = arrival_time(seg, C, k);
    if (t < end) return t;
  }
  return std::nullopt;
}

UdpSource::UdpSource(UdpSchedule sched, double C)
    : sched_(std::move(sched)), C_(C) {
  sched_.validate();
  if (!(C > 0.0)) throw std::invalid_argument("C must be > 0");
}

std::optional<double> UdpSource::next() {
  while (seg_ < sched_.segments.size()) {
    const auto& seg = sched_.segments[seg_];
    if (seg.rate > 0.0) {
      const double t = arrival_time(seg, C_, k_);
      if (t < segment_end(sched_, seg_)) {
        ++k_;
        return t;
      }
    }
    ++seg_;
    k_ = 0;
  }
  return std::nullopt;
}

std::string_view to_string(TcpPhase phase) {
  switch (phase) {
    case TcpPhase::slow_start:
      return "slow_start";
    case TcpPhase::congestion_avoidance:
      return "congestion_avoidance";
    case TcpPhase::recovery:
      return "recovery";
  }
  return "unknown";
}

TcpFlowState make_tcp_flow(double rtt_base, const TcpParams& params) {
  if (!(rtt_base >= 0.0)) throw std::invalid_argument("rtt_base must be >= 0");
  if (!(params.initial_ssthresh >= 2.0)) {
    throw std::invalid_argument("initial_ssthresh must be >= 2");
  }
  TcpFlowState s;
  s.rtt_base = rtt_base;
  s.ssthresh = params.initial_ssthresh;
  s.rto = params.initial_rto;
  s.min_rto = params.min_rto;
  s.max_rto = params.max_rto;
  return s;
}

std::size_t tcp_sendable(const TcpFlowState& s) noexcept {
  const auto window = static_cast<std::size_t>(std::floor(s.cwnd));
  return window > s.in_flight() ? window - s.in_flight() : 0;
}

std::int64_t tcp_send(TcpFlowState& s, double now) {
  const std::int64_t seq = s.next_seq++;
  s.outstanding.push_back({seq, now});
  return seq;
}

namespace {

void sample_rtt(TcpFlowState& s, double rtt) {
  if (!s.has_rtt) {
    s.srtt = rtt;
    s.rttvar = rtt / 2.0;
    s.has_rtt = true;
  } else {
    s.rttvar = 0.75 * s.rttvar + 0.25 * std::abs(s.srtt - rtt);
    s.srtt = 0.875 * s.srtt + 0.125 * rtt;
  }
  s.rto = std::clamp(s.srtt + 4.0 * s.rttvar, s.min_rto, s.max_rto);
}

void grow(TcpFlowState& s) {
  if (s.cwnd < s.ssthresh) {
    s.cwnd += 1.0;
    s.phase = s.cwnd < s.ssthresh ? TcpPhase::slow_start
                                  : TcpPhase::congestion_avoidance;
  } else {
    s.cwnd += 1.0 / s.cwnd;
    s.phase = TcpPhase::congestion_avoidance;
  }
}

}  // namespace

AckResult tcp_on_ack(TcpFlowState& s, std::int64_t seq, double now) {
  AckResult r;
  if (s.outstanding.empty() || seq < s.outstanding.front().seq ||
      seq >= s.next_seq) {
    r.stale = true;
    return r;
  }
  std::int64_t newest_lost = -1;
  while (!s.outstanding.empty() && s.outstanding.front().seq < seq) {
    newest_lost = s.outstanding.front().seq;
    s.outstanding.pop_front();
    ++r.lost;
  }
  if (!s.outstanding.empty() && s.outstanding.front().seq == seq) {
    sample_rtt(s, now - s.outstanding.front().sent_at);
    s.outstanding.pop_front();
  }
  s.losses += r.lost;

  if (r.lost > 0) {
    if (s.phase != TcpPhase::recovery || newest_lost >= s.recover) {
      s.phase = TcpPhase::congestion_avoidance;
      tcp_on_loss(s);
      r.window_reduced = true;
    }
  } else if (s.phase == TcpPhase::recovery) {
    if (seq >= s.recover) {
      s.phase = s.cwnd < s.ssthresh ? TcpPhase::slow_start
                                    : TcpPhase::congestion_avoidance;
    }
  } else {
    grow(s);
  }
  return r;
}

void tcp_on_loss(TcpFlowState& s) {
  if (s.phase == TcpPhase::recovery) return;
  const double half = s.cwnd / 2.0;
  s.ssthresh = std::max(half, 2.0);
  s.cwnd = std::max(half, 1.0);
  s.recover = s.next_seq;
  s.phase = TcpPhase::recovery;
}

void tcp_on_timeout(TcpFlowState& s) {
  s.ssthresh = std::max(s.cwnd / 2.0, 2.0);
  s.cwnd = 1.0;
  s.losses += static_cast<std::int64_t>(s.outstanding.size());
  s.outstanding.clear();
  s.phase = TcpPhase::slow_start;
  s.recover = s.next_seq;
  s.rto = std::min(2.0 * s.rto, s.max_rto);
  ++s.timeouts;
}

}  // namespace choke::traffic
