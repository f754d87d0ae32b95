#include <gtest/gtest.h>

#include <cmath>

#include "choke/harness.hpp"
#include "choke/random.hpp"
#include "choke/traffic.hpp"

namespace {

using namespace choke;
using namespace choke::traffic;

std::int64_t count_between(const UdpSchedule& sched, double C, double lo,
                           double hi) {
  UdpSource src(sched, C);
  std::int64_t n = 0;
  while (auto t = src.next()) {
    if (*t >= hi) break;
    if (*t >= lo) ++n;
  }
  return n;
}

// --- UDP --------------------------------------------------------------------

TEST(Udp, ConstantRateEveryServiceTime) {
  const UdpSchedule sched{{{0.0, 1.0}}};
  UdpSource src(sched, 2500.0);
  EXPECT_DOUBLE_EQ(*src.next(), 0.0);
  EXPECT_DOUBLE_EQ(*src.next(), 0.0004);
  EXPECT_DOUBLE_EQ(*src.next(), 0.0008);
  EXPECT_DOUBLE_EQ(*udp_next_arrival(sched, 2500.0, 0.0), 0.0004);
  EXPECT_DOUBLE_EQ(*udp_next_arrival(sched, 2500.0, 0.0005), 0.0008);
}

TEST(Udp, ZeroRateSegmentIsSilent) {
  const UdpSchedule sched{{{0.0, 1.0}, {1.0, 0.0}, {2.0, 1.0}}};
  EXPECT_EQ(count_between(sched, 2500.0, 1.0, 2.0), 0);
  EXPECT_DOUBLE_EQ(*udp_next_arrival(sched, 2500.0, 1.0), 2.0);
  EXPECT_DOUBLE_EQ(*udp_next_arrival(sched, 2500.0, 0.9999), 2.0);
}

TEST(Udp, FlapCountsPerSegment) {
  UdpSchedule sched;
  for (int i = 0; i < 8; ++i) sched.segments.push_back({0.25 * i, i % 2 ? 10.0 : 1.0});
  for (int i = 0; i < 7; ++i) {
    const std::int64_t n = count_between(sched, 2500.0, 0.25 * i, 0.25 * (i + 1));
    EXPECT_EQ(n, i % 2 ? 6250 : 625) << "segment " << i;
  }
}

TEST(Udp, SilentScheduleHasNoArrivals) {
  EXPECT_FALSE(udp_next_arrival(UdpSchedule{}, 2500.0, 0.0));
  const UdpSchedule off{{{0.0, 0.0}}};
  EXPECT_FALSE(udp_next_arrival(off, 2500.0, 0.0));
  UdpSource src(off, 2500.0);
  EXPECT_FALSE(src.next());
}

TEST(Udp, NextArrivalAgreesWithSource) {
  const UdpSchedule sched{{{0.1, 0.3}, {0.5, 2.0}, {0.7, 0.0}, {0.9, 1.7}}};
  UdpSource src(sched, 2500.0);
  double now = -1.0;
  for (int i = 0; i < 3000; ++i) {
    const auto a = src.next();
    const auto b = udp_next_arrival(sched, 2500.0, now);
    ASSERT_TRUE(a && b);
    EXPECT_DOUBLE_EQ(*a, *b);
    EXPECT_GT(*a, now);
    now = *a;
  }
}

TEST(Udp, CountTracksScheduleIntegral) {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    UdpSchedule sched;
    double t = 0.0;
    for (int k = 0; k < 6; ++k) {
      sched.segments.push_back({t, uniform(rng, 0.0, 5.0)});
      t += uniform(rng, 0.05, 0.5);
    }
    const double end = t;
    const double C = 2500.0;
    double integral = 0.0;
    for (std::size_t k = 0; k < sched.segments.size(); ++k) {
      const double hi = k + 1 < sched.segments.size() ? sched.segments[k + 1].start : end;
      integral += sched.segments[k].rate * C * (hi - sched.segments[k].start);
    }
    const auto n = static_cast<double>(count_between(sched, C, 0.0, end));
    EXPECT_NEAR(n, integral, static_cast<double>(sched.segments.size()));
  }
}

TEST(Udp, RateAt) {
  const UdpSchedule sched{{{1.0, 0.5}, {21.0, 2.0}}};
  EXPECT_EQ(sched.rate_at(0.5), 0.0);
  EXPECT_EQ(sched.rate_at(1.0), 0.5);
  EXPECT_EQ(sched.rate_at(20.99), 0.5);
  EXPECT_EQ(sched.rate_at(21.0), 2.0);
}

TEST(Udp, ValidateRejectsBadSchedules) {
  EXPECT_THROW((UdpSchedule{{{0.0, 1.0}, {0.0, 2.0}}}.validate()), std::invalid_argument);
  EXPECT_THROW((UdpSchedule{{{1.0, 1.0}, {0.5, 2.0}}}.validate()), std::invalid_argument);
  EXPECT_THROW((UdpSchedule{{{0.0, -1.0}}}.validate()), std::invalid_argument);
  EXPECT_THROW(UdpSource(UdpSchedule{{{0.0, 1.0}}}, 0.0), std::invalid_argument);
}

// --- TCP --------------------------------------------------------------------

TEST(Tcp, SlowStartAckDoublesFromOne) {
  TcpFlowState s = make_tcp_flow(0.002);
  EXPECT_EQ(tcp_sendable(s), 1u);
  const auto seq = tcp_send(s, 0.0);
  EXPECT_EQ(tcp_sendable(s), 0u);
  const AckResult r = tcp_on_ack(s, seq, 0.01);
  EXPECT_FALSE(r.stale);
  EXPECT_EQ(r.lost, 0);
  EXPECT_DOUBLE_EQ(s.cwnd, 2.0);
  EXPECT_EQ(tcp_sendable(s), 2u);
  EXPECT_EQ(s.phase, TcpPhase::slow_start);
}

TEST(Tcp, LossHalvesWindow) {
  TcpFlowState s = make_tcp_flow(0.002);
  s.cwnd = 10.0;
  s.phase = TcpPhase::congestion_avoidance;
  tcp_on_loss(s);
  EXPECT_DOUBLE_EQ(s.cwnd, 5.0);
  EXPECT_DOUBLE_EQ(s.ssthresh, 5.0);
  EXPECT_EQ(s.phase, TcpPhase::recovery);
  tcp_on_loss(s);  // same window
  EXPECT_DOUBLE_EQ(s.cwnd, 5.0);
}

TEST(Tcp, WindowNeverBelowOne) {
  TcpFlowState s = make_tcp_flow(0.002);
  tcp_on_loss(s);
  EXPECT_DOUBLE_EQ(s.cwnd, 1.0);
  EXPECT_DOUBLE_EQ(s.ssthresh, 2.0);
}

TEST(Tcp, CongestionAvoidanceAddsOnePerWindow) {
  TcpFlowState s = make_tcp_flow(0.002);
  s.cwnd = 8.0;
  s.ssthresh = 8.0;
  std::vector<std::int64_t> seqs;
  for (std::size_t k = tcp_sendable(s); k > 0; --k) seqs.push_back(tcp_send(s, 0.0));
  ASSERT_EQ(seqs.size(), 8u);
  for (auto q : seqs) tcp_on_ack(s, q, 0.01);
  EXPECT_NEAR(s.cwnd, 9.0, 0.1);
  EXPECT_GT(s.cwnd, 8.9);
  EXPECT_EQ(s.phase, TcpPhase::congestion_avoidance);
}

TEST(Tcp, SlowStartHandsOverAtThreshold) {
  TcpFlowState s = make_tcp_flow(0.002);
  s.ssthresh = 4.0;
  for (int i = 0; i < 3; ++i) tcp_on_ack(s, tcp_send(s, 0.0), 0.01);
  EXPECT_DOUBLE_EQ(s.cwnd, 4.0);
  EXPECT_EQ(s.phase, TcpPhase::congestion_avoidance);
  tcp_on_ack(s, tcp_send(s, 0.0), 0.01);
  EXPECT_DOUBLE_EQ(s.cwnd, 4.25);
}

TEST(Tcp, LaterAckRevealsLossesAndReducesOnce) {
  TcpFlowState s = make_tcp_flow(0.002);
  s.cwnd = 10.0;
  s.ssthresh = 10.0;
  s.phase = TcpPhase::congestion_avoidance;
  std::vector<std::int64_t> seqs;
  for (std::size_t k = tcp_sendable(s); k > 0; --k) seqs.push_back(tcp_send(s, 0.0));
  // seqs[0] and seqs[2] are lost.
  AckResult r = tcp_on_ack(s, seqs[1], 0.01);
  EXPECT_EQ(r.lost, 1);
  EXPECT_TRUE(r.window_reduced);
  EXPECT_DOUBLE_EQ(s.cwnd, 5.0);
  r = tcp_on_ack(s, seqs[3], 0.01);
  EXPECT_EQ(r.lost, 1);
  EXPECT_FALSE(r.window_reduced);
  EXPECT_DOUBLE_EQ(s.cwnd, 5.0);
  EXPECT_EQ(s.losses, 2);
  // No growth while recovering; recovery ends at the recover point.
  for (std::size_t i = 4; i < seqs.size(); ++i) tcp_on_ack(s, seqs[i], 0.01);
  EXPECT_DOUBLE_EQ(s.cwnd, 5.0);
  EXPECT_EQ(s.phase, TcpPhase::recovery);
  const auto next = tcp_send(s, 0.02);
  tcp_on_ack(s, next, 0.03);
  EXPECT_NE(s.phase, TcpPhase::recovery);
}

TEST(Tcp, LossAfterRecoverPointStartsNewEpisode) {
  TcpFlowState s = make_tcp_flow(0.002);
  s.cwnd = 8.0;
  s.ssthresh = 8.0;
  std::vector<std::int64_t> first;
  for (std::size_t k = tcp_sendable(s); k > 0; --k) first.push_back(tcp_send(s, 0.0));
  tcp_on_ack(s, first[1], 0.01);  // first[0] lost
  ASSERT_EQ(s.phase, TcpPhase::recovery);
  const std::int64_t recover = s.recover;
  for (std::size_t i = 2; i < first.size(); ++i) tcp_on_ack(s, first[i], 0.03);
  ASSERT_EQ(s.phase, TcpPhase::recovery);
  std::vector<std::int64_t> second;
  for (std::size_t k = tcp_sendable(s); k > 0; --k) second.push_back(tcp_send(s, 0.03));
  ASSERT_GE(second.size(), 2u);
  ASSERT_GE(second[0], recover);
  const double before = s.cwnd;
  const AckResult r = tcp_on_ack(s, second[1], 0.04);  // second[0] lost
  EXPECT_TRUE(r.window_reduced);
  EXPECT_DOUBLE_EQ(s.cwnd, before / 2.0);
}

TEST(Tcp, StaleAckIgnored) {
  TcpFlowState s = make_tcp_flow(0.002);
  const auto a = tcp_send(s, 0.0);
  tcp_on_ack(s, a, 0.01);
  const double cwnd = s.cwnd;
  EXPECT_TRUE(tcp_on_ack(s, a, 0.02).stale);
  EXPECT_TRUE(tcp_on_ack(s, 99, 0.02).stale);
  EXPECT_DOUBLE_EQ(s.cwnd, cwnd);
}

TEST(Tcp, TimeoutCollapsesWindow) {
  TcpFlowState s = make_tcp_flow(0.002);
  s.cwnd = 12.0;
  for (std::size_t k = tcp_sendable(s); k > 0; --k) tcp_send(s, 0.0);
  const double rto = s.rto;
  tcp_on_timeout(s);
  EXPECT_DOUBLE_EQ(s.cwnd, 1.0);
  EXPECT_DOUBLE_EQ(s.ssthresh, 6.0);
  EXPECT_EQ(s.in_flight(), 0u);
  EXPECT_EQ(s.losses, 12);
  EXPECT_EQ(s.timeouts, 1);
  EXPECT_DOUBLE_EQ(s.rto, 2.0 * rto);
  EXPECT_EQ(s.phase, TcpPhase::slow_start);
}

TEST(Tcp, RtoFollowsSamplesWithFloor) {
  TcpFlowState s = make_tcp_flow(0.002);
  tcp_on_ack(s, tcp_send(s, 0.0), 0.004);
  EXPECT_DOUBLE_EQ(s.srtt, 0.004);
  EXPECT_DOUBLE_EQ(s.rto, 0.2);
  tcp_on_ack(s, tcp_send(s, 1.0), 1.5);
  EXPECT_GT(s.rto, 0.2);
}

TEST(Tcp, MakeFlowValidates) {
  EXPECT_THROW(make_tcp_flow(-1.0), std::invalid_argument);
  TcpParams p;
  p.initial_ssthresh = 1.0;
  EXPECT_THROW(make_tcp_flow(0.002, p), std::invalid_argument);
  EXPECT_EQ(to_string(TcpPhase::recovery), "recovery");
}

// --- TCP against the bottleneck ------------------------------------------------

harness::Scenario tcp_only(double duration) {
  harness::Scenario s;
  s.name = "tcp-only";
  s.duration = duration;
  s.warmup = 5.0;
  s.window = 0.1;
  return s;
}

TEST(TcpAggregate, FillsTheLinkWithoutUdp) {
  const harness::Scenario s = tcp_only(15.0);
  const auto run = harness::simulate(s, 3);
  const auto rows = harness::derive_rows(run.trace, s.C);
  double util = 0.0;
  int n = 0;
  for (std::size_t i = 50; i < rows.size(); ++i) {
    util += rows[i][harness::kMuTcp] + rows[i][harness::kMu0];
    ++n;
  }
  EXPECT_GE(util / n, 0.98);
  EXPECT_EQ(run.summary.window_violations, 0);
}

TEST(TcpAggregate, ThroughputMatchesCapacity) {
  const harness::Scenario s = tcp_only(25.0);
  const auto run = harness::simulate(s, 8);
  std::int64_t departures = 0;
  for (std::size_t i = 50; i < run.trace.windows.size(); ++i) {
    departures += run.trace.windows[i].tcp_departures;
  }
  const double rate = static_cast<double>(departures) / (s.duration - s.warmup);
  EXPECT_NEAR(rate, s.C, 0.02 * s.C);
  EXPECT_EQ(run.trace.windows[60].udp_departures, 0);
}

}  // namespace
