#pragma once

// Discrete-event core: a FIFO buffer managed by CHOKe in front of RED, drained
// by a fixed-rate link.

#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <queue>
#include <string_view>
#include <vector>

#include "choke/random.hpp"

namespace choke::sim {

inline constexpr int kUdpFlow = 0;

struct Packet {
  int flow_id = 0;  // 0 is the UDP flow, 1..N are TCP
  std::int64_t seq = 0;
  int size = 1000;  // bytes
  double enqueue_time = 0.0;
};

struct RedParams {
  double min_th = 20.0;
  double max_th = 1000.0;
  double max_p = 0.1;
  double wq = 0.002;
  bool gentle = false;

  /// Throws std::invalid_argument when a threshold or weight is out of range.
  void validate() const;
};

/// Standard RED ramp on the averaged queue length.
double red_drop_probability(double avg_q, const RedParams& red);

enum class DropOrder { choke_then_red, red_then_choke };

DropOrder parse_drop_order(std::string_view name);
std::string_view to_string(DropOrder order);

enum class Admission { admitted, choke_matched, red_dropped, overflow_dropped };

std::string_view to_string(Admission outcome);

struct EnqueueResult {
  Admission outcome = Admission::admitted;
  std::int64_t victim_seq = -1;  // set for choke_matched
};

struct FlowCounters {
  std::int64_t arrivals = 0;
  std::int64_t admitted = 0;
  std::int64_t choke_self = 0;    // arrivals dropped on a match
  std::int64_t choke_victim = 0;  // buffered packets removed on a match
  std::int64_t red = 0;
  std::int64_t overflow = 0;
  std::int64_t transmitted = 0;  // left the buffer for the link

  FlowCounters& operator+=(const FlowCounters& o);
  friend bool operator==(const FlowCounters&, const FlowCounters&) = default;
};

struct QueueSnapshot {
  std::int64_t b = 0;
  std::int64_t b0 = 0;
  double h0 = 0.0;  // 0 for an empty queue
  /// 1 where the slot holds a UDP packet; index 0 is the tail.
  std::vector<std::uint8_t> udp_by_slot;
};

class ChokeQueue {
 public:
  ChokeQueue(std::size_t capacity, RedParams red, DropOrder order,
             int flow_count, std::uint64_t seed);

  EnqueueResult enqueue(const Packet& p, double now);

  /// Removes the head packet and counts it as transmitted. The buffer must be
  /// non-empty.
  Packet pop_head(double now);

  std::size_t size() const noexcept { return live_; }
  std::size_t udp_size() const noexcept { return live_udp_; }
  bool empty() const noexcept { return live_ == 0; }
  std::size_t capacity() const noexcept { return capacity_; }
  double avg_q() const noexcept { return avg_q_; }
  double udp_share() const noexcept;
  const FlowCounters& counters(int flow_id) const;
  int flow_count() const noexcept { return static_cast<int>(counters_.size()); }

  QueueSnapshot snapshot() const;
  /// Buffered packets per flow, by scanning the buffer.
  std::vector<std::int64_t> occupancy_by_flow() const;

  /// One line per enqueue and transmission: time,event,flow,outcome.
  void set_event_log(std::ostream* log) noexcept { log_ = log; }

 private:
  struct Slot {
    Packet packet;
    bool live = true;
  };

  bool red_drop();
  bool choke_match(const Packet& p, std::int64_t& victim_seq);
  void log(double now, std::string_view event, int flow,
           std::string_view outcome);
  void compact();

  std::size_t capacity_;
  RedParams red_;
  DropOrder order_;
  Rng rng_;
  std::deque<Slot> slots_;
  std::size_t live_ = 0;
  std::size_t live_udp_ = 0;
  double avg_q_ = 0.0;
  std::vector<FlowCounters> counters_;
  std::ostream* log_ = nullptr;
};

/// Service start on an idle link: the head packet leaves the buffer and
/// finishes transmission at `completion`.
struct ServiceStart {
  Packet packet;
  double completion = 0.0;
};

/// C is in packets/second of `nominal_size` bytes.
ServiceStart dequeue_service(ChokeQueue& q, double C, double now,
                             int nominal_size = 1000);

class EventLoop {
 public:
  using Action = std::function<void()>;

  void schedule(double time, Action action);
  /// Fires events with time <= until in (time, insertion) order. Returns the
  /// number fired.
  std::size_t run_until(double until);

  double now() const noexcept { return now_; }
  bool idle() const noexcept { return pending_.empty(); }

 private:
  struct Event {
    double time;
    std::uint64_t seq;
    Action action;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      if (a.time != b.time) return a.time > b.time;
      return a.seq > b.seq;
    }
  };

  std::priority_queue<Event, std::vector<Event>, Later> pending_;
  std::uint64_t next_seq_ = 0;
  double now_ = 0.0;
};

}  // namespace choke::sim
