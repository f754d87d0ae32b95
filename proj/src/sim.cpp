#include "choke/sim.hpp"

#include "choke/csv.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>

namespace choke::sim {

void RedParams::validate() const {
  if (!(min_th > 0.0 && min_th < max_th)) {
    throw std::invalid_argument("RED thresholds need 0 < min_th < max_th");
  }
  if (!(max_p > 0.0 && max_p <= 1.0)) {
    throw std::invalid_argument("RED max_p must lie in (0, 1]");
  }
  if (!(wq > 0.0 && wq < 1.0)) {
    throw std::invalid_argument("RED wq must lie in (0, 1)");
  }
}

double red_drop_probability(double avg_q, const RedParams& red) {
  if (avg_q < red.min_th) return 0.0;
  if (avg_q < red.max_th) {
    return red.max_p * (avg_q - red.min_th) / (red.max_th - red.min_th);
  }
  if (red.gentle && avg_q < 2.0 * red.max_th) {
    return red.max_p + (1.0 - red.max_p) * (avg_q - red.max_th) / red.max_th;
  }
  return 1.0;
}

DropOrder parse_drop_order(std::string_view name) {
  if (name == "choke_then_red") return DropOrder::choke_then_red;
  if (name == "red_then_choke") return DropOrder::red_then_choke;
  throw std::invalid_argument("unknown drop_order '" + std::string(name) + "'");
}

std::string_view to_string(DropOrder order) {
  return order == DropOrder::choke_then_red ? "choke_then_red"
                                            : "red_then_choke";
}

std::string_view to_string(Admission outcome) {
  switch (outcome) {
    case Admission::admitted:
      return "admitted";
    case Admission::choke_matched:
      return "choke_matched";
    case Admission::red_dropped:
      return "red_dropped";
    case Admission::overflow_dropped:
      return "overflow_dropped";
  }
  return "unknown";
}

FlowCounters& FlowCounters::operator+=(const FlowCounters& o) {
  arrivals += o.arrivals;
  admitted += o.admitted;
  choke_self += o.choke_self;
  choke_victim += o.choke_victim;
  red += o.red;
  overflow += o.overflow;
  transmitted += o.transmitted;
  return *this;
}

ChokeQueue::ChokeQueue(std::size_t capacity, RedParams red, DropOrder order,
                       int flow_count, std::uint64_t seed)
    : capacity_(capacity),
      red_(red),
      order_(order),
      rng_(seed),
      counters_(static_cast<std::size_t>(flow_count)) {
  if (capacity == 0) throw std::invalid_argument("queue capacity must be > 0");
  if (flow_count < 1) throw std::invalid_argument("flow_count must be >= 1");
  red_.validate();
}

double ChokeQueue::udp_share() const noexcept {
  return live_ == 0 ? 0.0
                    : static_cast<double>(live_udp_) / static_cast<double>(live_);
}

const FlowCounters& ChokeQueue::counters(int flow_id) const {
  return counters_.at(static_cast<std::size_t>(flow_id));
}

bool ChokeQueue::red_drop() {
  return bernoulli(rng_, red_drop_probability(avg_q_, red_));
}

bool ChokeQueue::choke_match(const Packet& p, std::int64_t& victim_seq) {
  if (live_ == 0) return false;
  std::size_t i = 0;
  do {
    i = static_cast<std::size_t>(uniform_index(rng_, slots_.size()));
  } while (!slots_[i].live);
  Slot& victim = slots_[i];
  if (victim.packet.flow_id != p.flow_id) return false;
  victim.live = false;
  victim_seq = victim.packet.seq;
  --live_;
  if (p.flow_id == kUdpFlow) --live_udp_;
  ++counters_[static_cast<std::size_t>(p.flow_id)].choke_victim;
  if (2 * live_ < slots_.size()) compact();
  return true;
}

EnqueueResult ChokeQueue::enqueue(const Packet& p, double now) {
  if (p.flow_id < 0 || p.flow_id >= flow_count()) {
    throw std::out_of_range("flow_id " + std::to_string(p.flow_id));
  }
  FlowCounters& c = counters_[static_cast<std::size_t>(p.flow_id)];
  ++c.arrivals;
  avg_q_ = (1.0 - red_.wq) * avg_q_ + red_.wq * static_cast<double>(live_);

  EnqueueResult result;
  std::int64_t victim = -1;
  const bool red_first = order_ == DropOrder::red_then_choke;
  if (red_first && red_drop()) {
    result.outcome = Admission::red_dropped;
  } else if (choke_match(p, victim)) {
    result.outcome = Admission::choke_matched;
    result.victim_seq = victim;
  } else if (!red_first && red_drop()) {
    result.outcome = Admission::red_dropped;
  } else if (live_ >= capacity_) {
    result.outcome = Admission::overflow_dropped;
  } else {
    Slot s{p, true};
    s.packet.enqueue_time = now;
    slots_.push_back(s);
    ++live_;
    if (p.flow_id == kUdpFlow) ++live_udp_;
  }

  switch (result.outcome) {
    case Admission::admitted:
      ++c.admitted;
      break;
    case Admission::choke_matched:
      ++c.choke_self;
      break;
    case Admission::red_dropped:
      ++c.red;
      break;
    case Admission::overflow_dropped:
      ++c.overflow;
      break;
  }
  if (log_) log(now, "enqueue", p.flow_id, to_string(result.outcome));
  return result;
}

Packet ChokeQueue::pop_head(double now) {
  while (!slots_.empty() && !slots_.front().live) slots_.pop_front();
  if (slots_.empty()) throw std::logic_error("pop_head on an empty queue");
  Packet p = slots_.front().packet;
  slots_.pop_front();
  --live_;
  if (p.flow_id == kUdpFlow) --live_udp_;
  ++counters_[static_cast<std::size_t>(p.flow_id)].transmitted;
  if (log_) log(now, "transmit", p.flow_id, "transmitted");
  return p;
}

void ChokeQueue::compact() {
  std::erase_if(slots_, [](const Slot& s) { return !s.live; });
}

QueueSnapshot ChokeQueue::snapshot() const {
  QueueSnapshot s;
  s.b = static_cast<std::int64_t>(live_);
  s.b0 = static_cast<std::int64_t>(live_udp_);
  s.h0 = udp_share();
  s.udp_by_slot.reserve(live_);
  for (auto it = slots_.rbegin(); it != slots_.rend(); ++it) {
    if (it->live) s.udp_by_slot.push_back(it->packet.flow_id == kUdpFlow);
  }
  return s;
}

std::vector<std::int64_t> ChokeQueue::occupancy_by_flow() const {
  std::vector<std::int64_t> n(counters_.size(), 0);
  for (const Slot& s : slots_) {
    if (s.live) ++n[static_cast<std::size_t>(s.packet.flow_id)];
  }
  return n;
}

void ChokeQueue::log(double now, std::string_view event, int flow,
                     std::string_view outcome) {
  *log_ << format_double(now) << ',' << event << ',' << flow << ',' << outcome << '\n';
}

ServiceStart dequeue_service(ChokeQueue& q, double C, double now,
                             int nominal_size) {
  if (!(C > 0.0)) throw std::invalid_argument("link capacity must be > 0");
  ServiceStart s;
  s.packet = q.pop_head(now);
  s.completion = now + static_cast<double>(s.packet.size) /
                           (C * static_cast<double>(nominal_size));
  return s;
}

void EventLoop::schedule(double time, Action action) {
  if (!(time >= now_)) {
    throw std::logic_error("event scheduled in the past");
  }
  pending_.push(Event{time, next_seq_++, std::move(action)});
}

std::size_t EventLoop::run_until(double until) {
  std::size_t fired = 0;
  while (!pending_.empty() && pending_.top().time <= until) {
    // top() is const; the action is moved out before pop invalidates it.
    Event& top = const_cast<Event&>(pending_.top());
    now_ = top.time;
    Action action = std::move(top.action);
    pending_.pop();
    action();
    ++fired;
  }
  if (until > now_) now_ = until;
  return fired;
}

}  // namespace choke::sim
