#pragma once

#include <chrono>
#include <cstdint>

namespace streambin {

/// Milliseconds. Wall clocks count from the Unix epoch, virtual clocks from
/// the start of a simulation run.
using Millis = std::int64_t;

inline constexpr Millis seconds_to_ms(double s) {
  return static_cast<Millis>(s * 1000.0 + (s >= 0 ? 0.5 : -0.5));
}
inline constexpr double ms_to_seconds(Millis ms) { return static_cast<double>(ms) / 1000.0; }

class Clock {
 public:
  virtual ~Clock() = default;
  virtual Millis now() const = 0;
};

class WallClock final : public Clock {
 public:
  Millis now() const override {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
  }
};

/// Manually stepped clock for deterministic runs.
class VirtualClock final : public Clock {
 public:
  explicit VirtualClock(Millis start = 0) : now_(start) {}
  Millis now() const override { return now_; }
  void advance(Millis delta) { now_ += delta; }
  void set(Millis t) { now_ = t; }

 private:
  Millis now_;
};

}  // namespace streambin
