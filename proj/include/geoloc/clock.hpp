#pragma once

#include <chrono>
#include <mutex>
#include <vector>

namespace geoloc {

/// Monotonic time source. Injected wherever the code waits (retry backoff,
/// rate limiting) so tests can run against a fake clock.
class Clock {
 public:
  using duration = std::chrono::steady_clock::duration;
  using time_point = std::chrono::steady_clock::time_point;

  virtual ~Clock() = default;
  virtual time_point now() = 0;
  virtual void sleep_until(time_point deadline) = 0;
  void sleep_for(duration d) { sleep_until(now() + d); }
};

class SystemClock final : public Clock {
 public:
  time_point now() override;
  void sleep_until(time_point deadline) override;
};

/// Time advances only when someone sleeps. Thread-safe.
class FakeClock final : public Clock {
 public:
  time_point now() override;
  void sleep_until(time_point deadline) override;
  void advance(duration d);

  // Every sleep_until deadline requested so far, in call order.
  std::vector<time_point> sleeps() const;

 private:
  mutable std::mutex mutex_;
  time_point now_{};
  std::vector<time_point> sleeps_;
};

}  // namespace geoloc
