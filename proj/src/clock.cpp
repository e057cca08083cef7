#include "geoloc/clock.hpp"

#include <algorithm>
#include <thread>

namespace geoloc {

Clock::time_point SystemClock::now() { return std::chrono::steady_clock::now(); }

void SystemClock::sleep_until(time_point deadline) { std::this_thread::sleep_until(deadline); }

Clock::time_point FakeClock::now() {
  std::lock_guard lock(mutex_);
  return now_;
}

void FakeClock::sleep_until(time_point deadline) {
  std::lock_guard lock(mutex_);
  sleeps_.push_back(deadline);
  now_ = std::max(now_, deadline);
}

void FakeClock::advance(duration d) {
  std::lock_guard lock(mutex_);
  now_ += d;
}

std::vector<Clock::time_point> FakeClock::sleeps() const {
  std::lock_guard lock(mutex_);
  return sleeps_;
}

}  // namespace geoloc
