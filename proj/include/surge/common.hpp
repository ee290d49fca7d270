#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace surge {

// Base error for every recoverable failure in the library. The CLI maps
// ConfigError to exit code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string pointer, const std::string& what)
      : Error(pointer + ": " + what), pointer_(std::move(pointer)) {}
  const std::string& pointer() const { return pointer_; }

 private:
  std::string pointer_;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

// ---------------------------------------------------------------------------
// Random streams
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Counter-based substream seed: the same (master, stream, counter) triple
// always yields the same seed regardless of evaluation order.
inline std::uint64_t substream_seed(std::uint64_t master, std::uint64_t stream,
                                    std::uint64_t counter = 0) {
  return splitmix64(splitmix64(master ^ splitmix64(stream + 0x632BE59BD9B4E019ULL)) +
                    counter);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t master, std::uint64_t stream,
                    std::uint64_t counter = 0) {
  return Rng(substream_seed(master, stream, counter));
}

// Uniform double in [0, 1) built from the top 53 bits; portable across
// standard libraries unlike std::uniform_real_distribution.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
}

double standard_normal(Rng& rng);

// ---------------------------------------------------------------------------
// Time: minutes since 2020-01-01T00:00 (local standard time, no DST).
// ---------------------------------------------------------------------------

using Minutes = std::int64_t;
inline constexpr Minutes kStepMinutes = 15;
inline constexpr Minutes kDayMinutes = 24 * 60;

struct CalendarTime {
  int year, month, day, hour, minute;
  int day_of_year;  // 0-based
  int day_of_week;  // 0 = Monday
};

CalendarTime to_calendar(Minutes t);
std::string to_iso8601(Minutes t);
Minutes parse_iso8601(std::string_view s);

inline double hour_of_day(Minutes t) {
  Minutes m = ((t % kDayMinutes) + kDayMinutes) % kDayMinutes;
  return static_cast<double>(m) / 60.0;
}

// ---------------------------------------------------------------------------
// Misc numerics
// ---------------------------------------------------------------------------

double normal_cdf(double x);
double normal_pdf(double x);

// Nearest-rank percentile of an already sorted sample, q in (0, 100].
double nearest_rank(const std::vector<double>& sorted, double q);

// Formats a double with 9 significant digits (artifact convention).
std::string fmt_double(double v);

// Runs fn(i) for i in [0, n) on up to `threads` workers. Work is statically
// partitioned so results written to per-index slots are order-independent.
void parallel_for(std::size_t n, unsigned threads,
                  const std::function<void(std::size_t)>& fn);

}  // namespace surge
