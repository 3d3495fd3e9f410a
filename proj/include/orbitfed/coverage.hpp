#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "orbitfed/error.hpp"

namespace orbitfed {

struct CoverageInterval {
  double start_s = 0.0;
  double end_s = 0.0;
  double length() const noexcept { return end_s - start_s; }
};

/// Successive satellite passes over one cluster. Fixed-T schedules are unbounded and
/// synthesized on demand; explicit schedules hold a finite list of ordered intervals.
class CoverageSchedule {
 public:
  enum class Mode { fixed_t, explicit_intervals };

  CoverageSchedule() = default;

  static CoverageSchedule fixed(double period_s) {
    if (!(period_s > 0.0) || !std::isfinite(period_s))
      throw InvalidArgument("coverage period must be positive");
    CoverageSchedule s;
    s.mode_ = Mode::fixed_t;
    s.period_ = period_s;
    return s;
  }

  static CoverageSchedule from_intervals(std::vector<CoverageInterval> intervals) {
    if (intervals.empty()) throw FormatError("coverage schedule has no intervals");
    for (std::size_t i = 0; i < intervals.size(); ++i) {
      const auto& iv = intervals[i];
      if (!std::isfinite(iv.start_s) || !std::isfinite(iv.end_s) || !(iv.end_s > iv.start_s))
        throw FormatError("coverage interval " + std::to_string(i) + " is empty or reversed");
      if (i > 0) {
        if (iv.start_s < intervals[i - 1].start_s)
          throw FormatError("coverage interval starts are not monotone at row " +
                            std::to_string(i));
        if (iv.start_s < intervals[i - 1].end_s)
          throw FormatError("coverage intervals overlap at row " + std::to_string(i));
      }
    }
    CoverageSchedule s;
    s.mode_ = Mode::explicit_intervals;
    s.intervals_ = std::move(intervals);
    double total = 0.0;
    for (const auto& iv : s.intervals_) total += iv.length();
    s.period_ = total / static_cast<double>(s.intervals_.size());
    return s;
  }

  Mode mode() const noexcept { return mode_; }
  bool is_fixed() const noexcept { return mode_ == Mode::fixed_t; }

  /// Number of satellites available; unbounded for fixed-T.
  std::size_t size() const noexcept {
    return is_fixed() ? std::numeric_limits<std::size_t>::max() : intervals_.size();
  }

  CoverageInterval interval(std::size_t i) const {
    if (is_fixed()) {
      const double k = static_cast<double>(i);
      return {k * period_, (k + 1.0) * period_};
    }
    if (i >= intervals_.size()) throw Error("coverage schedule exhausted");
    return intervals_[i];
  }

  /// Mean dwell; this is the T handed to the optimizer.
  double mean() const noexcept { return period_; }

  const std::vector<CoverageInterval>& intervals() const noexcept { return intervals_; }

 private:
  Mode mode_ = Mode::fixed_t;
  double period_ = 360.0;
  std::vector<CoverageInterval> intervals_;
};

/// Rows `index start_s end_s`; '#' starts a comment.
inline CoverageSchedule parse_coverage_schedule(std::istream& in, const std::string& origin) {
  std::vector<CoverageInterval> out;
  std::string line;
  std::size_t line_no = 0;
  long long last_index = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    long long index = 0;
    CoverageInterval iv;
    if (!(ss >> index)) continue;  // blank line
    if (!(ss >> iv.start_s >> iv.end_s))
      throw FormatError(origin + ":" + std::to_string(line_no) + ": expected 'index start end'");
    std::string extra;
    if (ss >> extra)
      throw FormatError(origin + ":" + std::to_string(line_no) + ": trailing data");
    if (index <= last_index)
      throw FormatError(origin + ":" + std::to_string(line_no) + ": satellite index not increasing");
    last_index = index;
    out.push_back(iv);
  }
  if (out.empty()) throw FormatError(origin + ": empty coverage schedule");
  try {
    return CoverageSchedule::from_intervals(std::move(out));
  } catch (const FormatError& e) {
    throw FormatError(origin + ": " + e.what());
  }
}

inline CoverageSchedule load_coverage_schedule(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open coverage schedule: " + path);
  return parse_coverage_schedule(in, path);
}

inline void write_coverage_schedule(std::ostream& out, const CoverageSchedule& s) {
  out.precision(17);
  for (std::size_t i = 0; i < s.intervals().size(); ++i)
    out << i << ' ' << s.intervals()[i].start_s << ' ' << s.intervals()[i].end_s << '\n';
}

}  // namespace orbitfed
