#pragma once

#include <cstdint>
#include <string>

namespace gustcast::timeutil {

// Timestamps are UTC seconds since the Unix epoch, always on whole hours in
// this codebase.
inline constexpr std::int64_t kHour = 3600;

struct CivilTime {
  int year;
  int month;   // 1..12
  int day;     // 1..31
  int hour;    // 0..23
  int minute;  // 0..59
  int second;  // 0..59
};

std::int64_t to_unix(const CivilTime& c);
CivilTime to_civil(std::int64_t unix_seconds);

// "YYYY-MM-DDTHH:MM:SSZ"
std::string format_iso8601(std::int64_t unix_seconds);
std::int64_t parse_iso8601(const std::string& text);

int month_of_year(std::int64_t unix_seconds);  // 1..12
int hour_of_day(std::int64_t unix_seconds);    // 0..23

}  // namespace gustcast::timeutil
