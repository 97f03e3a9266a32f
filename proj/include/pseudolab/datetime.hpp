#pragma once

#include <chrono>
#include <compare>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

#include "pseudolab/common.hpp"

namespace pseudolab {

/// Calendar timestamp with second resolution, no time zone.
struct DateTime {
  int year = 1970;
  int month = 1;
  int day = 1;
  int hour = 0;
  int minute = 0;
  int second = 0;

  auto operator<=>(const DateTime&) const = default;

  [[nodiscard]] std::chrono::sys_days date() const {
    return std::chrono::year{year} / std::chrono::month{static_cast<unsigned>(month)} /
           std::chrono::day{static_cast<unsigned>(day)};
  }

  [[nodiscard]] bool valid() const {
    const std::chrono::year_month_day ymd{std::chrono::year{year},
                                          std::chrono::month{static_cast<unsigned>(month)},
                                          std::chrono::day{static_cast<unsigned>(day)}};
    return ymd.ok() && hour >= 0 && hour < 24 && minute >= 0 && minute < 60 && second >= 0 &&
           second < 60;
  }

  /// Monday = 0 ... Sunday = 6.
  [[nodiscard]] int day_of_week() const {
    return static_cast<int>(std::chrono::weekday{date()}.iso_encoding()) - 1;
  }

  [[nodiscard]] std::int64_t epoch_seconds() const {
    const auto days = date().time_since_epoch().count();
    return static_cast<std::int64_t>(days) * 86400 + hour * 3600 + minute * 60 + second;
  }

  static DateTime from_epoch_seconds(std::int64_t s) {
    auto days = s / 86400;
    auto rem = s % 86400;
    if (rem < 0) {
      rem += 86400;
      --days;
    }
    const std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{days}}};
    DateTime t;
    t.year = static_cast<int>(ymd.year());
    t.month = static_cast<int>(static_cast<unsigned>(ymd.month()));
    t.day = static_cast<int>(static_cast<unsigned>(ymd.day()));
    t.hour = static_cast<int>(rem / 3600);
    t.minute = static_cast<int>((rem % 3600) / 60);
    t.second = static_cast<int>(rem % 60);
    return t;
  }

  [[nodiscard]] DateTime plus_seconds(std::int64_t s) const {
    return from_epoch_seconds(epoch_seconds() + s);
  }

  /// ISO-8601, e.g. 2023-01-01T09:30:00.
  [[nodiscard]] std::string iso() const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d", year, month, day, hour,
                  minute, second);
    return buf;
  }

  /// Accepts YYYY-MM-DD or YYYY-MM-DDTHH:MM:SS.
  static DateTime parse(std::string_view text) {
    DateTime t;
    const std::string s{text};
    int consumed = 0;
    if (s.size() == 10 &&
        std::sscanf(s.c_str(), "%4d-%2d-%2d%n", &t.year, &t.month, &t.day, &consumed) == 3 &&
        consumed == 10) {
      if (t.valid()) return t;
    } else if (s.size() == 19 &&
               std::sscanf(s.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%n", &t.year, &t.month, &t.day,
                           &t.hour, &t.minute, &t.second, &consumed) == 6 &&
               consumed == 19) {
      if (t.valid()) return t;
    }
    throw ArgumentError("unparsable date '" + s + "'");
  }
};

}  // namespace pseudolab
