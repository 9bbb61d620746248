#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace avh {

/// UTC instant at one-second resolution.
using Instant = std::chrono::sys_seconds;
using Seconds = std::chrono::seconds;

/// Parses an RFC 3339 timestamp ("2024-03-01T09:15:00Z", optional fractional
/// seconds, "Z" or a numeric offset). Fractions are truncated to whole seconds.
std::optional<Instant> parse_rfc3339(std::string_view text);

/// Formats as "YYYY-MM-DDTHH:MM:SSZ".
std::string format_rfc3339(Instant t);

inline std::int64_t to_unix(Instant t) { return t.time_since_epoch().count(); }
inline Instant from_unix(std::int64_t s) { return Instant{Seconds{s}}; }

}  // namespace avh
