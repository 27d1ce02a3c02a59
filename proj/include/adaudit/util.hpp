// Copyright 2026 The adaudit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef ADAUDIT_UTIL_HPP_
#define ADAUDIT_UTIL_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace adaudit {

// Input could not be decoded at all (bad JSON, bad CSV framing, bad number).
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& message, std::size_t row)
      : std::runtime_error("row " + std::to_string(row) + ": " + message),
        row_(row) {}
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

// Input decoded but violates the schema (missing field, unknown category,
// duplicate key). Carries enough context to locate the offending record.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A model output failed validation against its contract.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A pipeline stage cannot run, e.g. a required upstream artifact is missing.
class PipelineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Backend transport failure (connect error, HTTP 5xx, timeout). Retryable.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string trim(std::string_view s);

// Collapses runs of ASCII whitespace to single spaces and trims the ends.
std::string collapse_whitespace(std::string_view s);

std::string to_lower(std::string_view s);

bool starts_with_ci(std::string_view text, std::string_view prefix);

std::vector<std::string> split(std::string_view s, char sep);

// Parses either a non-negative integer epoch-seconds value or an ISO-8601
// UTC timestamp ("2021-03-01T00:00:00Z", optional fractional seconds which
// are truncated, optional "+00:00" suffix). Throws std::invalid_argument.
std::int64_t parse_timestamp(std::string_view raw);

// Formats epoch seconds as "YYYY-MM-DDTHH:MM:SSZ".
std::string format_timestamp(std::int64_t epoch_seconds);

// Midnight UTC on the day containing the given instant.
std::int64_t floor_to_utc_midnight(std::int64_t epoch_seconds);

// Fixed-point decimal formatting, C locale, no thousands separators.
std::string format_fixed(double value, int decimals);

// SHA-256 of a byte string, lowercase hex.
std::string sha256_hex(std::string_view bytes);

// SplitMix64. Used to derive independent per-item seeds from a run seed and
// a stable string key so results do not depend on scheduling order.
std::uint64_t mix_seed(std::uint64_t seed, std::string_view key);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view contents);

}  // namespace adaudit

#endif  // ADAUDIT_UTIL_HPP_
