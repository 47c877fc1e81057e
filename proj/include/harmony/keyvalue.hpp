// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace harmony {

/// Malformed, unknown or out-of-range configuration entry.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct KeyValue {
  std::string key;
  std::string value;
  int line = 0;
};

/// Parses `key = value` lines. Blank lines and lines starting with '#' are
/// skipped; whitespace around keys and values is trimmed. A repeated key is
/// an error.
std::vector<KeyValue> parse_key_values(std::string_view text);

int parse_int(const KeyValue& kv);
double parse_double(const KeyValue& kv);
bool parse_bool(const KeyValue& kv);
std::vector<int> parse_int_list(const KeyValue& kv);

/// Shortest text that parses back to exactly `v`.
std::string format_double(double v);

}  // namespace harmony
