// Copyright 2026 The Harmony Authors
// SPDX-License-Identifier: Apache-2.0

#include "harmony/keyvalue.hpp"

#include <charconv>
#include <set>

namespace harmony {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(const KeyValue& kv, const char* expected) {
  throw ConfigError("line " + std::to_string(kv.line) + ": " + kv.key + " = '" + kv.value +
                    "' is not " + expected);
}

template <typename Number>
Number parse_number(const KeyValue& kv, const char* expected) {
  Number v{};
  const char* begin = kv.value.data();
  const char* end = begin + kv.value.size();
  const auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end || kv.value.empty()) bad_value(kv, expected);
  return v;
}

}  // namespace

std::vector<KeyValue> parse_key_values(std::string_view text) {
  std::vector<KeyValue> out;
  std::set<std::string> seen;
  int line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const std::string_view raw = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value, got '" +
                        std::string(line) + "'");
    }
    KeyValue kv{std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))), line_no};
    if (kv.key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    if (!seen.insert(kv.key).second) {
      throw ConfigError("line " + std::to_string(line_no) + ": duplicate key " + kv.key);
    }
    out.push_back(std::move(kv));
  }
  return out;
}

int parse_int(const KeyValue& kv) { return parse_number<int>(kv, "an integer"); }

double parse_double(const KeyValue& kv) { return parse_number<double>(kv, "a number"); }

bool parse_bool(const KeyValue& kv) {
  if (kv.value == "true" || kv.value == "1") return true;
  if (kv.value == "false" || kv.value == "0") return false;
  bad_value(kv, "true or false");
}

std::vector<int> parse_int_list(const KeyValue& kv) {
  std::vector<int> out;
  std::string_view rest = kv.value;
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    KeyValue item{kv.key, std::string(trim(rest.substr(0, comma))), kv.line};
    out.push_back(parse_number<int>(item, "a comma-separated integer list"));
    if (comma == std::string_view::npos) break;
    rest = rest.substr(comma + 1);
  }
  return out;
}

std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace harmony
