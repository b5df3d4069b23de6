#include "gtt/kv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "gtt/error.hpp"

namespace gtt {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

}  // namespace

KvDocument parse_kv(const std::string& text, const std::string& source, bool allow_sections) {
  KvDocument doc{source, {}};
  std::istringstream is(text);
  std::string line;
  std::string section;
  std::set<std::pair<std::string, std::string>> seen;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    if (stripped.front() == '[') {
      if (!allow_sections) throw ConfigError(where + "sections are not allowed here");
      if (stripped.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(stripped.substr(1, stripped.size() - 2));
      continue;
    }
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    KvEntry e{section, trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)), line_no};
    if (e.key.empty()) throw ConfigError(where + "empty key");
    if (!seen.insert({e.section, e.key}).second) throw ConfigError(where + "duplicate key '" + e.key + "'");
    doc.entries.push_back(std::move(e));
  }
  return doc;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void kv_fail(const KvDocument& doc, const KvEntry& entry, const std::string& what) {
  const std::string key = entry.section.empty() ? entry.key : entry.section + "." + entry.key;
  throw ConfigError(doc.source + ":" + std::to_string(entry.line) + ": key '" + key + "': " + what);
}

std::vector<std::string> kv_list(const KvEntry& entry) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(entry.value);
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double kv_double(const KvDocument& doc, const KvEntry& entry, const std::string& text) {
  double out = 0.0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  if (text.empty() || ec != std::errc() || ptr != end || !std::isfinite(out)) {
    kv_fail(doc, entry, "expected a number, got '" + text + "'");
  }
  return out;
}

std::uint64_t kv_uint(const KvDocument& doc, const KvEntry& entry, const std::string& text) {
  std::uint64_t out = 0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  if (text.empty() || ec != std::errc() || ptr != end) {
    kv_fail(doc, entry, "expected a non-negative integer, got '" + text + "'");
  }
  return out;
}

bool kv_bool(const KvDocument& doc, const KvEntry& entry) {
  if (entry.value == "true" || entry.value == "1" || entry.value == "yes") return true;
  if (entry.value == "false" || entry.value == "0" || entry.value == "no") return false;
  kv_fail(doc, entry, "expected true or false, got '" + entry.value + "'");
}

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

}  // namespace gtt
