#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gtt {

// "key = value" lines, optional "[section]" headers, '#' comments. Every
// conversion error names the source, line and key.
struct KvEntry {
  std::string section;
  std::string key;
  std::string value;
  int line = 0;
};

struct KvDocument {
  std::string source;
  std::vector<KvEntry> entries;
};

// Duplicate keys within a section are an error; so are sections when
// allow_sections is false.
KvDocument parse_kv(const std::string& text, const std::string& source, bool allow_sections);
std::string read_text_file(const std::string& path);

[[noreturn]] void kv_fail(const KvDocument& doc, const KvEntry& entry, const std::string& what);

std::vector<std::string> kv_list(const KvEntry& entry);
double kv_double(const KvDocument& doc, const KvEntry& entry, const std::string& text);
std::uint64_t kv_uint(const KvDocument& doc, const KvEntry& entry, const std::string& text);
bool kv_bool(const KvDocument& doc, const KvEntry& entry);

inline double kv_double(const KvDocument& doc, const KvEntry& e) { return kv_double(doc, e, e.value); }
inline std::uint64_t kv_uint(const KvDocument& doc, const KvEntry& e) { return kv_uint(doc, e, e.value); }

// Shortest text that parses back to the same double.
std::string format_double(double value);

}  // namespace gtt
