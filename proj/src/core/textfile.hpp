#pragma once
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"

namespace dsopt {

// Line-oriented config format: "[section]" headers, "key = value" pairs,
// and bare whitespace-separated records. '#' starts a comment. Sections can
// repeat; each occurrence is kept in file order.
struct TextRecord {
  int line = 0;
  std::vector<std::string> fields;
};

struct TextSection {
  std::string name;
  int line = 0;
  std::map<std::string, std::pair<std::string, int>> kv;  // value, line
  std::vector<TextRecord> records;

  bool has(const std::string& key) const { return kv.count(key) != 0; }
  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& dflt) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double dflt) const;
  int get_int(const std::string& key) const;
  int get_int(const std::string& key, int dflt) const;
  std::vector<double> get_doubles(const std::string& key) const;  // comma list

 private:
  [[noreturn]] void missing(const std::string& key) const;
};

struct TextFile {
  std::string path;
  std::vector<TextSection> sections;

  const TextSection* find(const std::string& name) const;  // first, or null
  const TextSection& require(const std::string& name) const;
  std::vector<const TextSection*> all(const std::string& name) const;
};

TextFile parse_text_file(const std::string& path);
TextFile parse_text(const std::string& content, const std::string& label);

double parse_double_field(const TextRecord& r, size_t idx,
                          const std::string& what);
int parse_int_field(const TextRecord& r, size_t idx, const std::string& what);

}  // namespace dsopt
