#include "textfile.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace dsopt {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& s, const std::string& where) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing text");
    return v;
  } catch (const std::exception&) {
    throw ValidationError(where + ": expected a number, got '" + s + "'");
  }
}

int to_int(const std::string& s, const std::string& where) {
  try {
    size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing text");
    return v;
  } catch (const std::exception&) {
    throw ValidationError(where + ": expected an integer, got '" + s + "'");
  }
}

}  // namespace

std::string TextSection::get_string(const std::string& key) const {
  const auto it = kv.find(key);
  if (it == kv.end()) missing(key);
  return it->second.first;
}

std::string TextSection::get_string(const std::string& key,
                                    const std::string& dflt) const {
  const auto it = kv.find(key);
  return it == kv.end() ? dflt : it->second.first;
}

double TextSection::get_double(const std::string& key) const {
  const auto it = kv.find(key);
  if (it == kv.end()) missing(key);
  return to_double(it->second.first,
                   "[" + name + "] " + key + " (line " +
                       std::to_string(it->second.second) + ")");
}

double TextSection::get_double(const std::string& key, double dflt) const {
  return has(key) ? get_double(key) : dflt;
}

int TextSection::get_int(const std::string& key) const {
  const auto it = kv.find(key);
  if (it == kv.end()) missing(key);
  return to_int(it->second.first, "[" + name + "] " + key + " (line " +
                                      std::to_string(it->second.second) + ")");
}

int TextSection::get_int(const std::string& key, int dflt) const {
  return has(key) ? get_int(key) : dflt;
}

std::vector<double> TextSection::get_doubles(const std::string& key) const {
  const std::string raw = get_string(key);
  std::vector<double> out;
  std::string item;
  std::istringstream is(raw);
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(to_double(item, "[" + name + "] " + key));
  }
  return out;
}

void TextSection::missing(const std::string& key) const {
  throw ValidationError("[" + name + "]: missing required key '" + key + "'");
}

const TextSection* TextFile::find(const std::string& target) const {
  for (const auto& s : sections)
    if (s.name == target) return &s;
  return nullptr;
}

const TextSection& TextFile::require(const std::string& target) const {
  const auto* s = find(target);
  if (!s) throw ValidationError(path + ": missing section [" + target + "]");
  return *s;
}

std::vector<const TextSection*> TextFile::all(const std::string& target) const {
  std::vector<const TextSection*> out;
  for (const auto& s : sections)
    if (s.name == target) out.push_back(&s);
  return out;
}

TextFile parse_text(const std::string& content, const std::string& label) {
  TextFile file;
  file.path = label;
  std::istringstream is(content);
  std::string raw;
  int line_no = 0;
  TextSection* cur = nullptr;

  while (std::getline(is, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']')
        throw ValidationError(label + ":" + std::to_string(line_no) +
                              ": unterminated section header");
      TextSection s;
      s.name = trim(line.substr(1, line.size() - 2));
      s.line = line_no;
      if (s.name.empty())
        throw ValidationError(label + ":" + std::to_string(line_no) +
                              ": empty section name");
      file.sections.push_back(std::move(s));
      cur = &file.sections.back();
      continue;
    }
    if (!cur)
      throw ValidationError(label + ":" + std::to_string(line_no) +
                            ": content before any [section]");

    const auto eq = line.find('=');
    if (eq != std::string::npos) {
      const std::string key = trim(line.substr(0, eq));
      const std::string val = trim(line.substr(eq + 1));
      if (key.empty())
        throw ValidationError(label + ":" + std::to_string(line_no) +
                              ": empty key");
      if (!cur->kv.emplace(key, std::make_pair(val, line_no)).second)
        throw ValidationError(label + ":" + std::to_string(line_no) +
                              ": duplicate key '" + key + "' in [" + cur->name +
                              "]");
      continue;
    }

    TextRecord rec;
    rec.line = line_no;
    std::istringstream fs(line);
    std::string field;
    while (fs >> field) rec.fields.push_back(field);
    cur->records.push_back(std::move(rec));
  }
  return file;
}

TextFile parse_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_text(buf.str(), path);
}

double parse_double_field(const TextRecord& r, size_t idx,
                          const std::string& what) {
  if (idx >= r.fields.size())
    throw ValidationError("line " + std::to_string(r.line) + ": missing " +
                          what + " (field " + std::to_string(idx + 1) + ")");
  return to_double(r.fields[idx],
                   "line " + std::to_string(r.line) + " " + what);
}

int parse_int_field(const TextRecord& r, size_t idx, const std::string& what) {
  if (idx >= r.fields.size())
    throw ValidationError("line " + std::to_string(r.line) + ": missing " +
                          what + " (field " + std::to_string(idx + 1) + ")");
  return to_int(r.fields[idx], "line " + std::to_string(r.line) + " " + what);
}

}  // namespace dsopt
