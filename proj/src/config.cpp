#include "hdib/config.hpp"

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace hdib {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool ident_ok(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-'))
      return false;
  return true;
}

bool path_ok(const std::string& s) {
  std::stringstream ss(s);
  std::string part;
  bool any = false;
  while (std::getline(ss, part, '.')) {
    if (!ident_ok(part)) return false;
    any = true;
  }
  return any && s.back() != '.';
}

std::vector<std::string> split_items(const std::string& v) {
  std::string norm = v;
  for (char& c : norm)
    if (c == ',') c = ' ';
  std::stringstream ss(norm);
  std::vector<std::string> out;
  std::string w;
  while (ss >> w) out.push_back(w);
  return out;
}

[[noreturn]] void parse_fail(const std::string& origin, int line,
                             const std::string& msg) {
  throw ConfigError(origin + ":" + std::to_string(line) + ": " + msg);
}

}  // namespace

Config Config::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str(), path);
}

Config Config::parse_string(const std::string& text, const std::string& origin) {
  Config cfg;
  cfg.origin_ = origin;
  std::stringstream ss(text);
  std::string raw, section;
  int line = 0;
  while (std::getline(ss, raw)) {
    ++line;
    size_t hash = raw.find('#');
    std::string body = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']')
        parse_fail(origin, line, "section header missing closing ']'");
      std::string path = trim(body.substr(1, body.size() - 2));
      if (!path_ok(path))
        parse_fail(origin, line, "bad section path '" + path + "'");
      section = path;
      continue;
    }
    size_t eq = body.find('=');
    if (eq == std::string::npos)
      parse_fail(origin, line, "expected 'key = value' or '[section]'");
    std::string key = trim(body.substr(0, eq));
    std::string val = trim(body.substr(eq + 1));
    if (!path_ok(key)) parse_fail(origin, line, "bad key '" + key + "'");
    std::string full = section.empty() ? key : section + "." + key;
    auto [it, fresh] = cfg.kv_.try_emplace(full, Entry{val, line, false});
    if (!fresh)
      parse_fail(origin, line,
                 "duplicate key '" + full + "' (first set on line " +
                     std::to_string(it->second.line) + ")");
  }
  return cfg;
}

const Config::Entry* Config::find(const std::string& key) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return nullptr;
  it->second.used = true;
  return &it->second;
}

const Config::Entry& Config::need(const std::string& key) const {
  const Entry* e = find(key);
  if (e == nullptr)
    throw ConfigError(origin_ + ": missing required key '" + key + "'");
  return *e;
}

void Config::fail(const std::string& key, const std::string& msg) const {
  const Entry* e = find(key);
  std::string at = e ? ":" + std::to_string(e->line) : "";
  throw ConfigError(origin_ + at + ": key '" + key + "': " + msg);
}

bool Config::has(const std::string& key) const { return find(key) != nullptr; }

std::string Config::get_string(const std::string& key) const {
  return need(key).text;
}
std::string Config::get_string(const std::string& key,
                               const std::string& dflt) const {
  const Entry* e = find(key);
  return e ? e->text : dflt;
}

long Config::get_int(const std::string& key) const {
  const Entry& e = need(key);
  errno = 0;
  char* end = nullptr;
  long v = std::strtol(e.text.c_str(), &end, 10);
  if (errno != 0 || end == e.text.c_str() || *end != '\0')
    fail(key, "not an integer: '" + e.text + "'");
  return v;
}
long Config::get_int(const std::string& key, long dflt) const {
  return has(key) ? get_int(key) : dflt;
}

double Config::get_real(const std::string& key) const {
  const Entry& e = need(key);
  errno = 0;
  char* end = nullptr;
  double v = std::strtod(e.text.c_str(), &end);
  if (errno != 0 || end == e.text.c_str() || *end != '\0')
    fail(key, "not a number: '" + e.text + "'");
  return v;
}
double Config::get_real(const std::string& key, double dflt) const {
  return has(key) ? get_real(key) : dflt;
}

std::vector<std::string> Config::get_words(const std::string& key) const {
  return split_items(need(key).text);
}
std::vector<std::string> Config::get_words(
    const std::string& key, const std::vector<std::string>& dflt) const {
  const Entry* e = find(key);
  return e ? split_items(e->text) : dflt;
}

std::vector<long> Config::get_ints(const std::string& key) const {
  std::vector<long> out;
  for (const std::string& w : get_words(key)) {
    errno = 0;
    char* end = nullptr;
    long v = std::strtol(w.c_str(), &end, 10);
    if (errno != 0 || end == w.c_str() || *end != '\0')
      fail(key, "list item not an integer: '" + w + "'");
    out.push_back(v);
  }
  return out;
}

std::vector<double> Config::get_reals(const std::string& key) const {
  std::vector<double> out;
  for (const std::string& w : get_words(key)) {
    errno = 0;
    char* end = nullptr;
    double v = std::strtod(w.c_str(), &end);
    if (errno != 0 || end == w.c_str() || *end != '\0')
      fail(key, "list item not a number: '" + w + "'");
    out.push_back(v);
  }
  return out;
}

std::vector<long> Config::numbered_sections(const std::string& prefix) const {
  std::vector<long> idx;
  std::string pre = prefix + ".";
  for (const auto& [k, e] : kv_) {
    if (k.rfind(pre, 0) != 0) continue;
    size_t dot = k.find('.', pre.size());
    if (dot == std::string::npos) continue;
    std::string num = k.substr(pre.size(), dot - pre.size());
    errno = 0;
    char* end = nullptr;
    long v = std::strtol(num.c_str(), &end, 10);
    if (errno != 0 || end == num.c_str() || *end != '\0')
      throw ConfigError(origin_ + ":" + std::to_string(e.line) + ": section '" +
                        prefix + "." + num + "' needs a numeric index");
    if (idx.empty() || idx.back() != v) idx.push_back(v);
  }
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  return idx;
}

std::vector<std::string> Config::keys_under(const std::string& prefix) const {
  std::vector<std::string> out;
  std::string pre = prefix + ".";
  for (const auto& [k, e] : kv_)
    if (k.rfind(pre, 0) == 0) out.push_back(k);
  return out;
}

void Config::require_all_used() const {
  std::string msg;
  for (const auto& [k, e] : kv_)
    if (!e.used)
      msg += (msg.empty() ? "" : "; ") + (origin_ + ":" +
             std::to_string(e.line) + ": unknown key '" + k + "'");
  if (!msg.empty()) throw ConfigError(msg);
}

}  // namespace hdib
