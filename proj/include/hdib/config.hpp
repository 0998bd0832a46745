// Plain-text configuration: flat key/value pairs grouped by nested sections.
//
// Grammar (exact):
//   file     := line*
//   line     := blank | comment | section | pair
//   comment  := '#' anything            (also allowed after a value)
//   section  := '[' path ']'            path = identifier ('.' identifier)*
//   pair     := key '=' value           key = identifier ('.' identifier)*
//   value    := free text up to '#' or end of line, trimmed
// Identifiers use [A-Za-z0-9_-].  A pair's full key is the current section
// path joined to the key with '.'; pairs before any section header live at
// the top level.  Duplicate full keys are an error.  Every diagnostic carries
// origin:line and the offending key.
//
// Values are re-parsed on demand: strings, words (whitespace or commas),
// integers, reals, lists thereof.  Keys are marked as consumed when read;
// `require_all_used` turns leftovers (typos, misplaced sections) into errors.
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hdib/util.hpp"

namespace hdib {

class Config {
 public:
  static Config parse_file(const std::string& path);
  static Config parse_string(const std::string& text, const std::string& origin);

  const std::string& origin() const { return origin_; }

  bool has(const std::string& key) const;
  // scalar accessors; the no-default forms throw ConfigError when missing
  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& dflt) const;
  long get_int(const std::string& key) const;
  long get_int(const std::string& key, long dflt) const;
  double get_real(const std::string& key) const;
  double get_real(const std::string& key, double dflt) const;
  // list accessors: items split on whitespace and/or commas
  std::vector<std::string> get_words(const std::string& key) const;
  std::vector<std::string> get_words(const std::string& key,
                                     const std::vector<std::string>& dflt) const;
  std::vector<long> get_ints(const std::string& key) const;
  std::vector<double> get_reals(const std::string& key) const;

  // numerically sorted indices i for which some key 'prefix.i.*' exists
  std::vector<long> numbered_sections(const std::string& prefix) const;
  // all full keys under 'prefix.' (marking none as used)
  std::vector<std::string> keys_under(const std::string& prefix) const;

  // throws ConfigError listing every never-read key with its line
  void require_all_used() const;

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const;

 private:
  struct Entry {
    std::string text;
    int line = 0;
    mutable bool used = false;
  };
  const Entry* find(const std::string& key) const;
  const Entry& need(const std::string& key) const;

  std::string origin_;
  std::map<std::string, Entry> kv_;
};

}  // namespace hdib
