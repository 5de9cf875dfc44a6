#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

namespace imip {

// Flat text config: one "key = value" or "key value" pair per line,
// '#' starts a comment, blank lines ignored. Later keys override earlier ones.
class KeyValueFile {
 public:
  KeyValueFile() = default;

  static KeyValueFile parse(std::istream& is) {
    KeyValueFile kv;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      for (auto& c : line)
        if (c == '=' || c == '\t') c = ' ';
      std::istringstream ls(line);
      std::string key, value;
      if (!(ls >> key)) continue;
      if (!(ls >> value))
        throw std::runtime_error("line " + std::to_string(lineno) +
                                 ": key '" + key + "' has no value");
      std::string extra;
      if (ls >> extra)
        throw std::runtime_error("line " + std::to_string(lineno) +
                                 ": trailing tokens after value");
      kv.values_[key] = value;
    }
    return kv;
  }

  static KeyValueFile load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open for reading: " + path);
    return parse(is);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end())
      throw std::runtime_error("missing config key: " + key);
    return it->second;
  }
  std::string get_string(const std::string& key, const std::string& dflt) const {
    return has(key) ? get_string(key) : dflt;
  }

  double get_double(const std::string& key) const {
    const std::string s = get_string(key);
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size())
      throw std::runtime_error("config key '" + key + "' is not a number: " + s);
    return v;
  }
  double get_double(const std::string& key, double dflt) const {
    return has(key) ? get_double(key) : dflt;
  }

  long get_int(const std::string& key) const {
    const std::string s = get_string(key);
    std::size_t used = 0;
    const long v = std::stol(s, &used);
    if (used != s.size())
      throw std::runtime_error("config key '" + key + "' is not an integer: " + s);
    return v;
  }
  long get_int(const std::string& key, long dflt) const {
    return has(key) ? get_int(key) : dflt;
  }

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace imip
