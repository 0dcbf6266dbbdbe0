#pragma once

#include <filesystem>
#include <istream>
#include <string>
#include <vector>

namespace trigada {

// Line-oriented `key = value` files with `#` comments. Used for experiment
// configs, realis policies and synthetic corpus specs.
struct KvEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

std::vector<KvEntry> parse_kv(std::istream& in, const std::string& origin);
std::vector<KvEntry> parse_kv_file(const std::filesystem::path& path);

std::string trim(const std::string& s);
std::vector<std::string> split_list(const std::string& s, char sep = ',');
std::string to_upper(std::string s);
std::string to_lower(std::string s);

}  // namespace trigada
