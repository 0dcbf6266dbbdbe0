#include "trigada/kv.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "trigada/common.hpp"

namespace trigada {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string::npos ? std::string::npos : pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string to_upper(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::toupper(c); });
  return s;
}

std::string to_lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::vector<KvEntry> parse_kv(std::istream& in, const std::string& origin) {
  std::vector<KvEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto body = trim(line);
    if (body.empty() || body[0] == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ParseError(origin, lineno, "expected `key = value`");
    KvEntry e{trim(body.substr(0, eq)), trim(body.substr(eq + 1)), lineno};
    if (e.key.empty()) throw ParseError(origin, lineno, "empty key");
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<KvEntry> parse_kv_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  return parse_kv(in, path.string());
}

}  // namespace trigada
