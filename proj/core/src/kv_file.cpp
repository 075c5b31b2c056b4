#include "prismer/kv_file.hpp"

#include <fstream>
#include <sstream>

#include "prismer/error.hpp"

namespace prismer {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValueFile KeyValueFile::parse(const std::string& text) {
  KeyValueFile file;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(number) + ": expected key=value, got '" + t + "'");
    }
    file.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return file;
}

KeyValueFile KeyValueFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str());
}

void KeyValueFile::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = value;
      return;
    }
  }
  entries_.emplace_back(key, value);
}

std::optional<std::string> KeyValueFile::get(const std::string& key) const {
  for (const auto& [k, v] : entries_) {
    if (k == key) return v;
  }
  return std::nullopt;
}

std::string KeyValueFile::require(const std::string& key) const {
  auto v = get(key);
  if (!v) throw ConfigError("missing key '" + key + "'");
  return *v;
}

std::string KeyValueFile::str() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
  return out;
}

void KeyValueFile::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << str();
}

}  // namespace prismer
