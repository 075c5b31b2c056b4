#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace prismer {

// UTF-8 "key=value" lines; '#' starts a comment line. Insertion order is
// preserved on write so that files are byte-reproducible.
class KeyValueFile {
 public:
  static KeyValueFile parse(const std::string& text);
  static KeyValueFile load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  std::optional<std::string> get(const std::string& key) const;
  std::string require(const std::string& key) const;
  bool contains(const std::string& key) const { return get(key).has_value(); }

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  std::string str() const;
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace prismer
