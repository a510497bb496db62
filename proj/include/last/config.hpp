#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "last/model_config.hpp"
#include "last/synthetic.hpp"
#include "last/training.hpp"

namespace last {

struct ConfigKey {
  std::string key;
  std::string default_value;
  std::string help;
};

/// Every recognised key with its default and a one-line description.
/// `dataset.<name>.*` keys describe synthetic datasets and are open-ended.
const std::vector<ConfigKey>& config_schema();

/// Flat `section.key = value` settings. Files may contain `#` comments and
/// blank lines; later assignments win.
class Config {
 public:
  Config();  // schema defaults

  void load_file(const std::filesystem::path& path);
  void merge_text(const std::string& text, const std::string& origin = "<text>");
  /// `key=value`; throws on unknown keys.
  void assign(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  int get_int(const std::string& key) const;
  std::int64_t get_int64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;

  /// Every key, sorted, one `key = value` line each.
  std::string to_string() const;
  void save(const std::filesystem::path& path) const;

  ModelConfig model() const;
  AdamConfig optimizer() const;
  PretrainConfig pretrain() const;
  AdaptConfig adapt() const;
  InitOptions init_options() const;

  std::vector<std::string> dataset_names() const;
  bool has_dataset(const std::string& name) const;
  SyntheticSpec dataset(const std::string& name) const;

 private:
  std::map<std::string, std::string> values_;
};

/// Parses "a,b,c" (whitespace around items ignored, empty items dropped).
std::vector<std::string> split_list(const std::string& text);

}  // namespace last
