#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dlm/model.hpp"
#include "dlm/tokenizer.hpp"
#include "dlm/training.hpp"

namespace dlm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Every value a run can be configured with. Keys are the snake_case field
// names; the matching flag is the key with dashes (learning_rate ->
// --learning-rate).
struct Settings {
  TrainConfig train;
  ModelConfig model;
  VocabTrainOptions vocab;
  double threshold = 0.5;
};

const std::vector<std::string>& setting_keys();
// Defaults per subcommand: filter-corpus starts from the small filter
// classifier recipe; everything else from the TrainConfig/ModelConfig defaults.
Settings default_settings(std::string_view subcommand);
void apply_setting(Settings& settings, const std::string& key, const std::string& value);
std::string format_setting(const Settings& settings, const std::string& key);

// key=value lines; '#' starts a comment line; blank lines ignored.
void apply_config_text(Settings& settings, std::string_view text, const std::string& source);
Settings load_config(const std::filesystem::path& path, std::string_view subcommand = "pretrain");

struct FlagSpec {
  enum class Kind { kValue, kList, kSwitch, kSetting };
  std::string name;  // without leading dashes
  Kind kind;
  std::string help;
  bool required = false;
  std::vector<std::string> excludes;
  std::vector<std::string> needs;
};

const std::vector<std::string>& subcommands();
// Registration table: dispatch() builds its parser from exactly these.
const std::vector<FlagSpec>& flags_for(std::string_view subcommand);

struct RunManifest {
  std::string subcommand;
  std::string version;
  std::string started;
  std::string finished;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> settings;  // resolved
  std::vector<std::pair<std::string, std::string>> flags;     // non-setting flags as given
  std::vector<std::string> outputs;
  std::string status;

  std::string serialize() const;
  static std::vector<RunManifest> parse_all(std::string_view text);
};

// Appends one record to <dir>/manifest.txt.
void append_manifest(const std::filesystem::path& dir, const RunManifest& manifest);

// Arguments that re-run the recorded invocation, with --out replaced.
std::vector<std::string> replay_argv(const RunManifest& manifest, const std::filesystem::path& out_dir);

std::string version();

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dlm::cli
