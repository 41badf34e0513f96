#pragma once

#include "slvid/analysis.hpp"
#include "slvid/dataset.hpp"
#include "slvid/training.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>

namespace slv {

// Invalid user configuration (as opposed to a failure while running).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Flat `key = value` text, '#' starts a comment. Keys are kept sorted so
// to_text() is canonical.
class KeyValueConfig {
public:
    static KeyValueConfig parse(const std::string& text);
    static KeyValueConfig from_file(const std::filesystem::path& path);

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    bool has(const std::string& key) const { return values_.contains(key); }
    std::optional<std::string> get(const std::string& key) const;
    const std::map<std::string, std::string>& values() const noexcept { return values_; }

    // Later entries win.
    void merge(const KeyValueConfig& other);
    std::string to_text() const;

private:
    std::map<std::string, std::string> values_;
};

struct SplitSettings {
    SplitFractions fractions;
    std::uint64_t seed = 1;
};

SyntheticConfig synthetic_config_from(const KeyValueConfig& kv);
SplitSettings split_settings_from(const KeyValueConfig& kv);
RunConfig run_config_from(const KeyValueConfig& kv);
TsneConfig tsne_config_from(const KeyValueConfig& kv);

void put_synthetic_config(KeyValueConfig& kv, const SyntheticConfig& cfg);
void put_split_settings(KeyValueConfig& kv, const SplitSettings& s);
void put_run_config(KeyValueConfig& kv, const RunConfig& cfg);
void put_tsne_config(KeyValueConfig& kv, const TsneConfig& cfg);

std::vector<std::uint64_t> parse_seed_list(const std::string& text);
std::string format_seed_list(const std::vector<std::uint64_t>& seeds);

} // namespace slv
