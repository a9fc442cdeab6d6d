#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "qtart/attacks.hpp"
#include "qtart/dataset.hpp"
#include "qtart/model.hpp"
#include "qtart/trainer.hpp"

namespace qtart {

/// Flat "section.key = value" store. Keys are fixed by the defaults table;
/// unknown keys are rejected so that typos do not silently fall back.
class ConfigMap {
public:
    /// Every recognised key with its default value.
    static ConfigMap defaults();

    /// Parses text of the form `section.key = value`, `#` comments, and
    /// optional `[section]` headers that prefix subsequent keys not already
    /// starting with the section name.
    void merge_text(const std::string& text, const std::string& origin = "<text>");
    void merge_file(const std::filesystem::path& path);
    /// `key=value`; the key must already exist.
    void set(const std::string& assignment);
    void set(const std::string& key, const std::string& value);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    const std::string& get(const std::string& key) const;
    double number(const std::string& key) const;
    std::size_t count(const std::string& key) const;
    std::uint64_t seed(const std::string& key) const;
    bool flag(const std::string& key) const;
    std::vector<std::size_t> counts(const std::string& key) const;  // comma separated
    std::vector<double> numbers(const std::string& key) const;
    std::vector<std::string> strings(const std::string& key) const;

    const std::map<std::string, std::string>& values() const { return values_; }

    /// Canonical "key = value" listing, sorted by key.
    std::string canonical() const;
    /// FNV-1a of the canonical text, as 16 hex digits.
    std::string fingerprint() const;

    /// Applies a global seed to every seed key.
    void set_all_seeds(std::uint64_t seed);

private:
    std::map<std::string, std::string> values_;
};

/// Everything a CLI run needs, decoded from a ConfigMap.
struct RunConfig {
    ExperimentConfig experiment;
    ConvNetSpec net;
    std::uint64_t weight_seed = 0;

    std::string data_source = "synthetic";  // "synthetic" or "file"
    ImageFormat format = ImageFormat::qtds;
    std::filesystem::path train_path;
    std::filesystem::path train_labels;
    std::filesystem::path test_path;
    std::filesystem::path test_labels;
    SyntheticSpec synth;
    std::size_t synth_test_samples = 400;

    std::vector<AttackSpec> attacks;
    std::vector<std::filesystem::path> transfer_sources;

    std::string fingerprint;
};

RunConfig decode_config(const ConfigMap& map);

/// Train/test pair named by the config (synthetic or loaded from files).
struct DataPair {
    Dataset train;
    Dataset test;
};
DataPair load_data(const RunConfig& cfg);

}  // namespace qtart
