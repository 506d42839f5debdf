// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "akt/eval.hpp"
#include "akt/synthetic.hpp"

namespace akt::cli {

// TOML subset: [section] headers, `key = value` lines, # comments. Values are
// booleans, numbers, double-quoted strings, or single-line arrays of those.
struct ConfigValue {
    using Scalar = std::variant<bool, double, std::string>;
    std::variant<Scalar, std::vector<Scalar>> value;
    std::size_t line = 0;
};

class ConfigDoc {
public:
    static ConfigDoc parse(const std::string& text);
    static ConfigDoc load(const std::filesystem::path& path);

    bool has(const std::string& key) const { return entries_.count(key) != 0; }
    // Keys are "section.key"; top-level keys have no prefix.
    const std::map<std::string, ConfigValue>& entries() const { return entries_; }

    double number(const std::string& key) const;
    std::uint64_t integer(const std::string& key) const;
    bool boolean(const std::string& key) const;
    std::string string(const std::string& key) const;
    std::vector<double> numbers(const std::string& key) const;

private:
    std::map<std::string, ConfigValue> entries_;
};

struct DataPaths {
    std::string source_bank;
    std::string source_interactions;
    std::string target_bank;
    std::string target_interactions;
};

struct RunConfig {
    eval::ExperimentConfig exp;
    corpus::SyntheticSpec synthetic;
    DataPaths data;
    std::size_t max_steps = 100;  // sequences longer than this are chunked
    std::size_t min_count = 1;
    std::vector<double> lambda_sweep{0.0, 0.25, 0.5, 0.75, 1.0};
    std::vector<double> gamma_sweep{0.0, 0.25, 0.5, 0.75, 1.0};
    std::string out = "out";

    void validate() const;
    // Re-seeds every component from one seed.
    void set_seed(std::uint64_t seed);
};

// Applies a parsed document over the defaults; unknown keys are rejected.
// Relative paths are taken as given, i.e. relative to the working directory.
RunConfig run_config_from(const ConfigDoc& doc);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace akt::cli
