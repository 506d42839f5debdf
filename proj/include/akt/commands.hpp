// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "akt/config.hpp"

namespace akt::cli {

struct CommandOptions {
    std::filesystem::path config;  // empty: built-in defaults
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::string checkpoint;
    std::optional<std::string> variant;
    std::string param = "lambda";  // sweep axis: lambda or gamma
};

// Config after applying command-line overrides.
RunConfig resolve_config(const CommandOptions& opt);

// Each command throws UsageError / DataError / NumericError on failure.
void cmd_gen_synthetic(const CommandOptions& opt, std::ostream& log);
void cmd_pretrain_ae(const CommandOptions& opt, std::ostream& log);
void cmd_train(const CommandOptions& opt, std::ostream& log);
void cmd_adapt(const CommandOptions& opt, std::ostream& log);
void cmd_finetune(const CommandOptions& opt, std::ostream& log);
void cmd_eval(const CommandOptions& opt, std::ostream& log);
void cmd_report(const CommandOptions& opt, std::ostream& log);
void cmd_sweep(const CommandOptions& opt, std::ostream& log);
void cmd_cv(const CommandOptions& opt, std::ostream& log);

// Exit code for an exception escaping a command: 1 usage, 2 data, 3 numeric.
int exit_code_for(const std::exception& e);

}  // namespace akt::cli
