#pragma once

#include <string>

#include <json.hpp>

#include "tpower/model.hpp"

namespace tpower {

// Dispatches a validated experiment config. The "command" field selects the
// operation; every command checks its schema (unknown keys rejected by name)
// before touching the filesystem. Artifacts land in out_dir.
void run_config(const nlohmann::json& config, const std::string& out_dir, bool debug_dump);

// Named architecture presets used by the train command.
Model build_arch(const std::string& arch, const Shape& input_shape, int num_classes,
                 std::uint64_t seed);

// Full front end: tpower-uap <command> --config <path> [--out <dir>]
// [--debug-dump]. Returns the process exit code: 0 on success, 2 for
// config/schema problems, 1 for every other domain failure.
int cli_main(int argc, const char* const* argv);

}  // namespace tpower
