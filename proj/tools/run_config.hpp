#pragma once

// Glue between CLI11 and `key = value` run configs: config files are turned
// into `--key=value` arguments placed ahead of the user's own flags, and the
// resolved options of a run are written next to its output.

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

namespace qad::cli {

// Returns argv with the entries of any `--config <file>` spliced in after the
// subcommand name. Keys also given on the command line are dropped from the
// file so flags always win.
std::vector<std::string> expand_config(const std::vector<std::string>& args,
                                       const std::set<std::string>& subcommands);

// `command = <name>`, every option of `app` and `sub` except those in
// `skip`, then `digest.<option> = <fnv>` for options naming input paths.
// Directories hash their regular files in name order.
std::string resolved_config(const CLI::App& app, const CLI::App& sub,
                            const std::set<std::string>& skip,
                            const std::set<std::string>& inputs);

void write_resolved_config(const std::string& text, const std::filesystem::path& path);

}  // namespace qad::cli
