#pragma once

#include <string>
#include <utility>
#include <vector>

namespace masksembles::cli {

using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

/// Flat `key = value` lines. Blank lines and lines starting with '#' are
/// skipped; keys may be written with or without a leading "--".
ConfigEntries parse_config(const std::string& text);

/// Replaces a `--config FILE` argument with `--key=value` arguments for
/// every entry whose flag is not already given explicitly. The generated
/// arguments are placed directly after the subcommand name so they bind to
/// the subcommand's options.
std::vector<std::string> expand_config(const std::vector<std::string>& args,
                                       const std::vector<std::string>& subcommands);

}  // namespace masksembles::cli
