#include "config_file.hpp"

#include <algorithm>
#include <sstream>

#include "masksembles/error.hpp"
#include "masksembles/io.hpp"

namespace masksembles::cli {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

bool mentions(const std::vector<std::string>& args, const std::string& flag) {
  return std::any_of(args.begin(), args.end(), [&](const std::string& a) {
    return a == flag || a.rfind(flag + "=", 0) == 0;
  });
}

}  // namespace

ConfigEntries parse_config(const std::string& text) {
  ConfigEntries entries;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config line " + std::to_string(number) + ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    if (key.rfind("--", 0) == 0) key.erase(0, 2);
    if (key.empty()) throw ValidationError("config line " + std::to_string(number) + ": empty key");
    if (key == "config") throw ValidationError("config files cannot include other config files");
    entries.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return entries;
}

std::vector<std::string> expand_config(const std::vector<std::string>& args,
                                       const std::vector<std::string>& subcommands) {
  std::vector<std::string> rest;
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 == args.size()) throw ValidationError("--config needs a file argument");
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (path.empty()) return rest;

  const auto entries = parse_config(read_file(path));
  const auto sub = std::find_first_of(rest.begin(), rest.end(), subcommands.begin(), subcommands.end());
  const auto insert_at = sub == rest.end() ? rest.end() : sub + 1;
  std::vector<std::string> injected;
  for (const auto& [key, value] : entries) {
    if (!mentions(rest, "--" + key)) injected.push_back("--" + key + "=" + value);
  }
  rest.insert(insert_at, injected.begin(), injected.end());
  return rest;
}

}  // namespace masksembles::cli
