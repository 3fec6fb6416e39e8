#include "run_config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "qad/error.hpp"
#include "qad/pipeline.hpp"

namespace qad::cli {

namespace {

bool given_on_command_line(const std::vector<std::string>& args, const std::string& key) {
  const std::string flag = "--" + key;
  return std::any_of(args.begin(), args.end(), [&](const std::string& a) {
    return a == flag || a.starts_with(flag + "=");
  });
}

std::string path_digest(const std::filesystem::path& path) {
  if (!std::filesystem::is_directory(path)) return file_digest(path);
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(path)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::string listing;
  for (const auto& f : files) listing += f.filename().string() + " " + file_digest(f) + "\n";
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : listing) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

void append_options(const CLI::App& app, const std::set<std::string>& skip,
                    const std::set<std::string>& inputs, ConfigEntries& values,
                    ConfigEntries& digests) {
  for (const CLI::Option* opt : app.get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string& key = opt->get_lnames().front();
    if (skip.contains(key)) continue;
    if (opt->get_expected_min() == 0) {
      values.emplace_back(key, opt->count() > 0 && opt->as<bool>() ? "true" : "false");
      continue;
    }
    if (opt->count() == 0) {
      std::string def = opt->get_default_str();
      if (def == "{}" || def == "[]") continue;
      if (def.size() >= 2 && def.front() == '[' && def.back() == ']') {
        // List defaults are rendered as "[a,b]"; write one line per item.
        std::stringstream items(def.substr(1, def.size() - 2));
        for (std::string item; std::getline(items, item, ',');) values.emplace_back(key, item);
      } else if (!def.empty()) {
        values.emplace_back(key, def);
      }
      continue;
    }
    for (const auto& r : opt->results()) {
      values.emplace_back(key, r);
      if (inputs.contains(key)) digests.emplace_back("digest." + key, path_digest(r));
    }
  }
}

}  // namespace

std::vector<std::string> expand_config(const std::vector<std::string>& args,
                                       const std::set<std::string>& subcommands) {
  std::optional<std::string> config_path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_path = args[i + 1];
    } else if (args[i].starts_with("--config=")) {
      config_path = args[i].substr(9);
    }
  }
  if (!config_path) return args;

  std::vector<std::string> injected;
  for (const auto& [key, value] : read_config_file(*config_path)) {
    if (key == "config" || key == "command") continue;
    if (key.starts_with("digest.")) continue;
    if (given_on_command_line(args, key)) continue;
    injected.push_back("--" + key + "=" + value);
  }
  auto sub = std::find_if(args.begin() + 1, args.end(),
                          [&](const std::string& a) { return subcommands.contains(a); });
  std::vector<std::string> out(args.begin(), sub == args.end() ? args.end() : sub + 1);
  out.insert(out.end(), injected.begin(), injected.end());
  if (sub != args.end()) out.insert(out.end(), sub + 1, args.end());
  return out;
}

std::string resolved_config(const CLI::App& app, const CLI::App& sub,
                            const std::set<std::string>& skip,
                            const std::set<std::string>& inputs) {
  ConfigEntries values{{"command", sub.get_name()}};
  ConfigEntries digests;
  append_options(app, skip, inputs, values, digests);
  append_options(sub, skip, inputs, values, digests);
  values.insert(values.end(), digests.begin(), digests.end());
  return format_config(values);
}

void write_resolved_config(const std::string& text, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out.flush()) throw IoError("write failed: " + path.string());
}

}  // namespace qad::cli
