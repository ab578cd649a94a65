#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "sugar/error.hpp"

namespace sugar::cli {

inline constexpr int kOk = 0;
inline constexpr int kConfigError = 2;
inline constexpr int kRuntimeError = 3;

/// Parsed JSON object from `path`, or an empty object when `path` is empty.
inline nlohmann::json read_config(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::InvalidConfig, "cannot read config " + path);
  try {
    auto j = nlohmann::json::parse(in);
    if (!j.is_object()) throw Error(ErrorKind::InvalidConfig, path + ": top level must be an object");
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, path + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path.string());
}

/// Accepts a training output dir or its checkpoints/ subdir.
inline std::filesystem::path run_dir(const std::filesystem::path& p) {
  if (p.filename() == "checkpoints" && !std::filesystem::exists(p / "checkpoints")) return p.parent_path();
  return p;
}

/// Parses argv, runs `body` and maps failures to exit codes.
inline int run(CLI::App& app, int argc, char** argv, const std::function<void()>& body) {
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }
  spdlog::set_default_logger(spdlog::stderr_color_mt("sugar"));
  if (const char* level = std::getenv("SUGAR_LOG_LEVEL")) spdlog::set_level(spdlog::level::from_str(level));
  try {
    body();
    return kOk;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return is_config_error(e.kind()) ? kConfigError : kRuntimeError;
  } catch (const nlohmann::json::exception& e) {
    spdlog::error("config: {}", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kRuntimeError;
  }
}

}  // namespace sugar::cli
