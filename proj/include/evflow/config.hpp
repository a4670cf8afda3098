#pragma once

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "evflow/io_formats.hpp"
#include "evflow/parallel.hpp"
#include "evflow/pipeline.hpp"

namespace evflow {

/// Raw `key = value` settings. Later assignments override earlier ones.
using ConfigValues = std::map<std::string, std::string, std::less<>>;

/// Parses `key = value` lines; `#` starts a comment.
inline ConfigValues parse_config(std::istream& in) {
  ConfigValues values;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view body = line;
    if (auto hash = body.find('#'); hash != std::string_view::npos) body = body.substr(0, hash);
    body = detail::trim(body);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) throw ParseError(line_no, "expected `key = value`");
    const auto key = detail::trim(body.substr(0, eq));
    const auto value = detail::trim(body.substr(eq + 1));
    if (key.empty()) throw ParseError(line_no, "empty key");
    values[std::string(key)] = std::string(value);
  }
  return values;
}

inline ConfigValues parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  return parse_config(in);
}

namespace detail {

inline const std::string* find_key(const ConfigValues& v, std::string_view key) {
  auto it = v.find(key);
  return it == v.end() ? nullptr : &it->second;
}

inline const std::string& require_key(const ConfigValues& v, std::string_view key) {
  if (const auto* s = find_key(v, key)) return *s;
  throw ParameterError("missing field `" + std::string(key) + "`");
}

template <typename T>
T parse_number(std::string_view key, std::string_view s) {
  T out{};
  s = trim(s);
  if constexpr (std::is_floating_point_v<T>) {
    // from_chars for double is not available everywhere; strtod is enough here.
    std::string tmp(s);
    char* end = nullptr;
    out = static_cast<T>(std::strtod(tmp.c_str(), &end));
    if (tmp.empty() || *end != '\0')
      throw ParameterError("field `" + std::string(key) + "`: not a number: `" + tmp + "`");
  } else {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (s.empty() || ec != std::errc{} || p != s.data() + s.size())
      throw ParameterError("field `" + std::string(key) + "`: not an integer: `" +
                           std::string(s) + "`");
  }
  return out;
}

template <typename T>
std::vector<T> parse_list(std::string_view key, std::string_view s) {
  std::vector<T> out;
  while (true) {
    const auto comma = s.find(',');
    out.push_back(parse_number<T>(key, s.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

inline bool parse_bool(std::string_view key, std::string_view s) {
  s = trim(s);
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  throw ParameterError("field `" + std::string(key) + "`: not a boolean: `" + std::string(s) + "`");
}

}  // namespace detail

/// Known configuration keys; command-line flags use the same names.
inline const std::vector<std::string_view>& config_keys() {
  static const std::vector<std::string_view> keys = {
      "width", "height", "dt_us", "nd", "nf", "dsat", "transfer", "bound", "levels", "lambda",
      "iters", "gamma", "intensity_scale", "quantize", "queue_capacity", "threads"};
  return keys;
}

/// Builds a validated pipeline configuration. `width`, `height` and `dt_us`
/// are required; EVFLOW_THREADS overrides `threads`.
inline PipelineConfig pipeline_config_from(const ConfigValues& v) {
  using namespace detail;
  for (const auto& [key, _] : v) {
    bool known = false;
    for (auto k : config_keys()) known |= (k == key);
    if (!known) throw ParameterError("unknown config key `" + key + "`");
  }

  PipelineConfig cfg;
  cfg.geometry.width = parse_number<int>("width", require_key(v, "width"));
  cfg.geometry.height = parse_number<int>("height", require_key(v, "height"));
  cfg.window_us = parse_number<std::int64_t>("dt_us", require_key(v, "dt_us"));
  if (auto* s = find_key(v, "nd")) cfg.filter.denoise_threshold = parse_number<int>("nd", *s);
  if (auto* s = find_key(v, "nf")) cfg.filter.fill_threshold = parse_number<int>("nf", *s);
  if (auto* s = find_key(v, "dsat")) cfg.transfer.d_sat = parse_number<double>("dsat", *s);
  if (auto* s = find_key(v, "bound")) cfg.transfer.bound = parse_number<double>("bound", *s);
  if (auto* s = find_key(v, "transfer")) {
    auto kind = parse_transfer(*s);
    if (!kind) throw ParameterError("field `transfer`: expected invexp|linear|bounded|log, got `" + *s + "`");
    cfg.transfer.kind = *kind;
  }
  if (auto* s = find_key(v, "levels")) {
    cfg.flow.levels = parse_number<int>("levels", *s);
    // Reuse the last weight and count for extra levels unless given explicitly.
    if (cfg.flow.levels >= 1) {
      cfg.flow.regularization.resize(cfg.flow.levels, cfg.flow.regularization.back());
      cfg.flow.smooth_iterations.resize(cfg.flow.levels, cfg.flow.smooth_iterations.back());
    }
  }
  if (auto* s = find_key(v, "lambda")) cfg.flow.regularization = parse_list<double>("lambda", *s);
  if (auto* s = find_key(v, "iters")) cfg.flow.smooth_iterations = parse_list<int>("iters", *s);
  if (auto* s = find_key(v, "gamma")) cfg.flow.temporal_decay = parse_number<double>("gamma", *s);
  if (auto* s = find_key(v, "intensity_scale"))
    cfg.flow.intensity_scale = parse_number<double>("intensity_scale", *s);
  if (auto* s = find_key(v, "quantize")) cfg.quantize_surface = parse_bool("quantize", *s);
  if (auto* s = find_key(v, "queue_capacity"))
    cfg.queue_capacity = parse_number<std::size_t>("queue_capacity", *s);
  if (auto* s = find_key(v, "threads")) cfg.threads = parse_number<int>("threads", *s);
  cfg.threads = threads_from_env(cfg.threads);
  cfg.validate();
  return cfg;
}

/// Writes `cfg` back as a config file.
inline void write_config(std::ostream& out, const PipelineConfig& cfg) {
  auto join = [](const auto& xs) {
    std::ostringstream s;
    for (std::size_t i = 0; i < xs.size(); ++i) s << (i ? "," : "") << xs[i];
    return s.str();
  };
  out << "width = " << cfg.geometry.width << '\n'
      << "height = " << cfg.geometry.height << '\n'
      << "dt_us = " << cfg.window_us << '\n'
      << "nd = " << cfg.filter.denoise_threshold << '\n'
      << "nf = " << cfg.filter.fill_threshold << '\n'
      << "transfer = " << transfer_name(cfg.transfer.kind) << '\n'
      << "dsat = " << cfg.transfer.d_sat << '\n'
      << "bound = " << cfg.transfer.bound << '\n'
      << "levels = " << cfg.flow.levels << '\n'
      << "lambda = " << join(cfg.flow.regularization) << '\n'
      << "iters = " << join(cfg.flow.smooth_iterations) << '\n'
      << "gamma = " << cfg.flow.temporal_decay << '\n'
      << "intensity_scale = " << cfg.flow.intensity_scale << '\n'
      << "quantize = " << (cfg.quantize_surface ? 1 : 0) << '\n'
      << "queue_capacity = " << cfg.queue_capacity << '\n'
      << "threads = " << cfg.threads << '\n';
}

}  // namespace evflow
