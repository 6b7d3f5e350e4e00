#pragma once

#include <cstdlib>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "echokit/common.hpp"
#include "echokit/session_io.hpp"

namespace echokit {

// Every tunable of the pipeline as a flat key=value document. Layering is
// defaults < config file < command-line overrides; unknown keys are rejected.
struct RunConfig {
  double vad_threshold = 7.0;
  double eta_threshold = 0.5;
  double eta_window_s = 0.16;
  double merge_gap_s = 0.1;
  double min_speech_s = 0.05;
  double collar_s = 0.1;
  int context = 4;
  std::string context_mode = "symmetric";  // symmetric | left | total
  double alpha = 0.6;
  std::string alpha_grid = "0.6,0.7";
  double frame_shift_s = 0.010;
  double frame_length_s = 0.025;

  int states_per_token = 5;
  int max_components = 4;
  int em_iterations = 10;
  int grow_interval = 2;
  double self_loop_init = 0.9;
  double var_floor_scale = 1e-3;
  double prob_floor = 1e-8;

  std::string cnn_preset = "small";  // small | full
  double learning_rate = 0.05;
  int train_steps = 200;
  int batch_size = 8;

  double synth_duration_s = 8.0;
  int synth_scanlines = 63;
  int synth_echoes = 412;
  double synth_fps = 121.2;
  double synth_sigma_child = 0.10;
  double synth_sigma_therapist = 0.01;
  int synth_feature_dim = 3;
  bool synth_render_audio = false;
  double synth_min_turn_s = 0.4;
  double synth_mean_turn_s = 0.9;
  double synth_min_gap_s = 0.15;
  double synth_mean_gap_s = 0.35;

  struct KeySpec {
    const char *name;
    const char *range;
    std::function<std::string(const RunConfig &)> get;
    std::function<void(RunConfig &, const std::string &)> set;
  };

  static const std::vector<KeySpec> &keys();

  void apply(const std::string &key, const std::string &value) {
    for (const auto &spec : keys()) {
      if (key == spec.name) {
        spec.set(*this, value);
        return;
      }
    }
    throw ValidationError("unknown config key '" + key + "'");
  }

  void apply_file(const std::string &path) {
    for (const auto &[k, v] : load_params(path)) apply(k, v);
  }

  // "key=value" override, the flag-level layer
  void apply_override(const std::string &assignment) {
    std::size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ValidationError("override '" + assignment + "' is not of the form key=value");
    apply(assignment.substr(0, eq), assignment.substr(eq + 1));
  }

  std::vector<double> alpha_values() const {
    std::vector<double> out;
    if (!alpha_grid.empty() && alpha_grid.back() == ',')
      throw ParseError("alpha_grid: trailing comma in '" + alpha_grid + "'");
    std::stringstream ss(alpha_grid);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      char *end = nullptr;
      double a = std::strtod(tok.c_str(), &end);
      if (end == tok.c_str() || *end != '\0')
        throw ParseError("alpha_grid: not a number: '" + tok + "'");
      out.push_back(a);
    }
    if (out.empty()) throw ValidationError("alpha_grid: empty");
    return out;
  }

  void validate() const {
    auto require = [](bool ok, const std::string &msg) {
      if (!ok) throw ValidationError("config: " + msg);
    };
    require(std::isfinite(vad_threshold), "vad_threshold must be finite");
    require(eta_threshold >= 0 && eta_threshold <= 1, "eta_threshold must be in [0,1]");
    require(eta_window_s > 0, "eta_window_s must be > 0");
    require(merge_gap_s >= 0, "merge_gap_s must be >= 0");
    require(min_speech_s >= 0, "min_speech_s must be >= 0");
    require(collar_s >= 0, "collar_s must be >= 0");
    require(context >= 0, "context must be >= 0");
    require(context_mode == "symmetric" || context_mode == "left" || context_mode == "total",
            "context_mode must be symmetric, left, or total");
    require(alpha >= 0 && alpha <= 1, "alpha must be in [0,1]");
    for (double a : alpha_values())
      require(a >= 0 && a <= 1, "alpha_grid values must be in [0,1]");
    require(frame_shift_s > 0, "frame_shift_s must be > 0");
    require(frame_length_s >= frame_shift_s, "frame_length_s must be >= frame_shift_s");
    require(states_per_token >= 1, "states_per_token must be >= 1");
    require(max_components >= 1, "max_components must be >= 1");
    require(em_iterations >= 1, "em_iterations must be >= 1");
    require(grow_interval >= 1, "grow_interval must be >= 1");
    require(self_loop_init > 0 && self_loop_init < 1, "self_loop_init must be in (0,1)");
    require(var_floor_scale > 0, "var_floor_scale must be > 0");
    require(prob_floor > 0 && prob_floor < 1, "prob_floor must be in (0,1)");
    require(cnn_preset == "small" || cnn_preset == "full", "cnn_preset must be small or full");
    require(learning_rate > 0, "learning_rate must be > 0");
    require(train_steps >= 1, "train_steps must be >= 1");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(synth_duration_s > 0, "synth_duration_s must be > 0");
    require(synth_scanlines > 0 && synth_echoes > 0, "synth dimensions must be > 0");
    require(synth_fps > 0, "synth_fps must be > 0");
    require(synth_sigma_child > synth_sigma_therapist && synth_sigma_therapist >= 0,
            "need synth_sigma_child > synth_sigma_therapist >= 0");
    require(synth_feature_dim > 0, "synth_feature_dim must be > 0");
    require(synth_min_turn_s >= 0.01 && synth_mean_turn_s >= synth_min_turn_s,
            "need synth_mean_turn_s >= synth_min_turn_s >= 0.01");
    require(synth_min_gap_s >= 0.01 && synth_mean_gap_s >= synth_min_gap_s,
            "need synth_mean_gap_s >= synth_min_gap_s >= 0.01");
  }

  // one "key=value  (range)" line per key, for --help output
  static std::string describe_keys() {
    RunConfig defaults;
    std::ostringstream os;
    os << "config keys (defaults shown; set via config file or --set key=value):\n";
    for (const auto &spec : keys())
      os << "  " << spec.name << " = " << spec.get(defaults) << "  (" << spec.range << ")\n";
    return os.str();
  }
};

namespace detail {

inline double config_double(const std::string &key, const std::string &value) {
  char *end = nullptr;
  double v = std::strtod(value.c_str(), &end);
  if (end == value.c_str() || *end != '\0')
    throw ParseError("config key '" + key + "': not a number: '" + value + "'");
  return v;
}

inline int config_int(const std::string &key, const std::string &value) {
  char *end = nullptr;
  long v = std::strtol(value.c_str(), &end, 10);
  if (end == value.c_str() || *end != '\0')
    throw ParseError("config key '" + key + "': not an integer: '" + value + "'");
  return static_cast<int>(v);
}

inline bool config_bool(const std::string &key, const std::string &value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ParseError("config key '" + key + "': not a boolean: '" + value + "'");
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace detail

inline const std::vector<RunConfig::KeySpec> &RunConfig::keys() {
  auto d = [](double RunConfig::*field, const char *name, const char *range) {
    return KeySpec{name, range,
                   [field](const RunConfig &c) { return detail::format_double(c.*field); },
                   [field, name](RunConfig &c, const std::string &v) {
                     c.*field = detail::config_double(name, v);
                   }};
  };
  auto i = [](int RunConfig::*field, const char *name, const char *range) {
    return KeySpec{name, range,
                   [field](const RunConfig &c) { return std::to_string(c.*field); },
                   [field, name](RunConfig &c, const std::string &v) {
                     c.*field = detail::config_int(name, v);
                   }};
  };
  auto b = [](bool RunConfig::*field, const char *name) {
    return KeySpec{name, "true|false",
                   [field](const RunConfig &c) { return c.*field ? "true" : "false"; },
                   [field, name](RunConfig &c, const std::string &v) {
                     c.*field = detail::config_bool(name, v);
                   }};
  };
  auto s = [](std::string RunConfig::*field, const char *name, const char *range) {
    return KeySpec{name, range, [field](const RunConfig &c) { return c.*field; },
                   [field](RunConfig &c, const std::string &v) { c.*field = v; }};
  };
  static const std::vector<KeySpec> specs = {
      d(&RunConfig::vad_threshold, "vad_threshold", "finite"),
      d(&RunConfig::eta_threshold, "eta_threshold", "[0,1]"),
      d(&RunConfig::eta_window_s, "eta_window_s", "> 0"),
      d(&RunConfig::merge_gap_s, "merge_gap_s", ">= 0"),
      d(&RunConfig::min_speech_s, "min_speech_s", ">= 0"),
      d(&RunConfig::collar_s, "collar_s", ">= 0"),
      i(&RunConfig::context, "context", ">= 0"),
      s(&RunConfig::context_mode, "context_mode", "symmetric|left|total"),
      d(&RunConfig::alpha, "alpha", "[0,1]"),
      s(&RunConfig::alpha_grid, "alpha_grid", "comma list in [0,1]"),
      d(&RunConfig::frame_shift_s, "frame_shift_s", "> 0"),
      d(&RunConfig::frame_length_s, "frame_length_s", ">= frame_shift_s"),
      i(&RunConfig::states_per_token, "states_per_token", ">= 1"),
      i(&RunConfig::max_components, "max_components", ">= 1"),
      i(&RunConfig::em_iterations, "em_iterations", ">= 1"),
      i(&RunConfig::grow_interval, "grow_interval", ">= 1"),
      d(&RunConfig::self_loop_init, "self_loop_init", "(0,1)"),
      d(&RunConfig::var_floor_scale, "var_floor_scale", "> 0"),
      d(&RunConfig::prob_floor, "prob_floor", "(0,1)"),
      s(&RunConfig::cnn_preset, "cnn_preset", "small|full"),
      d(&RunConfig::learning_rate, "learning_rate", "> 0"),
      i(&RunConfig::train_steps, "train_steps", ">= 1"),
      i(&RunConfig::batch_size, "batch_size", ">= 1"),
      d(&RunConfig::synth_duration_s, "synth_duration_s", "> 0"),
      i(&RunConfig::synth_scanlines, "synth_scanlines", "> 0"),
      i(&RunConfig::synth_echoes, "synth_echoes", "> 0"),
      d(&RunConfig::synth_fps, "synth_fps", "> 0"),
      d(&RunConfig::synth_sigma_child, "synth_sigma_child", "> synth_sigma_therapist"),
      d(&RunConfig::synth_sigma_therapist, "synth_sigma_therapist", ">= 0"),
      i(&RunConfig::synth_feature_dim, "synth_feature_dim", "> 0"),
      b(&RunConfig::synth_render_audio, "synth_render_audio"),
      d(&RunConfig::synth_min_turn_s, "synth_min_turn_s", ">= 0.01"),
      d(&RunConfig::synth_mean_turn_s, "synth_mean_turn_s", ">= synth_min_turn_s"),
      d(&RunConfig::synth_min_gap_s, "synth_min_gap_s", ">= 0.01"),
      d(&RunConfig::synth_mean_gap_s, "synth_mean_gap_s", ">= synth_min_gap_s"),
  };
  return specs;
}

}  // namespace echokit
