#pragma once

#include <json.hpp>

#include "downpour/attack.hpp"

namespace downpour {

inline const char* blend_name(BlendMode b) {
  return b == BlendMode::additive ? "additive" : "meshkin";
}

inline const char* template_kind_name(TemplateKind k) {
  return k == TemplateKind::flake ? "flake" : "dust";
}

inline nlohmann::json weather_to_json(const WeatherConfig& c) {
  return {{"count", c.count},
          {"base_size", c.base_size},
          {"depth_decay", c.depth_decay},
          {"template_kind", template_kind_name(c.template_kind)},
          {"base_color", {c.base_color.x, c.base_color.y, c.base_color.z}},
          {"jitter_hue", c.jitter_hue},
          {"jitter_light", c.jitter_light},
          {"jitter_sat", c.jitter_sat},
          {"blend", blend_name(c.blend)},
          {"transparency", c.transparency},
          {"constant_transparency", c.constant_transparency},
          {"motion_y", c.motion_y},
          {"motion_angle_jitter", c.motion_angle_jitter},
          {"motion_magnitude_jitter", c.motion_magnitude_jitter},
          {"blur_enabled", c.blur_enabled},
          {"blur_length", c.blur_length},
          {"blur_particles", c.blur_particles}};
}

inline void save_report(const std::string& path, const AttackReport& rep) {
  nlohmann::json j;
  j["version"] = 1;
  j["seed"] = rep.seed;
  j["weather"] = weather_to_json(rep.weather);
  j["learning_rate"] = rep.learning_rate;
  j["steps"] = rep.steps;
  j["alpha1"] = rep.alpha1;
  j["alpha2"] = rep.alpha2;
  j["variables"] = {{"dp1", rep.mask.dp1},
                    {"dp2", rep.mask.dp2},
                    {"color", rep.mask.color},
                    {"transparency", rep.mask.transparency}};
  j["initial_loss"] = rep.initial_loss;
  j["final_loss"] = rep.final_loss;
  j["best_loss"] = rep.best_loss;
  j["initial_aee_robustness"] = rep.initial_aee_robust;
  j["final_aee_robustness"] = rep.final_aee_robust;
  j["best_aee_robustness"] = rep.best_aee_robust;
  j["best_step"] = rep.best_step;
  j["skipped_steps"] = rep.skipped_steps;
  j["seconds"] = rep.seconds;
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& s : rep.trace)
    trace.push_back(
        {{"loss", s.loss}, {"aee_target", s.aee_target}, {"aee_robustness", s.aee_robust}});
  j["trace"] = std::move(trace);

  std::ofstream f(path);
  if (!f) throw io_error(path + ": cannot open for writing");
  f << j.dump(2) << "\n";
}

}  // namespace downpour
