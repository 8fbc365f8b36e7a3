// downpour: particle-weather augmentation and adversarial attacks on a
// built-in differentiable optical-flow estimator.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <iostream>

#include "downpour/attack.hpp"
#include "downpour/gradcheck.hpp"
#include "downpour/metrics.hpp"
#include "downpour/particle_system.hpp"
#include "downpour/renderer.hpp"
#include "downpour/report_io.hpp"
#include "downpour/scene_io.hpp"
#include "downpour/victim_flow.hpp"

namespace fs = std::filesystem;
using namespace downpour;

namespace {

struct usage_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<double> parse_csv_doubles(const std::string& s, size_t expect = 0) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stod(tok));
    } catch (...) {
      throw usage_error("cannot parse number '" + tok + "' in '" + s + "'");
    }
  }
  if (expect && out.size() != expect)
    throw usage_error("expected " + std::to_string(expect) + " comma-separated values in '" +
                      s + "'");
  return out;
}

std::string config_text(const WeatherConfig& c) {
  std::ostringstream o;
  o.precision(17);
  o << "count=" << c.count << "\n"
    << "base_size=" << c.base_size << "\n"
    << "depth_decay=" << c.depth_decay << "\n"
    << "template_kind=" << template_kind_name(c.template_kind) << "\n"
    << "base_color=" << c.base_color.x << "," << c.base_color.y << "," << c.base_color.z << "\n"
    << "jitter_hue=" << c.jitter_hue << "\n"
    << "jitter_light=" << c.jitter_light << "\n"
    << "jitter_sat=" << c.jitter_sat << "\n"
    << "blend=" << blend_name(c.blend) << "\n"
    << "transparency=" << c.transparency << "\n"
    << "constant_transparency=" << (c.constant_transparency ? 1 : 0) << "\n"
    << "motion_y=" << c.motion_y << "\n"
    << "motion_angle_jitter=" << c.motion_angle_jitter << "\n"
    << "motion_magnitude_jitter=" << c.motion_magnitude_jitter << "\n"
    << "blur_enabled=" << (c.blur_enabled ? 1 : 0) << "\n"
    << "blur_length=" << c.blur_length << "\n"
    << "blur_particles=" << c.blur_particles << "\n";
  return o.str();
}

WeatherConfig parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw usage_error("cannot open config file " + path);
  WeatherConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      bool blank = line.find_first_not_of(" \t\r") == std::string::npos;
      if (blank) continue;
      throw usage_error(path + ":" + std::to_string(lineno) + ": expected key=value");
    }
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    auto trim = [](std::string& s) {
      s.erase(0, s.find_first_not_of(" \t\r"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
    };
    trim(key);
    trim(val);
    try {
      if (key == "count") c.count = std::stoi(val);
      else if (key == "base_size") c.base_size = std::stoi(val);
      else if (key == "depth_decay") c.depth_decay = std::stod(val);
      else if (key == "template_kind") {
        if (val == "flake") c.template_kind = TemplateKind::flake;
        else if (val == "dust") c.template_kind = TemplateKind::dust;
        else throw usage_error("template_kind must be flake or dust");
      } else if (key == "base_color") {
        auto v = parse_csv_doubles(val, 3);
        c.base_color = {v[0], v[1], v[2]};
      } else if (key == "jitter_hue") c.jitter_hue = std::stod(val);
      else if (key == "jitter_light") c.jitter_light = std::stod(val);
      else if (key == "jitter_sat") c.jitter_sat = std::stod(val);
      else if (key == "blend") {
        if (val == "additive") c.blend = BlendMode::additive;
        else if (val == "meshkin") c.blend = BlendMode::meshkin;
        else throw usage_error("blend must be additive or meshkin");
      } else if (key == "transparency") c.transparency = std::stod(val);
      else if (key == "constant_transparency") c.constant_transparency = std::stoi(val) != 0;
      else if (key == "motion_y") c.motion_y = std::stod(val);
      else if (key == "motion_angle_jitter") c.motion_angle_jitter = std::stod(val);
      else if (key == "motion_magnitude_jitter") c.motion_magnitude_jitter = std::stod(val);
      else if (key == "blur_enabled") c.blur_enabled = std::stoi(val) != 0;
      else if (key == "blur_length") c.blur_length = std::stod(val);
      else if (key == "blur_particles") c.blur_particles = std::stoi(val);
      else throw usage_error("unknown config key '" + key + "'");
    } catch (const usage_error&) {
      throw;
    } catch (...) {
      throw usage_error(path + ":" + std::to_string(lineno) + ": cannot parse value '" + val +
                        "'");
    }
  }
  validate_config(c);
  return c;
}

WeatherConfig resolve_weather(const std::string& preset_name, const std::string& config_path) {
  if (!preset_name.empty() && !config_path.empty())
    throw usage_error("--preset and --config are mutually exclusive");
  if (!config_path.empty()) return parse_config_file(config_path);
  std::string name = preset_name.empty() ? "snow" : preset_name;
  try {
    return preset(name);
  } catch (const std::runtime_error& e) {
    throw usage_error(e.what());
  }
}

void write_manifest(const fs::path& out_dir, const std::string& command,
                    const nlohmann::json& args, double seconds) {
  nlohmann::json j;
  j["version"] = 1;
  j["command"] = command;
  j["args"] = args;
  j["seconds"] = seconds;
  std::ofstream f(out_dir / "manifest.json");
  f << j.dump(2) << "\n";
}

int cmd_synth(const std::string& out_dir, int width, int height, uint64_t seed,
              const std::string& translate, const std::string& planes) {
  auto t = parse_csv_doubles(translate, 3);
  auto zs = parse_csv_doubles(planes);
  auto t0 = std::chrono::steady_clock::now();
  SynthScene sc = synth_scene(width, height, seed, {t[0], t[1], t[2]}, zs);
  fs::create_directories(out_dir);
  save_scene(out_dir, sc.scene);
  write_flo((fs::path(out_dir) / "gt.flo").string(), sc.gt_flow);
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(out_dir, "synth",
                 {{"out", out_dir},
                  {"width", width},
                  {"height", height},
                  {"seed", seed},
                  {"translate", translate},
                  {"planes", planes}},
                 secs);
  std::cout << "wrote scene to " << out_dir << "\n";
  return 0;
}

int cmd_augment(const std::string& scene_dir, const std::string& preset_name,
                const std::string& config_path, uint64_t seed, const std::string& out_dir,
                bool debug_particles) {
  WeatherConfig weather = resolve_weather(preset_name, config_path);
  auto t0 = std::chrono::steady_clock::now();
  SceneBundle scene = load_scene(scene_dir);

  ParticleSet ps = sample_particles(scene, weather, seed);
  expand_motion_blur(ps, scene);
  RenderParams rp = RenderParams::for_render(weather.blend);
  RenderOutput ro = render(scene, ps, rp);

  FlowEstimatorConfig victim;
  FlowField benign = estimate_flow(scene.frame1, scene.frame2, victim).flow;
  FlowField attacked = estimate_flow(ro.aug1, ro.aug2, victim).flow;
  double robustness = aee(benign, attacked);

  fs::create_directories(out_dir);
  fs::path out(out_dir);
  save_ppm((out / "aug1.ppm").string(), ro.aug1);
  save_ppm((out / "aug2.ppm").string(), ro.aug2);
  write_flo((out / "flow_benign.flo").string(), benign);
  write_flo((out / "flow_attacked.flo").string(), attacked);
  save_snapshot((out / "particles.dpsn").string(), ps);
  if (debug_particles)
    write_particle_debug_csv((out / "particles_debug.csv").string(), scene, ps, rp);

  nlohmann::json metrics;
  metrics["version"] = 1;
  metrics["aee_robustness"] = robustness;
  std::ofstream mf(out / "metrics.json");
  mf << metrics.dump(2) << "\n";

  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(out, "augment",
                 {{"scene", scene_dir},
                  {"preset", preset_name},
                  {"config", config_path},
                  {"seed", seed},
                  {"out", out_dir}},
                 secs);
  std::cout << "aee_robustness " << robustness << "\n";
  return 0;
}

VariableMask parse_vars(const std::string& vars) {
  VariableMask m;
  m.dp1 = m.dp2 = m.color = m.transparency = false;
  std::stringstream ss(vars);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok == "p1") m.dp1 = true;
    else if (tok == "p2") m.dp2 = true;
    else if (tok == "col") m.color = true;
    else if (tok == "transp") m.transparency = true;
    else throw usage_error("unknown variable '" + tok + "' (valid: p1,p2,col,transp)");
  }
  if (!m.any()) throw usage_error("variable mask must not be empty");
  return m;
}

int cmd_attack(const std::string& scene_dir, const std::string& preset_name,
               const std::string& config_path, const std::string& vars, int steps, double lr,
               double alpha, const std::string& target, uint64_t seed,
               const std::string& out_dir) {
  WeatherConfig weather = resolve_weather(preset_name, config_path);
  AttackConfig cfg;
  cfg.mask = parse_vars(vars);
  cfg.steps = steps;
  cfg.learning_rate = lr;
  cfg.alpha1 = cfg.alpha2 = alpha;

  SceneBundle scene = load_scene(scene_dir);
  if (target != "zero") {
    cfg.target = read_flo(target);
    if (cfg.target.width() != scene.width() || cfg.target.height() != scene.height())
      throw usage_error("target flow dimensions do not match the scene");
  }

  AttackReport rep = run_attack(scene, weather, cfg, seed);

  fs::create_directories(out_dir);
  fs::path out(out_dir);
  save_report((out / "report.json").string(), rep);
  save_ppm((out / "aug1_best.ppm").string(), rep.best_aug1);
  save_ppm((out / "aug2_best.ppm").string(), rep.best_aug2);
  write_flo((out / "flow_benign.flo").string(), rep.benign_flow);
  write_flo((out / "flow_attacked.flo").string(), rep.best_attacked_flow);
  save_ppm((out / "flow_benign_color.ppm").string(), flow_to_color(rep.benign_flow));
  save_ppm((out / "flow_attacked_color.ppm").string(), flow_to_color(rep.best_attacked_flow));
  save_snapshot((out / "particles.dpsn").string(), rep.best_particles);
  write_manifest(out, "attack",
                 {{"scene", scene_dir},
                  {"preset", preset_name},
                  {"config", config_path},
                  {"vars", vars},
                  {"steps", steps},
                  {"lr", lr},
                  {"alpha", alpha},
                  {"target", target},
                  {"seed", seed},
                  {"out", out_dir}},
                 rep.seconds);
  std::cout << "initial aee_robustness " << rep.initial_aee_robust << "\n"
            << "final   aee_robustness " << rep.final_aee_robust << "\n"
            << "best    aee_robustness " << rep.best_aee_robust << " (step " << rep.best_step
            << ")\n"
            << "loss " << rep.initial_loss << " -> " << rep.final_loss << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& size, int particles, uint64_t seed) {
  auto x = size.find('x');
  if (x == std::string::npos) throw usage_error("--size must look like WxH, e.g. 48x32");
  int width = std::stoi(size.substr(0, x));
  int height = std::stoi(size.substr(x + 1));
  if (width > 128 || height > 128)
    throw usage_error("gradcheck sizes above 128x128 are refused to keep runtime bounded");
  GradTolerance tol;
  GradCheckReport r = run_gradcheck(width, height, particles, seed, tol);
  auto line = [&](const char* name, double v) {
    std::cout << (v <= tol.rel_tol ? "[PASS] " : "[FAIL] ") << name
              << " max rel error " << v << " (tol " << tol.rel_tol << ")\n";
  };
  line("renderer additive ", r.renderer_additive);
  line("renderer meshkin  ", r.renderer_meshkin);
  line("victim flow       ", r.victim);
  line("attack end-to-end ", r.end_to_end);
  return r.pass ? 0 : 1;
}

int cmd_eval(const std::string& benign_path, const std::string& attacked_path) {
  FlowField benign = read_flo(benign_path);
  FlowField attacked = read_flo(attacked_path);
  std::cout << aee(benign, attacked) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"particle weather augmentation and adversarial optical-flow attacks"};
  app.require_subcommand(0, 1);

  std::string dump_preset;
  app.add_option("--dump-preset", dump_preset, "print a built-in preset as key=value and exit");

  auto* synth = app.add_subcommand("synth", "generate a synthetic two-frame scene");
  std::string s_out = "scene";
  int s_width = 128, s_height = 96;
  uint64_t s_seed = 0;
  std::string s_translate = "0.3,0,0", s_planes = "12,28";
  synth->add_option("--out", s_out, "output scene directory")->required();
  synth->add_option("--width", s_width, "image width (>= 16)");
  synth->add_option("--height", s_height, "image height (>= 16)");
  synth->add_option("--seed", s_seed, "texture seed");
  synth->add_option("--translate", s_translate, "camera-2 translation x,y,z in meters");
  synth->add_option("--planes", s_planes, "comma-separated plane depths in meters");

  auto* augment = app.add_subcommand("augment", "render random weather and measure robustness");
  std::string a_scene, a_preset, a_config, a_out = "augment_out";
  uint64_t a_seed = 0;
  bool a_debug = false;
  augment->add_option("scene", a_scene, "scene directory")->required();
  augment->add_option("--preset", a_preset, "weather preset name");
  augment->add_option("--config", a_config, "weather config file (key=value)");
  augment->add_option("--seed", a_seed, "sampling seed");
  augment->add_option("--out", a_out, "output directory");
  augment->add_flag("--debug-particles", a_debug, "write per-particle CSV dump");

  auto* attack = app.add_subcommand("attack", "adversarially optimize weather particles");
  std::string t_scene, t_preset, t_config, t_vars = "p1,p2,col,transp", t_target = "zero";
  std::string t_out = "attack_out";
  int t_steps = 750;
  double t_lr = 1e-5, t_alpha = 1000;
  uint64_t t_seed = 0;
  attack->add_option("scene", t_scene, "scene directory")->required();
  attack->add_option("--preset", t_preset, "weather preset name");
  attack->add_option("--config", t_config, "weather config file");
  attack->add_option("--vars", t_vars, "optimized variables: subset of p1,p2,col,transp");
  attack->add_option("--steps", t_steps, "Adam steps");
  attack->add_option("--lr", t_lr, "Adam learning rate");
  attack->add_option("--alpha", t_alpha, "offset penalty weight (alpha1 = alpha2)");
  attack->add_option("--target", t_target, "'zero' or a .flo file");
  attack->add_option("--seed", t_seed, "sampling seed");
  attack->add_option("--out", t_out, "output directory");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::string g_size = "48x32";
  int g_particles = 20;
  uint64_t g_seed = 0;
  gradcheck->add_option("--size", g_size, "scene size WxH (max 128x128)");
  gradcheck->add_option("--particles", g_particles, "particle count");
  gradcheck->add_option("--seed", g_seed, "seed");

  auto* eval = app.add_subcommand("eval", "AEE between two externally produced flows");
  std::string e_benign, e_attacked;
  eval->add_option("--benign", e_benign, "benign .flo")->required();
  eval->add_option("--attacked", e_attacked, "attacked .flo")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (!dump_preset.empty()) {
      try {
        std::cout << config_text(preset(dump_preset));
      } catch (const std::runtime_error& e) {
        throw usage_error(e.what());
      }
      return 0;
    }
    if (synth->parsed())
      return cmd_synth(s_out, s_width, s_height, s_seed, s_translate, s_planes);
    if (augment->parsed())
      return cmd_augment(a_scene, a_preset, a_config, a_seed, a_out, a_debug);
    if (attack->parsed())
      return cmd_attack(t_scene, t_preset, t_config, t_vars, t_steps, t_lr, t_alpha, t_target,
                        t_seed, t_out);
    if (gradcheck->parsed()) return cmd_gradcheck(g_size, g_particles, g_seed);
    if (eval->parsed()) return cmd_eval(e_benign, e_attacked);
    std::cout << app.help();
    return 2;
  } catch (const usage_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
