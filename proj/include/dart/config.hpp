// Flat key = value scene configuration ('#' comments) and the helpers that
// assemble a scene from it.
#pragma once

#include <filesystem>

#include "dart/optim.hpp"

namespace dart {

struct SceneConfig {
  std::string mesh;
  double max_edge = 1.0;
  int n_ele = 12;
  int n_azi = 12;
  int points_per_patch = 100;
  int dirs_per_point = 4096;
  int gi_samples = 10000;
  int n_ray = 10000;
  int T = 320;
  double gamma = 1e-3;
  int n_order = 40;
  bool fast_f32 = false;  // 32-bit render solve, relaxed tolerances
  std::string variant = "np";
  std::string components = "reflection-only";
  bool shared_parameters = false;
  int n_kappa = 128;
  int steps = 25000;
  double lr = 1e-2;
  double weight_decay = 1e-2;
  int val_interval = 0;
  // regularizer weights (unit by default)
  double w_nmse = 1.0;
  double w_edc = 1.0;
  double w_object = 1.0;
  double w_symmetry = 1.0;
  std::uint64_t seed = 1;
  int threads = 0;  // 0 = hardware count
  std::string out_dir = ".";
  std::string cache;  // empty: <out_dir>/operators.cache (or DART_CACHE_DIR)

  SolverConfig solver() const { return SolverConfig{T, gamma, n_order, kRadianceDt, fast_f32}; }

  PrecomputeConfig precompute() const {
    PrecomputeConfig c;
    c.points_per_patch = points_per_patch;
    c.dirs_per_point = dirs_per_point;
    c.gi_samples = gi_samples;
    c.seed = seed;
    return c;
  }

  FitConfig fit() const {
    FitConfig f;
    f.steps = steps;
    f.lr = lr;
    f.weight_decay = weight_decay;
    f.val_interval = val_interval;
    f.seed = seed;
    f.weights = LossWeights{w_nmse, w_edc, w_object, w_symmetry};
    return f;
  }

  Variant variant_enum() const {
    if (variant == "np") return Variant::NP;
    if (variant == "p") return Variant::P;
    fail(cat("unknown variant '", variant, "' (expected np|p)"));
  }

  std::string cache_path() const {
    if (!cache.empty()) return cache;
    if (const char* env = std::getenv("DART_CACHE_DIR"))
      return (std::filesystem::path(env) / "operators.cache").string();
    return (std::filesystem::path(out_dir) / "operators.cache").string();
  }
};

inline SceneConfig parse_config(std::istream& in, const std::string& origin) {
  SceneConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos)
        fail(cat(origin, ":", lineno, ": expected 'key = value'"));
      continue;
    }
    auto trim = [](std::string s) {
      std::size_t a = s.find_first_not_of(" \t\r");
      if (a == std::string::npos) return std::string();
      std::size_t b = s.find_last_not_of(" \t\r");
      return s.substr(a, b - a + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    require(!key.empty() && !val.empty(), cat(origin, ":", lineno, ": empty key or value"));
    try {
      if (key == "mesh") c.mesh = val;
      else if (key == "max_edge") c.max_edge = std::stod(val);
      else if (key == "n_ele") c.n_ele = std::stoi(val);
      else if (key == "n_azi") c.n_azi = std::stoi(val);
      else if (key == "points_per_patch") c.points_per_patch = std::stoi(val);
      else if (key == "dirs_per_point") c.dirs_per_point = std::stoi(val);
      else if (key == "gi_samples") c.gi_samples = std::stoi(val);
      else if (key == "n_ray") c.n_ray = std::stoi(val);
      else if (key == "T") c.T = std::stoi(val);
      else if (key == "gamma") c.gamma = std::stod(val);
      else if (key == "n_order") c.n_order = std::stoi(val);
      else if (key == "fast_f32") c.fast_f32 = (val == "true" || val == "1");
      else if (key == "variant") c.variant = val;
      else if (key == "components") c.components = val;
      else if (key == "shared_parameters") c.shared_parameters = (val == "true" || val == "1");
      else if (key == "n_kappa") c.n_kappa = std::stoi(val);
      else if (key == "steps") c.steps = std::stoi(val);
      else if (key == "lr") c.lr = std::stod(val);
      else if (key == "weight_decay") c.weight_decay = std::stod(val);
      else if (key == "val_interval") c.val_interval = std::stoi(val);
      else if (key == "w_nmse") c.w_nmse = std::stod(val);
      else if (key == "w_edc") c.w_edc = std::stod(val);
      else if (key == "w_object") c.w_object = std::stod(val);
      else if (key == "w_symmetry") c.w_symmetry = std::stod(val);
      else if (key == "seed") c.seed = std::stoull(val);
      else if (key == "threads") c.threads = std::stoi(val);
      else if (key == "out_dir") c.out_dir = val;
      else if (key == "cache") c.cache = val;
      else fail(cat(origin, ":", lineno, ": unknown key '", key, "'"));
    } catch (const std::invalid_argument&) {
      fail(cat(origin, ":", lineno, ": cannot parse value '", val, "' for key '", key, "'"));
    }
  }
  return c;
}

inline SceneConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(cat("cannot open config file: ", path));
  return parse_config(in, path);
}

// Mesh -> patches -> grid, as configured.
struct Scene {
  PatchSet patches;
  DirectionGrid grid;
  BsdfMatrices comps;
};

inline Scene build_scene(const SceneConfig& cfg) {
  require(!cfg.mesh.empty(), "config is missing the mesh path");
  Scene s;
  TriangleMesh mesh = load_mesh(cfg.mesh);
  s.patches = subdivide(mesh, cfg.max_edge);
  s.grid = build_direction_grid(cfg.n_ele, cfg.n_azi);
  s.comps = bsdf_material_matrices(s.grid);
  return s;
}

}  // namespace dart
