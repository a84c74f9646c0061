// dart: acoustic radiance transfer simulator and material estimator.
//
//   dart precompute --config scene.cfg
//   dart render     --config scene.cfg --checkpoint ckpt.bin --manifest pairs.txt
//   dart fit        --config scene.cfg --manifest train.txt
//   dart eval       --config scene.cfg --checkpoint ckpt.bin --manifest test.txt

#include <chrono>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "dart/config.hpp"
#include "dart/metrics.hpp"

namespace fs = std::filesystem;
using namespace dart;

namespace {

// Outputs created by the running command; removed again if it fails partway.
std::vector<std::string> g_outputs;

void note_output(const std::string& path) { g_outputs.push_back(path); }

void remove_partial_outputs() {
  for (const auto& p : g_outputs) {
    std::error_code ec;
    fs::remove(p, ec);
  }
}

struct CommonArgs {
  std::string config_path;
  std::int64_t seed_override = -1;
  int threads = 0;
};

SceneConfig load_scene_config(const CommonArgs& args) {
  SceneConfig cfg = load_config(args.config_path);
  if (args.seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed_override);
  if (args.threads > 0) cfg.threads = args.threads;
  set_thread_count(cfg.threads > 0 ? cfg.threads
                                   : static_cast<int>(std::thread::hardware_concurrency()));
  fs::create_directories(cfg.out_dir);
  return cfg;
}

MaterialModel model_for(const SceneConfig& cfg, const Scene& scene) {
  return make_material_model(cfg.variant_enum(), scene.patches, scene.grid.n_dir(),
                             ComponentMask::parse(cfg.components), cfg.shared_parameters,
                             cfg.n_kappa);
}

MaterialModel load_model_checked(const std::string& path, const Scene& scene) {
  MaterialModel m = load_checkpoint(path);
  require(m.n_pat == scene.patches.size(),
          cat("checkpoint has ", m.n_pat, " patches, scene has ", scene.patches.size()));
  require(m.n_dir == scene.grid.n_dir(),
          cat("checkpoint has ", m.n_dir, " direction bins, scene has ", scene.grid.n_dir()));
  return m;
}

int cmd_precompute(const CommonArgs& args) {
  SceneConfig cfg = load_scene_config(args);
  Scene scene = build_scene(cfg);
  auto t0 = std::chrono::steady_clock::now();
  TransportOperators ops = precompute_transport(scene.patches, scene.grid, cfg.precompute());
  auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::string path = cfg.cache_path();
  note_output(path);
  save_cache(path, ops);

  ReductionMap map = build_reduction(ops.visibility, {}, {});
  MaterialModel model = model_for(cfg, scene);
  SparseOperator mat = realize_global(model, scene.comps, map);
  std::cout << "n_pat " << ops.n_pat << "\n"
            << "n_dir " << ops.n_dir() << "\n"
            << "n_rad " << ops.n_rad() << "\n"
            << "n_rad_reduced " << map.n_red << " (" << static_cast<double>(map.n_red) / ops.n_rad()
            << " retained)\n"
            << "nnz_visibility " << ops.visibility.nnz() << "\n"
            << "nnz_material " << mat.nnz() << "\n"
            << "cache " << path << "\n"
            << "wall_time_s " << dt << "\n";
  return 0;
}

std::vector<Measurement> pairs_from_args(const SceneConfig&, const std::string& manifest,
                                         const std::vector<double>& src,
                                         const std::vector<double>& rcv) {
  if (!manifest.empty()) return read_manifest(manifest);
  require(src.size() == 3 && rcv.size() == 3,
          "either --manifest or both --src x,y,z and --rcv x,y,z are required");
  Measurement m;
  m.id = "pair0";
  m.src.pos = {src[0], src[1], src[2]};
  m.rcv.pos = {rcv[0], rcv[1], rcv[2]};
  return {m};
}

void write_edc_csv(const std::string& path, const Echogram& eg) {
  std::ofstream out(path);
  if (!out) fail(cat("cannot write EDC dump: ", path));
  auto db = detail::edc_db(eg);
  out << "n,edc_db\n";
  for (std::size_t n = 0; n < db.size(); ++n) out << n << "," << db[n] << "\n";
}

int cmd_render(const CommonArgs& args, const std::string& checkpoint, const std::string& manifest,
               const std::vector<double>& src, const std::vector<double>& rcv, bool oracle,
               bool edc_dump, const std::string& dump_alpha) {
  SceneConfig cfg = load_scene_config(args);
  Scene scene = build_scene(cfg);
  TransportOperators ops = load_cache(cfg.cache_path());
  require(ops.n_pat == scene.patches.size(), "cache does not match the configured scene");
  MaterialModel model =
      checkpoint.empty() ? model_for(cfg, scene) : load_model_checked(checkpoint, scene);
  RenderInputs in{&scene.patches, &scene.grid, &ops, &scene.comps};

  auto ms = pairs_from_args(cfg, manifest, src, rcv);
  for (auto& m : ms) {
    m.src.n_ray = cfg.n_ray;
    m.rcv.n_ray = cfg.n_ray;
    Echogram eg = render(in, model, m.src, m.rcv, cfg.solver(), cfg.seed);
    std::string out_path = (fs::path(cfg.out_dir) / (m.id + ".csv")).string();
    note_output(out_path);
    write_echogram_csv(out_path, eg);
    if (edc_dump) {
      std::string edc_path = (fs::path(cfg.out_dir) / (m.id + "_edc.csv")).string();
      note_output(edc_path);
      write_edc_csv(edc_path, eg);
    }
    if (oracle) {
      Echogram ref = echogram_oracle(in, model, m.src, m.rcv, cfg.solver(), cfg.seed);
      std::string ref_path = (fs::path(cfg.out_dir) / (m.id + "_oracle.csv")).string();
      note_output(ref_path);
      write_echogram_csv(ref_path, ref);
    }
    std::cout << m.id << " energy " << eg.energy() << "\n";
  }
  if (!dump_alpha.empty()) {
    note_output(dump_alpha);
    export_alpha_text(dump_alpha, model, scene.patches);
  }
  return 0;
}

int cmd_fit(const CommonArgs& args, const std::string& manifest, const std::string& val_manifest,
            const std::string& variant, const std::string& components, int steps) {
  SceneConfig cfg = load_scene_config(args);
  if (!variant.empty()) cfg.variant = variant;
  if (!components.empty()) cfg.components = components;
  if (steps >= 0) cfg.steps = steps;
  Scene scene = build_scene(cfg);
  TransportOperators ops = load_cache(cfg.cache_path());
  require(ops.n_pat == scene.patches.size(), "cache does not match the configured scene");
  RenderInputs in{&scene.patches, &scene.grid, &ops, &scene.comps};
  MaterialModel model = model_for(cfg, scene);

  auto train_rows = read_manifest(manifest);
  require(!train_rows.empty(), "training manifest is empty");
  auto val_rows = val_manifest.empty() ? train_rows : read_manifest(val_manifest);
  for (auto& r : train_rows) {
    r.src.n_ray = cfg.n_ray;
    r.rcv.n_ray = cfg.n_ray;
  }
  for (auto& r : val_rows) {
    r.src.n_ray = cfg.n_ray;
    r.rcv.n_ray = cfg.n_ray;
  }

  std::vector<Measurement> all = train_rows;
  all.insert(all.end(), val_rows.begin(), val_rows.end());
  std::vector<PreparedPair> pairs;
  SharedSolve sh = build_shared_solve(in, pairs, all, cfg.solver(), model.n_kappa(),
                                      model.lambda, cfg.seed);
  for (std::size_t i = 0; i < all.size(); ++i) {
    pairs[i].truth = read_echogram_csv(all[i].echogram_path);
    pairs[i].truth.e.resize(cfg.T, 0.0);  // pad or truncate to the solver window
  }
  std::vector<PreparedPair> train(pairs.begin(), pairs.begin() + train_rows.size());
  std::vector<PreparedPair> val(pairs.begin() + train_rows.size(), pairs.end());

  FitResult res = fit(in, model, sh, train, val, cfg.solver(), cfg.fit());

  std::string best_path = (fs::path(cfg.out_dir) / "checkpoint_best.bin").string();
  std::string final_path = (fs::path(cfg.out_dir) / "checkpoint_final.bin").string();
  std::string log_path = (fs::path(cfg.out_dir) / "training_log.csv").string();
  std::string alpha_path = (fs::path(cfg.out_dir) / "alpha.txt").string();
  note_output(best_path);
  note_output(final_path);
  note_output(log_path);
  note_output(alpha_path);
  save_checkpoint(best_path, res.best);
  save_checkpoint(final_path, res.final);
  write_training_log(log_path, res.log);
  export_alpha_text(alpha_path, res.best, scene.patches);
  std::cout << "steps " << cfg.steps << "\n"
            << "initial_total " << res.initial_total << "\n"
            << "final_total " << res.final_total << "\n"
            << "best_val_l1 " << res.best_val << " at step " << res.best_step << "\n"
            << "checkpoint " << best_path << "\n";
  return 0;
}

Echogram nearest_neighbor_predict(const Measurement& query,
                                  const std::vector<Measurement>& train,
                                  const std::vector<Echogram>& train_e) {
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_i = 0;
  for (std::size_t i = 0; i < train.size(); ++i) {
    double d = norm(query.src.pos - train[i].src.pos) + norm(query.rcv.pos - train[i].rcv.pos);
    if (d < best) {
      best = d;
      best_i = i;
    }
  }
  return train_e[best_i];
}

Echogram linear_interp_predict(const Measurement& query, const std::vector<Measurement>& train,
                               const std::vector<Echogram>& train_e) {
  // Inverse-distance weighting over all training measurements.
  double wsum = 0.0;
  Echogram out;
  out.e.assign(train_e[0].e.size(), 0.0);
  for (std::size_t i = 0; i < train.size(); ++i) {
    double d = norm(query.src.pos - train[i].src.pos) + norm(query.rcv.pos - train[i].rcv.pos);
    double w = 1.0 / (d + 1e-6);
    wsum += w;
    for (std::size_t n = 0; n < out.e.size(); ++n) out.e[n] += w * train_e[i].e[n];
  }
  for (double& v : out.e) v /= wsum;
  return out;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint, const std::string& manifest,
             const std::string& train_manifest, const std::string& out_name) {
  SceneConfig cfg = load_scene_config(args);
  Scene scene = build_scene(cfg);
  TransportOperators ops = load_cache(cfg.cache_path());
  MaterialModel model =
      checkpoint.empty() ? model_for(cfg, scene) : load_model_checked(checkpoint, scene);
  RenderInputs in{&scene.patches, &scene.grid, &ops, &scene.comps};

  auto rows = read_manifest(manifest);
  require(!rows.empty(), "test manifest is empty");
  std::vector<Measurement> train;
  std::vector<Echogram> train_e;
  if (!train_manifest.empty()) {
    train = read_manifest(train_manifest);
    for (const auto& r : train) train_e.push_back(read_echogram_csv(r.echogram_path));
  }

  std::string out_path = (fs::path(cfg.out_dir) / out_name).string();
  note_output(out_path);
  std::ofstream out(out_path);
  if (!out) fail(cat("cannot write metrics: ", out_path));
  out << "method,id,L1,T60,EDT,C50\n";

  struct Avg {
    double l1 = 0, t60 = 0, edt = 0, c50 = 0;
    int n = 0, n_t60 = 0, n_edt = 0, n_c50 = 0;
  };
  std::map<std::string, Avg> avgs;
  auto emit = [&](const std::string& method, const std::string& id, const Echogram& pred,
                  const Echogram& truth) {
    MetricDistances d = compare(pred, truth);
    Avg& a = avgs[method];
    a.l1 += d.l1;
    a.n++;
    out << method << "," << id << "," << d.l1 << ",";
    if (d.t60_pct) {
      out << *d.t60_pct;
      a.t60 += *d.t60_pct;
      a.n_t60++;
    }
    out << ",";
    if (d.edt_s) {
      out << *d.edt_s;
      a.edt += *d.edt_s;
      a.n_edt++;
    }
    out << ",";
    if (d.c50_db) {
      out << *d.c50_db;
      a.c50 += *d.c50_db;
      a.n_c50++;
    }
    out << "\n";
  };

  for (auto& m : rows) {
    m.src.n_ray = cfg.n_ray;
    m.rcv.n_ray = cfg.n_ray;
    Echogram truth = read_echogram_csv(m.echogram_path);
    Echogram pred = render(in, model, m.src, m.rcv, cfg.solver(), cfg.seed);
    if (static_cast<int>(truth.e.size()) != pred.length()) truth.e.resize(pred.length(), 0.0);
    emit("dart", m.id, pred, truth);
    if (!train.empty()) {
      emit("nearest", m.id, nearest_neighbor_predict(m, train, train_e), truth);
      emit("linear", m.id, linear_interp_predict(m, train, train_e), truth);
    }
  }
  for (const auto& [method, a] : avgs) {
    out << method << ",average," << a.l1 / a.n << ",";
    if (a.n_t60) out << a.t60 / a.n_t60;
    out << ",";
    if (a.n_edt) out << a.edt / a.n_edt;
    out << ",";
    if (a.n_c50) out << a.c50 / a.n_c50;
    out << "\n";
    int excluded = (a.n - a.n_t60) + (a.n - a.n_edt) + (a.n - a.n_c50);
    if (excluded > 0)
      std::cout << method << ": " << excluded << " undefined metric value(s) excluded\n";
  }
  std::cout << "metrics " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"differentiable acoustic radiance transfer"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string checkpoint, manifest, val_manifest, train_manifest, dump_alpha;
  std::string variant, components, eval_out = "metrics.csv";
  std::vector<double> src_pos, rcv_pos;
  bool oracle = false, edc_dump = false;
  int steps = -1;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "scene configuration file")->required();
    sub->add_option("--seed", common.seed_override, "override the config seed");
    sub->add_option("--threads", common.threads, "worker thread count (default: hardware)");
  };

  CLI::App* pre = app.add_subcommand("precompute", "build and cache the transport operators");
  add_common(pre);

  CLI::App* ren = app.add_subcommand("render", "render echograms for source/receiver pairs");
  add_common(ren);
  ren->add_option("--checkpoint", checkpoint, "material checkpoint (default: initialization)");
  ren->add_option("--manifest", manifest, "measurement manifest to render");
  ren->add_option("--src", src_pos, "source position x,y,z")->delimiter(',');
  ren->add_option("--rcv", rcv_pos, "receiver position x,y,z")->delimiter(',');
  ren->add_flag("--oracle", oracle, "also write the time-domain reference echogram");
  ren->add_flag("--edc", edc_dump, "also write the energy decay curve in dB");
  ren->add_option("--dump-alpha", dump_alpha, "write per-patch reflection coefficients");

  CLI::App* fitc = app.add_subcommand("fit", "optimize materials against measured echograms");
  add_common(fitc);
  fitc->add_option("--manifest", manifest, "training manifest")->required();
  fitc->add_option("--val-manifest", val_manifest, "validation manifest (default: training set)");
  fitc->add_option("--variant", variant, "np|p (overrides config)");
  fitc->add_option("--components", components, "P-variant component set (overrides config)");
  fitc->add_option("--steps", steps, "training steps (overrides config)");

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on a test manifest");
  add_common(ev);
  ev->add_option("--checkpoint", checkpoint, "material checkpoint");
  ev->add_option("--manifest", manifest, "test manifest")->required();
  ev->add_option("--train-manifest", train_manifest,
                 "training manifest for the nearest/linear baselines");
  ev->add_option("--out", eval_out, "metrics file name (in out_dir)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (pre->parsed()) return cmd_precompute(common);
    if (ren->parsed())
      return cmd_render(common, checkpoint, manifest, src_pos, rcv_pos, oracle, edc_dump,
                        dump_alpha);
    if (fitc->parsed()) return cmd_fit(common, manifest, val_manifest, variant, components, steps);
    if (ev->parsed()) return cmd_eval(common, checkpoint, manifest, train_manifest, eval_out);
  } catch (const std::exception& e) {
    remove_partial_outputs();
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
