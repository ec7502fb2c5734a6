// sdfforge: synth, preprocess, train, mesh, render and eval in one binary.

#include "sdfforge/run.hpp"
#include "sdfforge/synth.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace sdfforge;

namespace {

struct Common {
  bool force = false;
  unsigned threads = 0;
  std::string config;
  std::vector<std::string> sets;
};

/// Config file first, then each --set key=value; later values win.
KvConfig merged_config(const Common &c) {
  KvConfig kv;
  if (!c.config.empty()) kv = KvConfig::load(c.config);
  for (const auto &s : c.sets) {
    const auto eq = s.find('=');
    require(eq != std::string::npos && eq > 0, ErrorKind::Config, "--set expects key=value, got '" + s + "'");
    kv.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  return kv;
}

/// Refuses to overwrite an existing output unless --force was given.
void check_output(const std::string &path, const Common &c) {
  if (fs::exists(path) && !c.force)
    throw Error(ErrorKind::Config, "output '" + path + "' exists; pass --force to overwrite");
}

void make_dir(const std::string &dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec && fs::is_directory(dir), ErrorKind::Io, "cannot create directory '" + dir + "'");
}

// ---------------------------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  long long gt_points = 100000;
};

int run_synth(const Common &c, const SynthArgs &a) {
  KvConfig kv = merged_config(c);
  const SynthSpec spec = synth_spec_from(kv);
  require(a.gt_points >= 1, ErrorKind::Config, "--gt-points must be >= 1");
  const std::vector<std::string> outputs{"points.ply", "gt.ply", "cameras.txt", "scene.cfg", "images", "masks"};
  for (const auto &o : outputs) check_output(a.out + "/" + o, c);
  make_dir(a.out + "/images");
  make_dir(a.out + "/masks");

  // Record every effective value, the seed included.
  KvConfig used = kv;
  used.set("seed", static_cast<long long>(spec.seed));
  used.set("points", static_cast<long long>(spec.n_points));
  const auto cloud = sample_scene(spec.scene, spec.n_points, spec.degradation, spec.seed);
  const auto gt = sample_scene(spec.scene, static_cast<std::size_t>(a.gt_points), DegradationSpec{}, spec.seed + 1);
  const auto cams = synth_cameras(spec);
  const auto views = render_views(spec.scene, cams);

  write_ply(a.out + "/points.ply", cloud.positions, cloud.normals);
  write_ply(a.out + "/gt.ply", gt.positions, gt.normals);
  save_cameras(a.out + "/cameras.txt", cams);
  for (std::size_t i = 0; i < cams.size(); ++i) {
    write_ppm(a.out + "/images/" + cams[i].name + ".ppm", views[i].image);
    write_pgm(a.out + "/masks/" + cams[i].name + ".pgm", views[i].mask);
  }
  write_text_file(a.out + "/scene.cfg", used.format());
  std::printf("synth: %zu points, %zu ground-truth points, %zu views -> %s\n", cloud.size(), gt.size(), cams.size(),
              a.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------------------------

struct PreprocessArgs {
  std::string data;
  std::string input;
  std::string cameras;
};

int run_preprocess(const Common &c, const PreprocessArgs &a) {
  const RunConfig rc = run_config_from(merged_config(c));
  const std::string input = a.input.empty() ? a.data + "/points.ply" : a.input;
  std::string cam_path = a.cameras;
  if (cam_path.empty() && fs::exists(a.data + "/cameras.txt")) cam_path = a.data + "/cameras.txt";
  check_output(a.data + "/processed.ply", c);
  check_output(a.data + "/boundary.txt", c);
  const auto raw = read_ply(input);
  for (const auto &w : raw.warnings) std::fprintf(stderr, "preprocess: %s: %s\n", input.c_str(), w.c_str());
  std::vector<Camera> cams;
  if (!cam_path.empty()) cams = load_cameras(cam_path);
  const auto p = preprocess_cloud(raw, cams, rc);
  make_dir(a.data);
  write_ply(a.data + "/processed.ply", p.cloud.positions, p.cloud.normals);
  if (!cams.empty()) {
    write_text_file(a.data + "/boundary.txt", format_boundary(p.boundary));
    if (cam_path != a.data + "/cameras.txt") {
      check_output(a.data + "/cameras.txt", c);
      save_cameras(a.data + "/cameras.txt", cams);
    }
  }
  std::printf("preprocess: %zu -> %zu points (spacing %s), %s normals, %zu flipped, %zu boundary points (%zu skipped)\n",
              raw.positions.size(), p.cloud.size(), format_double(p.cloud.density).c_str(),
              raw.normals.empty() ? "estimated" : "given", p.orientation.flipped, p.boundary.size(), p.boundary_skipped);
  return 0;
}

// ---------------------------------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;
  int epochs = -1;
  int stop_after = -1;
  bool resume = false;
  bool quiet = false;
};

template <class T>
void train_typed(const TrainArgs &a, const RunConfig &rc, const TrainingScene &scene) {
  const std::string log_path = a.out + "/loss.log";
  TrainState<T> state;
  std::ios::openmode mode = std::ios::out | std::ios::trunc;
  if (a.resume && fs::exists(a.out + "/trainer.state")) {
    state = load_run<T>(a.out);
    mode = std::ios::out | std::ios::app;
    std::fprintf(stderr, "train: resuming at epoch %d\n", state.epoch);
  } else {
    state = init_train_state<T>(rc.train);
  }
  std::ofstream log(log_path, mode);
  require(static_cast<bool>(log), ErrorKind::Io, "cannot open " + log_path);
  const int total = rc.train.epochs;
  const int report = std::max(1, total / 10);
  TrainHooks hooks;
  hooks.on_step = [&](const StepRecord &r) {
    log << format_log_record(r) << '\n';
    if (!a.quiet && r.iteration == 0 && (r.epoch % report == 0 || r.epoch + 1 == total))
      std::fprintf(stderr, "train: epoch %d/%d total=%s eikonal=%s\n", r.epoch + 1, total,
                   format_double(r.terms.total).c_str(), format_double(r.terms.eikonal).c_str());
  };
  hooks.on_checkpoint = [&](int) {
    log.flush();
    save_run(a.out, state);
  };
  if (a.stop_after >= 0) hooks.stop_after = [&](int done) { return done >= a.stop_after; };
  train(state, scene, rc.train, hooks);
  log.flush();
  require(static_cast<bool>(log), ErrorKind::Io, "failed writing " + log_path);
  save_run(a.out, state);
}

int run_train(const Common &c, const TrainArgs &a) {
  KvConfig kv = merged_config(c);
  if (a.epochs >= 0) kv.set("epochs", a.epochs);
  RunConfig rc = run_config_from(kv);
  const std::string data = a.data.empty() ? rc.data_dir : a.data;
  const std::string out = a.out.empty() ? rc.run_dir : a.out;
  require(!data.empty(), ErrorKind::Config, "train needs --data (or data_dir in the config)");
  require(!out.empty(), ErrorKind::Config, "train needs --out (or run_dir in the config)");
  rc.data_dir = data;
  rc.run_dir = out;
  TrainArgs args = a;
  args.out = out;
  const bool resuming = a.resume && fs::exists(out + "/trainer.state");
  if (!resuming)
    for (const char *f : {"run.cfg", "transform.txt", "sdf.ckpt", "slf.ckpt", "trainer.state", "loss.log"})
      check_output(out + "/" + f, c);
  const auto dataset = load_data_dir(data);
  auto [scene, transform] = training_scene(dataset);
  make_dir(out);
  if (resuming) {
    const RunConfig prev = run_config_from(KvConfig::load(out + "/run.cfg"));
    require(to_kv(prev.train) == to_kv(rc.train), ErrorKind::Config, "resume: training config differs from " + out + "/run.cfg");
  }
  write_text_file(out + "/run.cfg", to_kv(rc).format());
  write_text_file(out + "/transform.txt", format_transform(transform));
  std::fprintf(stderr, "train: %zu points, %zu views, %zu boundary points, %d epochs (%s)\n", scene.cloud.size(),
               scene.views.size(), scene.boundary.size(), rc.train.epochs,
               rc.train.double_precision ? "double" : "float");
  if (rc.train.double_precision) train_typed<double>(args, rc, scene);
  else train_typed<float>(args, rc, scene);
  std::printf("train: wrote %s\n", out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------------------------

struct LoadedRun {
  RunConfig config;
  SimilarityTransform transform;
};

LoadedRun load_run_meta(const std::string &dir, const Common &c) {
  require(fs::is_directory(dir), ErrorKind::Data, "run directory '" + dir + "' does not exist");
  KvConfig kv = KvConfig::load(dir + "/run.cfg");
  // Flags may still adjust the non-training keys (resolution, tracer, thresholds).
  const KvConfig extra = merged_config(c);
  for (const auto &k : extra.keys()) {
    require(run_only_keys().count(k) != 0, ErrorKind::Config,
            "key '" + k + "' cannot be changed after training");
    kv.set(k, extra.str(k, ""));
  }
  return {run_config_from(kv), parse_transform(read_text_file(dir + "/transform.txt"), dir + "/transform.txt")};
}

struct MeshArgs {
  std::string run;
  std::string out;
  int resolution = 0;
};

template <class T>
TriangleMesh mesh_typed(const std::string &run, const LoadedRun &meta, int res) {
  const auto state = load_run<T>(run);
  const NeuralField<T> field(state.sdf);
  auto mesh = extract_mesh(field, Box::cube(1.0), {res, res, res});
  const auto t = meta.transform;
  map_vertices(mesh, [&](const Vec3 &p) { return t.inverse(p); });
  compute_vertex_normals(mesh);
  return mesh;
}

int run_mesh(const Common &c, const MeshArgs &a) {
  const auto meta = load_run_meta(a.run, c);
  const int res = a.resolution > 0 ? a.resolution : meta.config.mesh_resolution;
  require(res >= 2, ErrorKind::Config, "resolution must be >= 2");
  const std::string out = a.out.empty() ? a.run + "/mesh.obj" : a.out;
  check_output(out, c);
  const auto mesh = meta.config.train.double_precision ? mesh_typed<double>(a.run, meta, res)
                                                       : mesh_typed<float>(a.run, meta, res);
  require(!mesh.empty(), ErrorKind::EmptyOutput, "the zero level set does not cross the domain");
  write_mesh(out, mesh);
  const auto topo = mesh_topology(mesh);
  std::printf("mesh: %zu vertices, %zu triangles, euler %lld, %s -> %s\n", mesh.vertices.size(), mesh.triangles.size(),
              static_cast<long long>(topo.euler()), topo.closed_manifold() ? "closed manifold" : "open or non-manifold",
              out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------------------------

struct RenderArgs {
  std::string run;
  std::string cameras;
  std::string out;
};

template <class T>
int render_typed(const Common &c, const RenderArgs &a, const LoadedRun &meta, const std::vector<Camera> &cams) {
  const auto state = load_run<T>(a.run);
  const Box box = Box::cube(1.0);
  const auto settings = meta.config.trace_settings(box);
  std::size_t total_hits = 0, total_nc = 0, total = 0;
  for (const auto &cam : cams) {
    const std::string path = a.out + "/" + cam.name + ".ppm";
    check_output(path, c);
    const auto view = render_view(state.sdf, state.slf, meta.transform.apply(cam), box, settings);
    write_ppm(path, view.image);
    total_hits += view.mask.count();
    total_nc += view.non_converged;
    total += static_cast<std::size_t>(cam.width) * static_cast<std::size_t>(cam.height);
  }
  std::printf("render: %zu views, %zu of %zu pixels hit, %zu rays did not converge -> %s\n", cams.size(), total_hits,
              total, total_nc, a.out.c_str());
  if (total_hits == 0 && total_nc > 0)
    throw Error(ErrorKind::NonConvergence, "no ray reached the surface and " + std::to_string(total_nc) +
                                               " rays exhausted the step budget");
  return 0;
}

int run_render(const Common &c, const RenderArgs &a) {
  const auto meta = load_run_meta(a.run, c);
  std::string cam_path = a.cameras;
  if (cam_path.empty()) cam_path = meta.config.data_dir + "/cameras.txt";
  const auto cams = load_cameras(cam_path);
  require(!cams.empty(), ErrorKind::Data, cam_path + " lists no cameras");
  RenderArgs b = a;
  if (b.out.empty()) b.out = a.run + "/renders";
  make_dir(b.out);
  return meta.config.train.double_precision ? render_typed<double>(c, b, meta, cams) : render_typed<float>(c, b, meta, cams);
}

// ---------------------------------------------------------------------------------------------

struct EvalArgs {
  std::string pred;
  std::string gt;
  std::string out;
  double density = 0;
  double angle = kDefaultAngleDeg;
  std::uint64_t seed = 1;
};

/// A mesh (.obj) is resampled at the density; a .ply is used as an oriented point cloud.
OrientedPointCloud load_geometry(const std::string &path, double density, std::uint64_t seed) {
  const std::string ext = fs::path(path).extension().string();
  if (ext == ".obj") {
    const auto mesh = read_obj(path);
    require(!mesh.triangles.empty(), ErrorKind::Data, path + " has no faces");
    auto cloud = sample_mesh_uniform(mesh, density, seed);
    require(!cloud.empty(), ErrorKind::Data, path + " has no area to sample");
    return cloud;
  }
  require(ext == ".ply", ErrorKind::Config, path + ": expected a .obj mesh or a .ply point cloud");
  auto ply = read_ply(path);
  require(!ply.normals.empty(), ErrorKind::Data, path + " has no normals");
  OrientedPointCloud cloud;
  cloud.positions = std::move(ply.positions);
  cloud.normals = std::move(ply.normals);
  for (auto &n : cloud.normals) {
    const double len = n.norm();
    require(len > 0, ErrorKind::Data, path + ": zero-length normal");
    n /= len;
  }
  return cloud;
}

int run_eval(const Common &c, const EvalArgs &a) {
  const RunConfig rc = run_config_from(merged_config(c));
  if (!a.out.empty()) check_output(a.out, c);
  std::string kv_text, text;
  if (fs::is_directory(a.pred) && fs::is_directory(a.gt)) {
    std::vector<std::string> names;
    for (const auto &e : fs::directory_iterator(a.gt))
      if (e.path().extension() == ".ppm") names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    require(!names.empty(), ErrorKind::Data, a.gt + " holds no .ppm images");
    KvConfig kv;
    double sum = 0;
    for (const auto &n : names) {
      require(fs::exists(a.pred + "/" + n), ErrorKind::Data, "missing predicted image " + a.pred + "/" + n);
      const double p = psnr(read_ppm(a.pred + "/" + n), read_ppm(a.gt + "/" + n));
      sum += p;
      kv.set("psnr_" + fs::path(n).stem().string(), p);
      text += n + "  PSNR " + format_double(p) + " dB\n";
    }
    const double mean = sum / static_cast<double>(names.size());
    kv.set("mean_psnr", mean);
    kv.set("views", static_cast<long long>(names.size()));
    text += "mean PSNR " + format_double(mean) + " dB over " + std::to_string(names.size()) + " views\n";
    kv_text = kv.format();
  } else {
    const double density = a.density > 0 ? a.density : rc.eval_density;
    const double angle = a.angle > 0 ? a.angle : rc.eval_angle_deg;
    const auto pred = load_geometry(a.pred, density, a.seed);
    const auto gt = load_geometry(a.gt, density, a.seed);
    const auto report = evaluate_clouds(pred, gt, density, angle);
    kv_text = format_report_kv(report) + "seed=" + std::to_string(a.seed) + "\n";
    text = format_report_text(report);
  }
  std::fputs(text.c_str(), stdout);
  std::fputs(kv_text.c_str(), stdout);
  if (!a.out.empty()) write_text_file(a.out, kv_text);
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"sdfforge: neural implicit surface reconstruction from oriented points and images"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--threads", common.threads, "Cap on worker threads (0: all cores)");
  app.add_flag("--force", common.force, "Overwrite existing outputs");

  auto add_config = [&](CLI::App *sub) {
    sub->add_option("-c,--config", common.config, "key = value config file");
    sub->add_option("--set", common.sets, "Override one config key (key=value); repeatable");
  };

  SynthArgs synth_args;
  auto *synth = app.add_subcommand("synth", "Sample an analytic scene: points, cameras, images, masks");
  add_config(synth);
  synth->add_option("-o,--out", synth_args.out, "Output data directory")->required();
  synth->add_option("--gt-points", synth_args.gt_points, "Dense ground-truth samples written to gt.ply");

  PreprocessArgs pre_args;
  auto *pre = app.add_subcommand("preprocess", "Normals, orientation, downsampling and boundary points");
  add_config(pre);
  pre->add_option("-d,--data", pre_args.data, "Data directory receiving processed.ply and boundary.txt")->required();
  pre->add_option("-i,--input", pre_args.input, "Raw PLY (default: <data>/points.ply)");
  pre->add_option("--cameras", pre_args.cameras, "Camera file (default: <data>/cameras.txt when present)");

  TrainArgs train_args;
  auto *tr = app.add_subcommand("train", "Fit the SDF and light-field networks");
  add_config(tr);
  tr->add_option("-d,--data", train_args.data, "Data directory");
  tr->add_option("-o,--out", train_args.out, "Run directory");
  tr->add_option("--epochs", train_args.epochs, "Override the epoch count");
  tr->add_option("--stop-after", train_args.stop_after, "Stop once this many epochs are done (resume later)");
  tr->add_flag("--resume", train_args.resume, "Continue from <out>/trainer.state");
  tr->add_flag("-q,--quiet", train_args.quiet, "No progress lines");

  MeshArgs mesh_args;
  auto *me = app.add_subcommand("mesh", "Extract the zero level set as a mesh in original units");
  add_config(me);
  me->add_option("-r,--run", mesh_args.run, "Run directory")->required();
  me->add_option("-o,--out", mesh_args.out, "Mesh file, .obj or .ply (default: <run>/mesh.obj)");
  me->add_option("--resolution", mesh_args.resolution, "Grid samples per axis (default: mesh_resolution)");

  RenderArgs render_args;
  auto *re = app.add_subcommand("render", "Re-render views from the trained networks");
  add_config(re);
  re->add_option("-r,--run", render_args.run, "Run directory")->required();
  re->add_option("--cameras", render_args.cameras, "Camera file (default: the run's data cameras)");
  re->add_option("-o,--out", render_args.out, "Image directory (default: <run>/renders)");

  EvalArgs eval_args;
  auto *ev = app.add_subcommand("eval", "Compare geometry (F-scores, Chamfer) or image directories (PSNR)");
  add_config(ev);
  ev->add_option("--pred", eval_args.pred, "Predicted mesh (.obj), oriented cloud (.ply) or image directory")->required();
  ev->add_option("--gt", eval_args.gt, "Ground truth of the same kind")->required();
  ev->add_option("-o,--out", eval_args.out, "Write the key=value report here");
  ev->add_option("--density", eval_args.density, "Sampling density (default: eval_density)");
  ev->add_option("--angle", eval_args.angle, "Normal angle threshold in degrees");
  ev->add_option("--seed", eval_args.seed, "Seed for mesh resampling");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    thread_cap() = common.threads;
    if (name == "synth") return run_synth(common, synth_args);
    if (name == "preprocess") return run_preprocess(common, pre_args);
    if (name == "train") return run_train(common, train_args);
    if (name == "mesh") return run_mesh(common, mesh_args);
    if (name == "render") return run_render(common, render_args);
    return run_eval(common, eval_args);
  } catch (const Error &e) {
    std::fprintf(stderr, "sdfforge %s: %s\n", name.c_str(), e.what());
    return exit_code(e.kind());
  } catch (const std::exception &e) {
    std::fprintf(stderr, "sdfforge %s: io error: %s\n", name.c_str(), e.what());
    return 3;
  }
}
