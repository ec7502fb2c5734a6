#pragma once

// Optimization loop: scene normalization, batch sampling, Adam, the learning-rate schedule,
// warm-up, checkpoints with an optimizer sidecar, and the per-iteration log.

#include "sdfforge/checkpoint.hpp"
#include "sdfforge/image.hpp"
#include "sdfforge/kvconfig.hpp"
#include "sdfforge/losses.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <set>

namespace sdfforge {

// ---------------------------------------------------------------------------------------------
// Scene normalization.

/// Uniform scale then translation: x' = scale * x + offset.
struct SimilarityTransform {
  double scale = 1.0;
  Vec3 offset = Vec3::Zero();

  Vec3 apply(const Vec3 &x) const { return scale * x + offset; }
  Vec3 inverse(const Vec3 &y) const { return (y - offset) / scale; }
  bool identity() const { return scale == 1.0 && offset == Vec3::Zero(); }

  Camera apply(const Camera &c) const {
    Camera out = c;
    out.translation = apply(c.translation);
    return out;
  }
};

inline constexpr double kNormalizePad = 0.1;

struct NormalizedScene {
  SimilarityTransform transform;
  OrientedPointCloud cloud;
  std::vector<Camera> cameras;
  Box box = Box::cube(1.0);
};

/// Maps the cloud's bounding box, grown by `pad` of its largest extent, into [-1,1]^3. A cloud whose
/// padded box already fits is left untouched.
inline NormalizedScene normalize_scene(const OrientedPointCloud &cloud, const std::vector<Camera> &cams,
                                       double pad = kNormalizePad) {
  require(!cloud.empty(), ErrorKind::Precondition, "cannot normalize an empty point cloud");
  const Box bb = Box::around(cloud.positions);
  const double extent = bb.extent().maxCoeff();
  if (!(extent > 0)) throw Error(ErrorKind::DegenerateScene, "point cloud has zero extent");
  const Vec3 center = 0.5 * (bb.lo + bb.hi);
  const double half = 0.5 * extent * (1 + pad);
  NormalizedScene out;
  const bool fits = ((center.array() - half) >= -1.0).all() && ((center.array() + half) <= 1.0).all();
  if (!fits) {
    out.transform.scale = 1.0 / half;
    out.transform.offset = -center / half;
  }
  out.cloud = cloud;
  for (auto &p : out.cloud.positions) p = out.transform.apply(p);
  out.cloud.density *= out.transform.scale;
  for (const auto &c : cams) out.cameras.push_back(out.transform.apply(c));
  return out;
}

// ---------------------------------------------------------------------------------------------
// Configuration.

struct TrainConfig {
  int epochs = 1800;
  int iterations_per_epoch = 1;
  int batch_size = 8;  // images per batch
  std::size_t n_data = 32768;
  std::size_t n_uniform = 16384;
  std::size_t n_pixels_per_image = 4096;
  double lr0 = 1e-3;
  double decay_factor = std::sqrt(10.0);
  double decay_start_fraction = 1.0 / 3.0;
  double decay_interval_fraction = 1.0 / 6.0;
  double warmup_fraction = 1.0 / 6.0;
  std::uint64_t seed = 1;
  LossWeights weights;
  double intersection_grad_scale = 1.0;
  std::optional<double> normal_weight_second_half;
  int checkpoint_every = 0;  // 0: max(1, epochs / 20)

  std::vector<int> sdf_layers = std::vector<int>(8, 512);
  std::vector<int> sdf_skips{4};
  int sdf_octaves = 6;
  double softplus_beta = 100.0;
  int descriptor_width = 256;
  std::vector<int> slf_layers = std::vector<int>(4, 512);
  int view_octaves = 4;
  bool double_precision = false;

  void validate() const {
    require(epochs >= 0, ErrorKind::Config, "epochs must be >= 0");
    require(iterations_per_epoch >= 1 && batch_size >= 1, ErrorKind::Config, "counts must be positive");
    require(n_data >= 1 && n_uniform >= 1 && n_pixels_per_image >= 1, ErrorKind::Config, "sample counts must be positive");
    require(lr0 > 0 && decay_factor >= 1, ErrorKind::Config, "lr0 must be positive and decay_factor >= 1");
    for (double f : {decay_start_fraction, decay_interval_fraction})
      require(f > 0 && f <= 1, ErrorKind::Config, "schedule fractions must lie in (0, 1]");
    require(warmup_fraction >= 0 && warmup_fraction <= 1, ErrorKind::Config, "warmup_fraction must lie in [0, 1]");
    require(intersection_grad_scale > 0, ErrorKind::Config, "intersection_grad_scale must be positive");
    require(!normal_weight_second_half || *normal_weight_second_half >= 0, ErrorKind::Config,
            "normal_weight_second_half must be >= 0");
    require(checkpoint_every >= 0, ErrorKind::Config, "checkpoint_every must be >= 0");
    weights.validate();
    sdf_arch().validate();
    slf_arch().validate();
  }

  MlpArchitecture sdf_arch() const {
    auto a = MlpArchitecture::sdf(sdf_layers, sdf_skips, sdf_octaves, descriptor_width);
    a.softplus_beta = softplus_beta;
    return a;
  }
  MlpArchitecture slf_arch() const { return MlpArchitecture::light_field(slf_layers, descriptor_width, view_octaves); }
  int checkpoint_interval() const { return checkpoint_every > 0 ? checkpoint_every : std::max(1, epochs / 20); }
  std::size_t total_steps() const { return static_cast<std::size_t>(epochs) * static_cast<std::size_t>(iterations_per_epoch); }
};

inline const std::set<std::string> &train_keys() {
  static const std::set<std::string> keys{
      "epochs", "iterations_per_epoch", "batch_size", "n_data", "n_uniform", "n_pixels_per_image", "lr0",
      "decay_factor", "decay_start_fraction", "decay_interval_fraction", "warmup_fraction", "seed", "lambda_D",
      "lambda_B", "lambda_E", "lambda_H", "lambda_M", "lambda_R", "lambda_d", "lambda_n", "epsilon",
      "intersection_grad_scale", "normal_weight_second_half", "checkpoint_every", "sdf_layers", "sdf_skips",
      "sdf_octaves", "softplus_beta", "descriptor_width", "slf_layers", "view_octaves", "precision"};
  return keys;
}

namespace detail {

inline std::vector<int> int_list(const KvConfig &kv, const std::string &key, const std::vector<int> &def) {
  if (!kv.has(key)) return def;
  std::vector<int> out;
  for (double v : kv.reals(key)) {
    require(v == std::floor(v) && v >= 0 && v < 1e6, ErrorKind::Config, "key '" + key + "': expected integers");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

inline std::size_t count_key(const KvConfig &kv, const std::string &key, std::size_t def) {
  const long long v = kv.integer(key, static_cast<long long>(def));
  require(v >= 1, ErrorKind::Config, "key '" + key + "' must be >= 1");
  return static_cast<std::size_t>(v);
}

inline std::string join_ints(const std::vector<int> &v) {
  std::string s;
  for (int x : v) s += (s.empty() ? "" : ",") + std::to_string(x);
  return s;
}

} // namespace detail

inline TrainConfig train_config_from(const KvConfig &kv) {
  kv.check_known(train_keys());
  TrainConfig c;
  c.epochs = static_cast<int>(kv.integer("epochs", c.epochs));
  c.iterations_per_epoch = static_cast<int>(kv.integer("iterations_per_epoch", c.iterations_per_epoch));
  c.batch_size = static_cast<int>(kv.integer("batch_size", c.batch_size));
  c.n_data = detail::count_key(kv, "n_data", c.n_data);
  c.n_uniform = detail::count_key(kv, "n_uniform", c.n_uniform);
  c.n_pixels_per_image = detail::count_key(kv, "n_pixels_per_image", c.n_pixels_per_image);
  c.lr0 = kv.real("lr0", c.lr0);
  c.decay_factor = kv.real("decay_factor", c.decay_factor);
  c.decay_start_fraction = kv.real("decay_start_fraction", c.decay_start_fraction);
  c.decay_interval_fraction = kv.real("decay_interval_fraction", c.decay_interval_fraction);
  c.warmup_fraction = kv.real("warmup_fraction", c.warmup_fraction);
  const long long seed = kv.integer("seed", static_cast<long long>(c.seed));
  require(seed >= 0, ErrorKind::Config, "seed must be >= 0");
  c.seed = static_cast<std::uint64_t>(seed);
  auto &w = c.weights;
  w.data = kv.real("lambda_D", w.data);
  w.boundary = kv.real("lambda_B", w.boundary);
  w.eikonal = kv.real("lambda_E", w.eikonal);
  w.hessian = kv.real("lambda_H", w.hessian);
  w.minimal = kv.real("lambda_M", w.minimal);
  w.render = kv.real("lambda_R", w.render);
  w.lambda_d = kv.real("lambda_d", w.lambda_d);
  w.lambda_n = kv.real("lambda_n", w.lambda_n);
  w.epsilon = kv.real("epsilon", w.epsilon);
  c.intersection_grad_scale = kv.real("intersection_grad_scale", c.intersection_grad_scale);
  if (kv.has("normal_weight_second_half")) {
    const std::string s = kv.str("normal_weight_second_half", "");
    if (s != "none" && !s.empty()) c.normal_weight_second_half = kv.real("normal_weight_second_half", 0);
  }
  c.checkpoint_every = static_cast<int>(kv.integer("checkpoint_every", c.checkpoint_every));
  c.sdf_layers = detail::int_list(kv, "sdf_layers", c.sdf_layers);
  c.sdf_skips = detail::int_list(kv, "sdf_skips", c.sdf_skips);
  c.sdf_octaves = static_cast<int>(kv.integer("sdf_octaves", c.sdf_octaves));
  c.softplus_beta = kv.real("softplus_beta", c.softplus_beta);
  c.descriptor_width = static_cast<int>(kv.integer("descriptor_width", c.descriptor_width));
  c.slf_layers = detail::int_list(kv, "slf_layers", c.slf_layers);
  c.view_octaves = static_cast<int>(kv.integer("view_octaves", c.view_octaves));
  const std::string prec = kv.str("precision", "float");
  require(prec == "float" || prec == "double", ErrorKind::Config, "precision must be float or double");
  c.double_precision = prec == "double";
  c.validate();
  return c;
}

inline KvConfig to_kv(const TrainConfig &c) {
  KvConfig kv;
  kv.set("epochs", c.epochs);
  kv.set("iterations_per_epoch", c.iterations_per_epoch);
  kv.set("batch_size", c.batch_size);
  kv.set("n_data", static_cast<long long>(c.n_data));
  kv.set("n_uniform", static_cast<long long>(c.n_uniform));
  kv.set("n_pixels_per_image", static_cast<long long>(c.n_pixels_per_image));
  kv.set("lr0", c.lr0);
  kv.set("decay_factor", c.decay_factor);
  kv.set("decay_start_fraction", c.decay_start_fraction);
  kv.set("decay_interval_fraction", c.decay_interval_fraction);
  kv.set("warmup_fraction", c.warmup_fraction);
  kv.set("seed", static_cast<long long>(c.seed));
  kv.set("lambda_D", c.weights.data);
  kv.set("lambda_B", c.weights.boundary);
  kv.set("lambda_E", c.weights.eikonal);
  kv.set("lambda_H", c.weights.hessian);
  kv.set("lambda_M", c.weights.minimal);
  kv.set("lambda_R", c.weights.render);
  kv.set("lambda_d", c.weights.lambda_d);
  kv.set("lambda_n", c.weights.lambda_n);
  kv.set("epsilon", c.weights.epsilon);
  kv.set("intersection_grad_scale", c.intersection_grad_scale);
  if (c.normal_weight_second_half) kv.set("normal_weight_second_half", *c.normal_weight_second_half);
  else kv.set("normal_weight_second_half", "none");
  kv.set("checkpoint_every", c.checkpoint_every);
  kv.set("sdf_layers", detail::join_ints(c.sdf_layers));
  kv.set("sdf_skips", detail::join_ints(c.sdf_skips));
  kv.set("sdf_octaves", c.sdf_octaves);
  kv.set("softplus_beta", c.softplus_beta);
  kv.set("descriptor_width", c.descriptor_width);
  kv.set("slf_layers", detail::join_ints(c.slf_layers));
  kv.set("view_octaves", c.view_octaves);
  kv.set("precision", c.double_precision ? "double" : "float");
  return kv;
}

// ---------------------------------------------------------------------------------------------
// Schedule.

/// lr0 until floor(epochs * start); from there divided by decay_factor once, and again every
/// floor(epochs * interval) epochs.
inline double lr_at(const TrainConfig &c, int epoch) {
  require(epoch >= 0 && (epoch < c.epochs || c.epochs == 0), ErrorKind::Precondition, "epoch out of range");
  const int start = static_cast<int>(std::floor(c.epochs * c.decay_start_fraction));
  const int interval = std::max(1, static_cast<int>(std::floor(c.epochs * c.decay_interval_fraction)));
  if (epoch < start) return c.lr0;
  const int k = 1 + (epoch - start) / interval;
  return c.lr0 / std::pow(c.decay_factor, k);
}

inline bool in_warmup(const TrainConfig &c, int epoch) { return epoch < c.warmup_fraction * c.epochs; }

inline LossWeights weights_at(const TrainConfig &c, int epoch) {
  LossWeights w = c.weights;
  if (c.normal_weight_second_half && 2 * epoch >= c.epochs) w.lambda_n = *c.normal_weight_second_half;
  return w;
}

// ---------------------------------------------------------------------------------------------
// Training data and batches.

struct TrainingView {
  Camera camera;
  Image image;
  Mask mask;
};

struct TrainingScene {
  OrientedPointCloud cloud;
  std::vector<BoundaryPoint> boundary;
  std::vector<TrainingView> views;
  Box box = Box::cube(1.0);

  std::vector<Camera> cameras() const {
    std::vector<Camera> out;
    for (const auto &v : views) out.push_back(v.camera);
    return out;
  }

  void validate() const {
    cloud.validate();
    require(!cloud.empty(), ErrorKind::Data, "training needs at least one oriented point");
    for (const auto &v : views) {
      v.camera.validate();
      require(v.image.width == v.camera.width && v.image.height == v.camera.height, ErrorKind::Data,
              "image size does not match camera " + v.camera.name);
      require(v.mask.width == v.camera.width && v.mask.height == v.camera.height, ErrorKind::Data,
              "mask size does not match camera " + v.camera.name);
      for (double c : v.image.data) require(c >= 0 && c <= 1, ErrorKind::Data, "pixel values must lie in [0,1]");
    }
  }
};

/// Pixel indices (y * width + x) a view can be sampled from: the mask's valid pixels.
inline std::vector<std::uint32_t> sampleable_pixels(const TrainingView &v) {
  std::vector<std::uint32_t> out;
  for (int y = 0; y < v.mask.height; ++y)
    for (int x = 0; x < v.mask.width; ++x)
      if (v.mask.valid(x, y)) out.push_back(static_cast<std::uint32_t>(y * v.mask.width + x));
  return out;
}

/// Batch generator with per-view pixel tables built once.
class BatchSampler {
public:
  BatchSampler(const TrainingScene &scene, const TrainConfig &config) : scene_(&scene), config_(config) {
    for (std::size_t i = 0; i < scene.views.size(); ++i) {
      pixels_.push_back(sampleable_pixels(scene.views[i]));
      if (!pixels_.back().empty()) usable_.push_back(static_cast<int>(i));
    }
  }

  bool renders() const { return !usable_.empty(); }

  /// Deterministic in (seed, epoch, iteration).
  SampleBatch sample(int epoch, int iteration) const {
    std::seed_seq seq{static_cast<std::uint32_t>(config_.seed), static_cast<std::uint32_t>(config_.seed >> 32),
                      static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(iteration), 0x5eedu};
    std::mt19937_64 rng(seq);
    SampleBatch b;
    const auto &cloud = scene_->cloud;
    const std::size_t n = cloud.size();
    if (config_.n_data <= n) {
      // Partial Fisher-Yates: uniform without replacement.
      std::vector<std::uint32_t> idx(n);
      std::iota(idx.begin(), idx.end(), 0u);
      for (std::size_t i = 0; i < config_.n_data; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(idx[i], idx[pick(rng)]);
        b.data_positions.push_back(cloud.positions[idx[i]]);
        b.data_normals.push_back(cloud.normals[idx[i]]);
      }
    } else {
      b.data_with_replacement = true;
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (std::size_t i = 0; i < config_.n_data; ++i) {
        const std::size_t k = pick(rng);
        b.data_positions.push_back(cloud.positions[k]);
        b.data_normals.push_back(cloud.normals[k]);
      }
    }
    b.boundary = scene_->boundary;
    const Box &box = scene_->box;
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    b.uniform.resize(config_.n_uniform);
    for (auto &x : b.uniform) x = box.lo + Vec3(u01(rng), u01(rng), u01(rng)).cwiseProduct(box.extent());
    if (usable_.empty()) return b;
    std::uniform_int_distribution<std::size_t> pick_view(0, usable_.size() - 1);
    for (int k = 0; k < config_.batch_size; ++k) {
      const int view = usable_[pick_view(rng)];
      const auto &table = pixels_[static_cast<std::size_t>(view)];
      const auto &img = scene_->views[static_cast<std::size_t>(view)].image;
      std::uniform_int_distribution<std::size_t> pick_px(0, table.size() - 1);
      for (std::size_t j = 0; j < config_.n_pixels_per_image; ++j) {
        const std::uint32_t p = table[pick_px(rng)];
        const int x = static_cast<int>(p % static_cast<std::uint32_t>(img.width));
        const int y = static_cast<int>(p / static_cast<std::uint32_t>(img.width));
        b.pixels.push_back({view, x + 0.5, y + 0.5, img.at(x, y)});
      }
    }
    return b;
  }

private:
  const TrainingScene *scene_;
  TrainConfig config_;
  std::vector<std::vector<std::uint32_t>> pixels_;
  std::vector<int> usable_;
};

// ---------------------------------------------------------------------------------------------
// Adam.

struct AdamState {
  std::vector<double> m, v;
  std::uint64_t step = 0;

  void reset(std::size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    step = 0;
  }
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

template <class T>
void adam_update(std::vector<T> &params, const std::vector<double> &grad, AdamState &s, double lr) {
  require(grad.size() == params.size() && s.m.size() == params.size(), ErrorKind::Precondition,
          "optimizer state does not match parameters");
  ++s.step;
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    s.m[i] = kAdamBeta1 * s.m[i] + (1 - kAdamBeta1) * g;
    s.v[i] = kAdamBeta2 * s.v[i] + (1 - kAdamBeta2) * g * g;
    const double mh = s.m[i] / c1, vh = s.v[i] / c2;
    params[i] = static_cast<T>(static_cast<double>(params[i]) - lr * mh / (std::sqrt(vh) + kAdamEps));
  }
}

// ---------------------------------------------------------------------------------------------
// Training state.

template <class T>
struct TrainState {
  Mlp<T> sdf;
  Mlp<T> slf;
  AdamState opt_sdf, opt_slf;
  int epoch = 0;      // next epoch to run
  int iteration = 0;  // next iteration within that epoch
  int consecutive_skips = 0;
};

template <class T>
TrainState<T> init_train_state(const TrainConfig &c) {
  c.validate();
  TrainState<T> s;
  s.sdf = init_params<T>(c.sdf_arch(), c.seed);
  s.slf = init_params<T>(c.slf_arch(), c.seed + 1);
  s.opt_sdf.reset(s.sdf.params.size());
  s.opt_slf.reset(s.slf.params.size());
  return s;
}

struct StepRecord {
  int epoch = 0;
  int iteration = 0;
  double lr = 0;
  RenderMode mode = RenderMode::Frozen;
  LossTerms terms;
  bool skipped = false;
  bool data_with_replacement = false;
  std::string note;
};

inline std::string format_log_record(const StepRecord &r) {
  std::string s = "epoch=" + std::to_string(r.epoch) + " iter=" + std::to_string(r.iteration) + " lr=" +
                  format_double(r.lr) + " mode=" + (r.mode == RenderMode::Frozen ? "frozen" : "differentiable") + " " +
                  format_terms(r.terms);
  if (r.data_with_replacement) s += " data_with_replacement=1";
  if (r.skipped) s += " step_skipped=1 reason=\"" + r.note + "\"";
  return s;
}

inline constexpr int kMaxConsecutiveSkips = 3;

/// One optimization step on the batch for (state.epoch, state.iteration). Advances the counters.
template <class T>
StepRecord train_step(TrainState<T> &s, const TrainingScene &scene, const BatchSampler &sampler, const TrainConfig &c) {
  StepRecord rec;
  rec.epoch = s.epoch;
  rec.iteration = s.iteration;
  rec.lr = lr_at(c, s.epoch);
  rec.mode = in_warmup(c, s.epoch) ? RenderMode::Frozen : RenderMode::Differentiable;
  const SampleBatch batch = sampler.sample(s.epoch, s.iteration);
  rec.data_with_replacement = batch.data_with_replacement;
  const auto cams = scene.cameras();
  RenderContext ctx{&cams, scene.box, TraceSettings::for_box(scene.box), rec.mode, c.intersection_grad_scale};
  LossGradients g;
  try {
    rec.terms = compute_losses(s.sdf, &s.slf, batch, weights_at(c, s.epoch), &ctx, &g);
    if (!std::isfinite(rec.terms.total)) throw Error(ErrorKind::Numeric, "non-finite loss");
  } catch (const Error &e) {
    if (e.kind() != ErrorKind::Numeric) throw;
    rec.skipped = true;
    rec.note = e.what();
  }
  if (rec.skipped) {
    if (++s.consecutive_skips >= kMaxConsecutiveSkips)
      throw Error(ErrorKind::Numeric, "aborting after " + std::to_string(s.consecutive_skips) +
                                          " consecutive non-finite steps at epoch " + std::to_string(s.epoch) +
                                          " (last: " + rec.note + ")");
  } else {
    s.consecutive_skips = 0;
    adam_update(s.sdf.params.values, g.theta, s.opt_sdf, rec.lr);
    adam_update(s.slf.params.values, g.phi, s.opt_slf, rec.lr);
  }
  if (++s.iteration >= c.iterations_per_epoch) {
    s.iteration = 0;
    ++s.epoch;
  }
  return rec;
}

// ---------------------------------------------------------------------------------------------
// Checkpoints. A run directory holds sdf.ckpt, slf.ckpt (single-precision network checkpoints) and
// trainer.state, which stores the exact parameters, Adam moments and counters for resuming.

inline constexpr std::string_view kStateMagic = "SDFSTATE";
inline constexpr std::uint32_t kStateVersion = 1;

template <class T>
std::vector<unsigned char> encode_train_state(const TrainState<T> &s) {
  ByteWriter w;
  w.put_bytes(kStateMagic);
  w.put(kStateVersion);
  w.put(static_cast<std::int32_t>(s.epoch));
  w.put(static_cast<std::int32_t>(s.iteration));
  w.put(static_cast<std::int32_t>(s.consecutive_skips));
  auto put_net = [&](const Mlp<T> &m, const AdamState &a) {
    w.put(static_cast<std::uint64_t>(m.params.size()));
    w.put(a.step);
    for (T v : m.params.values) w.put(static_cast<double>(v));
    for (double v : a.m) w.put(v);
    for (double v : a.v) w.put(v);
  };
  put_net(s.sdf, s.opt_sdf);
  put_net(s.slf, s.opt_slf);
  auto bytes = w.bytes();
  ByteWriter tail;
  tail.put(crc32_of(bytes.data(), bytes.size()));
  bytes.insert(bytes.end(), tail.bytes().begin(), tail.bytes().end());
  return bytes;
}

/// Restores counters, exact parameters and moments into `s`, whose networks must already have the
/// stored architectures.
template <class T>
void decode_train_state(const std::vector<unsigned char> &bytes, TrainState<T> &s) {
  ByteReader r(bytes);
  require(r.get_bytes(kStateMagic.size()) == kStateMagic, ErrorKind::Data, "bad trainer state magic");
  require(r.get<std::uint32_t>() == kStateVersion, ErrorKind::Data, "unsupported trainer state version");
  s.epoch = r.get<std::int32_t>();
  s.iteration = r.get<std::int32_t>();
  s.consecutive_skips = r.get<std::int32_t>();
  auto get_net = [&](Mlp<T> &m, AdamState &a) {
    const auto n = r.get<std::uint64_t>();
    require(n == m.params.size(), ErrorKind::Data, "trainer state does not match the network checkpoint");
    a.step = r.get<std::uint64_t>();
    for (auto &v : m.params.values) v = static_cast<T>(r.get<double>());
    a.m.resize(n);
    a.v.resize(n);
    for (auto &v : a.m) v = r.get<double>();
    for (auto &v : a.v) v = r.get<double>();
  };
  get_net(s.sdf, s.opt_sdf);
  get_net(s.slf, s.opt_slf);
  const std::size_t body = r.position();
  const auto crc = r.get<std::uint32_t>();
  require(r.position() == bytes.size(), ErrorKind::Data, "trailing bytes after trainer state");
  require(crc == crc32_of(bytes.data(), body), ErrorKind::Data, "trainer state CRC mismatch");
  require(s.epoch >= 0 && s.iteration >= 0, ErrorKind::Data, "bad trainer counters");
}

template <class T>
void save_run(const std::string &dir, const TrainState<T> &s) {
  std::filesystem::create_directories(dir);
  save_checkpoint(dir + "/sdf.ckpt", s.sdf);
  save_checkpoint(dir + "/slf.ckpt", s.slf);
  write_file_bytes(dir + "/trainer.state", encode_train_state(s));
}

template <class T>
TrainState<T> load_run(const std::string &dir) {
  TrainState<T> s;
  s.sdf = load_checkpoint<T>(dir + "/sdf.ckpt");
  s.slf = load_checkpoint<T>(dir + "/slf.ckpt");
  decode_train_state(read_file_bytes(dir + "/trainer.state"), s);
  return s;
}

struct TrainHooks {
  std::function<void(const StepRecord &)> on_step;             // every iteration
  std::function<void(int epoch_done)> on_checkpoint;           // after each checkpointed epoch
  std::function<bool(int epoch_done)> stop_after;              // true stops the run early
};

/// Runs the remaining epochs of `s`.
template <class T>
void train(TrainState<T> &s, const TrainingScene &scene, const TrainConfig &c, const TrainHooks &hooks = {}) {
  c.validate();
  scene.validate();
  require(s.sdf.arch == c.sdf_arch() && s.slf.arch == c.slf_arch(), ErrorKind::Config,
          "network architecture does not match the training config");
  const BatchSampler sampler(scene, c);
  const int every = c.checkpoint_interval();
  while (s.epoch < c.epochs) {
    const auto rec = train_step(s, scene, sampler, c);
    if (hooks.on_step) hooks.on_step(rec);
    if (s.iteration != 0) continue;
    const bool last = s.epoch == c.epochs;
    if (hooks.on_checkpoint && (last || s.epoch % every == 0)) hooks.on_checkpoint(s.epoch);
    if (hooks.stop_after && hooks.stop_after(s.epoch)) return;
  }
}

} // namespace sdfforge
