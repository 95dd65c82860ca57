#pragma once

// Pose as a learned combination of prototype poses: losses, training,
// inference, registration and multiview fusion, plus the DPM1 model file.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "depthpose/binary_io.hpp"
#include "depthpose/container.hpp"
#include "depthpose/core.hpp"
#include "depthpose/net.hpp"
#include "depthpose/preproc.hpp"
#include "depthpose/prototypes.hpp"
#include "depthpose/random.hpp"

namespace depthpose {

// ---------------------------------------------------------------------------
// Losses.

/// Smooth-L1 penalty: 0.5*sigma2*r^2 when |r| < 1/sigma2, else |r| - 0.5/sigma2.
inline double smooth_l1(double r, double sigma2) {
  const double a = std::abs(r);
  return a < 1.0 / sigma2 ? 0.5 * sigma2 * r * r : a - 0.5 / sigma2;
}

inline double smooth_l1_grad(double r, double sigma2) {
  if (std::abs(r) < 1.0 / sigma2)
    return sigma2 * r;
  return r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
}

/// Sum of smooth-L1 penalties over the components of r = target - estimate.
inline double residual_loss(std::span<const double> estimate, std::span<const double> target, double sigma2) {
  detail::require(estimate.size() == target.size(), "residual_loss: length mismatch");
  detail::require(sigma2 > 0.0, "residual_loss: sigma2 must be > 0");
  double sum = 0.0;
  for (std::size_t k = 0; k < estimate.size(); ++k)
    sum += smooth_l1(target[k] - estimate[k], sigma2);
  return sum;
}

/// d residual_loss / d estimate.
inline std::vector<double> residual_loss_grad(std::span<const double> estimate, std::span<const double> target,
                                              double sigma2) {
  detail::require(estimate.size() == target.size(), "residual_loss_grad: length mismatch");
  std::vector<double> g(estimate.size());
  for (std::size_t k = 0; k < g.size(); ++k)
    g[k] = -smooth_l1_grad(target[k] - estimate[k], sigma2);
  return g;
}

/// C x w, in the prototypes' (normalized) space.
inline PoseVector reconstruct_pose(const PrototypeSet &c, std::span<const double> w) {
  detail::require(w.size() == c.k, "reconstruct_pose: weight vector has " + std::to_string(w.size()) +
                                       " entries, prototype set has K = " + std::to_string(c.k));
  PoseVector p{std::vector<double>(c.rows, 0.0)};
  for (std::size_t i = 0; i < c.k; ++i) {
    const double wi = w[i];
    const auto col = c.column(i);
    for (std::size_t r = 0; r < c.rows; ++r)
      p[r] += wi * col[r];
  }
  return p;
}

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

/// (1 - alpha) * L_R(C w, p) + alpha * ||w||_1 and its (sub)gradient in w,
/// using sign(0) = 0 for the L1 term.
inline LossAndGrad ddp_loss(std::span<const double> w, const PrototypeSet &c, const PoseVector &target, double alpha,
                            double sigma2) {
  detail::require(target.size() == c.rows, "ddp_loss: target length does not match the prototypes");
  detail::require(alpha >= 0.0 && alpha <= 1.0, "ddp_loss: alpha must be in [0, 1]");
  const PoseVector est = reconstruct_pose(c, w);
  const auto g_est = residual_loss_grad(est.values, target.values, sigma2);
  LossAndGrad out;
  double l1 = 0.0;
  for (double v : w)
    l1 += std::abs(v);
  out.loss = (1.0 - alpha) * residual_loss(est.values, target.values, sigma2) + alpha * l1;
  out.grad.assign(c.k, 0.0);
  for (std::size_t i = 0; i < c.k; ++i) {
    const auto col = c.column(i);
    double s = 0.0;
    for (std::size_t r = 0; r < c.rows; ++r)
      s += col[r] * g_est[r];
    const double sgn = w[i] > 0.0 ? 1.0 : (w[i] < 0.0 ? -1.0 : 0.0);
    out.grad[i] = (1.0 - alpha) * s + alpha * sgn;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Registration and fusion.

/// Maps a camera-frame pose into the world frame (inverse extrinsics).
inline Pose camera_to_world(const Pose &pose, const Camera &cam) {
  std::vector<Vec3> joints;
  joints.reserve(pose.joints.size());
  for (const auto &p : pose.joints)
    joints.push_back(cam.camera_to_world(p));
  return Pose(pose.skeleton, std::move(joints));
}

struct FusionWeights {
  std::vector<double> weights;

  static FusionWeights uniform(std::size_t views) {
    return {std::vector<double>(views, 1.0 / static_cast<double>(views))};
  }

  void validate() const {
    detail::require(!weights.empty(), "fusion weights are empty");
    double sum = 0.0;
    for (double w : weights) {
      detail::require(std::isfinite(w) && w >= 0.0, "fusion weights must be non-negative");
      sum += w;
    }
    detail::require(std::abs(sum - 1.0) <= 1e-9, "fusion weights must sum to 1 (got " + std::to_string(sum) + ")");
  }
};

/// Per-joint convex combination of world-frame poses.
inline Pose fuse_multiview(std::span<const Pose> poses, const FusionWeights &w) {
  detail::require(!poses.empty(), "fuse_multiview: no poses");
  detail::require(w.weights.size() == poses.size(), "fuse_multiview: " + std::to_string(poses.size()) + " poses but " +
                                                        std::to_string(w.weights.size()) + " weights");
  w.validate();
  const auto n = poses.front().joint_count();
  std::vector<Vec3> out(n);
  for (std::size_t v = 0; v < poses.size(); ++v) {
    detail::require(poses[v].joint_count() == n, "fuse_multiview: joint count mismatch");
    for (std::size_t j = 0; j < n; ++j)
      out[j] = out[j] + w.weights[v] * poses[v].joints[j];
  }
  return Pose(poses.front().skeleton, std::move(out));
}

// ---------------------------------------------------------------------------
// Training.

enum class Head { Ddp, Baseline };

inline const char *to_string(Head h) { return h == Head::Ddp ? "ddp" : "baseline"; }
inline Head parse_head(const std::string &s) {
  if (s == "ddp")
    return Head::Ddp;
  if (s == "baseline")
    return Head::Baseline;
  throw ValidationError("unknown head '" + s + "'");
}

struct TrainConfig {
  std::size_t k = 100;
  double sigma2 = 1.0;
  double alpha = 0.01;
  double lr0 = 1e-3;
  std::size_t epochs = 50;
  std::size_t batch = 64;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  Head head = Head::Ddp;
  std::string preset = "ddp-desk";
  std::optional<NetworkSpec> network; ///< replaces `preset` when set; last layer must emit the head's outputs
  PreprocConfig preproc{true, 0.5, 3, 32, 32, 0.25, ScaleMode::PerFrame, 10.0};
  std::size_t kmeans_max_iters = 300;
  unsigned threads = 1;

  void validate() const {
    detail::require(sigma2 > 0.0, "train: sigma2 must be > 0");
    detail::require(alpha >= 0.0 && alpha <= 1.0, "train: alpha must be in [0, 1]");
    detail::require(epochs >= 1, "train: epochs must be >= 1");
    detail::require(batch >= 1, "train: batch must be >= 1");
    detail::require(lr0 > 0.0 && momentum >= 0.0 && momentum < 1.0, "train: bad learning rate or momentum");
    detail::require(head == Head::Baseline || k >= 1, "train: K must be >= 1");
    preproc.validate();
  }

  /// Step decay: x0.1 from 60% of the epochs and again from 85%.
  double learning_rate(std::size_t epoch) const {
    double lr = lr0;
    if (static_cast<double>(epoch) >= 0.6 * static_cast<double>(epochs))
      lr *= 0.1;
    if (static_cast<double>(epoch) >= 0.85 * static_cast<double>(epochs))
      lr *= 0.1;
    return lr;
  }
};

/// Named hyperparameter presets per dataset style.
inline TrainConfig train_preset(const std::string &name) {
  TrainConfig c;
  if (name == "ubc3v") {
    c.k = 100, c.sigma2 = 0.8, c.alpha = 0.01;
  } else if (name == "itop") {
    c.k = 70, c.sigma2 = 1.0, c.alpha = 0.08;
  } else if (name == "itop-mixed") {
    c.k = 140, c.sigma2 = 1.0, c.alpha = 0.08;
  } else {
    throw ValidationError("unknown training preset '" + name + "'");
  }
  return c;
}

struct EpochLog {
  std::size_t epoch = 0; ///< 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = std::nan("");
  double val_mse = std::nan("");      ///< normalized vectorized coordinates
  double val_error_cm = std::nan(""); ///< average joint error, camera frame
};

struct TrainedModel {
  NetworkState network;
  std::optional<PrototypeSet> prototypes; ///< absent for the baseline head
  Normalizer normalizer;
  SkeletonPtr skeleton;
  Head head = Head::Ddp;
  TrainConfig config;
  std::vector<EpochLog> history;

  friend bool operator==(const TrainedModel &a, const TrainedModel &b) {
    return a.network == b.network && a.prototypes == b.prototypes && a.normalizer == b.normalizer &&
           *a.skeleton == *b.skeleton && a.head == b.head;
  }
};

/// One network input with its camera-frame target.
struct TrainingExample {
  std::vector<float> input;
  PoseVector target; ///< camera frame, meters
  Pose target_pose;  ///< camera frame
};

/// Preprocessed (view, camera-frame pose) pairs of a split; views whose frame
/// has no returns are skipped.
inline std::vector<TrainingExample> make_examples(const Dataset &ds, Split split, const PreprocConfig &pre) {
  std::vector<TrainingExample> out;
  for (const Sample *s : ds.split(split))
    for (const auto &v : s->views) {
      if (std::none_of(v.depth.begin(), v.depth.end(), [](float d) { return d > 0.0f; }))
        continue;
      const Pose cam_pose = world_to_camera(s->pose, ds.cameras.at(v.camera));
      out.push_back({preprocess(v, pre).values, vectorize(cam_pose), cam_pose});
    }
  return out;
}

/// Pose vector (camera frame, meters) from a raw network output.
inline PoseVector output_to_pose_vector(const TrainedModel &m, std::span<const float> output) {
  std::vector<double> out(output.begin(), output.end());
  if (m.head == Head::Ddp)
    return denormalize(reconstruct_pose(*m.prototypes, out), m.normalizer);
  return denormalize(PoseVector{std::move(out)}, m.normalizer);
}

inline double mean_joint_error_cm(const PoseVector &a, const PoseVector &b) {
  double sum = 0.0;
  const std::size_t j = a.size() / 3;
  for (std::size_t i = 0; i < j; ++i) {
    const double dx = a[3 * i] - b[3 * i], dy = a[3 * i + 1] - b[3 * i + 1], dz = a[3 * i + 2] - b[3 * i + 2];
    sum += std::sqrt(dx * dx + dy * dy + dz * dz);
  }
  return 100.0 * sum / static_cast<double>(j);
}

namespace detail {

struct SampleLoss {
  double loss = 0.0;
  std::vector<double> output_grad;
};

inline SampleLoss head_loss(const TrainedModel &m, std::span<const float> output, const PoseVector &normalized_target) {
  const auto &cfg = m.config;
  std::vector<double> out(output.begin(), output.end());
  if (m.head == Head::Ddp) {
    auto lg = ddp_loss(out, *m.prototypes, normalized_target, cfg.alpha, cfg.sigma2);
    return {lg.loss, std::move(lg.grad)};
  }
  return {residual_loss(out, normalized_target.values, cfg.sigma2),
          residual_loss_grad(out, normalized_target.values, cfg.sigma2)};
}

// Goes through a float buffer; see generate_dataset for the g++ 11 folding issue.
inline void round_to_float(std::vector<double> &v) {
  const std::vector<float> f(v.begin(), v.end());
  std::copy(f.begin(), f.end(), v.begin());
}

} // namespace detail

struct ValidationStats {
  double loss = 0.0, mse = 0.0, error_cm = 0.0;
};

/// Eval-mode loss, normalized-coordinate MSE and joint error over examples.
inline ValidationStats validate_model(const TrainedModel &m, std::span<const TrainingExample> examples) {
  ValidationStats st;
  if (examples.empty())
    return st;
  std::size_t comps = 0;
  for (const auto &ex : examples) {
    const auto cache = forward_sample(m.network, ex.input, Mode::Eval);
    const PoseVector target = normalize(ex.target, m.normalizer);
    st.loss += detail::head_loss(m, cache.output, target).loss;
    const PoseVector est = output_to_pose_vector(m, cache.output);
    const PoseVector est_n = normalize(est, m.normalizer);
    for (std::size_t k = 0; k < est_n.size(); ++k) {
      const double d = est_n[k] - target[k];
      st.mse += d * d;
    }
    comps += est_n.size();
    st.error_cm += mean_joint_error_cm(est, ex.target);
  }
  const double n = static_cast<double>(examples.size());
  st.loss /= n;
  st.mse /= static_cast<double>(comps);
  st.error_cm /= n;
  return st;
}

using EpochCallback = std::function<void(const EpochLog &)>;

/// Trains a model on the train split of `ds` (validating on its val split).
/// For the DDP head, `prototypes` supplies the dictionary (and its
/// normalizer); when absent, the normalizer is fit on the train split and K
/// prototypes are learnt there with k-means. Bitwise reproducible for a given
/// config regardless of cfg.threads.
inline TrainedModel train(const Dataset &ds, const TrainConfig &cfg, const PrototypeSet *prototypes = nullptr,
                          const EpochCallback &on_epoch = {}) {
  cfg.validate();
  const auto train_set = make_examples(ds, Split::Train, cfg.preproc);
  const auto val_set = make_examples(ds, Split::Val, cfg.preproc);
  detail::require(!train_set.empty(), "train: the train split is empty");

  TrainedModel m;
  m.skeleton = ds.skeleton;
  m.head = cfg.head;
  m.config = cfg;
  const std::size_t dims = 3 * ds.skeleton->joint_count();

  std::vector<PoseVector> targets;
  targets.reserve(train_set.size());
  for (const auto &ex : train_set)
    targets.push_back(ex.target);

  if (cfg.head == Head::Ddp && prototypes != nullptr) {
    detail::require(prototypes->k == cfg.k, "train: prototype set has K = " + std::to_string(prototypes->k) +
                                                ", config asks for K = " + std::to_string(cfg.k));
    detail::require(prototypes->rows == dims && prototypes->normalizer.size() == dims,
                    "train: prototype set does not match the skeleton");
    detail::require(prototypes->skeleton == ds.skeleton->name, "train: prototype skeleton mismatch");
    m.normalizer = prototypes->normalizer;
    m.prototypes = *prototypes;
  } else {
    detail::require(targets.size() >= 2, "train: need at least 2 training views");
    m.normalizer = fit_normalizer(targets);
    if (cfg.head == Head::Ddp) {
      std::vector<PoseVector> normalized;
      normalized.reserve(targets.size());
      for (const auto &t : targets)
        normalized.push_back(normalize(t, m.normalizer));
      KMeansOptions km{cfg.k, substream_seed(cfg.seed, "kmeans"), cfg.kmeans_max_iters, 1e-6, false};
      m.prototypes = learn_prototypes(normalized, km, m.normalizer, ds.skeleton->name);
    }
  }
  if (m.prototypes)
    detail::round_to_float(m.prototypes->values); // the model file stores C as f32

  const int outputs = static_cast<int>(cfg.head == Head::Ddp ? cfg.k : dims);
  NetworkSpec spec = cfg.network ? *cfg.network : network_preset(cfg.preset, outputs);
  spec.validate();
  detail::require(spec.output_size() == outputs, "train: network '" + spec.name + "' emits " +
                                                     std::to_string(spec.output_size()) + " values, the head needs " +
                                                     std::to_string(outputs));
  detail::require(spec.input.h == cfg.preproc.target_h && spec.input.w == cfg.preproc.target_w && spec.input.c == 1,
                  "train: preprocessing target size does not match the '" + spec.name + "' input");
  m.network = init_network(spec, substream_seed(cfg.seed, "init"));

  std::vector<PoseVector> norm_targets;
  norm_targets.reserve(train_set.size());
  for (const auto &t : targets)
    norm_targets.push_back(normalize(t, m.normalizer));

  const unsigned threads = std::max(1u, cfg.threads);
  std::vector<Gradients> slots(threads, Gradients::zeros_like(m.network));
  std::vector<double> slot_loss(threads, 0.0);
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i)
    order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng = make_rng(cfg.seed, "shuffle", epoch);
    shuffle(order, shuffle_rng);
    const double lr = cfg.learning_rate(epoch);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      Gradients total = Gradients::zeros_like(m.network);
      // Groups of `threads` samples run concurrently; slot sums are folded in
      // sample order, so the result is independent of the thread count.
      for (std::size_t g0 = start; g0 < end; g0 += threads) {
        const std::size_t g1 = std::min(end, g0 + threads);
        parallel_for(g1 - g0, threads, [&](std::size_t t) {
          const std::size_t pos = g0 + t;
          const std::size_t idx = order[pos];
          Rng drop = make_rng(cfg.seed, "dropout", epoch, pos);
          const auto cache = forward_sample(m.network, train_set[idx].input, Mode::Train, &drop);
          auto sl = detail::head_loss(m, cache.output, norm_targets[idx]);
          slots[t].set_zero();
          backward_sample(m.network, cache, sl.output_grad, slots[t]);
          slot_loss[t] = sl.loss;
        });
        for (std::size_t t = 0; t < g1 - g0; ++t) {
          total.add(slots[t]);
          epoch_loss += slot_loss[t];
        }
      }
      total.scale(1.0 / static_cast<double>(end - start));
      sgd_step(m.network, total, lr, cfg.momentum);
    }
    EpochLog log;
    log.epoch = epoch + 1;
    log.lr = lr;
    log.train_loss = epoch_loss / static_cast<double>(order.size());
    if (!val_set.empty()) {
      const auto vs = validate_model(m, val_set);
      log.val_loss = vs.loss;
      log.val_mse = vs.mse;
      log.val_error_cm = vs.error_cm;
    }
    m.history.push_back(log);
    if (on_epoch)
      on_epoch(log);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Inference.

/// Camera-frame pose for one depth frame.
inline Pose infer(const TrainedModel &m, const DepthFrame &frame) {
  detail::require(std::any_of(frame.depth.begin(), frame.depth.end(), [](float d) { return d > 0.0f; }),
                  "infer: frame has no depth returns");
  const InputImage img = preprocess(frame, m.config.preproc);
  const auto cache = forward_sample(m.network, img.values, Mode::Eval);
  return devectorize(output_to_pose_vector(m, cache.output), m.skeleton);
}

struct SceneEstimate {
  std::vector<Pose> camera_frame; ///< per view
  std::vector<Pose> world;        ///< per view, registered
  std::optional<Pose> fused;      ///< world frame
};

/// Per-view estimates of one scene, registered to world and fused with
/// `weights` (uniform when empty).
inline SceneEstimate infer_scene(const TrainedModel &m, const Dataset &ds, const Sample &s,
                                 const std::optional<FusionWeights> &weights = std::nullopt) {
  SceneEstimate est;
  for (const auto &v : s.views) {
    est.camera_frame.push_back(infer(m, v));
    est.world.push_back(camera_to_world(est.camera_frame.back(), ds.cameras.at(v.camera)));
  }
  est.fused = fuse_multiview(est.world, weights.value_or(FusionWeights::uniform(est.world.size())));
  return est;
}

// ---------------------------------------------------------------------------
// DPM1 model file.
//
//   "DPM1", u32 version = 1, u32 header length, UTF-8 JSON header, then f32
//   sections in header order (prototype matrix column-major, then weight and
//   bias of every parametrised layer), then u32 CRC32 of the sections.
//   A file without a network ("scaffold") carries only the prototype matrix.

inline constexpr char kModelMagic[4] = {'D', 'P', 'M', '1'};
inline constexpr std::uint32_t kModelVersion = 1;

inline void to_json(nlohmann::json &j, const TrainConfig &c) {
  j = {{"K", c.k},           {"sigma2", c.sigma2},   {"alpha", c.alpha},     {"lr0", c.lr0},
       {"epochs", c.epochs}, {"batch", c.batch},     {"momentum", c.momentum}, {"seed", c.seed},
       {"head", to_string(c.head)}, {"preset", c.preset}, {"preproc", c.preproc},
       {"kmeans_max_iters", c.kmeans_max_iters}};
  if (c.network)
    j["network"] = *c.network;
}

/// Missing keys keep their defaults. `threads` is a runtime setting and is
/// not serialised.
inline void from_json(const nlohmann::json &j, TrainConfig &c) {
  auto opt = [&](const char *key, auto &field) {
    if (j.contains(key))
      j.at(key).get_to(field);
  };
  opt("K", c.k);
  opt("sigma2", c.sigma2);
  opt("alpha", c.alpha);
  opt("lr0", c.lr0);
  opt("epochs", c.epochs);
  opt("batch", c.batch);
  opt("momentum", c.momentum);
  opt("seed", c.seed);
  opt("preset", c.preset);
  opt("kmeans_max_iters", c.kmeans_max_iters);
  if (j.contains("head"))
    c.head = parse_head(j.at("head").get<std::string>());
  if (j.contains("preproc"))
    j.at("preproc").get_to(c.preproc);
  if (j.contains("network"))
    c.network = j.at("network").get<NetworkSpec>();
}

struct ModelFile {
  std::optional<NetworkState> network;
  std::optional<PrototypeSet> prototypes;
  Normalizer normalizer;
  SkeletonPtr skeleton;
  Head head = Head::Ddp;
  TrainConfig config;
  std::vector<EpochLog> history;

  TrainedModel to_model() const {
    detail::require(network.has_value(), "model file has no network (prototype scaffold only)");
    detail::require(head == Head::Baseline || prototypes.has_value(), "DDP model file has no prototypes");
    return {*network, prototypes, normalizer, skeleton, head, config, history};
  }

  static ModelFile from_model(const TrainedModel &m) {
    return {m.network, m.prototypes, m.normalizer, m.skeleton, m.head, m.config, m.history};
  }
};

inline std::vector<std::uint8_t> encode_model(const ModelFile &f) {
  detail::require(f.skeleton != nullptr, "model has no skeleton");
  nlohmann::json h;
  h["skeleton"] = detail::skeleton_to_json(*f.skeleton);
  h["normalizer"] = {{"mean", f.normalizer.mean}, {"std", f.normalizer.std}};
  h["head"] = to_string(f.head);
  h["config"] = f.config;
  h["network"] = f.network ? nlohmann::json(f.network->spec) : nlohmann::json(nullptr);
  h["prototypes"] = f.prototypes ? nlohmann::json{{"K", f.prototypes->k}, {"rows", f.prototypes->rows}}
                                 : nlohmann::json(nullptr);
  nlohmann::json hist = nlohmann::json::array();
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  for (const auto &e : f.history)
    hist.push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"train_loss", num(e.train_loss)}, {"val_loss", num(e.val_loss)},
                    {"val_mse", num(e.val_mse)}, {"val_error_cm", num(e.val_error_cm)}});
  h["history"] = hist;

  detail::ByteWriter sections;
  nlohmann::json index = nlohmann::json::array();
  auto put = [&](const std::string &name, std::span<const float> v) {
    index.push_back({{"name", name}, {"count", v.size()}});
    sections.put_array(v);
  };
  if (f.prototypes) {
    std::vector<float> c(f.prototypes->values.begin(), f.prototypes->values.end());
    put("prototypes", c);
  }
  if (f.network)
    for (std::size_t i = 0; i < f.network->layers.size(); ++i) {
      if (!f.network->spec.layers[i].has_params())
        continue;
      put("layer" + std::to_string(i) + ".weight", f.network->layers[i].weight);
      put("layer" + std::to_string(i) + ".bias", f.network->layers[i].bias);
    }
  h["sections"] = index;
  const std::string text = h.dump();

  detail::ByteWriter out;
  out.put_bytes(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t *>(kModelMagic), 4));
  out.put<std::uint32_t>(kModelVersion);
  out.put<std::uint32_t>(static_cast<std::uint32_t>(text.size()));
  out.put_string(text);
  out.put_bytes(sections.bytes());
  out.put<std::uint32_t>(detail::crc32_of(sections.bytes()));
  return std::move(out.bytes());
}

inline ModelFile decode_model(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (r.get_string(4, "magic") != std::string(kModelMagic, 4))
    throw FormatError(FormatErrorKind::BadMagic, "expected DPM1");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kModelVersion)
    throw FormatError(FormatErrorKind::VersionMismatch, "DPM1 version " + std::to_string(version));
  const auto len = r.get<std::uint32_t>("header length");
  const std::string text = r.get_string(len, "header");
  ModelFile f;
  std::vector<std::pair<std::string, std::size_t>> index;
  std::size_t proto_k = 0, proto_rows = 0;
  try {
    const auto h = nlohmann::json::parse(text);
    f.skeleton = std::make_shared<const Skeleton>(detail::skeleton_from_json(h.at("skeleton")));
    f.normalizer.mean = h.at("normalizer").at("mean").get<std::vector<double>>();
    f.normalizer.std = h.at("normalizer").at("std").get<std::vector<double>>();
    f.head = parse_head(h.at("head").get<std::string>());
    f.config = h.at("config").get<TrainConfig>();
    if (!h.at("network").is_null()) {
      const auto spec = h.at("network").get<NetworkSpec>();
      spec.validate();
      NetworkState st{spec, std::vector<LayerParams>(spec.layers.size()), 0};
      f.network = std::move(st);
    }
    if (!h.at("prototypes").is_null()) {
      proto_k = h.at("prototypes").at("K").get<std::size_t>();
      proto_rows = h.at("prototypes").at("rows").get<std::size_t>();
    }
    for (const auto &s : h.at("sections"))
      index.emplace_back(s.at("name").get<std::string>(), s.at("count").get<std::size_t>());
    for (const auto &e : h.at("history")) {
      auto num = [&](const char *k) { return e.at(k).is_null() ? std::nan("") : e.at(k).get<double>(); };
      f.history.push_back({e.at("epoch").get<std::size_t>(), e.at("lr").get<double>(), num("train_loss"),
                           num("val_loss"), num("val_mse"), num("val_error_cm")});
    }
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(FormatErrorKind::BadHeader, e.what());
  } catch (const ValidationError &e) {
    throw FormatError(FormatErrorKind::BadHeader, e.what());
  }

  const std::size_t begin = r.position();
  auto read_section = [&](const std::string &name, std::size_t expected) {
    for (const auto &[n, count] : index)
      if (n == name) {
        if (count != expected)
          throw FormatError(FormatErrorKind::BadHeader, "section '" + name + "' has the wrong size");
        std::vector<float> v(count);
        r.get_array(std::span<float>(v), name.c_str());
        return v;
      }
    throw FormatError(FormatErrorKind::BadHeader, "missing section '" + name + "'");
  };
  if (proto_k > 0) {
    const auto c = read_section("prototypes", proto_k * proto_rows);
    f.prototypes = PrototypeSet{f.skeleton->name, f.normalizer, proto_rows, proto_k,
                                std::vector<double>(c.begin(), c.end())};
  }
  if (f.network) {
    const auto shapes = f.network->spec.shapes();
    for (std::size_t i = 0; i < f.network->spec.layers.size(); ++i) {
      const auto &l = f.network->spec.layers[i];
      if (!l.has_params())
        continue;
      const auto [nw, nb] = layer_param_counts(l, i == 0 ? f.network->spec.input : shapes[i - 1]);
      auto &p = f.network->layers[i];
      p.weight = read_section("layer" + std::to_string(i) + ".weight", nw);
      p.bias = read_section("layer" + std::to_string(i) + ".bias", nb);
      p.weight_velocity.assign(nw, 0.0f);
      p.bias_velocity.assign(nb, 0.0f);
    }
  }
  const std::size_t end = r.position();
  const auto stored = r.get<std::uint32_t>("checksum");
  if (detail::crc32_of(r.span(begin, end)) != stored)
    throw FormatError(FormatErrorKind::Checksum, "model parameter CRC mismatch");
  if (r.remaining() != 0)
    throw FormatError(FormatErrorKind::BadHeader, "trailing bytes after checksum");
  return f;
}

inline void write_model(const ModelFile &f, const std::string &path) { detail::write_file(path, encode_model(f)); }
inline void write_model(const TrainedModel &m, const std::string &path) { write_model(ModelFile::from_model(m), path); }
inline ModelFile read_model_file(const std::string &path) { return decode_model(detail::read_file(path)); }
inline TrainedModel read_model(const std::string &path) { return read_model_file(path).to_model(); }

} // namespace depthpose
