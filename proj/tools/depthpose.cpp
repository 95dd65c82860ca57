// depthpose: command-line front end for synthesis, clustering, training,
// evaluation, inference, multiview fusion and hyperparameter selection.
//
// Exit codes: 0 success, 2 invalid arguments or configuration, 3 I/O or
// file-format error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "depthpose/depthpose.hpp"

using namespace depthpose;
namespace fs = std::filesystem;

namespace {

template <class Json = nlohmann::json> Json load_json(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error &e) {
    throw ValidationError("'" + path + "' is not valid JSON: " + e.what());
  }
}

void write_text(const std::string &path, const std::string &text) {
  detail::write_file(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t *>(text.data()), text.size()));
}

template <class T> void apply(const std::optional<T> &flag, T &field) {
  if (flag)
    field = *flag;
}

std::vector<Split> parse_splits(const std::string &s) {
  if (s == "all")
    return {Split::Train, Split::Val, Split::Test};
  return {parse_split(s)};
}

nlohmann::json joints_json(const Pose &p) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto &j : p.joints)
    a.push_back({j.x, j.y, j.z});
  return a;
}

Pose pose_from_json(const nlohmann::json &a, const SkeletonPtr &sk) {
  std::vector<Vec3> js;
  for (const auto &j : a)
    js.push_back({j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()});
  detail::require(js.size() == sk->joint_count(), "pose has " + std::to_string(js.size()) + " joints, skeleton has " +
                                                      std::to_string(sk->joint_count()));
  return Pose(sk, std::move(js));
}

bool has_returns(const DepthFrame &f) {
  return std::any_of(f.depth.begin(), f.depth.end(), [](float d) { return d > 0.0f; });
}

// Camera-frame poses of every view with returns in the chosen splits.
std::vector<PoseVector> camera_frame_vectors(const Dataset &ds, const std::vector<Split> &splits) {
  std::vector<PoseVector> out;
  for (Split sp : splits)
    for (const Sample *s : ds.split(sp))
      for (const auto &v : s->views)
        if (has_returns(v))
          out.push_back(vectorize(world_to_camera(s->pose, ds.cameras.at(v.camera))));
  return out;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string config, out;
  std::optional<std::size_t> scenes, cameras;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> skeleton;
  std::optional<int> height, width;
  std::optional<double> noise, background, train_fraction, val_fraction, ring_radius, jitter;
};

int run_synth(const SynthArgs &a) {
  SynthConfig cfg;
  if (!a.config.empty())
    cfg = load_json(a.config).get<SynthConfig>();
  apply(a.scenes, cfg.scenes);
  apply(a.cameras, cfg.cameras);
  apply(a.seed, cfg.seed);
  apply(a.skeleton, cfg.skeleton);
  apply(a.height, cfg.frame_height);
  apply(a.width, cfg.frame_width);
  apply(a.noise, cfg.noise_sigma);
  apply(a.background, cfg.background_depth);
  apply(a.train_fraction, cfg.train_fraction);
  apply(a.val_fraction, cfg.val_fraction);
  apply(a.ring_radius, cfg.ring_radius);
  apply(a.jitter, cfg.azimuth_jitter_deg);
  const Dataset ds = generate_dataset(cfg);
  const auto bytes = encode_dataset(ds);
  detail::write_file(a.out, bytes);
  std::printf("scenes %zu, views %zu, bytes %zu (train %zu, val %zu, test %zu)\n", ds.samples.size(),
              ds.frame_count(), bytes.size(), ds.split(Split::Train).size(), ds.split(Split::Val).size(),
              ds.split(Split::Test).size());
  return 0;
}

struct ClusterArgs {
  std::string dataset, out, split = "train";
  std::size_t k = 16;
  std::uint64_t seed = 0;
  std::size_t max_iters = 300;
};

int run_cluster(const ClusterArgs &a) {
  const Dataset ds = read_dataset(a.dataset);
  const auto vectors = camera_frame_vectors(ds, parse_splits(a.split));
  detail::require(vectors.size() >= 2, "cluster: need at least 2 poses in split '" + a.split + "'");
  detail::require(a.k <= vectors.size(), "cluster: K = " + std::to_string(a.k) + " exceeds the " +
                                             std::to_string(vectors.size()) + " available poses");
  ModelFile f;
  f.skeleton = ds.skeleton;
  f.normalizer = fit_normalizer(vectors);
  std::vector<PoseVector> normalized;
  for (const auto &v : vectors)
    normalized.push_back(normalize(v, f.normalizer));
  const KMeansOptions opt{a.k, substream_seed(a.seed, "kmeans"), a.max_iters, 1e-6, false};
  PrototypeSet set = learn_prototypes(normalized, opt, f.normalizer, ds.skeleton->name);
  for (auto &v : set.values)
    v = static_cast<float>(v);
  f.prototypes = std::move(set);
  f.config.k = a.k;
  f.config.seed = a.seed;
  write_model(f, a.out);
  std::printf("K %zu, poses %zu, skeleton %s\n", a.k, vectors.size(), ds.skeleton->name.c_str());
  return 0;
}

struct TrainArgs {
  std::string dataset, config, out, log, prototypes;
  std::optional<std::string> preset, head, net;
  std::optional<std::size_t> k, epochs, batch;
  std::optional<double> sigma2, alpha, lr, momentum;
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
};

int run_train(const TrainArgs &a) {
  TrainConfig cfg;
  if (a.preset)
    cfg = train_preset(*a.preset);
  if (!a.config.empty())
    load_json(a.config).get_to(cfg);
  apply(a.k, cfg.k);
  apply(a.epochs, cfg.epochs);
  apply(a.batch, cfg.batch);
  apply(a.sigma2, cfg.sigma2);
  apply(a.alpha, cfg.alpha);
  apply(a.lr, cfg.lr0);
  apply(a.momentum, cfg.momentum);
  apply(a.seed, cfg.seed);
  if (a.net) {
    cfg.preset = *a.net;
    cfg.network.reset();
  }
  if (a.head)
    cfg.head = parse_head(*a.head);
  cfg.threads = a.threads;

  std::optional<PrototypeSet> protos;
  if (!a.prototypes.empty()) {
    protos = read_model_file(a.prototypes).prototypes;
    detail::require(protos.has_value(), "'" + a.prototypes + "' holds no prototypes");
    if (!a.k)
      cfg.k = protos->k;
  }
  cfg.validate();
  const Dataset ds = read_dataset(a.dataset);

  std::ostringstream log;
  log.precision(10);
  log << "epoch,lr,train_loss,val_loss,val_mse,val_error_cm\n";
  const auto m = train(ds, cfg, protos ? &*protos : nullptr, [&](const EpochLog &e) {
    std::printf("epoch %zu  lr %.2e  train %.5f  val %.5f  val_mse %.5f  val_err %.2f cm\n", e.epoch, e.lr,
                e.train_loss, e.val_loss, e.val_mse, e.val_error_cm);
    std::fflush(stdout);
    log << e.epoch << ',' << e.lr << ',' << e.train_loss << ',' << e.val_loss << ',' << e.val_mse << ','
        << e.val_error_cm << '\n';
  });
  write_model(m, a.out);
  const std::string log_path = a.log.empty() ? fs::path(a.out).replace_extension(".loss.csv").string() : a.log;
  write_text(log_path, log.str());
  std::printf("model %s, loss log %s\n", a.out.c_str(), log_path.c_str());
  return 0;
}

struct EvalArgs {
  std::string model, dataset, out, split = "val";
  double t_max = 20.0, step = 0.5;
};

int run_eval(const EvalArgs &a) {
  const TrainedModel m = read_model(a.model);
  const Dataset ds = read_dataset(a.dataset);
  detail::require(ds.skeleton->name == m.skeleton->name, "eval: dataset skeleton '" + ds.skeleton->name +
                                                             "' does not match the model's '" + m.skeleton->name + "'");
  const Pose mean_pose = devectorize(PoseVector{m.normalizer.mean}, m.skeleton);
  std::vector<Pose> preds, gts, baseline, fused_preds, fused_gts;
  for (Split sp : parse_splits(a.split))
    for (const Sample *s : ds.split(sp)) {
      std::vector<Pose> world;
      for (const auto &v : s->views) {
        if (!has_returns(v))
          continue;
        const Camera &cam = ds.cameras.at(v.camera);
        preds.push_back(infer(m, v));
        gts.push_back(world_to_camera(s->pose, cam));
        baseline.push_back(mean_pose);
        world.push_back(camera_to_world(preds.back(), cam));
      }
      if (world.size() > 1) {
        fused_preds.push_back(fuse_multiview(world, FusionWeights::uniform(world.size())));
        fused_gts.push_back(s->pose);
      }
    }
  detail::require(!preds.empty(), "eval: split '" + a.split + "' has no frames");
  EvalReport r = evaluate(preds, gts, a.t_max, a.step);
  const EvalReport base = evaluate(baseline, gts, a.t_max, a.step);
  r.extras["mean_pose_baseline_error_cm"] = base.average_error_cm;
  r.extras["mean_pose_baseline_precision_at_10cm"] = base.precision_at_10cm;
  if (!fused_preds.empty()) {
    const EvalReport fr = evaluate(fused_preds, fused_gts, a.t_max, a.step);
    r.extras["fused_average_error_cm"] = fr.average_error_cm;
    r.extras["fused_precision_at_10cm"] = fr.precision_at_10cm;
    r.extras["fused_auc"] = fr.curve.auc;
    r.extras["fused_scenes"] = static_cast<double>(fr.samples);
  }

  fs::create_directories(a.out);
  const fs::path dir(a.out);
  nlohmann::json j = to_json(r);
  j["split"] = a.split;
  j["model"] = a.model;
  j["dataset"] = a.dataset;
  write_text((dir / "report.json").string(), j.dump(2) + "\n");
  write_text((dir / "curve.csv").string(), curve_to_csv(r.curve));
  write_text((dir / "curve.svg").string(), curve_to_svg(r.curve, "mAP (" + a.split + ")"));

  std::printf("frames %zu  average error %.2f cm  prec@10cm %.4f  AUC(0-%g cm) %.4f\n", r.samples,
              r.average_error_cm, r.precision_at_10cm, r.curve.t_max_cm, r.curve.auc);
  std::printf("mean-pose baseline %.2f cm\n", base.average_error_cm);
  if (!fused_preds.empty())
    std::printf("fused (%zu scenes) %.2f cm\n", fused_preds.size(), r.extras["fused_average_error_cm"]);
  for (const auto &[name, g] : r.groups)
    std::printf("  %-6s %.2f cm  prec@10cm %.4f  AUC %.4f\n", name.c_str(), g.average_error_cm, g.precision_at_10cm,
                g.auc);
  return 0;
}

struct InferArgs {
  std::string model, dataset, out, split = "all";
  std::optional<std::size_t> scene;
  std::vector<double> weights;
};

int run_infer(const InferArgs &a) {
  const TrainedModel m = read_model(a.model);
  const Dataset ds = read_dataset(a.dataset);
  std::optional<FusionWeights> w;
  if (!a.weights.empty())
    w = FusionWeights{a.weights};
  nlohmann::json out;
  out["skeleton"] = m.skeleton->name;
  out["joints"] = m.skeleton->joints;
  out["samples"] = nlohmann::json::array();
  std::size_t frames = 0;
  for (Split sp : parse_splits(a.split))
    for (const Sample *s : ds.split(sp)) {
      if (a.scene && s->scene != *a.scene)
        continue;
      Sample usable = *s;
      std::erase_if(usable.views, [](const DepthFrame &f) { return !has_returns(f); });
      if (usable.views.empty())
        continue;
      const auto est = infer_scene(m, ds, usable, w);
      nlohmann::json views = nlohmann::json::array();
      for (std::size_t v = 0; v < usable.views.size(); ++v)
        views.push_back({{"camera", ds.cameras.at(usable.views[v].camera).id},
                         {"camera_frame", joints_json(est.camera_frame[v])},
                         {"world", joints_json(est.world[v])}});
      frames += usable.views.size();
      out["samples"].push_back({{"scene", s->scene}, {"views", views}, {"fused", joints_json(*est.fused)}});
    }
  detail::require(!out["samples"].empty(), "infer: no matching frames");
  write_text(a.out, out.dump(1) + "\n");
  std::printf("scenes %zu, frames %zu -> %s\n", out["samples"].size(), frames, a.out.c_str());
  return 0;
}

struct FuseArgs {
  std::string predictions, out;
  std::vector<double> weights;
};

int run_fuse(const FuseArgs &a) {
  const auto in = load_json(a.predictions);
  std::shared_ptr<const Skeleton> sk;
  try {
    sk = std::make_shared<const Skeleton>(skeleton_preset(in.at("skeleton").get<std::string>()));
  } catch (const nlohmann::json::exception &e) {
    throw ValidationError(std::string("fuse: predictions file has no skeleton: ") + e.what());
  }
  nlohmann::json out;
  out["skeleton"] = sk->name;
  out["joints"] = sk->joints;
  out["samples"] = nlohmann::json::array();
  for (const auto &s : in.at("samples")) {
    std::vector<Pose> world;
    for (const auto &v : s.at("views"))
      world.push_back(pose_from_json(v.at("world"), sk));
    const FusionWeights w = a.weights.empty() ? FusionWeights::uniform(world.size()) : FusionWeights{a.weights};
    out["samples"].push_back({{"scene", s.at("scene")}, {"fused", joints_json(fuse_multiview(world, w))}});
  }
  write_text(a.out, out.dump(1) + "\n");
  std::printf("fused %zu scenes -> %s\n", out["samples"].size(), a.out.c_str());
  return 0;
}

struct HpselectArgs {
  std::string scores, out;
  double alpha = 0.05;
};

// Accepts {"name": [scores], ...} or [{"name": ..., "scores": [...]}, ...].
int run_hpselect(const HpselectArgs &a) {
  const auto in = load_json<nlohmann::ordered_json>(a.scores); // keeps the file's config order
  std::vector<std::pair<std::string, std::vector<double>>> runs;
  try {
    if (in.is_object())
      for (const auto &[name, scores] : in.items())
        runs.emplace_back(name, scores.get<std::vector<double>>());
    else
      for (const auto &r : in)
        runs.emplace_back(r.at("name").get<std::string>(), r.at("scores").get<std::vector<double>>());
  } catch (const nlohmann::json::exception &e) {
    throw ValidationError(std::string("hpselect: malformed scores file: ") + e.what());
  }
  const auto sel = select_hyperparameter(runs, a.alpha);
  const std::string csv = pvalues_to_csv(sel);
  if (!a.out.empty())
    write_text(a.out, csv);
  std::fputs(csv.c_str(), stdout);
  std::printf("chosen: %s (mean %.6g)\n", sel.configs[sel.chosen].c_str(), sel.mean_scores[sel.chosen]);
  std::string tied;
  for (const auto &t : sel.tied)
    tied += (tied.empty() ? "" : ", ") + t;
  std::printf("statistically tied (p >= %g): %s\n", a.alpha, tied.empty() ? "none" : tied.c_str());
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Deep Depth Pose toolkit: synthetic data, prototypes, training and evaluation", "depthpose"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  unsigned threads = 1;
  auto add_threads = [&](CLI::App *sub) {
    sub->add_option("--threads", threads, "Worker threads (default $DEPTHPOSE_THREADS or 1)")
        ->envname("DEPTHPOSE_THREADS")
        ->check(CLI::PositiveNumber);
  };

  SynthArgs sa;
  auto *synth = app.add_subcommand("synth", "Generate a synthetic multiview depth dataset (DPC1)");
  synth->add_option("--config", sa.config, "JSON generator config");
  synth->add_option("--scenes", sa.scenes, "Number of scenes");
  synth->add_option("--cameras", sa.cameras, "Cameras on the ring");
  synth->add_option("--seed", sa.seed, "Master seed");
  synth->add_option("--skeleton", sa.skeleton, "ubc3v18 or itop15");
  synth->add_option("--height", sa.height, "Frame height in pixels");
  synth->add_option("--width", sa.width, "Frame width in pixels");
  synth->add_option("--noise", sa.noise, "Gaussian depth noise sigma (m)");
  synth->add_option("--background", sa.background, "Background plane depth (m), 0 = none");
  synth->add_option("--train-fraction", sa.train_fraction, "Fraction of scenes tagged train");
  synth->add_option("--val-fraction", sa.val_fraction, "Fraction of scenes tagged val");
  synth->add_option("--ring-radius", sa.ring_radius, "Camera ring radius (m)");
  synth->add_option("--azimuth-jitter", sa.jitter, "Camera azimuth jitter (degrees)");
  synth->add_option("-o,--out", sa.out, "Output .dpc file")->required();

  ClusterArgs ca;
  auto *cluster = app.add_subcommand("cluster", "Learn K pose prototypes with k-means (DPM1 scaffold)");
  cluster->add_option("dataset", ca.dataset, "Input DPC1 dataset")->required();
  cluster->add_option("-k,--K", ca.k, "Number of prototypes")->check(CLI::PositiveNumber);
  cluster->add_option("--split", ca.split, "train, val, test or all")->capture_default_str();
  cluster->add_option("--seed", ca.seed, "Seed");
  cluster->add_option("--max-iters", ca.max_iters, "Lloyd iteration cap")->capture_default_str();
  cluster->add_option("-o,--out", ca.out, "Output .dpm file")->required();

  TrainArgs ta;
  auto *trn = app.add_subcommand("train", "Train a DDP (or baseline) network");
  trn->add_option("dataset", ta.dataset, "Input DPC1 dataset")->required();
  trn->add_option("--config", ta.config, "JSON training config");
  trn->add_option("--preset", ta.preset, "Hyperparameter preset: ubc3v, itop, itop-mixed");
  trn->add_option("-k,--K", ta.k, "Number of prototypes");
  trn->add_option("--sigma2", ta.sigma2, "Smooth-L1 sigma^2");
  trn->add_option("--alpha", ta.alpha, "L1 weight on the prototype weights");
  trn->add_option("--lr", ta.lr, "Initial learning rate");
  trn->add_option("--momentum", ta.momentum, "SGD momentum");
  trn->add_option("--epochs", ta.epochs, "Epochs");
  trn->add_option("--batch", ta.batch, "Mini-batch size");
  trn->add_option("--head", ta.head, "ddp or baseline");
  trn->add_option("--net", ta.net, "Network preset: ddp-desk or ddp-paper");
  trn->add_option("--prototypes", ta.prototypes, "Prototype file from `cluster`");
  trn->add_option("--seed", ta.seed, "Seed");
  trn->add_option("--log", ta.log, "Loss log CSV (default: <out>.loss.csv)");
  trn->add_option("-o,--out", ta.out, "Output .dpm model")->required();
  add_threads(trn);

  EvalArgs ea;
  auto *eval = app.add_subcommand("eval", "Evaluate a model: report JSON, mAP curve CSV and SVG");
  eval->add_option("model", ea.model, "DPM1 model")->required();
  eval->add_option("dataset", ea.dataset, "DPC1 dataset")->required();
  eval->add_option("--split", ea.split, "train, val, test or all")->capture_default_str();
  eval->add_option("--t-max", ea.t_max, "Upper end of the AUC range (cm)")->capture_default_str();
  eval->add_option("--step", ea.step, "Threshold step (cm)")->capture_default_str();
  eval->add_option("-o,--out", ea.out, "Output directory")->required();

  InferArgs ia;
  auto *inf = app.add_subcommand("infer", "Per-view and fused pose estimates as JSON");
  inf->add_option("model", ia.model, "DPM1 model")->required();
  inf->add_option("dataset", ia.dataset, "DPC1 dataset")->required();
  inf->add_option("--split", ia.split, "train, val, test or all")->capture_default_str();
  inf->add_option("--scene", ia.scene, "Only this scene index");
  inf->add_option("--weights", ia.weights, "Fusion weights, comma separated")->delimiter(',');
  inf->add_option("-o,--out", ia.out, "Output JSON")->required();

  FuseArgs fa;
  auto *fuse = app.add_subcommand("fuse", "Fuse per-view world-frame estimates from `infer`");
  fuse->add_option("predictions", fa.predictions, "JSON written by `infer`")->required();
  fuse->add_option("--weights", fa.weights, "Per-view weights summing to 1, comma separated")->delimiter(',');
  fuse->add_option("-o,--out", fa.out, "Output JSON")->required();

  HpselectArgs ha;
  auto *hp = app.add_subcommand("hpselect", "Pairwise Mann-Whitney U tests over per-seed validation scores");
  hp->add_option("scores", ha.scores, "JSON: {config: [scores...]}")->required();
  hp->add_option("--alpha", ha.alpha, "Significance level")->capture_default_str();
  hp->add_option("-o,--out", ha.out, "p-value matrix CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  ta.threads = threads;
  try {
    if (*synth)
      return run_synth(sa);
    if (*cluster)
      return run_cluster(ca);
    if (*trn)
      return run_train(ta);
    if (*eval)
      return run_eval(ea);
    if (*inf)
      return run_infer(ia);
    if (*fuse)
      return run_fuse(fa);
    if (*hp)
      return run_hpselect(ha);
  } catch (const ValidationError &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const IoError &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const fs::filesystem_error &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const nlohmann::json::exception &e) {
    std::cerr << "error: bad JSON content: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
