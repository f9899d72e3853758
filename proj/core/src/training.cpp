// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#include "invrender/training.h"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <functional>
#include <set>

#include "invrender/image_io.h"

namespace invrender {

using json = nlohmann::ordered_json;

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::kEnvA: return "env_a";
    case Stage::kEnvB: return "env_b";
    case Stage::kIrnSyn: return "irn_syn";
    case Stage::kRarSyn: return "rar_syn";
    case Stage::kIrnRealIiw: return "irn_real_iiw";
    case Stage::kIrnRealNyu: return "irn_real_nyu";
  }
  throw ArgumentError("stage_name: bad stage");
}

Stage stage_from_name(const std::string& name) {
  if (name == "env_a") return Stage::kEnvA;
  if (name == "env_b") return Stage::kEnvB;
  if (name == "irn_syn") return Stage::kIrnSyn;
  if (name == "rar_syn") return Stage::kRarSyn;
  if (name == "irn_real_iiw") return Stage::kIrnRealIiw;
  if (name == "irn_real_nyu") return Stage::kIrnRealNyu;
  throw ArgumentError("unknown stage '" + name + "'");
}

namespace {

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

std::string TrainConfig::to_json() const {
  json j;
  j["stage"] = {{"name", stage_name(stage)},
                {"steps", steps},
                {"batch_size", batch_size},
                {"seed", seed},
                {"checkpoint_every", checkpoint_every},
                {"checkpoint_keep", checkpoint_keep},
                {"stop_at_fraction", stop_at_fraction},
                {"smooth_window", smooth_window},
                {"use_rar", use_rar},
                {"weighting", weighting == EnvWeighting::kSolidAngle
                                  ? "solid_angle"
                                  : "literal_sum"}};
  j["loss"] = {{"lambda1", loss.lambda1},   {"lambda2", loss.lambda2},
               {"lambda3", loss.lambda3},   {"delta", loss.delta},
               {"iiw_albedo", loss.iiw_albedo}, {"iiw_normal", loss.iiw_normal},
               {"iiw_light", loss.iiw_light},   {"iiw_recon", loss.iiw_recon},
               {"iiw_weak", loss.iiw_weak},     {"nyu_albedo", loss.nyu_albedo},
               {"nyu_light", loss.nyu_light},   {"nyu_recon", loss.nyu_recon},
               {"nyu_weak", loss.nyu_weak},
               {"patch_radius", loss.patch_radius},
               {"albedo_floor", loss.albedo_floor}};
  j["optimizer"] = {{"lr", optimizer.lr},
                    {"beta1", optimizer.beta1},
                    {"beta2", optimizer.beta2},
                    {"eps", optimizer.eps}};
  j["model"] = json::parse(model.to_json());
  j["data"] = {{"synthetic_manifest", synthetic_manifest},
               {"real_manifest", real_manifest},
               {"env_dir", env_dir},
               {"split", split}};
  return j.dump(2);
}

TrainConfig TrainConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("train config: ") + e.what());
  }
  TrainConfig cfg;
  if (j.contains("stage")) {
    const json& s = j["stage"];
    if (s.contains("name")) cfg.stage = stage_from_name(s["name"]);
    cfg.steps = s.value("steps", cfg.steps);
    cfg.batch_size = s.value("batch_size", cfg.batch_size);
    cfg.seed = s.value("seed", cfg.seed);
    cfg.checkpoint_every = s.value("checkpoint_every", cfg.checkpoint_every);
    cfg.checkpoint_keep = s.value("checkpoint_keep", cfg.checkpoint_keep);
    cfg.stop_at_fraction = s.value("stop_at_fraction", cfg.stop_at_fraction);
    cfg.smooth_window = s.value("smooth_window", cfg.smooth_window);
    cfg.use_rar = s.value("use_rar", cfg.use_rar);
    std::string wt = s.value("weighting", "literal_sum");
    if (wt == "solid_angle")
      cfg.weighting = EnvWeighting::kSolidAngle;
    else if (wt == "literal_sum")
      cfg.weighting = EnvWeighting::kLiteralSum;
    else
      throw ParseError("train config: unknown weighting '" + wt + "'");
  }
  if (j.contains("loss")) {
    const json& l = j["loss"];
    cfg.loss.lambda1 = l.value("lambda1", cfg.loss.lambda1);
    cfg.loss.lambda2 = l.value("lambda2", cfg.loss.lambda2);
    cfg.loss.lambda3 = l.value("lambda3", cfg.loss.lambda3);
    cfg.loss.delta = l.value("delta", cfg.loss.delta);
    cfg.loss.iiw_albedo = l.value("iiw_albedo", cfg.loss.iiw_albedo);
    cfg.loss.iiw_normal = l.value("iiw_normal", cfg.loss.iiw_normal);
    cfg.loss.iiw_light = l.value("iiw_light", cfg.loss.iiw_light);
    cfg.loss.iiw_recon = l.value("iiw_recon", cfg.loss.iiw_recon);
    cfg.loss.iiw_weak = l.value("iiw_weak", cfg.loss.iiw_weak);
    cfg.loss.nyu_albedo = l.value("nyu_albedo", cfg.loss.nyu_albedo);
    cfg.loss.nyu_light = l.value("nyu_light", cfg.loss.nyu_light);
    cfg.loss.nyu_recon = l.value("nyu_recon", cfg.loss.nyu_recon);
    cfg.loss.nyu_weak = l.value("nyu_weak", cfg.loss.nyu_weak);
    cfg.loss.patch_radius = l.value("patch_radius", cfg.loss.patch_radius);
    cfg.loss.albedo_floor = l.value("albedo_floor", cfg.loss.albedo_floor);
  }
  if (j.contains("optimizer")) {
    const json& o = j["optimizer"];
    cfg.optimizer.lr = o.value("lr", cfg.optimizer.lr);
    cfg.optimizer.beta1 = o.value("beta1", cfg.optimizer.beta1);
    cfg.optimizer.beta2 = o.value("beta2", cfg.optimizer.beta2);
    cfg.optimizer.eps = o.value("eps", cfg.optimizer.eps);
  }
  if (j.contains("model")) cfg.model = ModelConfig::from_json(j["model"].dump());
  if (j.contains("data")) {
    const json& d = j["data"];
    cfg.synthetic_manifest = d.value("synthetic_manifest", "");
    cfg.real_manifest = d.value("real_manifest", "");
    cfg.env_dir = d.value("env_dir", "");
    cfg.split = d.value("split", "train");
  }
  return cfg;
}

TrainConfig TrainConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open train config: " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return from_json_text(text);
}

// ---------------------------------------------------------------------------
// Logging

TrainLogger::TrainLogger(std::filesystem::path path, std::string stage)
    : path_(std::move(path)), stage_(std::move(stage)) {
  if (!path_.empty()) {
    std::ofstream out(path_, std::ios::trunc);
    if (!out) throw IoError("cannot open training log: " + path_.string());
  }
}

void TrainLogger::log(int step, std::vector<std::pair<std::string, real>> terms) {
  StepLog entry;
  entry.step = step;
  entry.terms = std::move(terms);
  if (!path_.empty()) {
    json j;
    j["step"] = step;
    j["stage"] = stage_;
    for (const auto& [k, v] : entry.terms) j[k] = v;
    std::ofstream out(path_, std::ios::app);
    out << j.dump() << "\n";
  }
  entries_.push_back(std::move(entry));
}

// ---------------------------------------------------------------------------
// Internal helpers

namespace {

// Deterministic shuffled batch stream: Fisher-Yates reshuffle per epoch.
class Batcher {
 public:
  Batcher(size_t n, int batch, Rng rng)
      : n_(n), batch_(std::min<size_t>(batch, n)), rng_(rng) {
    if (n_ == 0) throw ArgumentError("Batcher: empty dataset");
    order_.resize(n_);
    for (size_t i = 0; i < n_; ++i) order_[i] = i;
    reshuffle();
  }

  std::vector<size_t> next() {
    std::vector<size_t> out;
    out.reserve(batch_);
    for (size_t k = 0; k < batch_; ++k) {
      if (pos_ == n_) {
        reshuffle();
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    for (size_t i = n_; i > 1; --i) {
      size_t j = rng_.next_u64() % i;
      std::swap(order_[i - 1], order_[j]);
    }
  }
  size_t n_, batch_;
  size_t pos_ = 0;
  std::vector<size_t> order_;
  Rng rng_;
};

Tensor stack_first(const std::vector<const Tensor*>& parts) {
  auto shape = parts[0]->shape();
  shape[0] = static_cast<int>(parts.size());
  size_t per = static_cast<size_t>(parts[0]->size());
  std::vector<real> data;
  data.reserve(per * parts.size());
  for (const auto* p : parts)
    data.insert(data.end(), p->data(), p->data() + per);
  return Tensor::from_vector(std::move(shape), std::move(data));
}

// Per-sample constant tensors prepared once per stage.
struct PreparedSample {
  const SceneSample* sample = nullptr;
  Tensor image, albedo, normal, mask;  // [1,...]
};

std::vector<PreparedSample> prepare(const std::vector<const SceneSample*>& scenes,
                                    bool need_albedo, bool need_normal) {
  std::vector<PreparedSample> out;
  for (const auto* s : scenes) {
    PreparedSample p;
    p.sample = s;
    SampleBatch b = make_batch({s});
    p.image = b.image;
    p.mask = b.mask;
    if (need_albedo) {
      if (!b.has_albedo) continue;
      p.albedo = b.albedo;
    }
    if (need_normal) {
      if (!b.has_normal) continue;
      p.normal = b.normal;
    }
    out.push_back(std::move(p));
  }
  return out;
}

struct BatchTensors {
  Tensor image, albedo, normal, mask;
  std::vector<const SceneSample*> samples;
};

BatchTensors gather(const std::vector<PreparedSample>& prep,
                    const std::vector<size_t>& idx) {
  BatchTensors b;
  std::vector<const Tensor*> im, al, nm, mk;
  for (size_t i : idx) {
    im.push_back(&prep[i].image);
    mk.push_back(&prep[i].mask);
    if (prep[i].albedo.defined()) al.push_back(&prep[i].albedo);
    if (prep[i].normal.defined()) nm.push_back(&prep[i].normal);
    b.samples.push_back(prep[i].sample);
  }
  b.image = stack_first(im);
  b.mask = stack_first(mk);
  if (al.size() == idx.size()) b.albedo = stack_first(al);
  if (nm.size() == idx.size()) b.normal = stack_first(nm);
  return b;
}

class CheckpointWriter {
 public:
  CheckpointWriter(std::filesystem::path dir, std::string stage,
                   const TrainConfig& cfg,
                   std::function<void(const std::filesystem::path&, int)> save)
      : dir_(std::move(dir)), stage_(std::move(stage)), every_(cfg.checkpoint_every),
        keep_(cfg.checkpoint_keep), save_(std::move(save)) {}

  void maybe(int step) {
    if (dir_.empty() || every_ <= 0) return;
    if ((step + 1) % every_ != 0) return;
    auto path = dir_ / (stage_ + "_step" + std::to_string(step + 1) + ".ckpt");
    save_(path, step + 1);
    written_.push_back(path);
    while (static_cast<int>(written_.size()) > keep_) {
      std::filesystem::remove(written_.front());
      std::filesystem::remove(written_.front().string() + ".json");
      written_.erase(written_.begin());
    }
  }

  std::filesystem::path final(int step, const std::string& suffix = "") {
    if (dir_.empty()) return {};
    auto path = dir_ / (stage_ + suffix + ".ckpt");
    save_(path, step);
    return path;
  }

 private:
  std::filesystem::path dir_;
  std::string stage_;
  int every_, keep_;
  std::function<void(const std::filesystem::path&, int)> save_;
  std::vector<std::filesystem::path> written_;
};

using StepFn = std::function<real(const std::vector<size_t>&, int,
                                  std::vector<std::pair<std::string, real>>*)>;

StageResult run_loop(const TrainConfig& cfg, size_t n_samples,
                     TrainLogger& logger, CheckpointWriter& ckpt,
                     const StepFn& step_fn) {
  Batcher batcher(n_samples, cfg.batch_size, Rng(cfg.seed).fork("shuffle"));
  StageResult res;
  std::deque<real> window;
  real best = std::numeric_limits<real>::infinity();
  for (int step = 0; step < cfg.steps; ++step) {
    auto idx = batcher.next();
    std::vector<std::pair<std::string, real>> terms;
    real loss = step_fn(idx, step, &terms);
    if (!std::isfinite(loss)) {
      ckpt.final(step, "_lastgood");
      throw NumericError("training aborted: non-finite loss at step " +
                         std::to_string(step) +
                         " (last-good checkpoint written)");
    }
    res.losses.push_back(loss);
    logger.log(step, std::move(terms));
    if (step == 0) res.initial_loss = loss;
    window.push_back(loss);
    if (static_cast<int>(window.size()) > cfg.smooth_window) window.pop_front();
    real smoothed = 0.0;
    for (real v : window) smoothed += v;
    smoothed /= static_cast<real>(window.size());
    best = std::min(best, smoothed);
    ckpt.maybe(step);
    if (cfg.stop_at_fraction > 0.0 &&
        static_cast<int>(window.size()) >= cfg.smooth_window &&
        smoothed <= cfg.stop_at_fraction * res.initial_loss) {
      res.steps_run = step + 1;
      break;
    }
  }
  if (res.steps_run == 0) res.steps_run = static_cast<int>(res.losses.size());
  res.best_smoothed = best;
  res.final_loss = res.losses.empty() ? 0.0 : res.losses.back();
  res.log = logger.entries();
  return res;
}

std::filesystem::path log_path(const std::filesystem::path& out_dir,
                               const std::string& stage) {
  return out_dir.empty() ? std::filesystem::path{}
                         : out_dir / (stage + "_log.jsonl");
}

}  // namespace

// ---------------------------------------------------------------------------
// Caches

void save_env_cache(const std::filesystem::path& dir, const EnvCache& cache,
                    const std::string& config_hash) {
  std::filesystem::create_directories(dir);
  json meta;
  meta["config_hash"] = config_hash;
  std::vector<std::string> ids;
  for (const auto& [id, env] : cache) {
    ids.push_back(id);
    Image img(env.rows, env.cols, 3);
    for (int r = 0; r < env.rows; ++r)
      for (int c = 0; c < env.cols; ++c)
        for (int k = 0; k < 3; ++k) img.at(r, c, k) = env.at(r, c, k);
    write_pfm(dir / (id + ".pfm"), img);
  }
  meta["ids"] = ids;
  std::ofstream out(dir / "meta.json");
  if (!out) throw IoError("cannot write env cache meta");
  out << meta.dump(2) << "\n";
}

EnvCache load_env_cache(const std::filesystem::path& dir,
                        const std::string& expected_config_hash) {
  std::ifstream in(dir / "meta.json");
  if (!in) throw IoError("missing env cache meta: " + dir.string());
  json meta;
  try {
    in >> meta;
  } catch (const json::exception& e) {
    throw ParseError(std::string("env cache meta: ") + e.what());
  }
  if (meta.value("config_hash", "") != expected_config_hash)
    throw ValidationError("stale environment cache (config hash mismatch)");
  EnvCache cache;
  for (const auto& id : meta["ids"]) {
    Image img = read_pfm(dir / (id.get<std::string>() + ".pfm"));
    EnvironmentMap env(img.height(), img.width());
    for (int r = 0; r < env.rows; ++r)
      for (int c = 0; c < env.cols; ++c)
        for (int k = 0; k < 3; ++k)
          env.at(r, c, k) = std::max(img.at(r, c, k), 0.0);
    cache.emplace(id.get<std::string>(), std::move(env));
  }
  return cache;
}

// ---------------------------------------------------------------------------
// Stage: ENV_A

StageResult train_env_stage_a(ModelBundle& bundle,
                              const std::vector<const SceneSample*>& scenes,
                              const std::vector<EnvironmentMap>& pool,
                              const TrainConfig& cfg,
                              const std::filesystem::path& out_dir) {
  if (pool.empty())
    throw ArgumentError("train_env_stage_a: empty environment set");
  auto prep = prepare(scenes, true, true);
  if (prep.empty())
    throw ArgumentError("train_env_stage_a: no scenes with albedo+normal GT");

  EnvEstimator& net = *bundle.env_estimator;
  AdamOptimizer opt(net.parameters(), cfg.optimizer.lr, cfg.optimizer.beta1,
                    cfg.optimizer.beta2, cfg.optimizer.eps);
  Rng env_rng = Rng(cfg.seed).fork("env_pick");

  // Direct renders are deterministic per (scene, env); cache them.
  std::map<std::pair<size_t, size_t>, Tensor> direct_cache;
  auto direct_image = [&](size_t si, size_t ei) -> const Tensor& {
    auto key = std::make_pair(si, ei);
    auto it = direct_cache.find(key);
    if (it != direct_cache.end()) return it->second;
    const SceneSample* s = prep[si].sample;
    ImageMap img = shade_direct(*s->albedo_gt, *s->normal_gt, pool[ei],
                                cfg.weighting);
    auto [ins, ok] = direct_cache.emplace(key, image_to_tensor(img.pixels));
    return ins->second;
  };

  TrainLogger logger(log_path(out_dir, "env_a"), "env_a");
  CheckpointWriter ckpt(out_dir, "env_a", cfg,
                        [&](const std::filesystem::path& p, int step) {
                          save_checkpoint(p, net.parameters(), net.buffers(),
                                          {"env_a", hex64(bundle.config.hash()),
                                           cfg.seed, step});
                        });

  auto step_fn = [&](const std::vector<size_t>& idx, int,
                     std::vector<std::pair<std::string, real>>* terms) {
    std::vector<const Tensor*> images, albedos, normals;
    std::vector<const EnvironmentMap*> targets;
    for (size_t i : idx) {
      size_t ei = env_rng.next_u64() % pool.size();
      images.push_back(&direct_image(i, ei));
      albedos.push_back(&prep[i].albedo);
      normals.push_back(&prep[i].normal);
      targets.push_back(&pool[ei]);
    }
    Tensor image = stack_first(images);
    Tensor albedo = stack_first(albedos);
    Tensor normal = stack_first(normals);
    Tensor target = envs_to_tensor(targets);

    opt.zero_grad();
    Tensor pred = net.forward(image, albedo, normal, true);
    Tensor loss = mean_abs(sub(pred, target));
    loss.backward();
    opt.step();
    real v = loss.item();
    terms->push_back({"loss", v});
    return v;
  };

  StageResult res = run_loop(cfg, prep.size(), logger, ckpt, step_fn);
  res.checkpoint = ckpt.final(res.steps_run);
  return res;
}

// ---------------------------------------------------------------------------
// Stage: ENV_B

StageResult train_env_stage_b(ModelBundle& bundle,
                              const std::vector<const SceneSample*>& scenes,
                              const TrainConfig& cfg,
                              const std::filesystem::path& out_dir,
                              EnvCache* lhat_out) {
  auto prep = prepare(scenes, true, true);
  if (prep.empty())
    throw ArgumentError("train_env_stage_b: no usable scenes (missing GT)");
  StageResult pre_res;
  if (prep.size() != scenes.size())
    pre_res.losses.clear();  // skipped samples are simply not trained on

  EnvEstimator& net = *bundle.env_estimator;
  AdamOptimizer opt(net.parameters(), cfg.optimizer.lr, cfg.optimizer.beta1,
                    cfg.optimizer.beta2, cfg.optimizer.eps);
  const DirectionGrid grid =
      direction_grid(bundle.config.env_rows, bundle.config.env_cols);

  TrainLogger logger(log_path(out_dir, "env_b"), "env_b");
  CheckpointWriter ckpt(out_dir, "env_b", cfg,
                        [&](const std::filesystem::path& p, int step) {
                          save_checkpoint(p, net.parameters(), net.buffers(),
                                          {"env_b", hex64(bundle.config.hash()),
                                           cfg.seed, step});
                        });

  auto step_fn = [&](const std::vector<size_t>& idx, int,
                     std::vector<std::pair<std::string, real>>* terms) {
    BatchTensors b = gather(prep, idx);
    opt.zero_grad();
    Tensor pred = net.forward(b.image, b.albedo, b.normal, true);
    Tensor direct =
        shade_direct_t(b.albedo, b.normal, pred, grid, b.mask, cfg.weighting);
    Tensor loss = reconstruction_loss(b.image, direct, Tensor(), b.mask);
    loss.backward();
    opt.step();
    real v = loss.item();
    terms->push_back({"loss", v});
    return v;
  };

  StageResult res = run_loop(cfg, prep.size(), logger, ckpt, step_fn);
  res.checkpoint = ckpt.final(res.steps_run);

  std::vector<const SceneSample*> usable;
  for (const auto& p : prep) usable.push_back(p.sample);
  EnvCache cache = compute_env_targets(bundle, usable);
  if (!out_dir.empty())
    save_env_cache(out_dir / "lhat_cache", cache, hex64(bundle.config.hash()));
  if (lhat_out) *lhat_out = std::move(cache);
  return res;
}

EnvCache compute_env_targets(ModelBundle& bundle,
                             const std::vector<const SceneSample*>& scenes) {
  EnvCache cache;
  NoGradGuard guard;
  for (const auto* s : scenes) {
    if (!s->albedo_gt || !s->normal_gt) continue;
    SampleBatch b = make_batch({s});
    Tensor pred = bundle.env_estimator->forward(b.image, b.albedo, b.normal,
                                                false);
    cache.emplace(s->id, tensor_to_env(pred, 0, bundle.config.env_rows,
                                       bundle.config.env_cols));
  }
  return cache;
}

// ---------------------------------------------------------------------------
// Stage: IRN_SYN

StageResult train_irn_synthetic(ModelBundle& bundle,
                                const std::vector<const SceneSample*>& scenes,
                                const EnvCache& lhat, const TrainConfig& cfg,
                                const std::filesystem::path& out_dir) {
  std::vector<const SceneSample*> usable;
  for (const auto* s : scenes)
    if (lhat.count(s->id)) usable.push_back(s);
  auto prep = prepare(usable, true, true);
  if (prep.empty())
    throw ArgumentError(
        "train_irn_synthetic: no scenes with GT and cached lighting targets");

  Irn& net = *bundle.irn;
  AdamOptimizer opt(net.parameters(), cfg.optimizer.lr, cfg.optimizer.beta1,
                    cfg.optimizer.beta2, cfg.optimizer.eps);
  const DirectionGrid grid =
      direction_grid(bundle.config.env_rows, bundle.config.env_cols);

  std::vector<Tensor> lhat_tensors;  // [1,3,cells] per prepared sample
  for (const auto& p : prep)
    lhat_tensors.push_back(env_to_tensor(lhat.at(p.sample->id)));

  TrainLogger logger(log_path(out_dir, "irn_syn"), "irn_syn");
  CheckpointWriter ckpt(out_dir, "irn_syn", cfg,
                        [&](const std::filesystem::path& p, int step) {
                          save_checkpoint(p, net.parameters(), net.buffers(),
                                          {"irn_syn",
                                           hex64(bundle.config.hash()),
                                           cfg.seed, step});
                        });

  auto step_fn = [&](const std::vector<size_t>& idx, int,
                     std::vector<std::pair<std::string, real>>* terms) {
    BatchTensors b = gather(prep, idx);
    std::vector<const Tensor*> envs;
    for (size_t i : idx) envs.push_back(&lhat_tensors[i]);
    Tensor target_env = stack_first(envs);

    opt.zero_grad();
    IrnOutputs out = net.forward(b.image, true);
    SupervisedLossResult l = supervised_loss(
        out.albedo, out.normal, out.env, b.albedo, b.normal, target_env,
        b.mask, grid, cfg.weighting, cfg.loss);
    l.total.backward();
    opt.step();
    real v = l.total.item();
    terms->push_back({"loss", v});
    terms->push_back({"normal", l.normal_term});
    terms->push_back({"albedo", l.albedo_term});
    terms->push_back({"lighting", l.lighting_term});
    return v;
  };

  StageResult res = run_loop(cfg, prep.size(), logger, ckpt, step_fn);
  res.checkpoint = ckpt.final(res.steps_run);
  return res;
}

// ---------------------------------------------------------------------------
// Stage: RAR_SYN

StageResult train_rar_synthetic(ModelBundle& bundle,
                                const std::vector<const SceneSample*>& scenes,
                                const EnvCache& lhat, const TrainConfig& cfg,
                                const std::filesystem::path& out_dir) {
  std::vector<const SceneSample*> usable;
  for (const auto* s : scenes)
    if (lhat.count(s->id)) usable.push_back(s);
  auto prep = prepare(usable, true, true);
  if (prep.empty())
    throw ArgumentError(
        "train_rar_synthetic: no scenes with GT and cached lighting targets");

  Rar& net = *bundle.rar;
  AdamOptimizer opt(net.parameters(), cfg.optimizer.lr, cfg.optimizer.beta1,
                    cfg.optimizer.beta2, cfg.optimizer.eps);

  // Direct component under approximated-GT lighting is constant per sample.
  std::vector<Tensor> direct;
  for (const auto& p : prep) {
    ImageMap img = shade_direct(*p.sample->albedo_gt, *p.sample->normal_gt,
                                lhat.at(p.sample->id), cfg.weighting);
    direct.push_back(image_to_tensor(img.pixels));
  }

  TrainLogger logger(log_path(out_dir, "rar_syn"), "rar_syn");
  CheckpointWriter ckpt(out_dir, "rar_syn", cfg,
                        [&](const std::filesystem::path& p, int step) {
                          save_checkpoint(p, net.parameters(), net.buffers(),
                                          {"rar_syn",
                                           hex64(bundle.config.hash()),
                                           cfg.seed, step});
                        });

  auto step_fn = [&](const std::vector<size_t>& idx, int,
                     std::vector<std::pair<std::string, real>>* terms) {
    BatchTensors b = gather(prep, idx);
    std::vector<const Tensor*> ds;
    for (size_t i : idx) ds.push_back(&direct[i]);
    Tensor direct_b = stack_first(ds);

    opt.zero_grad();
    Tensor residual = net.forward(b.image, b.albedo, b.normal, true);
    Tensor loss = reconstruction_loss(b.image, direct_b, residual, b.mask);
    loss.backward();
    opt.step();
    real v = loss.item();
    terms->push_back({"loss", v});
    return v;
  };

  StageResult res = run_loop(cfg, prep.size(), logger, ckpt, step_fn);
  res.checkpoint = ckpt.final(res.steps_run);
  return res;
}

// ---------------------------------------------------------------------------
// Stage: IRN_REAL

PseudoCache compute_pseudo_targets(ModelBundle& bundle,
                                   const std::vector<const SceneSample*>& scenes) {
  PseudoCache cache;
  NoGradGuard guard;
  for (const auto* s : scenes) {
    SampleBatch b = make_batch({s});
    IrnOutputs out = bundle.irn->forward(b.image, false);
    PseudoTargets t;
    t.albedo = out.albedo.detach();
    t.normal = out.normal.detach();
    t.env = out.env.detach();
    cache.emplace(s->id, std::move(t));
  }
  return cache;
}

namespace {

void save_pseudo_cache(const std::filesystem::path& dir,
                       const PseudoCache& cache, const std::string& config_hash,
                       const std::string& params_hash, int env_rows,
                       int env_cols) {
  std::filesystem::create_directories(dir);
  json meta;
  meta["config_hash"] = config_hash;
  meta["params_hash"] = params_hash;
  std::vector<std::string> ids;
  for (const auto& [id, t] : cache) {
    ids.push_back(id);
    write_pfm(dir / (id + ".albedo.pfm"), tensor_to_image(t.albedo));
    write_pfm(dir / (id + ".normal.pfm"), tensor_to_image(t.normal));
    EnvironmentMap env = tensor_to_env(t.env, 0, env_rows, env_cols);
    Image img(env_rows, env_cols, 3);
    for (int r = 0; r < env_rows; ++r)
      for (int c = 0; c < env_cols; ++c)
        for (int k = 0; k < 3; ++k) img.at(r, c, k) = env.at(r, c, k);
    write_pfm(dir / (id + ".env.pfm"), img);
  }
  meta["ids"] = ids;
  std::ofstream out(dir / "meta.json");
  out << meta.dump(2) << "\n";
}

PseudoCache load_pseudo_cache(const std::filesystem::path& dir,
                              const std::string& config_hash,
                              const std::string& params_hash) {
  std::ifstream in(dir / "meta.json");
  if (!in) throw IoError("missing pseudo cache meta");
  json meta;
  in >> meta;
  if (meta.value("config_hash", "") != config_hash ||
      meta.value("params_hash", "") != params_hash)
    throw ValidationError("stale pseudo-target cache (hash mismatch)");
  PseudoCache cache;
  for (const auto& idj : meta["ids"]) {
    std::string id = idj.get<std::string>();
    PseudoTargets t;
    t.albedo = image_to_tensor(read_pfm(dir / (id + ".albedo.pfm")));
    t.normal = image_to_tensor(read_pfm(dir / (id + ".normal.pfm")));
    Image env_img = read_pfm(dir / (id + ".env.pfm"));
    EnvironmentMap env(env_img.height(), env_img.width());
    for (int r = 0; r < env.rows; ++r)
      for (int c = 0; c < env.cols; ++c)
        for (int k = 0; k < 3; ++k)
          env.at(r, c, k) = std::max(env_img.at(r, c, k), 0.0);
    t.env = env_to_tensor(env);
    cache.emplace(id, std::move(t));
  }
  return cache;
}

uint64_t hash_directory_files(const std::filesystem::path& dir) {
  if (dir.empty() || !std::filesystem::exists(dir)) return 0;
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  uint64_t h = 1469598103934665603ull;
  for (const auto& f : files) {
    h = fnv1a64(f.filename().string(), h);
    std::ifstream in(f, std::ios::binary);
    std::string data((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    h = fnv1a64(data.data(), data.size(), h);
  }
  return h;
}

}  // namespace

StageResult finetune_irn_real(ModelBundle& bundle,
                              const std::vector<const SceneSample*>& scenes,
                              DatasetMode mode, const TrainConfig& cfg,
                              const std::filesystem::path& out_dir) {
  const bool need_gt_normals = mode == DatasetMode::kNyu;
  auto prep = prepare(scenes, false, need_gt_normals);
  if (prep.empty()) throw ArgumentError("finetune_irn_real: no usable scenes");
  if (mode == DatasetMode::kIiw) {
    bool any = false;
    for (const auto& p : prep)
      if (!p.sample->judgments.empty()) any = true;
    if (!any)
      throw ArgumentError(
          "finetune_irn_real: IIW mode requires reflectance judgments");
  }

  Irn& irn = *bundle.irn;
  Rar& rar = *bundle.rar;
  const std::string stage_tag =
      mode == DatasetMode::kIiw ? "irn_real_iiw" : "irn_real_nyu";
  const std::string cfg_hash = hex64(bundle.config.hash());
  const std::string irn_hash = hex64(parameters_hash(irn.parameters()));

  // Pseudo targets from the frozen entry-state IRN, cached on disk keyed by
  // config + producing-parameters hash.
  PseudoCache pseudo;
  std::filesystem::path pseudo_dir =
      out_dir.empty() ? std::filesystem::path{} : out_dir / "pseudo_cache";
  if (!pseudo_dir.empty() && std::filesystem::exists(pseudo_dir / "meta.json")) {
    pseudo = load_pseudo_cache(pseudo_dir, cfg_hash, irn_hash);
    for (const auto& p : prep)
      if (!pseudo.count(p.sample->id))
        throw ValidationError("pseudo cache missing sample '" + p.sample->id +
                              "'");
  } else {
    std::vector<const SceneSample*> usable;
    for (const auto& p : prep) usable.push_back(p.sample);
    pseudo = compute_pseudo_targets(bundle, usable);
    if (!pseudo_dir.empty())
      save_pseudo_cache(pseudo_dir, pseudo, cfg_hash, irn_hash,
                        bundle.config.env_rows, bundle.config.env_cols);
  }

  // Freeze RAR: parameters stop receiving gradients; eval-mode forward keeps
  // its normalization buffers untouched.
  const uint64_t rar_hash_before = parameters_hash(rar.parameters());
  const uint64_t pseudo_files_before = hash_directory_files(pseudo_dir);
  for (auto& p : rar.parameters()) p.value.set_requires_grad(false);

  AdamOptimizer opt(irn.parameters(), cfg.optimizer.lr, cfg.optimizer.beta1,
                    cfg.optimizer.beta2, cfg.optimizer.eps);
  const DirectionGrid grid =
      direction_grid(bundle.config.env_rows, bundle.config.env_cols);

  TrainLogger logger(log_path(out_dir, stage_tag), stage_tag);
  CheckpointWriter ckpt(out_dir, stage_tag, cfg,
                        [&](const std::filesystem::path& p, int step) {
                          save_checkpoint(p, irn.parameters(), irn.buffers(),
                                          {stage_tag, cfg_hash, cfg.seed,
                                           step});
                        });

  auto step_fn = [&](const std::vector<size_t>& idx, int,
                     std::vector<std::pair<std::string, real>>* terms) {
    BatchTensors b = gather(prep, idx);
    std::vector<const Tensor*> pa, pn, pe;
    for (size_t i : idx) {
      const PseudoTargets& t = pseudo.at(prep[i].sample->id);
      pa.push_back(&t.albedo);
      pn.push_back(&t.normal);
      pe.push_back(&t.env);
    }
    Tensor pseudo_albedo = stack_first(pa);
    Tensor pseudo_normal = stack_first(pn);
    Tensor pseudo_env = stack_first(pe);

    opt.zero_grad();
    IrnOutputs out = irn.forward(b.image, true);
    Tensor direct = shade_direct_t(out.albedo, out.normal, out.env, grid,
                                   b.mask, cfg.weighting);
    Tensor residual;
    if (cfg.use_rar)
      residual = rar.forward(b.image, out.albedo, out.normal, false);
    Tensor recon = reconstruction_loss(b.image, direct, residual, b.mask);
    PseudoSupervisionResult ps = pseudo_supervision_loss(
        out.albedo, out.normal, out.env, pseudo_albedo, pseudo_normal,
        pseudo_env, b.mask);

    CompositeTerms composite;
    composite.pseudo_albedo = ps.albedo;
    composite.pseudo_env = ps.env;
    composite.reconstruction = recon;
    real weak_value = 0.0;
    if (mode == DatasetMode::kIiw) {
      composite.pseudo_normal = ps.normal;
      WhdrHingeResult weak = whdr_hinge_loss(out.albedo, b.samples, cfg.loss);
      composite.weak = weak.loss;
      weak_value = weak.loss.item();
    } else {
      Tensor weak = normal_supervision_loss(out.normal, b.normal, b.mask);
      composite.weak = weak;
      weak_value = weak.item();
    }
    Tensor loss = composite_real_loss(composite, mode, cfg.loss);
    loss.backward();
    opt.step();
    real v = loss.item();
    terms->push_back({"loss", v});
    terms->push_back({"L_a", ps.albedo.item()});
    if (mode == DatasetMode::kIiw) terms->push_back({"L_n", ps.normal.item()});
    terms->push_back({"L_e", ps.env.item()});
    terms->push_back({"L_u", recon.item()});
    terms->push_back({"L_w", weak_value});
    return v;
  };

  StageResult res = run_loop(cfg, prep.size(), logger, ckpt, step_fn);
  res.checkpoint = ckpt.final(res.steps_run);

  for (auto& p : rar.parameters()) p.value.set_requires_grad(true);
  if (parameters_hash(rar.parameters()) != rar_hash_before)
    throw Error("RAR parameters mutated during real-data fine-tuning");
  if (hash_directory_files(pseudo_dir) != pseudo_files_before)
    throw Error("pseudo-target cache mutated during real-data fine-tuning");
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<MetricReport> evaluate(ModelBundle& bundle,
                                   const std::vector<const SceneSample*>& scenes,
                                   const std::vector<std::string>& metrics,
                                   const LossConfig& loss_cfg) {
  static const std::set<std::string> known{
      "whdr",       "median_angular_error", "albedo_rmse", "albedo_mad",
      "env_mad",    "image_recon_mad",      "probe_rmse",  "probe_mad"};
  for (const auto& m : metrics)
    if (!known.count(m)) throw ArgumentError("evaluate: unknown metric '" + m + "'");

  std::map<std::string, std::vector<real>> values;
  NoGradGuard guard;
  for (const auto* s : scenes) {
    SampleBatch b = make_batch({s});
    IrnOutputs out = bundle.irn->forward(b.image, false);
    AlbedoMap pred_albedo{tensor_to_image(out.albedo)};
    NormalMap pred_normal;
    pred_normal.vectors = tensor_to_image(out.normal);
    pred_normal.valid = s->mask;
    EnvironmentMap pred_env = tensor_to_env(out.env, 0, bundle.config.env_rows,
                                            bundle.config.env_cols);
    for (const auto& m : metrics) {
      if (m == "whdr") {
        if (s->judgments.empty()) continue;
        values[m].push_back(whdr(pred_albedo, s->mask, s->judgments,
                                 loss_cfg.delta, loss_cfg.patch_radius));
      } else if (m == "median_angular_error") {
        if (!s->normal_gt) continue;
        values[m].push_back(median_angular_error(pred_normal, *s->normal_gt));
      } else if (m == "albedo_rmse" || m == "albedo_mad") {
        if (!s->albedo_gt) continue;
        auto [rmse, mad] =
            rmse_mad(pred_albedo.pixels, s->albedo_gt->pixels, s->mask);
        values[m].push_back(m == "albedo_rmse" ? rmse : mad);
      } else if (m == "env_mad") {
        if (!s->env_gt) continue;
        values[m].push_back(env_map_error(pred_env, *s->env_gt));
      } else if (m == "image_recon_mad") {
        values[m].push_back(
            image_recon_error(s->image, pred_albedo, pred_normal, pred_env));
      } else if (m == "probe_rmse" || m == "probe_mad") {
        if (!s->env_gt) continue;
        auto [rmse, mad] = probe_error(pred_env, *s->env_gt);
        values[m].push_back(m == "probe_rmse" ? rmse : mad);
      }
    }
  }

  std::vector<MetricReport> reports;
  for (const auto& m : metrics) {
    auto it = values.find(m);
    if (it == values.end() || it->second.empty())
      throw ArgumentError("evaluate: metric '" + m +
                          "' unavailable for this dataset");
    MetricReport r;
    r.name = m;
    r.per_sample = it->second;
    r.sample_count = static_cast<int>(it->second.size());
    real acc = 0.0;
    for (real v : it->second) acc += v;
    r.value = acc / r.sample_count;
    r.units = m == "whdr" ? "percent"
                          : (m == "median_angular_error" ? "degrees" : "");
    reports.push_back(std::move(r));
  }
  return reports;
}

// ---------------------------------------------------------------------------
// Work-directory orchestration

namespace {

void require_file(const std::filesystem::path& p, const std::string& what) {
  if (!std::filesystem::exists(p))
    throw ArgumentError("missing prerequisite " + what + ": " + p.string());
}

std::vector<EnvironmentMap> load_env_pool(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir))
    throw IoError("environment directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".hdr")
      files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<EnvironmentMap> pool;
  for (const auto& f : files) pool.push_back(read_env_hdr(f));
  return pool;
}

}  // namespace

StageResult run_training_stage(const TrainConfig& cfg,
                               const std::filesystem::path& work_dir) {
  std::filesystem::create_directories(work_dir);
  const Stage stage = cfg.stage;

  // Gating: prerequisite checkpoints and caches must exist before any data
  // is touched.
  switch (stage) {
    case Stage::kEnvA:
      break;
    case Stage::kEnvB:
      require_file(work_dir / "env_a.ckpt", "checkpoint env_a");
      break;
    case Stage::kIrnSyn:
      require_file(work_dir / "env_b.ckpt", "checkpoint env_b");
      require_file(work_dir / "lhat_cache" / "meta.json",
                   "lighting-target cache (run env_b)");
      break;
    case Stage::kRarSyn:
      require_file(work_dir / "irn_syn.ckpt", "checkpoint irn_syn");
      require_file(work_dir / "lhat_cache" / "meta.json",
                   "lighting-target cache (run env_b)");
      break;
    case Stage::kIrnRealIiw:
    case Stage::kIrnRealNyu:
      require_file(work_dir / "irn_syn.ckpt", "checkpoint irn_syn");
      require_file(work_dir / "rar_syn.ckpt", "checkpoint rar_syn");
      break;
  }

  ModelBundle bundle = ModelBundle::create(cfg.model, cfg.seed);

  auto load_into = [&](const std::filesystem::path& p, auto& net) {
    load_checkpoint(p, net.parameters(), net.buffers());
  };

  const bool is_real =
      stage == Stage::kIrnRealIiw || stage == Stage::kIrnRealNyu;
  const std::string manifest_path =
      is_real ? cfg.real_manifest : cfg.synthetic_manifest;
  if (manifest_path.empty())
    throw ArgumentError("train config: no dataset manifest for stage " +
                        stage_name(stage));
  DatasetIndex index = load_dataset_manifest(manifest_path);
  LoadOptions load_opts;
  load_opts.target_height = cfg.model.input_height;
  load_opts.target_width = cfg.model.input_width;
  std::vector<SceneSample> samples;
  for (const auto* rec : index.split(cfg.split))
    samples.push_back(load_sample(index, rec->id, load_opts));
  std::vector<const SceneSample*> views;
  for (const auto& s : samples) views.push_back(&s);

  switch (stage) {
    case Stage::kEnvA: {
      if (cfg.env_dir.empty())
        throw ArgumentError("train config: env_a requires data.env_dir");
      auto pool = load_env_pool(cfg.env_dir);
      return train_env_stage_a(bundle, views, pool, cfg, work_dir);
    }
    case Stage::kEnvB: {
      load_into(work_dir / "env_a.ckpt", *bundle.env_estimator);
      return train_env_stage_b(bundle, views, cfg, work_dir, nullptr);
    }
    case Stage::kIrnSyn: {
      EnvCache lhat =
          load_env_cache(work_dir / "lhat_cache", hex64(cfg.model.hash()));
      return train_irn_synthetic(bundle, views, lhat, cfg, work_dir);
    }
    case Stage::kRarSyn: {
      load_into(work_dir / "irn_syn.ckpt", *bundle.irn);
      EnvCache lhat =
          load_env_cache(work_dir / "lhat_cache", hex64(cfg.model.hash()));
      return train_rar_synthetic(bundle, views, lhat, cfg, work_dir);
    }
    case Stage::kIrnRealIiw:
    case Stage::kIrnRealNyu: {
      load_into(work_dir / "irn_syn.ckpt", *bundle.irn);
      load_into(work_dir / "rar_syn.ckpt", *bundle.rar);
      DatasetMode mode = stage == Stage::kIrnRealIiw ? DatasetMode::kIiw
                                                     : DatasetMode::kNyu;
      return finetune_irn_real(bundle, views, mode, cfg, work_dir);
    }
  }
  throw ArgumentError("run_training_stage: bad stage");
}

ModelBundle load_bundle_from_dir(const std::filesystem::path& work_dir,
                                 const ModelConfig& cfg) {
  ModelBundle bundle = ModelBundle::create(cfg, 1);
  auto try_load = [&](std::initializer_list<const char*> names, auto& net,
                      bool required) {
    for (const char* n : names) {
      auto p = work_dir / n;
      if (std::filesystem::exists(p)) {
        CheckpointMeta meta =
            load_checkpoint(p, net.parameters(), net.buffers());
        bundle.stage_tag = meta.stage;
        return true;
      }
    }
    if (required)
      throw IoError("no checkpoint found under " + work_dir.string());
    return false;
  };
  try_load({"irn_real_iiw.ckpt", "irn_real_nyu.ckpt", "irn_syn.ckpt"},
           *bundle.irn, true);
  try_load({"rar_syn.ckpt"}, *bundle.rar, false);
  try_load({"env_b.ckpt", "env_a.ckpt"}, *bundle.env_estimator, false);
  return bundle;
}

}  // namespace invrender
