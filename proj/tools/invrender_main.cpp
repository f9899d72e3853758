// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0
//
// CLI surface: decompose, render, probe, fit-env, train, eval, gen-analytic.
// Exit codes: 0 success, 1 validation/usage, 2 I/O, 3 numeric failure.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "invrender/bridge.h"
#include "invrender/image_io.h"
#include "invrender/losses.h"
#include "invrender/metrics.h"
#include "invrender/models.h"
#include "invrender/renderer.h"
#include "invrender/scene.h"
#include "invrender/training.h"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace invrender;

namespace {

struct CommonFlags {
  uint64_t seed = 1;
  std::string config;
};

void add_common(CLI::App* cmd, CommonFlags* flags) {
  cmd->add_option("--seed", flags->seed, "Deterministic seed");
  cmd->add_option("--config", flags->config, "JSON config file");
}

ModelConfig model_config_from_flags(const CommonFlags& flags) {
  if (flags.config.empty()) return ModelConfig{};
  TrainConfig cfg = TrainConfig::from_file(flags.config);
  return cfg.model;
}

Image encode_display(const Image& linear) {
  Image out(linear.height(), linear.width(), 3);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x)
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) =
            linear_to_srgb(std::clamp(linear.at(y, x, c), 0.0, 1.0));
  return out;
}

// Signed residuals are offset-encoded: stored = (clamp(v,-1,1)+1)/2.
Image encode_signed(const Image& v) {
  Image out(v.height(), v.width(), 3);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x)
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = (std::clamp(v.at(y, x, c), -1.0, 1.0) + 1.0) / 2.0;
  return out;
}

NormalMap normals_from_file(const fs::path& path) {
  Image raw = read_float_map(path);
  bool encoded = path.extension() == ".png";
  NormalMap nm;
  nm.vectors = Image(raw.height(), raw.width(), 3);
  nm.valid = Mask(raw.height(), raw.width(), true);
  for (int y = 0; y < raw.height(); ++y)
    for (int x = 0; x < raw.width(); ++x) {
      real v0 = raw.at(y, x, 0), v1 = raw.at(y, x, 1), v2 = raw.at(y, x, 2);
      real n0 = encoded ? 2 * v0 - 1 : v0;
      real n1 = encoded ? 2 * v1 - 1 : v1;
      real n2 = encoded ? 2 * v2 - 1 : v2;
      real norm = std::sqrt(n0 * n0 + n1 * n1 + n2 * n2);
      if (norm < 0.1) {
        nm.valid.set(y, x, false);
        continue;
      }
      nm.vectors.at(y, x, 0) = n0 / norm;
      nm.vectors.at(y, x, 1) = n1 / norm;
      nm.vectors.at(y, x, 2) = n2 / norm;
    }
  return nm;
}

int run_decompose(const std::string& image_path, const std::string& ckpt_dir,
                  const std::string& out_dir, const CommonFlags& flags) {
  ModelConfig cfg = model_config_from_flags(flags);
  ModelBundle bundle = load_bundle_from_dir(ckpt_dir, cfg);

  Image raw = read_png(image_path);
  for (int y = 0; y < raw.height(); ++y)
    for (int x = 0; x < raw.width(); ++x)
      for (int c = 0; c < 3; ++c)
        raw.at(y, x, c) = srgb_to_linear(raw.at(y, x, c));
  Image resized = resize_bilinear(raw, cfg.input_height, cfg.input_width);

  NoGradGuard guard;
  Tensor image = image_to_tensor(resized);
  IrnOutputs out = bundle.irn->forward(image, false);
  Tensor residual =
      bundle.rar->forward(image, out.albedo, out.normal, false);

  fs::create_directories(out_dir);
  Image albedo = tensor_to_image(out.albedo);
  Image normal = tensor_to_image(out.normal);
  EnvironmentMap env =
      tensor_to_env(out.env, 0, cfg.env_rows, cfg.env_cols);

  AlbedoMap albedo_map{albedo};
  NormalMap normal_map;
  normal_map.vectors = normal;
  normal_map.valid = Mask(cfg.input_height, cfg.input_width, true);
  ImageMap direct = shade_direct(albedo_map, normal_map, env);
  Image residual_img = tensor_to_image(residual);
  Image recon(cfg.input_height, cfg.input_width, 3);
  for (int y = 0; y < recon.height(); ++y)
    for (int x = 0; x < recon.width(); ++x)
      for (int c = 0; c < 3; ++c)
        recon.at(y, x, c) = std::clamp(
            direct.pixels.at(y, x, c) + residual_img.at(y, x, c), 0.0, 1.0);

  write_png8(fs::path(out_dir) / "albedo.png", encode_display(albedo));
  Image normal_enc(normal.height(), normal.width(), 3);
  for (int y = 0; y < normal.height(); ++y)
    for (int x = 0; x < normal.width(); ++x)
      for (int c = 0; c < 3; ++c)
        normal_enc.at(y, x, c) = (normal.at(y, x, c) + 1.0) / 2.0;
  write_png16(fs::path(out_dir) / "normal.png", normal_enc);
  write_env_hdr(fs::path(out_dir) / "env.hdr", env);
  write_png16(fs::path(out_dir) / "direct.png", encode_display(direct.pixels));
  write_png16(fs::path(out_dir) / "residual.png", encode_signed(residual_img));
  write_png16(fs::path(out_dir) / "recon.png", encode_display(recon));
  std::cout << "wrote 6 outputs to " << out_dir << "\n";
  return 0;
}

int run_render(const std::string& albedo_path, const std::string& normal_path,
               const std::string& env_path, const std::string& out_path,
               const std::string& weighting) {
  Image albedo_img = read_float_map(albedo_path);
  for (int y = 0; y < albedo_img.height(); ++y)
    for (int x = 0; x < albedo_img.width(); ++x)
      for (int c = 0; c < 3; ++c)
        albedo_img.at(y, x, c) = std::clamp(albedo_img.at(y, x, c), 0.0, 1.0);
  AlbedoMap albedo{albedo_img};
  NormalMap normal = normals_from_file(normal_path);
  EnvironmentMap env = read_env_hdr(env_path);
  EnvWeighting w = weighting == "solid_angle" ? EnvWeighting::kSolidAngle
                                              : EnvWeighting::kLiteralSum;
  ImageMap out = shade_direct(albedo, normal, env, w);
  write_float_map(out_path, out.pixels);
  std::cout << "rendered " << out_path << "\n";
  return 0;
}

int run_probe(const std::string& env_path, const std::string& out_path,
              int resolution, const std::string& weighting) {
  EnvironmentMap env = read_env_hdr(env_path);
  EnvWeighting w = weighting == "solid_angle" ? EnvWeighting::kSolidAngle
                                              : EnvWeighting::kLiteralSum;
  ProbeRender probe = render_probe(env, resolution, w);
  if (fs::path(out_path).extension() == ".png") {
    write_png16(out_path, encode_display(probe.image.pixels));
  } else {
    write_float_map(out_path, probe.image.pixels);
  }
  std::cout << "rendered probe " << out_path << "\n";
  return 0;
}

int run_fit_env(const std::string& image_path, const std::string& albedo_path,
                const std::string& normal_path, const std::string& out_path,
                const std::string& weighting) {
  Image image_img = read_float_map(image_path);
  Image albedo_img = read_float_map(albedo_path);
  ImageMap image{image_img};
  AlbedoMap albedo{albedo_img};
  NormalMap normal = normals_from_file(normal_path);
  EnvFitOptions options;
  options.weighting = weighting == "solid_angle" ? EnvWeighting::kSolidAngle
                                                 : EnvWeighting::kLiteralSum;
  EnvFitResult fit = fit_env_least_squares(image, albedo, normal, options);
  write_env_hdr(out_path, fit.env);
  int uncovered = 0;
  for (uint8_t u : fit.uncovered) uncovered += u;
  json report;
  report["residual_mad"] = fit.residual_mad;
  report["residual_sumsq"] = fit.residual_sumsq;
  report["uncovered_cells"] = uncovered;
  report["iterations"] = fit.iterations;
  std::cout << report.dump() << "\n";
  return 0;
}

int run_train(const std::string& stage, const std::string& work_dir,
              const CommonFlags& flags) {
  TrainConfig cfg = flags.config.empty() ? TrainConfig{}
                                         : TrainConfig::from_file(flags.config);
  if (!stage.empty()) cfg.stage = stage_from_name(stage);
  if (flags.seed != 1) cfg.seed = flags.seed;
  StageResult res = run_training_stage(cfg, work_dir);
  json summary;
  summary["stage"] = stage_name(cfg.stage);
  summary["steps"] = res.steps_run;
  summary["initial_loss"] = res.initial_loss;
  summary["final_loss"] = res.final_loss;
  summary["best_smoothed"] = res.best_smoothed;
  summary["reduction"] = res.reduction();
  summary["checkpoint"] = res.checkpoint.string();
  std::ofstream out(fs::path(work_dir) /
                    (stage_name(cfg.stage) + "_summary.json"));
  out << summary.dump(2) << "\n";
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int run_eval(const std::string& ckpt_dir, const std::string& dataset,
             const std::string& metrics_csv, const std::string& out_path,
             const std::string& per_sample_csv, const CommonFlags& flags) {
  TrainConfig cfg = flags.config.empty() ? TrainConfig{}
                                         : TrainConfig::from_file(flags.config);
  ModelBundle bundle = load_bundle_from_dir(ckpt_dir, cfg.model);

  DatasetIndex index = load_dataset_manifest(dataset);
  LoadOptions load_opts;
  load_opts.target_height = cfg.model.input_height;
  load_opts.target_width = cfg.model.input_width;
  std::vector<SceneSample> samples;
  for (const auto* rec : index.split(cfg.split))
    samples.push_back(load_sample(index, rec->id, load_opts));
  std::vector<const SceneSample*> views;
  for (const auto& s : samples) views.push_back(&s);

  std::vector<std::string> metric_names;
  std::stringstream ss(metrics_csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) metric_names.push_back(item);
  }
  if (metric_names.empty())
    throw ArgumentError("eval: no metrics requested");

  std::vector<MetricReport> reports =
      evaluate(bundle, views, metric_names, cfg.loss);

  json j;
  for (const auto& r : reports) j[r.name] = r.value;
  j["n"] = reports.empty() ? 0 : reports[0].sample_count;
  j["config"] = bundle.config.to_json().size() ? std::to_string(
                    bundle.config.hash()) : "";
  std::string text = j.dump(2) + "\n";
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    out << text;
  }
  std::cout << text;

  if (!per_sample_csv.empty()) {
    std::ofstream csv(per_sample_csv);
    csv << "metric,sample_index,value\n";
    for (const auto& r : reports)
      for (size_t i = 0; i < r.per_sample.size(); ++i)
        csv << r.name << "," << i << "," << r.per_sample[i] << "\n";
  }
  return 0;
}

int run_gen_analytic(const std::string& out_dir, int count, int height,
                     int width, int judgments, bool with_shadows,
                     const CommonFlags& flags) {
  fs::create_directories(out_dir);
  fs::path root(out_dir);
  std::ofstream manifest(root / "manifest.jsonl");
  if (!manifest) throw IoError("cannot write manifest");

  Rng rng(flags.seed);
  for (int i = 0; i < count; ++i) {
    AnalyticSceneSpec spec;
    spec.height = height;
    spec.width = width;
    spec.id = "scene" + std::to_string(i);
    spec.judgment_count = judgments;

    // Sphere over a ground plane with per-scene albedos and lighting.
    SphereSpec sph;
    sph.center[0] = rng.uniform(-0.6, 0.6);
    sph.center[1] = rng.uniform(-0.2, 0.4);
    sph.center[2] = -4.0 + rng.uniform(-0.5, 0.5);
    sph.radius = rng.uniform(0.8, 1.3);
    for (int k = 0; k < 3; ++k) sph.albedo[k] = rng.uniform(0.15, 0.95);
    spec.spheres.push_back(sph);
    PlaneSpec pl;
    pl.point[1] = sph.center[1] - sph.radius;
    for (int k = 0; k < 3; ++k) pl.albedo[k] = rng.uniform(0.15, 0.95);
    spec.planes.push_back(pl);

    spec.env = make_env_map();
    int lit = 2 + static_cast<int>(rng.next_u64() % 3);
    for (int l = 0; l < lit; ++l) {
      int r = static_cast<int>(rng.next_u64() % (spec.env.rows / 2));
      int c = static_cast<int>(rng.next_u64() % spec.env.cols);
      real power = rng.uniform(0.3, 0.8);
      for (int k = 0; k < 3; ++k)
        spec.env.at(r, c, k) += power * rng.uniform(0.6, 1.0);
    }
    for (int cidx = 0; cidx < spec.env.cells(); ++cidx)
      for (int k = 0; k < 3; ++k)
        spec.env.radiance[static_cast<size_t>(cidx) * 3 + k] += 2e-4;

    if (with_shadows) {
      ShadowBlobSpec blob;
      blob.x = rng.uniform(0.25, 0.75);
      blob.y = rng.uniform(0.4, 0.8);
      blob.radius = rng.uniform(0.15, 0.3);
      blob.strength = rng.uniform(0.3, 0.6);
      spec.shadows.push_back(blob);
    }

    SceneSample sample = generate_analytic_scene(spec, flags.seed + i);

    // Ground truth as float maps; the stored image is recomputed from the
    // stored (quantized) maps so `render` reproduces it bitwise.
    std::string base = spec.id;
    write_pfm(root / (base + ".albedo.pfm"), sample.albedo_gt->pixels);
    write_pfm(root / (base + ".normal.pfm"), sample.normal_gt->vectors);
    write_env_hdr(root / (base + ".env.hdr"), *sample.env_gt);
    write_mask_png(root / (base + ".mask.png"), sample.mask);

    AlbedoMap albedo{read_pfm(root / (base + ".albedo.pfm"))};
    NormalMap normal;
    {
      NormalMap tmp;
      tmp.vectors = read_pfm(root / (base + ".normal.pfm"));
      tmp.valid = sample.mask;
      // Renormalize float32-quantized vectors exactly as loaders do.
      for (int y = 0; y < tmp.vectors.height(); ++y)
        for (int x = 0; x < tmp.vectors.width(); ++x) {
          real n0 = tmp.vectors.at(y, x, 0), n1 = tmp.vectors.at(y, x, 1),
               n2 = tmp.vectors.at(y, x, 2);
          real norm = std::sqrt(n0 * n0 + n1 * n1 + n2 * n2);
          if (norm > 0.1) {
            tmp.vectors.at(y, x, 0) = n0 / norm;
            tmp.vectors.at(y, x, 1) = n1 / norm;
            tmp.vectors.at(y, x, 2) = n2 / norm;
          } else {
            tmp.valid.set(y, x, false);
          }
        }
      normal = std::move(tmp);
    }
    EnvironmentMap env = read_env_hdr(root / (base + ".env.hdr"));
    ImageMap image = shade_direct(albedo, normal, env, spec.weighting);
    for (const auto& blob : spec.shadows) {
      real cx = blob.x * width, cy = blob.y * height;
      real radius_px = blob.radius * std::min(height, width);
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
          real dx = (x + 0.5 - cx) / radius_px;
          real dy = (y + 0.5 - cy) / radius_px;
          real rr = dx * dx + dy * dy;
          if (rr >= 1.0) continue;
          real falloff = (1.0 - rr) * (1.0 - rr);
          for (int k = 0; k < 3; ++k)
            image.pixels.at(y, x, k) *= 1.0 - blob.strength * falloff;
        }
    }
    write_pfm(root / (base + ".image.pfm"), image.pixels);

    json line;
    line["id"] = base;
    line["split"] = "train";
    line["image"] = base + ".image.pfm";
    line["albedo"] = base + ".albedo.pfm";
    line["normal"] = base + ".normal.pfm";
    line["env"] = base + ".env.hdr";
    line["mask"] = base + ".mask.png";
    if (judgments > 0) {
      json jlist = json::array();
      for (const auto& jd : sample.judgments) {
        json e;
        e["p1"] = {jd.x1, jd.y1};
        e["p2"] = {jd.x2, jd.y2};
        e["darker"] = jd.relation == ReflectanceRelation::kPoint1Darker
                          ? "1"
                          : (jd.relation == ReflectanceRelation::kPoint2Darker
                                 ? "2"
                                 : "E");
        e["weight"] = jd.weight;
        jlist.push_back(e);
      }
      std::ofstream jf(root / (base + ".judgments.json"));
      jf << jlist.dump(2) << "\n";
      line["judgments"] = base + ".judgments.json";
    }
    manifest << line.dump() << "\n";
  }
  std::cout << "generated " << count << " scenes under " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"invrender: single-image inverse rendering toolkit"};
  app.require_subcommand(1);

  CommonFlags flags;

  auto* decompose = app.add_subcommand(
      "decompose", "Decompose an image into albedo, normals and lighting");
  std::string image_path, ckpt_dir, out_dir;
  decompose->add_option("--image", image_path, "Input image (PNG)")->required();
  decompose->add_option("--checkpoint", ckpt_dir, "Checkpoint directory")
      ->required();
  decompose->add_option("--out-dir", out_dir, "Output directory")->required();
  add_common(decompose, &flags);

  auto* render = app.add_subcommand("render", "Direct-render albedo/normal/env");
  std::string albedo_path, normal_path, env_path, out_path;
  std::string weighting = "literal_sum";
  render->add_option("--albedo", albedo_path)->required();
  render->add_option("--normal", normal_path)->required();
  render->add_option("--env", env_path)->required();
  render->add_option("--out", out_path)->required();
  render->add_option("--weighting", weighting)
      ->check(CLI::IsMember({"literal_sum", "solid_angle"}));
  add_common(render, &flags);

  auto* probe = app.add_subcommand("probe", "Render a diffuse probe sphere");
  std::string probe_env, probe_out;
  int probe_res = 64;
  std::string probe_weighting = "literal_sum";
  probe->add_option("--env", probe_env)->required();
  probe->add_option("--out", probe_out)->required();
  probe->add_option("--resolution", probe_res);
  probe->add_option("--weighting", probe_weighting)
      ->check(CLI::IsMember({"literal_sum", "solid_angle"}));
  add_common(probe, &flags);

  auto* fit = app.add_subcommand("fit-env",
                                 "Nonnegative least-squares environment fit");
  std::string fit_image, fit_albedo, fit_normal, fit_out;
  std::string fit_weighting = "literal_sum";
  fit->add_option("--image", fit_image)->required();
  fit->add_option("--albedo", fit_albedo)->required();
  fit->add_option("--normal", fit_normal)->required();
  fit->add_option("--out", fit_out)->required();
  fit->add_option("--weighting", fit_weighting)
      ->check(CLI::IsMember({"literal_sum", "solid_angle"}));
  add_common(fit, &flags);

  auto* train = app.add_subcommand("train", "Run a training stage");
  std::string train_stage, train_dir = "work";
  train->add_option("--stage", train_stage,
                    "env_a|env_b|irn_syn|rar_syn|irn_real_iiw|irn_real_nyu");
  train->add_option("--work-dir", train_dir, "Checkpoint/cache directory");
  add_common(train, &flags);

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string eval_ckpt, eval_dataset, eval_metrics, eval_out, eval_csv;
  eval_cmd->add_option("--checkpoint", eval_ckpt)->required();
  eval_cmd->add_option("--dataset", eval_dataset, "Manifest path")->required();
  eval_cmd->add_option("--metrics", eval_metrics, "Comma-separated metrics")
      ->required();
  eval_cmd->add_option("--out", eval_out, "Report JSON path");
  eval_cmd->add_option("--per-sample", eval_csv, "Per-sample CSV path");
  add_common(eval_cmd, &flags);

  auto* gen = app.add_subcommand("gen-analytic",
                                 "Generate analytic ground-truth fixtures");
  std::string gen_out;
  int gen_count = 8, gen_h = 60, gen_w = 80, gen_judgments = 0;
  bool gen_shadows = false;
  gen->add_option("--out-dir", gen_out)->required();
  gen->add_option("--count", gen_count);
  gen->add_option("--height", gen_h);
  gen->add_option("--width", gen_w);
  gen->add_option("--judgments", gen_judgments);
  gen->add_flag("--with-shadows", gen_shadows);
  add_common(gen, &flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (app.got_subcommand(decompose))
      return run_decompose(image_path, ckpt_dir, out_dir, flags);
    if (app.got_subcommand(render))
      return run_render(albedo_path, normal_path, env_path, out_path,
                        weighting);
    if (app.got_subcommand(probe))
      return run_probe(probe_env, probe_out, probe_res, probe_weighting);
    if (app.got_subcommand(fit))
      return run_fit_env(fit_image, fit_albedo, fit_normal, fit_out,
                         fit_weighting);
    if (app.got_subcommand(train))
      return run_train(train_stage, train_dir, flags);
    if (app.got_subcommand(eval_cmd))
      return run_eval(eval_ckpt, eval_dataset, eval_metrics, eval_out,
                      eval_csv, flags);
    if (app.got_subcommand(gen))
      return run_gen_analytic(gen_out, gen_count, gen_h, gen_w, gen_judgments,
                              gen_shadows, flags);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
