// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#include "invrender/scene.h"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "invrender/image_io.h"

namespace invrender {

using json = nlohmann::ordered_json;

void validate(const SceneSample& sample) {
  const int h = sample.image.pixels.height();
  const int w = sample.image.pixels.width();
  if (h == 0 || w == 0) throw ValidationError("SceneSample: missing image");
  validate(sample.image);
  if (sample.mask.height() != h || sample.mask.width() != w)
    throw ValidationError("SceneSample: mask shape mismatch");
  if (sample.albedo_gt) {
    if (sample.albedo_gt->pixels.height() != h ||
        sample.albedo_gt->pixels.width() != w)
      throw ValidationError("SceneSample: albedo shape mismatch");
    validate(*sample.albedo_gt);
  }
  if (sample.normal_gt) {
    if (sample.normal_gt->vectors.height() != h ||
        sample.normal_gt->vectors.width() != w)
      throw ValidationError("SceneSample: normal shape mismatch");
    validate(*sample.normal_gt);
  }
  if (sample.env_gt) validate(*sample.env_gt);
  for (const auto& j : sample.judgments) {
    if (j.x1 < 0 || j.x1 > 1 || j.y1 < 0 || j.y1 > 1 || j.x2 < 0 ||
        j.x2 > 1 || j.y2 < 0 || j.y2 > 1)
      throw ValidationError("SceneSample: judgment coordinates out of bounds");
    if (!std::isfinite(j.weight) || j.weight < 0)
      throw ValidationError("SceneSample: bad judgment weight");
  }
}

const DatasetRecord* DatasetIndex::find(const std::string& id) const {
  for (const auto& r : records)
    if (r.id == id) return &r;
  return nullptr;
}

std::vector<const DatasetRecord*> DatasetIndex::split(
    const std::string& name) const {
  std::vector<const DatasetRecord*> out;
  for (const auto& r : records)
    if (r.split == name) out.push_back(&r);
  return out;
}

namespace {

std::filesystem::path resolve(const std::filesystem::path& root,
                              const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : root / path;
}

void bind_path(const json& j, const char* key,
               const std::filesystem::path& root, std::filesystem::path* out,
               std::vector<std::string>* missing) {
  if (!j.contains(key) || j[key].is_null()) return;
  *out = resolve(root, j[key].get<std::string>());
  if (!std::filesystem::exists(*out)) missing->push_back(key);
}

}  // namespace

DatasetIndex load_dataset_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path.string());
  DatasetIndex index;
  index.root = path.parent_path();
  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError("manifest line " + std::to_string(line_no) + ": " +
                       e.what());
    }
    DatasetRecord rec;
    try {
      rec.id = j.at("id").get<std::string>();
      rec.split = j.at("split").get<std::string>();
    } catch (const json::exception& e) {
      throw ParseError("manifest line " + std::to_string(line_no) + ": " +
                       e.what());
    }
    if (rec.split != "train" && rec.split != "val" && rec.split != "test")
      throw ValidationError("manifest line " + std::to_string(line_no) +
                            ": unknown split '" + rec.split + "'");
    if (!seen.insert(rec.id).second)
      throw ValidationError("manifest line " + std::to_string(line_no) +
                            ": duplicate id '" + rec.id + "'");
    bind_path(j, "image", index.root, &rec.image, &rec.missing);
    if (rec.image.empty())
      throw ParseError("manifest line " + std::to_string(line_no) +
                       ": missing required field 'image'");
    bind_path(j, "albedo", index.root, &rec.albedo, &rec.missing);
    bind_path(j, "normal", index.root, &rec.normal, &rec.missing);
    bind_path(j, "env", index.root, &rec.env, &rec.missing);
    bind_path(j, "mask", index.root, &rec.mask, &rec.missing);
    bind_path(j, "judgments", index.root, &rec.judgments, &rec.missing);
    index.records.push_back(std::move(rec));
  }
  return index;
}

namespace {

bool has_ext(const std::filesystem::path& p, const char* ext) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), ::tolower);
  return e == ext;
}

Image load_radiance_image(const std::filesystem::path& path, real exposure) {
  Image img;
  if (has_ext(path, ".png")) {
    int depth = 0;
    img = read_png(path, &depth);
    // 8-bit PNGs are sRGB-encoded; 16-bit ground truth is stored linear.
    if (depth <= 8) {
      for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
          for (int c = 0; c < 3; ++c)
            img.at(y, x, c) = srgb_to_linear(img.at(y, x, c));
    }
  } else {
    img = read_float_map(path);
  }
  if (exposure != 1.0) {
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x)
        for (int c = 0; c < 3; ++c) img.at(y, x, c) *= exposure;
  }
  return img;
}

}  // namespace

SceneSample load_sample(const DatasetIndex& index, const std::string& id,
                        const LoadOptions& options) {
  const DatasetRecord* rec = index.find(id);
  if (!rec) throw ArgumentError("load_sample: unknown id '" + id + "'");
  SceneSample sample;
  sample.id = id;

  if (!std::filesystem::exists(rec->image))
    throw IoError("load_sample: missing image file: " + rec->image.string());
  Image img = load_radiance_image(rec->image, options.exposure);
  sample.image.pixels =
      resize_bilinear(img, options.target_height, options.target_width);

  if (!rec->mask.empty()) {
    if (!std::filesystem::exists(rec->mask))
      throw IoError("load_sample: missing mask file: " + rec->mask.string());
    sample.mask = resize_mask(read_mask_png(rec->mask), options.target_height,
                              options.target_width);
  } else {
    sample.mask = Mask(options.target_height, options.target_width, true);
  }

  if (!rec->albedo.empty()) {
    if (!std::filesystem::exists(rec->albedo))
      throw IoError("load_sample: missing albedo file: " +
                    rec->albedo.string());
    Image a = has_ext(rec->albedo, ".png") ? read_png(rec->albedo)
                                           : read_float_map(rec->albedo);
    a = resize_bilinear(a, options.target_height, options.target_width);
    for (int y = 0; y < a.height(); ++y)
      for (int x = 0; x < a.width(); ++x)
        for (int c = 0; c < 3; ++c)
          a.at(y, x, c) = std::clamp(a.at(y, x, c), 0.0, 1.0);
    sample.albedo_gt = AlbedoMap{std::move(a)};
  }

  if (!rec->normal.empty()) {
    if (!std::filesystem::exists(rec->normal))
      throw IoError("load_sample: missing normal file: " +
                    rec->normal.string());
    Image raw = has_ext(rec->normal, ".png") ? read_png(rec->normal)
                                             : read_float_map(rec->normal);
    NormalMap nm;
    nm.vectors = Image(raw.height(), raw.width(), 3);
    nm.valid = Mask(raw.height(), raw.width(), true);
    bool encoded = has_ext(rec->normal, ".png");
    int warned = 0;
    for (int y = 0; y < raw.height(); ++y) {
      for (int x = 0; x < raw.width(); ++x) {
        std::array<real, 3> v{raw.at(y, x, 0), raw.at(y, x, 1),
                              raw.at(y, x, 2)};
        std::array<real, 3> n = encoded
                                    ? std::array<real, 3>{2 * v[0] - 1,
                                                          2 * v[1] - 1,
                                                          2 * v[2] - 1}
                                    : v;
        real norm = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
        if (norm < 0.1) {
          nm.valid.set(y, x, false);
          continue;
        }
        if (std::abs(norm - 1.0) > 0.1) ++warned;
        nm.vectors.at(y, x, 0) = n[0] / norm;
        nm.vectors.at(y, x, 1) = n[1] / norm;
        nm.vectors.at(y, x, 2) = n[2] / norm;
      }
    }
    if (warned > 0)
      sample.warnings.push_back("normals: " + std::to_string(warned) +
                                " pixels deviated >0.1 from unit norm");
    nm = resize_normals(nm, options.target_height, options.target_width);
    // Geometry validity intersects the sample mask.
    for (int y = 0; y < options.target_height; ++y)
      for (int x = 0; x < options.target_width; ++x)
        if (!sample.mask.at(y, x)) nm.valid.set(y, x, false);
    sample.normal_gt = std::move(nm);
  }

  if (!rec->env.empty()) {
    if (!std::filesystem::exists(rec->env))
      throw IoError("load_sample: missing env file: " + rec->env.string());
    sample.env_gt = read_env_hdr(rec->env);
  }

  if (!rec->judgments.empty()) {
    if (!std::filesystem::exists(rec->judgments))
      throw IoError("load_sample: missing judgments file: " +
                    rec->judgments.string());
    sample.judgments = load_judgments(rec->judgments);
  }
  return sample;
}

std::vector<ReflectanceJudgment> load_judgments(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open judgments: " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(std::string("judgments: ") + e.what());
  }
  if (!doc.is_array()) throw ParseError("judgments: expected a JSON array");
  std::vector<ReflectanceJudgment> out;
  for (size_t i = 0; i < doc.size(); ++i) {
    const json& j = doc[i];
    ReflectanceJudgment r;
    try {
      r.x1 = j.at("p1").at(0).get<real>();
      r.y1 = j.at("p1").at(1).get<real>();
      r.x2 = j.at("p2").at(0).get<real>();
      r.y2 = j.at("p2").at(1).get<real>();
      std::string darker = j.at("darker").get<std::string>();
      if (darker == "1")
        r.relation = ReflectanceRelation::kPoint1Darker;
      else if (darker == "2")
        r.relation = ReflectanceRelation::kPoint2Darker;
      else if (darker == "E")
        r.relation = ReflectanceRelation::kEqual;
      else
        throw ParseError("judgments entry " + std::to_string(i) +
                         ": unknown relation token '" + darker + "'");
      r.weight = j.at("weight").get<real>();
    } catch (const json::exception& e) {
      throw ParseError("judgments entry " + std::to_string(i) + ": " +
                       e.what());
    }
    if (!std::isfinite(r.weight) || r.weight < 0)
      throw ValidationError("judgments entry " + std::to_string(i) +
                            ": negative or non-finite weight");
    if (r.x1 < 0 || r.x1 > 1 || r.y1 < 0 || r.y1 > 1 || r.x2 < 0 ||
        r.x2 > 1 || r.y2 < 0 || r.y2 > 1)
      throw ValidationError("judgments entry " + std::to_string(i) +
                            ": coordinates outside [0,1]");
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Analytic scenes

namespace {

struct Hit {
  real t = -1;
  real normal[3] = {0, 0, 0};
  const real* albedo = nullptr;
};

bool intersect_sphere(const SphereSpec& s, const real dir[3], Hit* hit) {
  // Ray origin at 0: t^2 - 2 t (d.c) + |c|^2 - r^2 = 0 for unit d.
  real dc = dir[0] * s.center[0] + dir[1] * s.center[1] + dir[2] * s.center[2];
  real cc = s.center[0] * s.center[0] + s.center[1] * s.center[1] +
            s.center[2] * s.center[2];
  real disc = dc * dc - (cc - s.radius * s.radius);
  if (disc < 0) return false;
  real sq = std::sqrt(disc);
  real t = dc - sq;
  if (t <= 1e-6) t = dc + sq;
  if (t <= 1e-6) return false;
  hit->t = t;
  for (int k = 0; k < 3; ++k)
    hit->normal[k] = (t * dir[k] - s.center[k]) / s.radius;
  hit->albedo = s.albedo;
  return true;
}

bool intersect_plane(const PlaneSpec& p, const real dir[3], Hit* hit) {
  real nd = p.normal[0] * dir[0] + p.normal[1] * dir[1] + p.normal[2] * dir[2];
  if (std::abs(nd) < 1e-12) return false;
  real np = p.normal[0] * p.point[0] + p.normal[1] * p.point[1] +
            p.normal[2] * p.point[2];
  real t = np / nd;
  if (t <= 1e-6) return false;
  hit->t = t;
  real len = std::sqrt(p.normal[0] * p.normal[0] + p.normal[1] * p.normal[1] +
                       p.normal[2] * p.normal[2]);
  for (int k = 0; k < 3; ++k) hit->normal[k] = p.normal[k] / len;
  // Orient toward the viewer.
  if (hit->normal[0] * dir[0] + hit->normal[1] * dir[1] +
          hit->normal[2] * dir[2] >
      0)
    for (int k = 0; k < 3; ++k) hit->normal[k] = -hit->normal[k];
  hit->albedo = p.albedo;
  return true;
}

}  // namespace

SceneSample generate_analytic_scene(const AnalyticSceneSpec& spec,
                                    uint64_t seed) {
  if (spec.spheres.empty() && spec.planes.empty())
    throw ArgumentError("generate_analytic_scene: no shapes");
  const int h = spec.height, w = spec.width;
  SceneSample sample;
  sample.id = spec.id;
  sample.mask = Mask(h, w, false);
  AlbedoMap albedo{Image(h, w, 3, 0.0)};
  NormalMap normals;
  normals.vectors = Image(h, w, 3, 0.0);
  normals.valid = Mask(h, w, false);

  const real tan_half = std::tan(spec.vertical_fov_deg * 0.5 *
                                 std::numbers::pi_v<real> / 180.0);
  const real aspect = static_cast<real>(w) / h;
  for (int y = 0; y < h; ++y) {
    real v = (1.0 - (y + 0.5) / h * 2.0) * tan_half;
    for (int x = 0; x < w; ++x) {
      real u = ((x + 0.5) / w * 2.0 - 1.0) * tan_half * aspect;
      real dir[3] = {u, v, -1.0};
      real len = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
      for (real& d : dir) d /= len;
      Hit best;
      Hit hit;
      for (const auto& s : spec.spheres)
        if (intersect_sphere(s, dir, &hit) && (best.t < 0 || hit.t < best.t))
          best = hit;
      for (const auto& p : spec.planes)
        if (intersect_plane(p, dir, &hit) && (best.t < 0 || hit.t < best.t))
          best = hit;
      if (best.t < 0) continue;
      sample.mask.set(y, x, true);
      normals.valid.set(y, x, true);
      for (int k = 0; k < 3; ++k) {
        normals.vectors.at(y, x, k) = best.normal[k];
        albedo.pixels.at(y, x, k) = best.albedo[k];
      }
    }
  }
  if (sample.mask.count() == 0)
    throw ArgumentError("generate_analytic_scene: shapes outside view (empty mask)");

  sample.image = shade_direct(albedo, normals, spec.env, spec.weighting);

  // Residual appearance injection: multiplicative darkening blobs.
  for (const auto& blob : spec.shadows) {
    real cx = blob.x * w, cy = blob.y * h;
    real radius_px = blob.radius * std::min(h, w);
    if (radius_px <= 0) continue;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        real dx = (x + 0.5 - cx) / radius_px;
        real dy = (y + 0.5 - cy) / radius_px;
        real rr = dx * dx + dy * dy;
        if (rr >= 1.0) continue;
        real falloff = (1.0 - rr) * (1.0 - rr);
        real factor = 1.0 - blob.strength * falloff;
        for (int k = 0; k < 3; ++k) sample.image.pixels.at(y, x, k) *= factor;
      }
  }

  sample.albedo_gt = std::move(albedo);
  sample.normal_gt = std::move(normals);
  sample.env_gt = spec.env;

  if (spec.judgment_count > 0) {
    Rng rng(seed ^ 0xa5c3u);
    sample.judgments = sample_judgments_from_albedo(
        sample, spec.judgment_count, spec.judgment_delta, rng);
  }
  return sample;
}

std::vector<ReflectanceJudgment> sample_judgments_from_albedo(
    const SceneSample& sample, int count, real delta, Rng& rng) {
  if (!sample.albedo_gt)
    throw ArgumentError("sample_judgments_from_albedo: no ground-truth albedo");
  const Image& a = sample.albedo_gt->pixels;
  std::vector<std::pair<int, int>> valid;
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x)
      if (sample.mask.at(y, x)) valid.emplace_back(y, x);
  if (valid.empty())
    throw ArgumentError("sample_judgments_from_albedo: empty mask");
  auto luminance = [&](int y, int x) {
    return 0.299 * a.at(y, x, 0) + 0.587 * a.at(y, x, 1) +
           0.114 * a.at(y, x, 2);
  };
  std::vector<ReflectanceJudgment> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    auto [y1, x1] = valid[rng.uniform_int(0, static_cast<int>(valid.size()) - 1)];
    auto [y2, x2] = valid[rng.uniform_int(0, static_cast<int>(valid.size()) - 1)];
    real l1 = std::max(luminance(y1, x1), 1e-4);
    real l2 = std::max(luminance(y2, x2), 1e-4);
    ReflectanceJudgment j;
    j.x1 = (x1 + 0.5) / a.width();
    j.y1 = (y1 + 0.5) / a.height();
    j.x2 = (x2 + 0.5) / a.width();
    j.y2 = (y2 + 0.5) / a.height();
    if (l2 / l1 > 1.0 + delta)
      j.relation = ReflectanceRelation::kPoint1Darker;
    else if (l1 / l2 > 1.0 + delta)
      j.relation = ReflectanceRelation::kPoint2Darker;
    else
      j.relation = ReflectanceRelation::kEqual;
    j.weight = rng.uniform(0.5, 2.0);
    out.push_back(j);
  }
  return out;
}

}  // namespace invrender
