// invrender: single-image inverse rendering toolkit.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "invrender/envmap.h"
#include "invrender/image.h"
#include "invrender/nn.h"
#include "invrender/renderer.h"

namespace invrender {

enum class ReflectanceRelation { kPoint1Darker, kPoint2Darker, kEqual };

// One pairwise relative-reflectance judgment; coordinates normalized to
// [0,1]^2, weight is the human confidence w_t.
struct ReflectanceJudgment {
  real x1 = 0, y1 = 0;
  real x2 = 0, y2 = 0;
  ReflectanceRelation relation = ReflectanceRelation::kEqual;
  real weight = 1.0;
};

struct SceneSample {
  std::string id;
  ImageMap image;
  std::optional<AlbedoMap> albedo_gt;
  std::optional<NormalMap> normal_gt;
  std::optional<EnvironmentMap> env_gt;
  std::vector<ReflectanceJudgment> judgments;
  Mask mask;
  std::vector<std::string> warnings;
};

// All present maps share H x W; normals unit on valid pixels; image finite
// and nonnegative; albedo in [0,1]; env invariants.
void validate(const SceneSample& sample);

struct DatasetRecord {
  std::string id;
  std::string split;
  std::filesystem::path image;
  std::filesystem::path albedo;
  std::filesystem::path normal;
  std::filesystem::path env;
  std::filesystem::path mask;
  std::filesystem::path judgments;
  // Referenced files absent when the manifest was read; loading such a
  // record fails with an I/O error.
  std::vector<std::string> missing;
};

struct DatasetIndex {
  std::filesystem::path root;
  std::vector<DatasetRecord> records;

  const DatasetRecord* find(const std::string& id) const;
  std::vector<const DatasetRecord*> split(const std::string& name) const;
};

// JSON-lines manifest, one record per line:
//   {"id": str, "split": "train"|"val"|"test", "image": path,
//    "albedo": path?, "normal": path?, "env": path?, "mask": path?,
//    "judgments": path?}
// Relative paths resolve against the manifest's directory.
DatasetIndex load_dataset_manifest(const std::filesystem::path& path);

struct LoadOptions {
  int target_height = kNetworkHeight;
  int target_width = kNetworkWidth;
  // Fixed per-dataset exposure scale applied to linear radiance.
  real exposure = 1.0;
};

// Decodes to linear radiance (sRGB 8-bit inputs gamma-decoded with exponent
// 2.2), decodes normals from (n+1)/2 encoding with renormalization, and
// resizes maps to the target resolution (bilinear for radiance-like maps,
// nearest-then-renormalize for normals).
SceneSample load_sample(const DatasetIndex& index, const std::string& id,
                        const LoadOptions& options = {});

// Judgment file: JSON list of
//   {"p1": [x,y], "p2": [x,y], "darker": "1"|"2"|"E", "weight": float}
std::vector<ReflectanceJudgment> load_judgments(
    const std::filesystem::path& path);

// Analytic scene generator -------------------------------------------------

struct SphereSpec {
  real center[3] = {0, 0, -4};
  real radius = 1;
  real albedo[3] = {0.5, 0.5, 0.5};
};

struct PlaneSpec {
  real point[3] = {0, -1, 0};
  real normal[3] = {0, 1, 0};
  real albedo[3] = {0.5, 0.5, 0.5};
};

// Smooth multiplicative darkening blob, the desk-scale stand-in for cast
// shadows and other appearance the direct renderer cannot express.
struct ShadowBlobSpec {
  real x = 0.5, y = 0.5;  // normalized image coords
  real radius = 0.2;      // normalized
  real strength = 0.5;    // 0..1
};

struct AnalyticSceneSpec {
  std::vector<SphereSpec> spheres;
  std::vector<PlaneSpec> planes;
  std::vector<ShadowBlobSpec> shadows;
  EnvironmentMap env;
  int height = kNetworkHeight;
  int width = kNetworkWidth;
  real vertical_fov_deg = 60.0;
  EnvWeighting weighting = EnvWeighting::kLiteralSum;
  // When > 0, pairwise judgments consistent with the ground-truth albedo
  // are sampled (seeded) with this margin.
  int judgment_count = 0;
  real judgment_delta = 0.10;
  std::string id = "analytic";
};

// Pinhole camera at the origin looking along -z, x right, y up. Ground
// truth is exact: per-pixel analytic normals, per-shape constant albedo,
// and image = shade_direct(albedo, normal, env) times any shadow blobs.
// Background pixels are masked invalid.
SceneSample generate_analytic_scene(const AnalyticSceneSpec& spec,
                                    uint64_t seed);

// Judgments consistent with a sample's ground-truth albedo (patch-mean
// luminance ratio rule with margin delta).
std::vector<ReflectanceJudgment> sample_judgments_from_albedo(
    const SceneSample& sample, int count, real delta, Rng& rng);

}  // namespace invrender
