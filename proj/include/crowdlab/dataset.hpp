#pragma once

#include <string>
#include <vector>

#include "crowdlab/scene.hpp"
#include "crowdlab/tensor.hpp"
#include "json.hpp"

namespace crowdlab::data {

// One dataset entry: paths are relative to the dataset root.
struct ManifestRecord {
  std::string image_path;
  std::string label_path;
  std::string mask_path;
  int location_id = 0;
  int camera_id = 0;
  int level = 0;
  int time_of_day = 0;
  int weather = 0;
  int count = 0;  // visible (labeled) heads
};

struct Manifest {
  std::vector<ManifestRecord> records;
};

// Records label-file reads so training regimes that must never touch target
// labels can be audited. Single-threaded scoped recorder.
class FileAudit {
 public:
  static void begin();
  static std::vector<std::string> end();
  static void note(const std::string& path);
};

Manifest read_manifest(const std::string& root);
void write_manifest(const std::string& root, const Manifest& m);

// Same serialization at an arbitrary path (filtered manifests live beside the
// original; record paths stay relative to the dataset root).
Manifest read_manifest_file(const std::string& path);
void write_manifest_file(const std::string& path, const Manifest& m);
nlohmann::json manifest_to_json(const Manifest& m);
Manifest manifest_from_json(const nlohmann::json& j);

struct LoadedLabel {
  std::vector<std::array<double, 2>> dots;
  int count = 0;
  scene::SceneAttributes attributes;
};

// Generates images/labels/masks under root and writes root/manifest.json.
Manifest generate_dataset(const std::string& root, int n_locations,
                          std::uint64_t seed, scene::RenderStyle style,
                          int images_per_scene = 1);

Tensor load_image(const std::string& root, const ManifestRecord& rec);
Tensor load_mask(const std::string& root, const ManifestRecord& rec);
// Label reads pass through FileAudit.
LoadedLabel load_label(const std::string& root, const ManifestRecord& rec);

}  // namespace crowdlab::data
