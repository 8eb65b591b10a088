#include "crowdlab/dataset.hpp"

#include <filesystem>
#include <fstream>

#include "crowdlab/png_io.hpp"
#include "crowdlab/rng.hpp"
#include "json.hpp"

namespace crowdlab::data {

namespace fs = std::filesystem;

namespace {
bool g_audit_active = false;
std::vector<std::string> g_audit_paths;
}  // namespace

void FileAudit::begin() {
  g_audit_active = true;
  g_audit_paths.clear();
}

std::vector<std::string> FileAudit::end() {
  g_audit_active = false;
  return std::move(g_audit_paths);
}

void FileAudit::note(const std::string& path) {
  if (g_audit_active) g_audit_paths.push_back(path);
}

Manifest manifest_from_json(const nlohmann::json& j) {
  Manifest m;
  for (const auto& r : j.at("records")) {
    ManifestRecord rec;
    rec.image_path = r.at("image").get<std::string>();
    rec.label_path = r.at("label").get<std::string>();
    rec.mask_path = r.at("mask").get<std::string>();
    rec.location_id = r.at("location_id").get<int>();
    rec.camera_id = r.at("camera_id").get<int>();
    rec.level = r.at("level").get<int>();
    rec.time_of_day = r.at("time").get<int>();
    rec.weather = r.at("weather").get<int>();
    rec.count = r.at("count").get<int>();
    m.records.push_back(std::move(rec));
  }
  return m;
}

nlohmann::json manifest_to_json(const Manifest& m) {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : m.records) {
    recs.push_back({{"image", r.image_path},
                    {"label", r.label_path},
                    {"mask", r.mask_path},
                    {"location_id", r.location_id},
                    {"camera_id", r.camera_id},
                    {"level", r.level},
                    {"time", r.time_of_day},
                    {"weather", r.weather},
                    {"count", r.count}});
  }
  return nlohmann::json{{"records", recs}};
}

Manifest read_manifest_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError(cat("cannot read ", path));
  nlohmann::json j;
  f >> j;
  return manifest_from_json(j);
}

void write_manifest_file(const std::string& path, const Manifest& m) {
  std::ofstream f(path);
  if (!f) throw IoError(cat("cannot write ", path));
  f << manifest_to_json(m).dump(2) << "\n";
}

Manifest read_manifest(const std::string& root) {
  return read_manifest_file((fs::path(root) / "manifest.json").string());
}

void write_manifest(const std::string& root, const Manifest& m) {
  write_manifest_file((fs::path(root) / "manifest.json").string(), m);
}

Manifest generate_dataset(const std::string& root, int n_locations,
                          std::uint64_t seed, scene::RenderStyle style,
                          int images_per_scene) {
  if (images_per_scene < 1)
    throw ArgumentError(cat("images_per_scene must be >= 1, got ",
                            images_per_scene));
  const auto bank = scene::build_scene_bank(n_locations, seed);
  fs::create_directories(fs::path(root) / "images");
  fs::create_directories(fs::path(root) / "labels");
  fs::create_directories(fs::path(root) / "masks");

  Manifest m;
  for (const auto& spec : bank) {
    for (int k = 0; k < images_per_scene; ++k) {
      const std::uint64_t sample_seed =
          Rng::derive(seed, "sample", static_cast<std::uint64_t>(
                                          spec.location_id * 4 + spec.camera_id),
                      static_cast<std::uint64_t>(k))
              .next_u64();
      const scene::Sample s = scene::make_sample(spec, sample_seed, style);
      const std::string stem = cat("loc", spec.location_id, "_cam",
                                   spec.camera_id, "_", k);
      ManifestRecord rec;
      rec.image_path = cat("images/", stem, ".png");
      rec.label_path = cat("labels/", stem, ".json");
      rec.mask_path = cat("masks/", stem, ".png");
      rec.location_id = spec.location_id;
      rec.camera_id = spec.camera_id;
      rec.level = spec.level;
      rec.time_of_day = s.attributes.time_of_day;
      rec.weather = s.attributes.weather;
      rec.count = static_cast<int>(s.dots.size());

      io::write_rgb8((fs::path(root) / rec.image_path).string(), s.image);
      io::write_gray8((fs::path(root) / rec.mask_path).string(), s.mask);

      nlohmann::json dots = nlohmann::json::array();
      for (const auto& d : s.dots) dots.push_back({d[0], d[1]});
      nlohmann::json lbl = {
          {"dots", dots},
          {"count", rec.count},
          {"attributes",
           {{"time", s.attributes.time_of_day},
            {"weather", s.attributes.weather},
            {"target_count", s.attributes.target_count}}}};
      std::ofstream lf(fs::path(root) / rec.label_path);
      if (!lf) throw IoError(cat("cannot write label ", rec.label_path));
      lf << lbl.dump() << "\n";

      m.records.push_back(std::move(rec));
    }
  }
  write_manifest(root, m);
  return m;
}

Tensor load_image(const std::string& root, const ManifestRecord& rec) {
  return io::read_rgb8((fs::path(root) / rec.image_path).string());
}

Tensor load_mask(const std::string& root, const ManifestRecord& rec) {
  Tensor m = io::read_gray8((fs::path(root) / rec.mask_path).string());
  for (std::size_t i = 0; i < m.numel(); ++i) m[i] = m[i] >= 0.5 ? 1.0 : 0.0;
  return m;
}

LoadedLabel load_label(const std::string& root, const ManifestRecord& rec) {
  const std::string path = (fs::path(root) / rec.label_path).string();
  FileAudit::note(path);
  std::ifstream f(path);
  if (!f) throw IoError(cat("cannot read label ", path));
  nlohmann::json j;
  f >> j;
  LoadedLabel out;
  for (const auto& d : j.at("dots"))
    out.dots.push_back({d.at(0).get<double>(), d.at(1).get<double>()});
  out.count = j.at("count").get<int>();
  out.attributes.time_of_day = j.at("attributes").at("time").get<int>();
  out.attributes.weather = j.at("attributes").at("weather").get<int>();
  out.attributes.target_count =
      j.at("attributes").at("target_count").get<int>();
  return out;
}

}  // namespace crowdlab::data
