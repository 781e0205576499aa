#include "nerfedit/dataset.hpp"

#include "nerfedit/image_io.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>

namespace nerfedit {

namespace {

using nlohmann::json;

double number(const json& object, const char* key, const std::string& where) {
  if (!object.contains(key) || !object[key].is_number()) {
    throw IoError("scene-io", where + "." + key + ": expected a number");
  }
  return object[key].get<double>();
}

Eigen::Vector3d vec3(const json& value, const std::string& where) {
  if (!value.is_array() || value.size() != 3) throw IoError("scene-io", where + ": expected 3 numbers");
  Eigen::Vector3d v;
  for (int i = 0; i < 3; ++i) {
    if (!value[i].is_number()) throw IoError("scene-io", where + ": expected 3 numbers");
    v[i] = value[i].get<double>();
  }
  return v;
}

json to_json(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

std::filesystem::path relative_to(const std::filesystem::path& path, const std::filesystem::path& base) {
  if (path.empty()) return path;
  const auto rel = std::filesystem::proximate(path, base);
  return rel.empty() ? path : rel;
}

}  // namespace

std::vector<CameraPose> SceneDataset::cameras() const {
  std::vector<CameraPose> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(f.camera);
  return out;
}

void SceneDataset::validate() const {
  if (frames.empty()) throw IoError("scene-io", "dataset has no frames");
  if (!bbox.valid()) throw GeometryError("scene-io", "dataset bbox is empty or non-finite");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const Frame& f = frames[i];
    const std::string where = "frame " + std::to_string(i);
    if (f.image.height != height() || f.image.width != width()) {
      throw ShapeError("scene-io", where + ": image size differs from frame 0");
    }
    if (f.mask.height != f.image.height || f.mask.width != f.image.width) {
      throw ShapeError("scene-io", where + ": mask missing or sized differently from its image");
    }
    if (f.camera.width != f.image.width || f.camera.height != f.image.height) {
      throw ShapeError("scene-io", where + ": camera size differs from image size");
    }
    f.camera.validate();
  }
}

CameraPose downsample_camera(const CameraPose& camera, int factor) {
  if (factor < 1) throw IoError("scene-io", "downsample factor must be >= 1");
  CameraPose out = camera;
  out.fx /= factor;
  out.fy /= factor;
  out.cx /= factor;
  out.cy /= factor;
  out.width = camera.width / factor;
  out.height = camera.height / factor;
  return out;
}

Eigen::Matrix3d orthonormalize_rotation(const Eigen::Matrix3d& rotation) {
  if (!rotation.allFinite()) throw GeometryError("scene-io", "non-finite rotation");
  const double error = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  const double det = rotation.determinant();
  if (error >= 1e-3 || std::abs(det - 1.0) >= 1e-3) {
    std::ostringstream msg;
    msg << "rotation is not orthonormal (orthogonality error " << error << ", det " << det << ")";
    throw GeometryError("scene-io", msg.str());
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

SceneDataset load_dataset(const std::filesystem::path& manifest, int downsample_factor) {
  if (downsample_factor < 1) throw IoError("scene-io", "downsample factor must be >= 1");
  std::ifstream in(manifest);
  if (!in) throw IoError("scene-io", "missing manifest " + manifest.string());
  json root;
  try {
    root = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("scene-io", "manifest " + manifest.string() + " is not valid JSON: " + e.what());
  }
  if (!root.contains("frames") || !root["frames"].is_array()) throw IoError("scene-io", "manifest lacks frames[]");
  if (!root.contains("bbox")) throw IoError("scene-io", "manifest lacks bbox");

  const std::filesystem::path base = manifest.parent_path();
  SceneDataset dataset;
  dataset.downsample_factor = downsample_factor;
  dataset.bbox.min = vec3(root["bbox"].value("min", json()), "bbox.min");
  dataset.bbox.max = vec3(root["bbox"].value("max", json()), "bbox.max");

  const json& frames = root["frames"];
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const json& f = frames[i];
    const std::string where = "frames[" + std::to_string(i) + "]";
    if (!f.contains("image") || !f["image"].is_string()) throw IoError("scene-io", where + ".image: expected a path");
    if (!f.contains("mask") || !f["mask"].is_string()) throw IoError("scene-io", where + ".mask: expected a path");
    Frame frame;
    frame.image_path = base / f["image"].get<std::string>();
    frame.mask_path = base / f["mask"].get<std::string>();

    const json& m = f.value("transform_matrix", json());
    if (!m.is_array() || m.size() < 3) throw IoError("scene-io", where + ".transform_matrix: expected 4x4 rows");
    Eigen::Matrix4d c2w = Eigen::Matrix4d::Identity();
    for (int r = 0; r < static_cast<int>(m.size()) && r < 4; ++r) {
      if (!m[r].is_array() || m[r].size() != 4) throw IoError("scene-io", where + ".transform_matrix: bad row");
      for (int c = 0; c < 4; ++c) c2w(r, c) = m[r][c].get<double>();
    }
    CameraPose& cam = frame.source_camera;
    cam.fx = number(f, "fx", where);
    cam.fy = number(f, "fy", where);
    cam.cx = number(f, "cx", where);
    cam.cy = number(f, "cy", where);
    cam.rotation = orthonormalize_rotation(c2w.topLeftCorner<3, 3>());
    cam.translation = c2w.topRightCorner<3, 1>();

    const Image image = load_image(frame.image_path);
    const GrayImage mask = load_gray(frame.mask_path);
    if (!mask.same_shape(GrayImage(image.height, image.width))) {
      throw ShapeError("scene-io", where + ": mask " + frame.mask_path.string() + " is " +
                                      std::to_string(mask.width) + "x" + std::to_string(mask.height) +
                                      ", image is " + std::to_string(image.width) + "x" +
                                      std::to_string(image.height));
    }
    cam.width = image.width;
    cam.height = image.height;
    cam.validate();
    frame.camera = downsample_camera(cam, downsample_factor);
    frame.image = downsample(image, downsample_factor);
    frame.mask = downsample(mask, downsample_factor);
    frame.mask.pixels = (frame.mask.pixels * 255.0f > 127.5f).cast<float>();
    dataset.frames.push_back(std::move(frame));
  }
  dataset.validate();
  return dataset;
}

void save_manifest(const SceneDataset& dataset, const std::filesystem::path& manifest) {
  const std::filesystem::path base = manifest.parent_path().empty() ? "." : manifest.parent_path();
  json frames = json::array();
  for (const Frame& f : dataset.frames) {
    const CameraPose& cam = f.source_camera;
    json rows = json::array();
    for (int r = 0; r < 3; ++r) {
      rows.push_back({cam.rotation(r, 0), cam.rotation(r, 1), cam.rotation(r, 2), cam.translation[r]});
    }
    rows.push_back({0.0, 0.0, 0.0, 1.0});
    frames.push_back({{"image", relative_to(f.image_path, base).generic_string()},
                      {"mask", relative_to(f.mask_path, base).generic_string()},
                      {"transform_matrix", rows},
                      {"fx", cam.fx},
                      {"fy", cam.fy},
                      {"cx", cam.cx},
                      {"cy", cam.cy}});
  }
  const json root = {{"frames", frames},
                     {"bbox", {{"min", to_json(dataset.bbox.min)}, {"max", to_json(dataset.bbox.max)}}}};
  if (manifest.has_parent_path()) std::filesystem::create_directories(manifest.parent_path());
  std::ofstream out(manifest);
  if (!out) throw IoError("scene-io", "cannot write " + manifest.string());
  out << root.dump(2) << "\n";
}

std::filesystem::path write_dataset(SceneDataset dataset, const std::filesystem::path& directory) {
  std::filesystem::create_directories(directory);
  for (std::size_t i = 0; i < dataset.frames.size(); ++i) {
    Frame& f = dataset.frames[i];
    char name[32];
    std::snprintf(name, sizeof(name), "%03zu", i);
    f.image_path = directory / "images" / (std::string(name) + ".png");
    f.mask_path = directory / "masks" / (std::string(name) + ".png");
    save_png(f.image, f.image_path);
    save_png(f.mask, f.mask_path);
    f.source_camera = f.camera;
  }
  const auto manifest = directory / "manifest.json";
  save_manifest(dataset, manifest);
  return manifest;
}

}  // namespace nerfedit
