#include <doctest.h>

#include "nerfedit/checkpoint.hpp"
#include "nerfedit/config.hpp"
#include "nerfedit/dataset.hpp"
#include "nerfedit/image_io.hpp"
#include "nerfedit/synthetic.hpp"
#include "oracles.hpp"

#include <fstream>
#include <random>

using namespace nerfedit;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("nerfedit_scene_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Image random_image(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> u(0, 255);
  Image image(h, w);
  for (Eigen::Index i = 0; i < image.pixels.size(); ++i) image.pixels.data()[i] = u(rng) / 255.0f;
  return image;
}

void write_text(const fs::path& path, const std::string& text) { std::ofstream(path) << text; }

SyntheticSceneSpec lone_sphere(int size) {
  SyntheticSceneSpec spec;
  spec.sphere_center = Eigen::Vector3d::Zero();
  spec.with_plane = false;
  spec.width = spec.height = size;
  return spec;
}

}  // namespace

TEST_CASE("8-bit PNG round trip is exact") {
  const fs::path dir = scratch("png");
  const Image image = random_image(7, 5, 1);
  save_png(image, dir / "a.png");
  const Image back = load_image(dir / "a.png");
  CHECK(back.height == 7);
  CHECK(back.width == 5);
  CHECK((back.pixels == image.pixels).all());

  GrayImage gray(3, 4);
  gray.pixels << 0, 1, 0.5f, 1, 0, 0, 1, 1, 0.2f, 0, 0, 1;
  save_png(gray, dir / "g.png");
  const GrayImage g2 = load_gray(dir / "g.png");
  CHECK((g2.pixels - gray.pixels).abs().maxCoeff() <= 0.5f / 255.0f + 1e-6f);
  const Image rgb = load_image(dir / "g.png");
  CHECK((rgb.pixels.col(0) == rgb.pixels.col(2)).all());

  CHECK_THROWS_AS(load_image(dir / "missing.png"), IoError);
  write_text(dir / "junk.png", "not an image");
  CHECK_THROWS_AS(load_image(dir / "junk.png"), IoError);
}

TEST_CASE("downsampling") {
  const Image image = random_image(6, 8, 2);
  CHECK((downsample(image, 1).pixels == image.pixels).all());

  const Image flat = Image::constant(8, 6, Eigen::Array3f(0.3f, 0.6f, 0.9f));
  const Image half = downsample(flat, 2);
  CHECK(half.height == 4);
  CHECK(half.width == 3);
  CHECK((half.pixels.rowwise() - Eigen::Array3f(0.3f, 0.6f, 0.9f).transpose()).abs().maxCoeff() < 1e-7f);

  GrayImage checker(8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) checker.pixels[checker.index(y, x)] = static_cast<float>((x + y) % 2);
  CHECK((downsample(checker, 2).pixels == 0.5f).all());

  // box average against a loop oracle, with a ragged edge that is dropped
  const Image ragged = random_image(7, 10, 3);
  const Image d3 = downsample(ragged, 3);
  CHECK(d3.height == 2);
  CHECK(d3.width == 3);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 3; ++x)
      for (int c = 0; c < 3; ++c) {
        double sum = 0;
        for (int dy = 0; dy < 3; ++dy)
          for (int dx = 0; dx < 3; ++dx) sum += ragged.pixels(ragged.index(3 * y + dy, 3 * x + dx), c);
        CHECK(d3.pixels(d3.index(y, x), c) == doctest::Approx(sum / 9).epsilon(1e-6));
      }
  CHECK_THROWS_AS(downsample(ragged, 0), IoError);
  CHECK_THROWS_AS(downsample(ragged, 11), IoError);
}

TEST_CASE("downsampled cameras reproject onto downsampled pixels") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 20; ++trial) {
    CameraPose cam = CameraPose::look_at({3 * u(rng), 3 * u(rng), 2 + u(rng)}, {0, 0, 0}, Eigen::Vector3d::UnitZ(),
                                         120 + 10 * u(rng), 118, 96, 72);
    cam.cx += 2 * u(rng);
    for (int f : {1, 2, 3, 4}) {
      const CameraPose small = downsample_camera(cam, f);
      CHECK(small.width == 96 / f);
      CHECK(small.height == 72 / f);
      const RayBatch rays = generate_rays(small, {0.1, 10.0});
      for (Eigen::Index i = 0; i < rays.size(); i += 37) {
        const Eigen::Vector3d point = rays.origins.col(i) + 2.0 * rays.directions.col(i);
        const Eigen::Vector2d pixel((i % small.width) + 0.5, (i / small.width) + 0.5);
        CHECK((oracle::project(small, point) - pixel).norm() < 1e-4);
        // same point lands in the matching block of the source image
        const Eigen::Vector2d source = oracle::project(cam, point);
        CHECK((source / f - pixel).norm() < 1e-4);
      }
    }
  }
}

TEST_CASE("rotations are re-orthonormalized or rejected") {
  const Eigen::Matrix3d r = Eigen::AngleAxisd(0.7, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix();
  Eigen::Matrix3d noisy = r;
  noisy(0, 1) += 4e-4;
  noisy(2, 2) -= 3e-4;
  const Eigen::Matrix3d fixed = orthonormalize_rotation(noisy);
  CHECK((fixed.transpose() * fixed - Eigen::Matrix3d::Identity()).norm() < 1e-12);
  CHECK(std::abs(fixed.determinant() - 1.0) < 1e-12);
  CHECK((fixed - r).norm() < 1e-3);
  Eigen::Matrix3d bad = r;
  bad(1, 1) += 0.05;
  CHECK_THROWS_AS(orthonormalize_rotation(bad), GeometryError);
  CHECK_THROWS_AS(orthonormalize_rotation(-r), GeometryError);
}

TEST_CASE("manifest load, save and reload") {
  const fs::path dir = scratch("manifest");
  SyntheticSceneSpec spec;
  spec.n_views = 3;
  spec.width = 24;
  spec.height = 16;
  const fs::path manifest = write_dataset(make_synthetic_scene(spec, 0), dir / "scene");
  const SceneDataset a = load_dataset(manifest);
  CHECK(a.frames.size() == 3);
  CHECK(a.width() == 24);
  CHECK(a.height() == 16);
  CHECK(a.bbox == spec.bbox);

  const fs::path copy = dir / "scene" / "copy.json";
  save_manifest(a, copy);
  const SceneDataset b = load_dataset(copy);
  REQUIRE(b.frames.size() == a.frames.size());
  for (std::size_t i = 0; i < a.frames.size(); ++i) {
    CHECK(fs::equivalent(a.frames[i].image_path, b.frames[i].image_path));
    CHECK(fs::equivalent(a.frames[i].mask_path, b.frames[i].mask_path));
    CHECK((a.frames[i].camera.rotation - b.frames[i].camera.rotation).norm() < 1e-12);
    CHECK((a.frames[i].camera.translation - b.frames[i].camera.translation).norm() < 1e-12);
    CHECK(a.frames[i].camera.fx == b.frames[i].camera.fx);
    CHECK(a.frames[i].camera.cy == b.frames[i].camera.cy);
    CHECK((a.frames[i].image.pixels == b.frames[i].image.pixels).all());
    CHECK((a.frames[i].mask.pixels == b.frames[i].mask.pixels).all());
  }
  CHECK(b.bbox == a.bbox);

  const SceneDataset half = load_dataset(manifest, 2);
  CHECK(half.width() == 12);
  CHECK(half.frames[0].camera.fx == doctest::Approx(a.frames[0].camera.fx / 2));
  CHECK(((half.frames[0].mask.pixels == 0.0f) || (half.frames[0].mask.pixels == 1.0f)).all());
}

TEST_CASE("manifest errors") {
  const fs::path dir = scratch("manifest_errors");
  SyntheticSceneSpec spec;
  spec.n_views = 2;
  spec.width = spec.height = 8;
  const fs::path manifest = write_dataset(make_synthetic_scene(spec, 0), dir);
  nlohmann::json j;
  std::ifstream(manifest) >> j;

  auto variant = [&](const std::function<void(nlohmann::json&)>& edit) {
    nlohmann::json copy = j;
    edit(copy);
    write_text(dir / "variant.json", copy.dump());
    return dir / "variant.json";
  };
  CHECK_THROWS_AS(load_dataset(dir / "nope.json"), IoError);
  CHECK_THROWS_AS(load_dataset(variant([](auto& m) { m["frames"][1]["image"] = "missing.png"; })), IoError);
  CHECK_THROWS_AS(load_dataset(variant([](auto& m) { m["frames"][0]["transform_matrix"][0][0] = 1.2; })),
                  GeometryError);
  save_png(Image(10, 8), dir / "other.png");
  CHECK_THROWS_AS(load_dataset(variant([](auto& m) { m["frames"][1]["image"] = "other.png"; })), ShapeError);
  CHECK_THROWS_AS(load_dataset(variant([](auto& m) { m["frames"][0]["mask"] = "other.png"; })), ShapeError);
  // slightly noisy rotation is repaired
  CHECK_NOTHROW(load_dataset(variant([](auto& m) {
    m["frames"][0]["transform_matrix"][0][0] = m["frames"][0]["transform_matrix"][0][0].template get<double>() + 2e-4;
  })));
}

TEST_CASE("mask binarization threshold") {
  const fs::path dir = scratch("threshold");
  SyntheticSceneSpec spec;
  spec.n_views = 2;
  spec.width = spec.height = 4;
  SceneDataset d = make_synthetic_scene(spec, 0);
  const fs::path manifest = write_dataset(d, dir);
  GrayImage mask(4, 4);
  mask.pixels << 0, 126, 127, 128, 255, 200, 50, 0, 0, 0, 0, 0, 0, 0, 0, 0;
  mask.pixels /= 255.0f;
  save_png(mask, dir / "masks" / "000.png");
  const SceneDataset loaded = load_dataset(manifest);
  const auto& m = loaded.frames[0].mask.pixels;
  CHECK(m[0] == 0.0f);
  CHECK(m[1] == 0.0f);
  CHECK(m[2] == 0.0f);
  CHECK(m[3] == 1.0f);
  CHECK(m[4] == 1.0f);
  CHECK(m[5] == 1.0f);
  CHECK(m[6] == 0.0f);
}

TEST_CASE("synthetic silhouette matches the pinhole projection") {
  for (double distance : {3.0, 4.0, 6.0}) {
    SyntheticSceneSpec spec = lone_sphere(201);
    const double r = spec.sphere_radius;
    const double focal = 150.0;
    const CameraPose cam = CameraPose::look_at({0, 0, -distance}, {0, 0, 0}, Eigen::Vector3d::UnitY(), focal, focal,
                                               201, 201);
    const GrayImage mask = synthetic_mask(spec, cam);
    const double tangent_radius = focal * r / std::sqrt(distance * distance - r * r);
    const double depth_radius = focal * r / distance;
    double inside_max = 0.0, outside_min = 1e9;
    int count = 0;
    for (int y = 0; y < 201; ++y)
      for (int x = 0; x < 201; ++x) {
        const double rho = std::hypot(x + 0.5 - cam.cx, y + 0.5 - cam.cy);
        if (mask.pixels[mask.index(y, x)] == 1.0f) {
          inside_max = std::max(inside_max, rho);
          ++count;
        } else {
          outside_min = std::min(outside_min, rho);
        }
      }
    CHECK(inside_max <= tangent_radius);
    CHECK(outside_min >= tangent_radius - 1e-9);
    CHECK(std::abs(inside_max - depth_radius) < 1.0 + (tangent_radius - depth_radius));
    CHECK(std::abs(inside_max - tangent_radius) < 1.0);
    const double area = std::numbers::pi * tangent_radius * tangent_radius;
    CHECK(std::abs(count - area) / area < 0.02);
  }
}

TEST_CASE("synthetic masks mark exactly the sphere hits") {
  SyntheticSceneSpec spec;
  spec.width = spec.height = 40;
  spec.n_views = 4;
  for (const auto& cam : synthetic_cameras(spec, 0)) {
    const GrayImage mask = synthetic_mask(spec, cam);
    const Image image = render_synthetic(spec, cam);
    const RayBatch rays = generate_rays(cam, {0.0, 1e9});
    for (Eigen::Index i = 0; i < rays.size(); ++i) {
      const Eigen::Vector3d o = rays.origins.col(i), d = rays.directions.col(i);
      // independent ray-sphere test
      const Eigen::Vector3d oc = o - spec.sphere_center;
      const double b = oc.dot(d), c = oc.squaredNorm() - spec.sphere_radius * spec.sphere_radius;
      const double disc = b * b - c;
      const bool sphere_hit = disc >= 0 && -b - std::sqrt(disc) > 0;
      const bool plane_first = [&] {
        if (std::abs(d.z()) < 1e-12) return false;
        const double k = (spec.plane_height - o.z()) / d.z();
        const Eigen::Vector3d p = o + k * d;
        return k > 0 && std::abs(p.x()) <= spec.plane_half_extent && std::abs(p.y()) <= spec.plane_half_extent &&
               (!sphere_hit || k < -b - std::sqrt(disc));
      }();
      CHECK(mask.pixels[i] == ((sphere_hit && !plane_first) ? 1.0f : 0.0f));
      if (mask.pixels[i] == 1.0f) {
        CHECK((image.pixels.row(i).transpose() == spec.sphere_color).all());
      }
    }
  }
}

TEST_CASE("synthetic generation is deterministic") {
  SyntheticSceneSpec spec;
  spec.width = spec.height = 16;
  spec.n_views = 5;
  const SceneDataset a = make_synthetic_scene(spec, 1);
  const SceneDataset b = make_synthetic_scene(spec, 2);
  CHECK(a.frames.size() == 5);
  for (std::size_t i = 0; i < a.frames.size(); ++i) {
    CHECK((a.frames[i].image.pixels == b.frames[i].image.pixels).all());
    CHECK((a.frames[i].mask.pixels == b.frames[i].mask.pixels).all());
    CHECK(a.frames[i].camera == b.frames[i].camera);
  }
  spec.jitter = 0.1;
  CHECK(!(make_synthetic_scene(spec, 1).frames[0].camera == make_synthetic_scene(spec, 2).frames[0].camera));
  CHECK(make_synthetic_scene(spec, 3).frames[0].camera == make_synthetic_scene(spec, 3).frames[0].camera);
}

TEST_CASE("degenerate synthetic scenes are rejected") {
  SyntheticSceneSpec spec;
  spec.sphere_radius = 0;
  CHECK_THROWS_AS(spec.validate(), GeometryError);
  spec = {};
  spec.sphere_center = {5, 0, 0};
  CHECK_THROWS_AS(spec.validate(), GeometryError);
  spec = {};
  spec.n_views = 1;
  CHECK_THROWS_AS(make_synthetic_scene(spec, 0), GeometryError);
}

TEST_CASE("empty configuration yields every default") {
  const RunConfig c = parse_config_json("{}");
  CHECK(c.edit.lambda_sds == 0.01);
  CHECK(c.edit.lambda_bg == 1000.0);
  CHECK(c.edit.learning_rate == 5e-4);
  CHECK(c.edit.max_iterations == 10000);
  CHECK(c.edit.local_steps == 1);
  CHECK(c.edit.global_steps == 1);
  CHECK(c.reconstruction.learning_rate == 5e-4);
  CHECK(c.reconstruction.iterations == 3000);
  CHECK(c.reconstruction.rays_per_batch == 4096);
  CHECK(c.reconstruction.mask_loss_weight == 1.0);
  CHECK(c.reconstruction.bce_clamp_eps == 1e-5);
  CHECK(c.sds.t_min_frac == 0.02);
  CHECK(c.sds.t_max_frac == 0.98);
  CHECK(c.schedule.num_steps == 1000);
  CHECK(c.field.grid.levels == HashGridConfig{}.levels);
  CHECK(c.mask_sharpness == 10.0);
  CHECK(c.provider.kind == ProviderKind::None);
  CHECK(c.provider.remote.guidance_scale == 7.5);
}

TEST_CASE("configuration overrides and strictness") {
  CHECK(parse_config_json(R"({"edit":{"lambda_bg":0}})").edit.lambda_bg == 0.0);
  const RunConfig c = parse_config_json(R"({"edit":{"alternation":[2,3],"render_size":[32,48]},
      "prompt":{"subject_token":"V*","class_word":"dog"},"guidance":{"weighting":"unit"},
      "field":{"grid":{"levels":4,"bbox":{"min":[-1,-1,-1],"max":[1,1,1]}}}})");
  CHECK(c.edit.local_steps == 2);
  CHECK(c.edit.global_steps == 3);
  CHECK(c.edit.render_height == 32);
  CHECK(c.edit.render_width == 48);
  CHECK(*c.prompt.subject_token == "V*");
  CHECK(c.sds.weighting == SdsWeighting::Unit);
  CHECK(c.field.grid.levels == 4);
  REQUIRE(c.grid_bbox);
  CHECK(c.grid_bbox->max == Eigen::Vector3d(1, 1, 1));

  auto message = [](const std::string& text) {
    try {
      parse_config_json(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(message(R"({"edit":{"lamda_bg":0}})").find("edit.lamda_bg") != std::string::npos);
  CHECK(message(R"({"reconstrucion":{}})").find("reconstrucion") != std::string::npos);
  CHECK(message(R"({"edit":{"lambda_bg":"big"}})").find("edit.lambda_bg") != std::string::npos);
  CHECK(message(R"({"field":{"grid":{"levels":2.5}}})").find("field.grid.levels") != std::string::npos);
  CHECK(message(R"({"edit":{"alternation":[1]}})").find("edit.alternation") != std::string::npos);
  CHECK(message("{not json").find("JSON") != std::string::npos);
  CHECK(message(R"({"edit":{"lambda_sds":-1}})") != "no error");
  CHECK(message(R"({"provider":{"kind":"oracle"}})").find("provider.target") != std::string::npos);
}

TEST_CASE("configuration files resolve paths next to themselves") {
  const fs::path dir = scratch("config");
  write_text(dir / "run.json", R"({"dataset":{"manifest":"data/m.json"},"provider":{"kind":"oracle","target":"t.png"}})");
  const RunConfig c = parse_config(dir / "run.json");
  CHECK(c.dataset.manifest == dir / "data/m.json");
  CHECK(c.provider.target == dir / "t.png");
  CHECK_THROWS_AS(parse_config(dir / "absent.json"), ConfigError);

  const ProviderConfig oracle = parse_provider_flag("oracle:/x/y.png");
  CHECK(oracle.kind == ProviderKind::Oracle);
  CHECK(oracle.target == "/x/y.png");
  const ProviderConfig remote = parse_provider_flag("remote:http://127.0.0.1:9000");
  CHECK(remote.kind == ProviderKind::Remote);
  CHECK(remote.remote.endpoint == "http://127.0.0.1:9000");
  CHECK_THROWS_AS(parse_provider_flag("magic"), ConfigError);
}

TEST_CASE("checkpoints round-trip bit for bit") {
  const fs::path dir = scratch("checkpoint");
  FieldConfig config;
  config.grid.levels = 3;
  config.grid.table_size = 1 << 10;
  config.view_dependent_edit = false;
  const auto params = init_parameters<float>(config, 17);
  save_checkpoint(params, dir / "a.nefc");
  const auto loaded = load_checkpoint(dir / "a.nefc");
  CHECK(loaded.config == params.config);
  const auto p = params.tensors();
  const auto l = loaded.tensors();
  for (std::size_t i = 0; i < p.size(); ++i) CHECK((*p[i]).cwiseEqual(*l[i]).all());
  save_checkpoint(loaded, dir / "b.nefc");
  CHECK(read_file(dir / "a.nefc") == read_file(dir / "b.nefc"));

  auto bytes = read_file(dir / "a.nefc");
  CHECK_THROWS_AS(deserialize_checkpoint(std::span(bytes).first(bytes.size() - 1)), IoError);
  bytes.push_back(0);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes), IoError);
  bytes.pop_back();
  bytes[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(bytes), IoError);
  bytes[0] = 'N';
  bytes[4] = 9;
  CHECK_THROWS_AS(deserialize_checkpoint(bytes), IoError);
  CHECK_THROWS_AS(load_checkpoint(dir / "none.nefc"), IoError);
}

TEST_CASE("optimizer state round-trips") {
  const fs::path dir = scratch("adam");
  AdamState<float> state;
  state.step = 123;
  state.first.push_back(MatrixX<float>::Random(3, 4));
  state.second.push_back(MatrixX<float>::Random(3, 4).cwiseAbs());
  state.first.push_back(MatrixX<float>::Random(5, 1));
  state.second.push_back(MatrixX<float>::Random(5, 1).cwiseAbs());
  save_adam_state(state, dir / "s.adam");
  const AdamState<float> back = load_adam_state(dir / "s.adam");
  CHECK(back.step == 123);
  REQUIRE(back.first.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back.first[i].cwiseEqual(state.first[i]).all());
    CHECK(back.second[i].cwiseEqual(state.second[i]).all());
  }
}
