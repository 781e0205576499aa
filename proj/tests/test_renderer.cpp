#include <doctest.h>

#include "nerfedit/render.hpp"
#include "oracles.hpp"

#include <random>

using namespace nerfedit;

namespace {

/// Pass with hand-chosen per-sample quantities, one ray per entry of `rays`.
RenderPass<double> make_pass(const std::vector<std::vector<double>>& sigma, std::mt19937_64& rng,
                             const std::vector<double>* mask_value = nullptr) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RenderPass<double> pass;
  pass.ray_count = static_cast<Eigen::Index>(sigma.size());
  pass.offsets.push_back(0);
  Eigen::Index total = 0;
  for (const auto& s : sigma) pass.offsets.push_back(total += static_cast<Eigen::Index>(s.size()));
  pass.delta.resize(total);
  pass.field.sigma.resize(total);
  pass.field.color.resize(3, total);
  pass.field.edit_prob.resize(total);
  pass.mask.resize(total);
  Eigen::Index k = 0;
  for (const auto& s : sigma) {
    for (double v : s) {
      pass.field.sigma[k] = v;
      pass.delta[k] = 0.05 + 0.2 * u(rng);
      for (int c = 0; c < 3; ++c) pass.field.color(c, k) = u(rng);
      pass.field.edit_prob[k] = u(rng);
      pass.mask[k] = mask_value ? (*mask_value)[0] : u(rng);
      ++k;
    }
  }
  return pass;
}

std::vector<std::vector<double>> random_sigma(std::mt19937_64& rng, int rays, int samples, double scale) {
  std::uniform_real_distribution<double> u(0.0, scale);
  std::vector<std::vector<double>> out(rays, std::vector<double>(samples));
  for (auto& r : out)
    for (auto& v : r) v = u(rng);
  return out;
}

CameraPose random_camera(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Eigen::Quaterniond q(Eigen::Vector4d(u(rng), u(rng), u(rng), u(rng)).normalized());
  CameraPose cam;
  cam.rotation = q.toRotationMatrix();
  cam.translation = Eigen::Vector3d(u(rng), u(rng), u(rng)) * 3.0;
  cam.fx = 50 + 30 * (u(rng) + 1);
  cam.fy = 50 + 30 * (u(rng) + 1);
  cam.width = 64;
  cam.height = 48;
  cam.cx = 32 + 3 * u(rng);
  cam.cy = 24 + 3 * u(rng);
  return cam;
}

}  // namespace

TEST_CASE("principal-point ray runs along the optical axis") {
  CameraPose cam;
  cam.fx = cam.fy = 40;
  cam.width = 21;
  cam.height = 21;
  cam.cx = cam.cy = 10.5;
  const RayBatch rays = generate_rays(cam, {Eigen::Vector2i(10, 10)}, {0.1, 5.0});
  CHECK((rays.directions.col(0) - Eigen::Vector3d::UnitZ()).norm() < 1e-15);
  CHECK(rays.origins.col(0).norm() == 0.0);
}

TEST_CASE("translating the camera translates ray origins only") {
  std::mt19937_64 rng(1);
  const CameraPose cam = random_camera(rng);
  CameraPose moved = cam;
  moved.translation += Eigen::Vector3d(0.3, -2.0, 1.5);
  const RayBatch a = generate_rays(cam, {0.1, 5.0});
  const RayBatch b = generate_rays(moved, {0.1, 5.0});
  CHECK((b.origins.colwise() - Eigen::Vector3d(0.3, -2.0, 1.5) - a.origins).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((b.directions - a.directions).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("rays reproject onto their pixels") {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> px(0, 47);
  for (int trial = 0; trial < 50; ++trial) {
    const CameraPose cam = random_camera(rng);
    std::vector<Eigen::Vector2i> pixels;
    for (int i = 0; i < 20; ++i) pixels.emplace_back(px(rng), px(rng));
    const RayBatch rays = generate_rays(cam, pixels, {0.1, 5.0});
    for (std::size_t i = 0; i < pixels.size(); ++i) {
      CHECK(std::abs(rays.directions.col(i).norm() - 1.0) < 1e-12);
      const Eigen::Vector3d point = rays.origins.col(i) + 1.0 * rays.directions.col(i);
      const Eigen::Vector2d back = oracle::project(cam, point);
      CHECK((back - (pixels[i].cast<double>().array() + 0.5).matrix()).norm() < 1e-4);
      CHECK((project(cam, point) - back).norm() < 1e-9);
    }
  }
}

TEST_CASE("singular or invalid cameras are rejected") {
  CameraPose cam;
  cam.width = cam.height = 4;
  cam.rotation(2, 2) = 0.0;
  CHECK_THROWS_AS(generate_rays(cam, {0.1, 1.0}), GeometryError);
  cam.rotation = Eigen::Matrix3d::Identity() * 1.1;
  CHECK_THROWS_AS(cam.validate(), GeometryError);
  cam.rotation = -Eigen::Matrix3d::Identity();
  CHECK_THROWS_AS(cam.validate(), GeometryError);
  cam.rotation.setIdentity();
  cam.fx = 0;
  CHECK_THROWS_AS(cam.validate(), GeometryError);
  cam.fx = 1;
  CHECK_THROWS_AS(generate_rays(cam, {Eigen::Vector2i(4, 0)}, {0.1, 1.0}), GeometryError);
}

TEST_CASE("uniform binning places samples at bin midpoints") {
  Ray ray;
  ray.k_near = 0.0;
  ray.k_far = 1.0;
  const RaySampling s = sample_along_ray(ray, 4, false, 0);
  const double expected[4] = {0.125, 0.375, 0.625, 0.875};
  for (int i = 0; i < 4; ++i) {
    CHECK(s.k[i] == doctest::Approx(expected[i]).epsilon(1e-15));
    CHECK(s.delta[i] == 0.25);
  }
  CHECK_THROWS_AS(sample_along_ray(ray, 1, false, 0), GeometryError);
}

TEST_CASE("stratified samples are deterministic, ordered and partition the segment") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (int trial = 0; trial < 100; ++trial) {
    Ray ray;
    ray.k_near = u(rng);
    ray.k_far = ray.k_near + 0.01 + u(rng);
    const int n = 2 + trial % 70;
    for (bool stratified : {false, true}) {
      const RaySampling a = sample_along_ray(ray, n, stratified, 77 + trial);
      const RaySampling b = sample_along_ray(ray, n, stratified, 77 + trial);
      CHECK(a.k == b.k);
      CHECK(std::abs(a.delta.sum() - (ray.k_far - ray.k_near)) < 1e-9);
      CHECK(a.k[0] >= ray.k_near);
      CHECK(a.k[n - 1] <= ray.k_far);
      for (int i = 1; i < n; ++i) CHECK(a.k[i] > a.k[i - 1]);
    }
    CHECK(sample_along_ray(ray, n, true, 1).k != sample_along_ray(ray, n, true, 2).k);
  }
}

TEST_CASE("soft mask") {
  for (double s : {0.1, 1.0, 10.0, 1000.0}) CHECK(soft_mask(0.5, s) == 0.5);
  CHECK(soft_mask(0.6, 10.0) == doctest::Approx(0.7310585786).epsilon(1e-10));
  CHECK(soft_mask(0.8, 1e4) > 1.0 - 1e-12);
  double last = 0.0;
  for (int i = 1; i < 100; ++i) {
    const double v = soft_mask(i / 100.0, 10.0);
    CHECK(v > last);
    last = v;
  }
}

TEST_CASE("box clipping") {
  RayBatch rays;
  rays.resize(3);
  rays.set(0, {{-5, 0, 0}, {1, 0, 0}, 0.0, 100.0});
  rays.set(1, {{-5, 3, 0}, {1, 0, 0}, 0.0, 100.0});
  rays.set(2, {{0, 0, 0}, {0, 0, 1}, 0.5, 100.0});
  clip_to_box(rays, {{-1, -1, -1}, {1, 1, 1}});
  CHECK(rays.k_near[0] == doctest::Approx(4.0));
  CHECK(rays.k_far[0] == doctest::Approx(6.0));
  CHECK(rays.ray(1).empty());
  CHECK(rays.k_near[2] == doctest::Approx(0.5));
  CHECK(rays.k_far[2] == doctest::Approx(1.0));
}

TEST_CASE("compositing matches the running-product oracle in every mode") {
  std::mt19937_64 rng(4);
  const auto sigma = random_sigma(rng, 30, 17, 8.0);
  const RenderPass<double> pass = make_pass(sigma, rng);
  const Rgb bg(0.2f, 0.7f, 0.4f);
  for (auto kind : {RenderModeKind::Full, RenderModeKind::Foreground, RenderModeKind::Background}) {
    const RenderOutput<double> out = composite(pass, RenderMode{kind, bg});
    for (Eigen::Index r = 0; r < pass.ray_count; ++r) {
      std::vector<double> s, m, d;
      std::vector<std::array<double, 3>> c;
      for (Eigen::Index i = pass.offsets[r]; i < pass.offsets[r + 1]; ++i) {
        s.push_back(pass.field.sigma[i]);
        m.push_back(pass.mask[i]);
        d.push_back(pass.delta[i]);
        c.push_back({pass.field.color(0, i), pass.field.color(1, i), pass.field.color(2, i)});
      }
      const auto ref = oracle::composite(s, c, m, d, kind, {bg[0], bg[1], bg[2]});
      for (int ch = 0; ch < 3; ++ch) CHECK(out.color(r, ch) == doctest::Approx(ref[ch]).epsilon(1e-12));
      // editing probability always uses full weights against m~
      std::vector<std::array<double, 3>> mc;
      for (double v : m) mc.push_back({v, v, v});
      const auto edit = oracle::composite(s, mc, m, d, RenderModeKind::Full, {0, 0, 0});
      CHECK(out.edit_prob[r] == doctest::Approx(edit[0]).epsilon(1e-12));
    }
  }
}

TEST_CASE("empty space renders the background exactly") {
  std::mt19937_64 rng(5);
  const auto sigma = std::vector<std::vector<double>>(10, std::vector<double>(32, 0.0));
  const RenderPass<double> pass = make_pass(sigma, rng);
  const Rgb bg(0.25f, 0.5f, 0.125f);
  const auto full = composite(pass, RenderMode::full());
  CHECK((full.color == 0.0).all());
  CHECK((full.opacity == 0.0).all());
  const auto fg = composite(pass, RenderMode::foreground(bg));
  for (Eigen::Index r = 0; r < pass.ray_count; ++r) {
    for (int c = 0; c < 3; ++c) CHECK(fg.color(r, c) == static_cast<double>(bg[c]));
  }
}

TEST_CASE("saturated soft mask makes the decomposed renders equal the full render") {
  std::mt19937_64 rng(6);
  const auto sigma = random_sigma(rng, 20, 24, 6.0);
  const std::vector<double> one{1.0}, zero{0.0};
  const auto fg_pass = make_pass(sigma, rng, &one);
  CHECK((composite(fg_pass, RenderMode::foreground(Rgb::Zero())).color == composite(fg_pass, RenderMode::full()).color).all());
  const auto bg_pass = make_pass(sigma, rng, &zero);
  CHECK((composite(bg_pass, RenderMode::background()).color == composite(bg_pass, RenderMode::full()).color).all());
}

TEST_CASE("saturated editing field reproduces the endpoint equivalences through the renderer") {
  auto p = oracle::tiny_field(3).cast<float>();
  p.edit_w2.setZero();
  RenderSettings settings;
  settings.n_samples = 32;
  settings.mask_sharpness = 1000.0;
  CameraPose cam = CameraPose::look_at({2.5, 0.3, 0.4}, {0, 0, 0}, Eigen::Vector3d::UnitZ(), 20, 20, 12, 12);
  RayBatch rays = generate_rays(cam, default_ray_bounds(p.config.grid.bbox));
  clip_to_box(rays, p.config.grid.bbox);

  p.edit_b2(0, 0) = 50.0f;
  auto pass = trace(p, rays, settings);
  CHECK((pass.mask == 1.0f).all());
  CHECK((composite(pass, RenderMode::foreground(Rgb::Zero())).color == composite(pass, RenderMode::full()).color).all());

  p.edit_b2(0, 0) = -50.0f;
  pass = trace(p, rays, settings);
  CHECK((pass.mask == 0.0f).all());
  CHECK((composite(pass, RenderMode::background()).color == composite(pass, RenderMode::full()).color).all());
}

TEST_CASE("density split is convex") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100000; ++i) {
    const double sigma = 50.0 * u(rng);
    const double m = u(rng);
    const double sum = effective_density(sigma, m, RenderModeKind::Foreground) +
                       effective_density(sigma, m, RenderModeKind::Background);
    REQUIRE(std::abs(sum - sigma) <= 1e-12 * std::max(1.0, sigma));
  }
}

TEST_CASE("weights and outputs stay in range and transmittance never increases") {
  std::mt19937_64 rng(8);
  const auto sigma = random_sigma(rng, 50, 40, 20.0);
  const auto pass = make_pass(sigma, rng);
  for (auto kind : {RenderModeKind::Full, RenderModeKind::Foreground, RenderModeKind::Background}) {
    const auto out = composite(pass, RenderMode{kind, Rgb(1.0f, 1.0f, 1.0f)});
    CHECK((out.color >= 0.0).all());
    CHECK((out.color <= 1.0 + 1e-12).all());
    CHECK((out.opacity >= 0.0).all());
    CHECK((out.opacity <= 1.0).all());
    CHECK((out.edit_prob >= 0.0).all());
    CHECK((out.edit_prob <= 1.0).all());
  }
  // opacity of every prefix of a ray is non-decreasing
  RenderPass<double> prefix = pass;
  prefix.ray_count = 1;
  double last = 0.0;
  for (Eigen::Index n = 1; n <= 40; ++n) {
    prefix.offsets = {0, n};
    const double o = composite(prefix, RenderMode::full()).opacity[0];
    CHECK(o >= last);
    last = o;
  }
}

TEST_CASE("homogeneous slab renders the closed-form color") {
  const double sigma0 = 2.0, length = 1.0, c0 = 0.7;
  const double exact = c0 * (1.0 - std::exp(-sigma0 * length));
  double last_error = std::numeric_limits<double>::infinity();
  for (int n : {2, 4, 16, 64, 256}) {
    Ray ray;
    ray.k_near = 0.0;
    ray.k_far = length;
    const RaySampling s = sample_along_ray(ray, n, false, 0);
    RenderPass<double> pass;
    pass.ray_count = 1;
    pass.offsets = {0, n};
    pass.delta = s.delta;
    pass.field.sigma = ArrayX<double>::Constant(n, sigma0);
    pass.field.color = Eigen::Array<double, 3, Eigen::Dynamic>::Constant(3, n, c0);
    pass.field.edit_prob = ArrayX<double>::Zero(n);
    pass.mask = ArrayX<double>::Zero(n);
    const double error = std::abs(composite(pass, RenderMode::full()).color(0, 0) - exact);
    if (n == 256) CHECK(error < 1e-3);
    CHECK(error <= last_error + 1e-12);
    last_error = error;
  }
}

TEST_CASE("quadrature error shrinks with sample count for a varying emitter") {
  // c(k) = k on [0, 1], sigma = 2: integral of sigma exp(-sigma k) k dk
  const double sigma0 = 2.0;
  const double exact = (1.0 - std::exp(-sigma0) * (1.0 + sigma0)) / sigma0;
  double last = std::numeric_limits<double>::infinity();
  for (int n : {2, 4, 8, 16, 32, 64, 128, 256}) {
    Ray ray;
    ray.k_near = 0.0;
    ray.k_far = 1.0;
    const RaySampling s = sample_along_ray(ray, n, false, 0);
    RenderPass<double> pass;
    pass.ray_count = 1;
    pass.offsets = {0, n};
    pass.delta = s.delta;
    pass.field.sigma = ArrayX<double>::Constant(n, sigma0);
    pass.field.color.resize(3, n);
    for (int i = 0; i < n; ++i) pass.field.color.col(i).setConstant(s.k[i]);
    pass.field.edit_prob = ArrayX<double>::Zero(n);
    pass.mask = ArrayX<double>::Zero(n);
    const double error = std::abs(composite(pass, RenderMode::full()).color(0, 0) - exact);
    CHECK(error < last);
    last = error;
  }
  CHECK(last < 1e-4);
}

TEST_CASE("compositing gradients match central differences") {
  std::mt19937_64 rng(9);
  const auto sigma = random_sigma(rng, 6, 12, 4.0);
  RenderPass<double> pass = make_pass(sigma, rng);
  const ArrayX3<double> g = ArrayX3<double>::Random(pass.ray_count, 3);
  const ArrayX<double> e = ArrayX<double>::Random(pass.ray_count);
  for (auto kind : {RenderModeKind::Full, RenderModeKind::Foreground, RenderModeKind::Background}) {
    const RenderMode mode{kind, Rgb(0.3f, 0.6f, 0.9f)};
    auto objective = [&](const RenderPass<double>& p) {
      const auto out = composite(p, mode);
      return (out.color * g).sum() + (out.edit_prob * e).sum();
    };
    SampleGradients<double> grads(pass.sample_count());
    composite_backward(pass, mode, g, e, grads);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < pass.sample_count(); ++i) {
      auto fd = [&](double& x) {
        const double saved = x;
        x = saved + h;
        const double up = objective(pass);
        x = saved - h;
        const double down = objective(pass);
        x = saved;
        return (up - down) / (2 * h);
      };
      CHECK(grads.sigma[i] == doctest::Approx(fd(pass.field.sigma[i])).epsilon(1e-6));
      CHECK(grads.mask[i] == doctest::Approx(fd(pass.mask[i])).epsilon(1e-6));
      for (int c = 0; c < 3; ++c) CHECK(grads.color(c, i) == doctest::Approx(fd(pass.field.color(c, i))).epsilon(1e-6));
    }
  }
}

namespace {

struct RenderGradCheck {
  int checked = 0;
  double worst_64 = 0.0;
  double relative_32 = 0.0;
};

RenderGradCheck check_render_gradients(RenderModeKind kind) {
  auto p = oracle::tiny_field(31);
  RenderSettings settings;
  settings.n_samples = 16;
  settings.stratified = true;
  settings.seed = 4;
  settings.mask_sharpness = 4.0;
  CameraPose cam = CameraPose::look_at({2.2, 0.8, 0.6}, {0, 0, 0}, Eigen::Vector3d::UnitZ(), 6, 6, 5, 5);
  RayBatch rays = generate_rays(cam, default_ray_bounds(p.config.grid.bbox));
  clip_to_box(rays, p.config.grid.bbox);
  const RenderMode mode{kind, Rgb(0.1f, 0.5f, 0.8f)};
  const ArrayX3<double> g = ArrayX3<double>::Random(rays.size(), 3);
  const ArrayX<double> e = ArrayX<double>::Random(rays.size());
  auto objective = [&](const FieldParameters<double>& q) {
    const auto out = render(q, rays, mode, settings);
    return (out.color * g).sum() + (out.edit_prob * e).sum();
  };
  auto analytic = [&](const auto& q) {
    using S = typename std::decay_t<decltype(q)>::Matrix::Scalar;
    const auto pass = trace(q, rays, settings);
    SampleGradients<S> sg(pass.sample_count());
    composite_backward(pass, mode, ArrayX3<S>(g.cast<S>()), ArrayX<S>(e.cast<S>()), sg);
    auto grads = q.zeros_like();
    backward(q, pass, sg, grads);
    return grads;
  };
  const auto g64 = analytic(p);
  const auto g32 = analytic(p.cast<float>());

  RenderGradCheck result;
  auto params = p.tensors();
  auto a64 = g64.tensors();
  auto a32 = g32.tensors();
  double diff32 = 0.0, norm = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    const Eigen::Index count = std::min<Eigen::Index>(params[t]->size(), 30);
    for (Eigen::Index k = 0; k < count; ++k) {
      const Eigen::Index idx = (k * 7919) % params[t]->size();
      double& x = params[t]->data()[idx];
      const double saved = x;
      const double h = 1e-6;
      x = saved + h;
      const double up = objective(p);
      x = saved - h;
      const double down = objective(p);
      x = saved;
      const double numeric = (up - down) / (2 * h);
      const double v64 = a64[t]->data()[idx];
      const double v32 = a32[t]->data()[idx];
      result.worst_64 = std::max(result.worst_64, std::abs(numeric - v64) /
                                                      std::max({std::abs(numeric), std::abs(v64), 1e-3}));
      diff32 += (numeric - v32) * (numeric - v32);
      norm += numeric * numeric;
      ++result.checked;
    }
  }
  result.relative_32 = std::sqrt(diff32 / norm);
  return result;
}

}  // namespace

TEST_CASE("parameter gradients through a full render match central differences") {
  for (auto kind : {RenderModeKind::Full, RenderModeKind::Foreground, RenderModeKind::Background}) {
    const RenderGradCheck r = check_render_gradients(kind);
    CHECK(r.checked >= 200);
    CHECK(r.worst_64 < 1e-3);
    CHECK(r.relative_32 < 1e-2);
  }
}

TEST_CASE("rendering is deterministic and chunking does not change the image") {
  const auto p = init_parameters<float>(FieldConfig{}, 3);
  CameraPose cam = CameraPose::look_at({3, 0.5, 1}, {0, 0, 0}, Eigen::Vector3d::UnitZ(), 20, 20, 16, 12);
  RenderSettings settings;
  settings.n_samples = 24;
  const auto a = render_image(p, cam, p.config.grid.bbox, RenderMode::full(), settings, 50);
  const auto b = render_image(p, cam, p.config.grid.bbox, RenderMode::full(), settings, 7);
  CHECK((a.color.pixels == b.color.pixels).all());
  CHECK((a.edit_prob.pixels == b.edit_prob.pixels).all());
  CHECK(a.color.height == 12);
  CHECK(a.color.width == 16);
  settings.stratified = true;
  const auto c = render_image(p, cam, p.config.grid.bbox, RenderMode::full(), settings);
  const auto d = render_image(p, cam, p.config.grid.bbox, RenderMode::full(), settings);
  CHECK((c.color.pixels == d.color.pixels).all());
}
