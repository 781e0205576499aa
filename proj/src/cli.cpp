#include "nerfedit/cli.hpp"

#include "nerfedit/checkpoint.hpp"
#include "nerfedit/config.hpp"
#include "nerfedit/dataset.hpp"
#include "nerfedit/editor.hpp"
#include "nerfedit/image_io.hpp"
#include "nerfedit/remote_provider.hpp"
#include "nerfedit/render.hpp"
#include "nerfedit/synthetic.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>

namespace nerfedit::cli {

namespace {

namespace fs = std::filesystem;

struct Options {
  fs::path config;
  std::optional<std::uint64_t> seed;
  std::string provider;
  fs::path out;
  fs::path checkpoint;
  bool resume = false;
  std::string mode = "full";
  std::vector<float> bg{0.0f, 0.0f, 0.0f};
  int views = 8;
  int width = 0;
  int height = 0;
  int samples = 0;
  double ring_radius = 0.0;
  double ring_height = 0.0;
};

void setup_logging() {
  auto logger = spdlog::get("nerfedit");
  if (!logger) logger = spdlog::stderr_color_mt("nerfedit");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] [%l] %v");
  if (const char* level = std::getenv("NERFEDIT_LOG_LEVEL")) {
    spdlog::set_level(spdlog::level::from_str(level));
  } else {
    spdlog::set_level(spdlog::level::info);
  }
}

RunConfig load_config(const Options& o) {
  RunConfig config = o.config.empty() ? parse_config_json("{}") : parse_config(o.config);
  if (o.seed) config.seed = *o.seed;
  if (!o.provider.empty()) config.provider = parse_provider_flag(o.provider, config.provider);
  return config;
}

void require_file(const fs::path& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string(what) + " is required");
  if (!fs::is_regular_file(path)) throw IoError("cli", std::string(what) + " not found: " + path.string());
}

fs::path require_out(const Options& o) {
  if (o.out.empty()) throw ConfigError("--out is required");
  fs::create_directories(o.out);
  return o.out;
}

SceneDataset load_scene(const RunConfig& config) {
  if (!config.dataset.manifest.empty()) return load_dataset(config.dataset.manifest, config.dataset.downsample_factor);
  spdlog::info("no manifest configured, generating the synthetic sphere-on-plane scene");
  return make_synthetic_scene(config.dataset.synthetic, config.seed);
}

FieldConfig field_for(const RunConfig& config, const SceneDataset& dataset) {
  FieldConfig field = config.field;
  field.grid.bbox = config.grid_bbox.value_or(dataset.bbox);
  return field;
}

class JsonlWriter {
 public:
  explicit JsonlWriter(const fs::path& path, bool append) : out_(path, append ? std::ios::app : std::ios::trunc) {
    if (!out_) throw IoError("cli", "cannot write " + path.string());
  }
  void operator()(const nlohmann::json& record) {
    out_ << record.dump() << "\n";
    out_.flush();
    spdlog::info("{}", record.dump());
  }

 private:
  std::ofstream out_;
};

std::string frame_name(int i) {
  char name[32];
  std::snprintf(name, sizeof(name), "%04d.png", i);
  return name;
}

void write_turntable(const FieldParameters<float>& params, std::span<const CameraPose> cameras, const fs::path& dir,
                     const RenderMode& mode, bool edit_prob, const RenderSettings& settings) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < cameras.size(); ++i) {
    const ImageRender r = render_image(params, cameras[i], params.config.grid.bbox, mode, settings);
    const fs::path path = dir / frame_name(static_cast<int>(i));
    if (edit_prob) {
      save_png(r.edit_prob, path);
    } else {
      save_png(r.color, path);
    }
  }
  spdlog::info("wrote {} views to {}", cameras.size(), dir.string());
}

int cmd_reconstruct(const Options& o) {
  const RunConfig config = load_config(o);
  const fs::path out = require_out(o);
  const SceneDataset dataset = load_scene(config);
  const FieldConfig field = field_for(config, dataset);
  JsonlWriter log(out / "reconstruct_log.jsonl", false);
  ReconstructionHooks hooks;
  hooks.log = [&](const nlohmann::json& r) { log(r); };
  hooks.divergence_checkpoint = out / "diverged.nefc";
  hooks.validation_every = std::max(1, config.reconstruction.iterations / 6);
  RenderSettings settings;
  settings.n_samples = config.render_samples;
  settings.mask_sharpness = config.mask_sharpness;
  hooks.validation = [&](int iter, const FieldParameters<float>& params) {
    const ImageRender r = render_image(params, dataset.frames.front().camera, field.grid.bbox, RenderMode::full(),
                                       settings);
    save_png(r.color, out / "validation" / frame_name(iter));
    save_png(r.edit_prob, out / "validation" / ("editprob_" + frame_name(iter)));
  };
  const ReconstructionResult result =
      train_reconstruction(dataset, field, config.reconstruction, config.mask_sharpness, config.seed, hooks);
  save_checkpoint(result.params, out / "original.nefc");
  spdlog::info("saved {}", (out / "original.nefc").string());
  return 0;
}

struct ProviderBundle {
  std::unique_ptr<GuidanceProvider> provider;
  std::unique_ptr<ViewClassifier> classifier;
};

ProviderBundle make_provider(const RunConfig& config) {
  ProviderBundle out;
  switch (config.provider.kind) {
    case ProviderKind::None:
      throw ConfigError("edit needs a guidance provider (--provider oracle:<png> or remote:<url>)");
    case ProviderKind::Oracle: {
      require_file(config.provider.target, "oracle target");
      Image target = load_image(config.provider.target);
      if (target.height != config.edit.render_height || target.width != config.edit.render_width) {
        throw ConfigError("oracle target is " + std::to_string(target.width) + "x" + std::to_string(target.height) +
                          " but edit.render_size is " + std::to_string(config.edit.render_width) + "x" +
                          std::to_string(config.edit.render_height));
      }
      out.provider = make_target_oracle(std::move(target), config.schedule);
      break;
    }
    case ProviderKind::Remote:
      out.provider = std::make_unique<RemoteProvider>(config.provider.remote);
      out.classifier = std::make_unique<RemoteViewClassifier>(config.provider.remote);
      break;
  }
  return out;
}

int cmd_edit(const Options& o) {
  const RunConfig config = load_config(o);
  require_file(o.checkpoint, "--ckpt");
  const fs::path out = require_out(o);
  const FieldParameters<float> original = load_checkpoint(o.checkpoint);
  const fs::path edited_path = out / "edited.nefc";

  std::optional<FieldParameters<float>> resume_params;
  std::optional<AdamState<float>> resume_state;
  if (o.resume) {
    require_file(edited_path, "resume checkpoint");
    require_file(adam_state_path(edited_path), "resume optimizer state");
    resume_params = load_checkpoint(edited_path);
    resume_state = load_adam_state(adam_state_path(edited_path));
    spdlog::info("resuming at iteration {}", resume_state->step);
  }

  const SceneDataset dataset = load_scene(config);
  ProviderBundle provider = make_provider(config);
  JsonlWriter log(out / "edit_log.jsonl", o.resume);
  EditHooks hooks;
  hooks.log = [&](const nlohmann::json& r) { log(r); };
  hooks.classifier = provider.classifier.get();
  hooks.checkpoint = edited_path;
  if (resume_params) hooks.resume_params = &*resume_params;
  if (resume_state) hooks.resume_state = &*resume_state;

  const std::vector<CameraPose> cameras = dataset.cameras();
  const EditResult result = edit_scene(original, cameras, config.prompt, *provider.provider, config.edit, config.sds,
                                       config.schedule, config.mask_sharpness, config.seed, hooks);
  save_checkpoint(result.params, edited_path);
  save_adam_state(result.optimizer, adam_state_path(edited_path));
  spdlog::info("saved {} after {} iterations ({} local, {} global SDS calls this run)", edited_path.string(),
               result.iterations, result.local_calls, result.global_calls);

  RenderSettings settings;
  settings.n_samples = config.render_samples;
  settings.mask_sharpness = config.mask_sharpness;
  const auto ring = turntable_cameras(cameras, original.config.grid.bbox.center(), o.views, dataset.width(),
                                      dataset.height());
  write_turntable(result.params, ring, out / "turntable", RenderMode::full(), false, settings);
  return 0;
}

int cmd_render(const Options& o) {
  require_file(o.checkpoint, "--ckpt");
  const fs::path out = require_out(o);
  const FieldParameters<float> params = load_checkpoint(o.checkpoint);
  const RunConfig config = load_config(o);
  const Aabb& bbox = params.config.grid.bbox;

  std::vector<CameraPose> reference;
  int width = o.width, height = o.height;
  if (o.ring_radius > 0.0) {
    const int w = width > 0 ? width : 64, h = height > 0 ? height : 64;
    const double focal = 0.5 * w / std::tan(0.5 * config.dataset.synthetic.fov_deg * M_PI / 180.0);
    reference.push_back(CameraPose::look_at(bbox.center() + Eigen::Vector3d(o.ring_radius, 0.0, o.ring_height),
                                            bbox.center(), Eigen::Vector3d::UnitZ(), focal, focal, w, h));
  } else {
    const SceneDataset dataset = load_scene(config);
    reference = dataset.cameras();
  }
  if (width <= 0) width = reference.front().width;
  if (height <= 0) height = reference.front().height;

  RenderMode mode;
  bool edit_prob = false;
  if (o.mode == "full") {
    mode = RenderMode::full();
  } else if (o.mode == "foreground") {
    mode = RenderMode::foreground(Rgb(o.bg[0], o.bg[1], o.bg[2]));
  } else if (o.mode == "background") {
    mode = RenderMode::background();
  } else if (o.mode == "editprob") {
    mode = RenderMode::full();
    edit_prob = true;
  } else {
    throw ConfigError("--mode must be full, foreground, background or editprob");
  }
  RenderSettings settings;
  settings.n_samples = o.samples > 0 ? o.samples : config.render_samples;
  settings.mask_sharpness = config.mask_sharpness;
  const auto ring = turntable_cameras(reference, bbox.center(), o.views, width, height);
  write_turntable(params, ring, out, mode, edit_prob, settings);
  return 0;
}

int cmd_inspect(const Options& o) {
  require_file(o.checkpoint, "--ckpt");
  const FieldParameters<float> params = load_checkpoint(o.checkpoint);
  const FieldConfig& c = params.config;
  std::cout << "checkpoint " << o.checkpoint.string() << " (format version " << kCheckpointVersion << ")\n"
            << "grid: levels " << c.grid.levels << ", base resolution " << c.grid.base_resolution << ", growth "
            << c.grid.growth_factor << ", table size " << c.grid.table_size << ", features "
            << c.grid.features_per_entry << "\n"
            << "bbox: [" << c.grid.bbox.min.transpose() << "] - [" << c.grid.bbox.max.transpose() << "]\n"
            << "mlp: hidden width " << c.hidden_width << ", geometry features " << c.geo_features
            << ", view-dependent edit head " << (c.view_dependent_edit ? "yes" : "no") << "\n";
  params.visit([](const char* name, const MatrixX<float>& m, const TensorDims& dims) {
    std::cout << "  " << name << " [";
    for (int r = 0; r < dims.rank; ++r) std::cout << (r ? " x " : "") << dims.dims[r];
    std::cout << "] " << m.size() << "\n";
  });
  std::cout << "parameters: " << params.size() << " (expected " << c.parameter_count() << ")\n";
  return params.size() == c.parameter_count() ? 0 : 1;
}

int cmd_synth(const Options& o) {
  const RunConfig config = load_config(o);
  const fs::path out = require_out(o);
  const SceneDataset dataset = make_synthetic_scene(config.dataset.synthetic, config.seed);
  const fs::path manifest = write_dataset(dataset, out);
  SyntheticRenderOptions red;
  red.sphere_color = Rgb(0.9f, 0.1f, 0.1f);
  const CameraPose camera =
      dataset.frames.front().camera.resized(config.edit.render_width, config.edit.render_height);
  save_png(render_synthetic(config.dataset.synthetic, camera, red), out / "target_red.png");
  spdlog::info("wrote {}", manifest.string());
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"NeRF editing engine: reconstruct, edit, render and inspect foreground-aware radiance fields"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config, "run configuration (JSON)");
    cmd->add_option("--seed", o.seed, "random seed (overrides the config)");
    cmd->add_option("--out", o.out, "output directory");
  };
  auto* reconstruct = app.add_subcommand("reconstruct", "train the foreground-aware field on a dataset");
  add_common(reconstruct);

  auto* edit = app.add_subcommand("edit", "edit a reconstructed field with a guidance provider");
  add_common(edit);
  edit->add_option("--ckpt", o.checkpoint, "original field checkpoint")->required();
  edit->add_option("--provider", o.provider, "oracle:<target.png> or remote:<url>");
  edit->add_flag("--resume", o.resume, "continue from <out>/edited.nefc and its optimizer state");
  edit->add_option("--views", o.views, "turntable views written after editing");

  auto* render = app.add_subcommand("render", "render a turntable from a checkpoint");
  add_common(render);
  render->add_option("--ckpt", o.checkpoint, "field checkpoint")->required();
  render->add_option("--mode", o.mode, "full | foreground | background | editprob")
      ->check(CLI::IsMember({"full", "foreground", "background", "editprob"}));
  render->add_option("--bg", o.bg, "foreground background color r g b")->expected(3);
  render->add_option("--views", o.views, "number of ring cameras");
  render->add_option("--width", o.width, "image width");
  render->add_option("--height", o.height, "image height");
  render->add_option("--samples", o.samples, "samples per ray");
  render->add_option("--ring-radius", o.ring_radius, "ring radius (default: mean training-camera radius)");
  render->add_option("--ring-height", o.ring_height, "ring height above the box center");

  auto* inspect = app.add_subcommand("inspect", "print a checkpoint's configuration and parameter counts");
  inspect->add_option("--ckpt", o.checkpoint, "field checkpoint")->required();

  auto* synth = app.add_subcommand("synth", "write the synthetic sphere-on-plane dataset");
  add_common(synth);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }

  setup_logging();
  try {
    if (*reconstruct) return cmd_reconstruct(o);
    if (*edit) return cmd_edit(o);
    if (*render) return cmd_render(o);
    if (*inspect) return cmd_inspect(o);
    if (*synth) return cmd_synth(o);
  } catch (const Error& e) {
    spdlog::error("{} failed: {}", e.module(), e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("cli failed: {}", e.what());
    return 1;
  }
  return 2;
}

}  // namespace nerfedit::cli
