#include "nerfedit/config.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace nerfedit {

namespace {

using nlohmann::json;

std::string type_name(const json& value) { return value.type_name(); }

/// Reads keys from one JSON object and remembers which were consumed.
class Section {
 public:
  Section(const json& object, std::string path) : object_(object), path_(std::move(path)) {
    if (!object_.is_object()) throw ConfigError(where() + ": expected an object, got " + type_name(object_));
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : object_.items()) {
      if (!used_.count(key)) throw ConfigError("unknown configuration key '" + key_path(key) + "'");
    }
  }

  bool has(const std::string& key) {
    used_.insert(key);
    return object_.contains(key);
  }

  const json& at(const std::string& key) {
    used_.insert(key);
    return object_.at(key);
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void read(const std::string& key, double& out) {
    if (!has(key)) return;
    const json& v = object_.at(key);
    if (!v.is_number()) throw type_error(key, "a number", v);
    out = v.get<double>();
  }
  void read(const std::string& key, int& out) {
    if (!has(key)) return;
    const json& v = object_.at(key);
    if (!v.is_number_integer()) throw type_error(key, "an integer", v);
    const auto n = v.get<std::int64_t>();
    if (n < std::numeric_limits<int>::min() || n > std::numeric_limits<int>::max()) {
      throw ConfigError(key_path(key) + ": integer out of range");
    }
    out = static_cast<int>(n);
  }
  void read(const std::string& key, std::uint32_t& out) {
    if (!has(key)) return;
    const json& v = object_.at(key);
    if (!v.is_number_unsigned()) throw type_error(key, "a non-negative integer", v);
    const auto n = v.get<std::uint64_t>();
    if (n > std::numeric_limits<std::uint32_t>::max()) throw ConfigError(key_path(key) + ": integer out of range");
    out = static_cast<std::uint32_t>(n);
  }
  void read(const std::string& key, std::uint64_t& out) {
    if (!has(key)) return;
    const json& v = object_.at(key);
    if (!v.is_number_unsigned()) throw type_error(key, "a non-negative integer", v);
    out = v.get<std::uint64_t>();
  }
  void read(const std::string& key, bool& out) {
    if (!has(key)) return;
    const json& v = object_.at(key);
    if (!v.is_boolean()) throw type_error(key, "a boolean", v);
    out = v.get<bool>();
  }
  void read(const std::string& key, std::string& out) {
    if (!has(key)) return;
    const json& v = object_.at(key);
    if (!v.is_string()) throw type_error(key, "a string", v);
    out = v.get<std::string>();
  }
  void read(const std::string& key, std::filesystem::path& out) {
    std::string s = out.string();
    read(key, s);
    out = s;
  }
  void read(const std::string& key, Eigen::Vector3d& out) {
    if (!has(key)) return;
    const json& v = object_.at(key);
    if (!v.is_array() || v.size() != 3) throw type_error(key, "an array of 3 numbers", v);
    for (int i = 0; i < 3; ++i) {
      if (!v[i].is_number()) throw type_error(key, "an array of 3 numbers", v);
      out[i] = v[i].get<double>();
    }
  }
  void read(const std::string& key, Rgb& out) {
    Eigen::Vector3d v = out.cast<double>().matrix();
    read(key, v);
    out = v.cast<float>().array();
  }

 private:
  std::string where() const { return path_.empty() ? "configuration" : path_; }
  ConfigError type_error(const std::string& key, const char* expected, const json& got) const {
    return ConfigError(key_path(key) + ": expected " + expected + ", got " + type_name(got));
  }

  const json& object_;
  std::string path_;
  std::set<std::string> used_;
};

Aabb read_bbox(Section& parent, const std::string& key) {
  Section s(parent.at(key), parent.key_path(key));
  Aabb box;
  if (!s.has("min") || !s.has("max")) throw ConfigError(parent.key_path(key) + ": needs min and max");
  s.read("min", box.min);
  s.read("max", box.max);
  return box;
}

void read_field(Section& parent, RunConfig& config) {
  Section s(parent.at("field"), "field");
  s.read("hidden_width", config.field.hidden_width);
  s.read("geo_features", config.field.geo_features);
  s.read("view_dependent_edit", config.field.view_dependent_edit);
  if (s.has("grid")) {
    Section g(s.at("grid"), "field.grid");
    HashGridConfig& grid = config.field.grid;
    g.read("levels", grid.levels);
    g.read("base_resolution", grid.base_resolution);
    g.read("growth_factor", grid.growth_factor);
    g.read("table_size", grid.table_size);
    g.read("features_per_entry", grid.features_per_entry);
    if (g.has("bbox")) config.grid_bbox = read_bbox(g, "bbox");
  }
}

void read_dataset(Section& parent, DatasetConfig& dataset) {
  Section s(parent.at("dataset"), "dataset");
  s.read("manifest", dataset.manifest);
  s.read("downsample", dataset.downsample_factor);
  if (s.has("synthetic")) {
    Section y(s.at("synthetic"), "dataset.synthetic");
    SyntheticSceneSpec& spec = dataset.synthetic;
    y.read("sphere_center", spec.sphere_center);
    y.read("sphere_radius", spec.sphere_radius);
    y.read("sphere_color", spec.sphere_color);
    y.read("with_plane", spec.with_plane);
    y.read("plane_height", spec.plane_height);
    y.read("plane_half_extent", spec.plane_half_extent);
    y.read("plane_color", spec.plane_color);
    y.read("background", spec.background);
    y.read("n_views", spec.n_views);
    y.read("width", spec.width);
    y.read("height", spec.height);
    y.read("fov_deg", spec.fov_deg);
    y.read("ring_radius", spec.ring_radius);
    y.read("ring_height", spec.ring_height);
    y.read("jitter", spec.jitter);
    if (y.has("bbox")) spec.bbox = read_bbox(y, "bbox");
  }
}

void read_reconstruction(Section& parent, ReconstructionConfig& r) {
  Section s(parent.at("reconstruction"), "reconstruction");
  s.read("iterations", r.iterations);
  s.read("rays_per_batch", r.rays_per_batch);
  s.read("learning_rate", r.learning_rate);
  s.read("mask_loss_weight", r.mask_loss_weight);
  s.read("bce_clamp_eps", r.bce_clamp_eps);
  s.read("n_samples", r.n_samples);
  s.read("stratified", r.stratified);
  s.read("log_every", r.log_every);
}

void read_edit(Section& parent, EditConfig& e) {
  Section s(parent.at("edit"), "edit");
  s.read("max_iterations", e.max_iterations);
  s.read("learning_rate", e.learning_rate);
  s.read("lambda_sds", e.lambda_sds);
  s.read("lambda_bg", e.lambda_bg);
  if (s.has("alternation")) {
    const json& v = s.at("alternation");
    if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer()) {
      throw ConfigError("edit.alternation: expected [local_steps, global_steps], got " + v.dump());
    }
    e.local_steps = v[0].get<int>();
    e.global_steps = v[1].get<int>();
  }
  s.read("image_driven", e.image_driven);
  if (s.has("render_size")) {
    const json& v = s.at("render_size");
    if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer()) {
      throw ConfigError("edit.render_size: expected [height, width], got " + v.dump());
    }
    e.render_height = v[0].get<int>();
    e.render_width = v[1].get<int>();
  }
  s.read("n_samples", e.n_samples);
  s.read("hard_gate", e.hard_gate);
  s.read("freeze_mask", e.freeze_mask);
  s.read("view_words_in_global", e.view_words_in_global);
  s.read("plateau_window", e.plateau_window);
  s.read("plateau_tolerance", e.plateau_tolerance);
  s.read("checkpoint_every", e.checkpoint_every);
}

void read_guidance(Section& parent, RunConfig& config) {
  Section s(parent.at("guidance"), "guidance");
  if (s.has("schedule")) {
    Section d(s.at("schedule"), "guidance.schedule");
    int steps = config.schedule.num_steps;
    double start = config.schedule.beta_start, end = config.schedule.beta_end;
    d.read("num_steps", steps);
    d.read("beta_start", start);
    d.read("beta_end", end);
    if (steps < 2 || !(start > 0.0) || !(end >= start) || !(end < 1.0)) {
      throw ConfigError("guidance.schedule: need num_steps >= 2 and 0 < beta_start <= beta_end < 1");
    }
    config.schedule = DiffusionSchedule(steps, start, end);
  }
  s.read("t_min_frac", config.sds.t_min_frac);
  s.read("t_max_frac", config.sds.t_max_frac);
  if (s.has("weighting")) {
    std::string w;
    s.read("weighting", w);
    if (w == "one_minus_alpha_bar") {
      config.sds.weighting = SdsWeighting::OneMinusAlphaBar;
    } else if (w == "unit") {
      config.sds.weighting = SdsWeighting::Unit;
    } else {
      throw ConfigError("guidance.weighting: expected \"one_minus_alpha_bar\" or \"unit\", got \"" + w + "\"");
    }
  }
}

void read_prompt(Section& parent, PromptBundle& prompt) {
  Section s(parent.at("prompt"), "prompt");
  if (s.has("subject_token")) {
    const json& v = s.at("subject_token");
    if (v.is_null()) {
      prompt.subject_token.reset();
    } else if (v.is_string()) {
      prompt.subject_token = v.get<std::string>();
    } else {
      throw ConfigError("prompt.subject_token: expected a string or null, got " + type_name(v));
    }
  }
  s.read("class_word", prompt.class_word);
  s.read("subject_modifiers", prompt.subject_modifiers);
  s.read("environment", prompt.environment);
  s.read("template", prompt.template_text);
}

void read_provider(Section& parent, ProviderConfig& provider) {
  Section s(parent.at("provider"), "provider");
  if (s.has("kind")) {
    std::string kind;
    s.read("kind", kind);
    if (kind == "none") {
      provider.kind = ProviderKind::None;
    } else if (kind == "oracle") {
      provider.kind = ProviderKind::Oracle;
    } else if (kind == "remote") {
      provider.kind = ProviderKind::Remote;
    } else {
      throw ConfigError("provider.kind: expected \"none\", \"oracle\" or \"remote\", got \"" + kind + "\"");
    }
  }
  s.read("target", provider.target);
  s.read("endpoint", provider.remote.endpoint);
  s.read("timeout_s", provider.remote.timeout_s);
  s.read("guidance_scale", provider.remote.guidance_scale);
  s.read("max_in_flight", provider.remote.max_in_flight);
}

}  // namespace

void ReconstructionConfig::validate() const {
  if (iterations < 0) throw ConfigError("reconstruction.iterations must be >= 0");
  if (rays_per_batch < 1) throw ConfigError("reconstruction.rays_per_batch must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("reconstruction.learning_rate must be positive");
  if (!(mask_loss_weight >= 0.0)) throw ConfigError("reconstruction.mask_loss_weight must be >= 0");
  if (!(bce_clamp_eps > 0.0 && bce_clamp_eps < 0.5)) throw ConfigError("reconstruction.bce_clamp_eps must be in (0, 0.5)");
  if (n_samples < 2) throw ConfigError("reconstruction.n_samples must be >= 2");
  if (log_every < 0) throw ConfigError("reconstruction.log_every must be >= 0");
}

void EditConfig::validate() const {
  if (max_iterations < 0) throw ConfigError("edit.max_iterations must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("edit.learning_rate must be positive");
  if (!(lambda_sds >= 0.0) || !(lambda_bg >= 0.0)) throw ConfigError("edit.lambda_sds and edit.lambda_bg must be >= 0");
  if (local_steps < 1 || global_steps < 1) throw ConfigError("edit.alternation counts must be >= 1");
  if (render_height < 1 || render_width < 1) throw ConfigError("edit.render_size must be positive");
  if (n_samples < 2) throw ConfigError("edit.n_samples must be >= 2");
  if (plateau_window < 0 || !(plateau_tolerance >= 0.0)) throw ConfigError("edit.plateau settings must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("edit.checkpoint_every must be >= 0");
}

void RunConfig::validate() const {
  FieldConfig f = field;
  if (grid_bbox) f.grid.bbox = *grid_bbox;
  f.validate();
  reconstruction.validate();
  edit.validate();
  sds.validate();
  prompt.validate();
  if (dataset.downsample_factor < 1) throw ConfigError("dataset.downsample must be >= 1");
  if (dataset.manifest.empty()) {
    try {
      dataset.synthetic.validate();
    } catch (const GeometryError& e) {
      throw ConfigError(std::string("dataset.synthetic: ") + e.what());
    }
  }
  if (!(mask_sharpness > 0.0)) throw ConfigError("mask_sharpness must be positive");
  if (render_samples < 2) throw ConfigError("render_samples must be >= 2");
  if (provider.kind == ProviderKind::Oracle && provider.target.empty()) {
    throw ConfigError("provider.target is required for the oracle provider");
  }
  if (provider.kind == ProviderKind::Remote && provider.remote.endpoint.empty()) {
    throw ConfigError("provider.endpoint is required for the remote provider");
  }
}

RunConfig parse_config_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("configuration is not valid JSON: ") + e.what());
  }
  RunConfig config;
  {
    Section s(root, "");
    s.read("seed", config.seed);
    s.read("mask_sharpness", config.mask_sharpness);
    s.read("render_samples", config.render_samples);
    if (s.has("dataset")) read_dataset(s, config.dataset);
    if (s.has("field")) read_field(s, config);
    if (s.has("reconstruction")) read_reconstruction(s, config.reconstruction);
    if (s.has("edit")) read_edit(s, config.edit);
    if (s.has("guidance")) read_guidance(s, config);
    if (s.has("prompt")) read_prompt(s, config.prompt);
    if (s.has("provider")) read_provider(s, config.provider);
  }
  config.validate();
  return config;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open configuration " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  RunConfig config = parse_config_json(buffer.str());
  // relative paths in the config resolve against its directory
  const auto base = path.parent_path();
  if (!config.dataset.manifest.empty() && config.dataset.manifest.is_relative()) {
    config.dataset.manifest = base / config.dataset.manifest;
  }
  if (!config.provider.target.empty() && config.provider.target.is_relative()) {
    config.provider.target = base / config.provider.target;
  }
  return config;
}

ProviderConfig parse_provider_flag(const std::string& flag, const ProviderConfig& base) {
  ProviderConfig out = base;
  const auto colon = flag.find(':');
  const std::string kind = flag.substr(0, colon);
  const std::string value = colon == std::string::npos ? std::string() : flag.substr(colon + 1);
  if (kind == "oracle" && !value.empty()) {
    out.kind = ProviderKind::Oracle;
    out.target = value;
  } else if (kind == "remote" && !value.empty()) {
    out.kind = ProviderKind::Remote;
    out.remote.endpoint = value;
  } else {
    throw ConfigError("--provider expects oracle:<target.png> or remote:<url>, got '" + flag + "'");
  }
  return out;
}

std::string describe(const RunConfig& c) {
  std::ostringstream out;
  const HashGridConfig& g = c.field.grid;
  out << "seed " << c.seed << "\n"
      << "grid: levels " << g.levels << ", base resolution " << g.base_resolution << ", growth " << g.growth_factor
      << ", table size " << g.table_size << ", features " << g.features_per_entry << "\n"
      << "mlp: hidden width " << c.field.hidden_width << ", geometry features " << c.field.geo_features
      << ", view-dependent edit head " << (c.field.view_dependent_edit ? "yes" : "no") << "\n"
      << "reconstruction: iterations " << c.reconstruction.iterations << ", rays/batch "
      << c.reconstruction.rays_per_batch << ", lr " << c.reconstruction.learning_rate << "\n"
      << "edit: max iterations " << c.edit.max_iterations << ", lr " << c.edit.learning_rate << ", lambda_sds "
      << c.edit.lambda_sds << ", lambda_bg " << c.edit.lambda_bg << ", alternation " << c.edit.local_steps << ":"
      << c.edit.global_steps << "\n";
  return out.str();
}

}  // namespace nerfedit
