#include "nerfedit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string>

namespace nerfedit {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

namespace {

constexpr char kFieldMagic[4] = {'N', 'E', 'F', 'C'};
constexpr char kAdamMagic[4] = {'N', 'E', 'F', 'A'};
constexpr std::uint32_t kViewDependentEdit = 1u;

class Writer {
 public:
  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, const char* what) : bytes_(bytes), what_(what) {}

  template <typename T>
  T get() {
    T value;
    get_bytes(&value, sizeof(T));
    return value;
  }
  void get_bytes(void* out, std::size_t n) {
    if (n > bytes_.size() - pos_) throw IoError("scene-field", std::string(what_) + " is truncated");
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  const char* what_;
};

void check_magic(Reader& in, const char (&magic)[4], const char* what) {
  char found[4];
  in.get_bytes(found, 4);
  if (std::memcmp(found, magic, 4) != 0) throw IoError("scene-field", std::string(what) + ": bad magic");
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw IoError("scene-field", std::string(what) + ": unsupported format version " + std::to_string(version));
  }
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const FieldParameters<float>& params) {
  const FieldConfig& config = params.config;
  Writer out;
  out.put_bytes(kFieldMagic, 4);
  out.put(kCheckpointVersion);
  out.put(static_cast<std::uint32_t>(config.grid.levels));
  out.put(static_cast<std::uint32_t>(config.grid.base_resolution));
  out.put(config.grid.growth_factor);
  out.put(config.grid.table_size);
  out.put(static_cast<std::uint32_t>(config.grid.features_per_entry));
  for (int i = 0; i < 3; ++i) out.put(config.grid.bbox.min[i]);
  for (int i = 0; i < 3; ++i) out.put(config.grid.bbox.max[i]);
  out.put(static_cast<std::uint32_t>(config.hidden_width));
  out.put(static_cast<std::uint32_t>(config.geo_features));
  out.put(config.view_dependent_edit ? kViewDependentEdit : 0u);
  out.put(static_cast<std::uint32_t>(params.tensors().size()));
  params.visit([&](const char* name, const MatrixX<float>& m, const TensorDims& dims) {
    const std::uint32_t length = static_cast<std::uint32_t>(std::strlen(name));
    out.put(length);
    out.put_bytes(name, length);
    out.put(static_cast<std::uint32_t>(dims.rank));
    for (int r = 0; r < dims.rank; ++r) out.put(dims.dims[r]);
    if (dims.rank == 2) {
      const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> row_major = m;
      out.put_bytes(row_major.data(), sizeof(float) * row_major.size());
    } else {
      out.put_bytes(m.data(), sizeof(float) * m.size());
    }
  });
  return std::move(out.bytes);
}

FieldParameters<float> deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader in(bytes, "checkpoint");
  check_magic(in, kFieldMagic, "checkpoint");
  FieldConfig config;
  config.grid.levels = static_cast<int>(in.get<std::uint32_t>());
  config.grid.base_resolution = static_cast<int>(in.get<std::uint32_t>());
  config.grid.growth_factor = in.get<double>();
  config.grid.table_size = in.get<std::uint32_t>();
  config.grid.features_per_entry = static_cast<int>(in.get<std::uint32_t>());
  for (int i = 0; i < 3; ++i) config.grid.bbox.min[i] = in.get<double>();
  for (int i = 0; i < 3; ++i) config.grid.bbox.max[i] = in.get<double>();
  config.hidden_width = static_cast<int>(in.get<std::uint32_t>());
  config.geo_features = static_cast<int>(in.get<std::uint32_t>());
  config.view_dependent_edit = (in.get<std::uint32_t>() & kViewDependentEdit) != 0;
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw IoError("scene-field", std::string("checkpoint holds an invalid field config: ") + e.what());
  }

  FieldParameters<float> params = zero_parameters<float>(config);
  const auto count = in.get<std::uint32_t>();
  if (count != params.tensors().size()) {
    throw IoError("scene-field", "checkpoint has " + std::to_string(count) + " tensors, expected " +
                                     std::to_string(params.tensors().size()));
  }
  params.visit([&](const char* name, MatrixX<float>& m, const TensorDims& expected) {
    const auto length = in.get<std::uint32_t>();
    if (length > 256) throw IoError("scene-field", "checkpoint tensor name too long");
    std::string found(length, '\0');
    in.get_bytes(found.data(), length);
    if (found != name) throw IoError("scene-field", "checkpoint tensor '" + found + "' where '" + name + "' expected");
    const auto rank = in.get<std::uint32_t>();
    if (rank != static_cast<std::uint32_t>(expected.rank)) throw IoError("scene-field", found + ": rank mismatch");
    for (std::uint32_t r = 0; r < rank; ++r) {
      if (in.get<std::uint32_t>() != expected.dims[r]) throw IoError("scene-field", found + ": shape mismatch");
    }
    if (rank == 2) {
      Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> row_major(m.rows(), m.cols());
      in.get_bytes(row_major.data(), sizeof(float) * row_major.size());
      m = row_major;
    } else {
      in.get_bytes(m.data(), sizeof(float) * m.size());
    }
  });
  if (!in.done()) throw IoError("scene-field", "checkpoint has trailing bytes");
  return params;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("scene-io", "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("scene-io", "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("scene-io", "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("scene-io", "cannot move " + tmp.string() + " into place: " + ec.message());
}

void save_checkpoint(const FieldParameters<float>& params, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(params));
}

FieldParameters<float> load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return deserialize_checkpoint(bytes);
}

void save_adam_state(const AdamState<float>& state, const std::filesystem::path& path) {
  Writer out;
  out.put_bytes(kAdamMagic, 4);
  out.put(kCheckpointVersion);
  out.put(static_cast<std::int64_t>(state.step));
  out.put(static_cast<std::uint32_t>(state.first.size()));
  for (std::size_t i = 0; i < state.first.size(); ++i) {
    out.put(static_cast<std::uint32_t>(state.first[i].rows()));
    out.put(static_cast<std::uint32_t>(state.first[i].cols()));
    out.put_bytes(state.first[i].data(), sizeof(float) * state.first[i].size());
    out.put_bytes(state.second[i].data(), sizeof(float) * state.second[i].size());
  }
  write_file_atomic(path, out.bytes);
}

AdamState<float> load_adam_state(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  Reader in(bytes, "optimizer state");
  check_magic(in, kAdamMagic, "optimizer state");
  AdamState<float> state;
  state.step = in.get<std::int64_t>();
  if (state.step < 0) throw IoError("scene-io", "optimizer state has a negative step");
  const auto count = in.get<std::uint32_t>();
  if (count > 64) throw IoError("scene-io", "optimizer state: implausible tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto rows = in.get<std::uint32_t>();
    const auto cols = in.get<std::uint32_t>();
    if (static_cast<std::uint64_t>(rows) * cols * 8 > bytes.size()) throw IoError("scene-io", "optimizer state is truncated");
    MatrixX<float> first(rows, cols), second(rows, cols);
    in.get_bytes(first.data(), sizeof(float) * first.size());
    in.get_bytes(second.data(), sizeof(float) * second.size());
    state.first.push_back(std::move(first));
    state.second.push_back(std::move(second));
  }
  if (!in.done()) throw IoError("scene-io", "optimizer state has trailing bytes");
  return state;
}

}  // namespace nerfedit
