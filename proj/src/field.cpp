#include "nerfedit/field.hpp"

#include <sstream>

namespace nerfedit {

void HashGridConfig::validate() const {
  std::ostringstream msg;
  if (levels < 1) msg << "levels must be >= 1; ";
  if (base_resolution < 1) msg << "base_resolution must be >= 1; ";
  if (!(growth_factor > 1.0)) msg << "growth_factor must be > 1; ";
  if (table_size == 0 || (table_size & (table_size - 1)) != 0) msg << "table_size must be a power of two; ";
  if (features_per_entry < 1) msg << "features_per_entry must be >= 1; ";
  if (!bbox.valid()) msg << "bbox_min must be < bbox_max componentwise; ";
  if (!msg.str().empty()) throw ConfigError("invalid hash grid config: " + msg.str());
}

void FieldConfig::validate() const {
  grid.validate();
  if (hidden_width < 1) throw ConfigError("invalid field config: hidden_width must be >= 1");
  if (geo_features < 0) throw ConfigError("invalid field config: geo_features must be >= 0");
}

Eigen::Index FieldConfig::parameter_count() const {
  const Eigen::Index H = hidden_width;
  const Eigen::Index table = grid.entry_count() * grid.features_per_entry;
  const Eigen::Index density = H * grid.output_dim() + H + density_output_dim() * H + density_output_dim();
  const Eigen::Index color = H * head_input_dim() + H + 3 * H + 3;
  const Eigen::Index edit = kEditHiddenWidth * edit_input_dim() + kEditHiddenWidth + kEditHiddenWidth + 1;
  return table + density + color + edit;
}

}  // namespace nerfedit
