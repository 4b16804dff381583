#pragma once

#include <string>

#include "mil/model.hpp"

namespace mil {

// Writes <base>.bin (all parameters as little-endian float32 in visit
// order) and <base>.manifest.json (config echo plus name/shape/offset per
// parameter).
void save_checkpoint(const ModelState& model, const std::string& base_path);

ModelState load_checkpoint(const std::string& base_path);

}  // namespace mil
