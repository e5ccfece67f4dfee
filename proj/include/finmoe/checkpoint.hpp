// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "finmoe/model.hpp"

namespace finmoe {

// Single self-describing binary file: magic + JSON header (config, tensor
// manifest) + raw little-endian doubles. Round-trips bit-exactly.
void save_checkpoint(const Model& m, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace finmoe
