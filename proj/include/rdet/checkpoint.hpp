#pragma once

#include <string>

#include "rdet/model.hpp"

namespace rdet::model {

// Binary little-endian checkpoint:
//   magic "RDETCKP1" | u32 header_len | JSON header (decoder config)
//   | u32 tensor_count | per tensor: u32 name_len, name, u32 rows, u32 cols,
//   rows*cols little-endian IEEE-754 doubles.
void save_checkpoint(const std::string& path, const Decoder& dec);
Decoder load_checkpoint(const std::string& path);

}  // namespace rdet::model
