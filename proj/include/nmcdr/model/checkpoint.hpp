#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "json.hpp"
#include "nmcdr/numerics/adam.hpp"

namespace nmcdr::model {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  num::ParamStore params;
  std::string config_hash;
  nlohmann::json metadata = nlohmann::json::object();
};

/// A ustar archive: manifest.json (names, shapes, dtype, config hash) followed by one
/// little-endian float64 buffer per tensor. Byte-identical for identical inputs.
std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace nmcdr::model
