#pragma once

#include <string>

#include "parformer/network.hpp"

namespace parformer {

/// Single binary file: magic line, JSON config record, then every named
/// parameter as (name, rank, dims, little-endian f64 payload). Round-trips
/// bit-exactly.
void save_checkpoint(const std::string& path, const Network& net);

/// Rebuilds the network from the stored config and restores every parameter.
/// Throws std::runtime_error on format or name/shape mismatch.
Network load_checkpoint(const std::string& path);

std::string config_to_json(const NetworkConfig& cfg);
NetworkConfig config_from_json(const std::string& text);

}  // namespace parformer
