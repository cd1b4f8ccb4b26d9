#pragma once

#include <cstdint>
#include <string>

#include "sagnet/network.hpp"

namespace sagnet {

// Self-describing checkpoint container:
//   bytes 0..7   magic "SAGCKPT1"
//   bytes 8..15  uint64 LE header length H
//   bytes 16..   JSON header (config echo, rng seeds, named parameter list
//                with group tags and shapes, in payload order)
//   then         flat float32 LE payload, parameters concatenated in header
//                order
// Layout details are documented in docs/formats.md.
void save_checkpoint(const std::string& path, const ModelBundle<float>& model,
                     std::uint64_t train_seed);

struct LoadedCheckpoint {
  ModelBundle<float> model;
  std::uint64_t init_seed = 0;
  std::uint64_t train_seed = 0;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace sagnet
