#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "ircnn/data.hpp"
#include "ircnn/graph.hpp"
#include "ircnn/optim.hpp"

namespace ircnn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to continue a run bit-exactly. All integers and floats
/// are stored little-endian:
///   "IRCN" u32 version
///   str config                      (u64 length + bytes)
///   u64 epoch
///   u64 count, then per tensor: u32 name length, name, u8 dtype, 4 x u64 dims, elements
///   optimizer: u64 t, f64 d, f64 prev_loss, f64 last_lr, then velocity/m/v as
///              u64 count of (str name, u64 length, f64 values)
///   norm: u64 channels, f64 mean[], f64 std[]
///   rng: u64 count of (str name, str state)
template <typename T>
struct Checkpoint {
    std::string config;  // JSON echo of the run and model configuration
    std::uint64_t epoch = 0;  // completed epochs
    ParamMap<T> params;
    OptimizerState optimizer;
    NormStats norm;
    std::map<std::string, std::string> rng;
};

template <typename T>
std::string serialize_checkpoint(const Checkpoint<T>& ckpt);

template <typename T>
Checkpoint<T> deserialize_checkpoint(const std::string& bytes);

/// Writes to `path`.tmp and renames, so a crash never leaves a torn file.
template <typename T>
void save_checkpoint(const std::string& path, const Checkpoint<T>& ckpt);

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path);

} // namespace ircnn
