#pragma once
//
// Checkpoint container (magic "IVJCKPT"). Sections, in order:
//   HEADER  format version
//   CONFIG  RunConfig as JSON text
//   PARAMS  count, then per array: name, rank, dims, values
//   OPTIM   lr knobs, epoch, total epochs, momentum buffers per group
//   END
// Loading rebuilds the model from the embedded (or a supplied) config and
// checks every array's name and shape against it.
//

#include <cstdint>
#include <string>
#include <vector>

#include "invjoint/config.hpp"
#include "invjoint/model.hpp"
#include "invjoint/optim.hpp"
#include "invjoint/serial.hpp"

namespace invjoint {

struct TrainResult;

inline constexpr std::uint64_t kCheckpointVersion = 1;
inline constexpr const char* kCheckpointMagic = "IVJCKPT";

struct Checkpoint {
    RunConfig config;
    InvJointModel model;
    OptimizerState optim;
    std::vector<std::vector<std::vector<double>>> velocity;  // [group][param]
    int epoch = 0;
};

Checkpoint make_checkpoint(const TrainResult& result);

std::string serialize_checkpoint(const Checkpoint& ckpt, serial::Mode mode = serial::Mode::Binary);
// Validates against the config stored in the file.
Checkpoint deserialize_checkpoint(const std::string& bytes);
// Validates against `expected`; the first array whose name or shape differs is
// named in the LoadError.
Checkpoint deserialize_checkpoint(const std::string& bytes, const RunConfig& expected);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path, serial::Mode mode = serial::Mode::Binary);
Checkpoint load_checkpoint(const std::string& path);
Checkpoint load_checkpoint(const std::string& path, const RunConfig& expected);

}  // namespace invjoint
