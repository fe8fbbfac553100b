#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "vmoe/model/model.hpp"

namespace vmoe::model {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  ModelConfig config;
  ParamStore params;
  numkit::RngStream data_rng;
  numkit::RngStream noise_rng;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// "VMOE", u32 version, then records until EOF: u32 name length, name bytes,
// u32 rank, u64 dims, f64 payload. All little-endian. Config fields and RNG
// states travel as scalar records under "config/" and "rng/".
void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& is);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace vmoe::model
