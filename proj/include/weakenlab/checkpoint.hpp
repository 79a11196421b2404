#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <vector>

#include "weakenlab/models.hpp"

namespace weakenlab {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[4] = {'W', 'K', 'L', 'B'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (all little-endian): "WKLB", u32 version, then until EOF one record
// per parameter: u32 name length, name bytes, u32 rank, u32 dims[rank],
// f64 data[prod(dims)].
void write_parameters(std::ostream& out, const std::vector<NamedParameter>& params);
std::vector<NamedParameter> read_parameters(std::istream& in);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
// Names and shapes must match the model's parameters exactly.
void load_checkpoint(Model& model, const std::filesystem::path& path);

}  // namespace weakenlab
