#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sift/common.hpp"
#include "sift/projector.hpp"

namespace sift {

enum class ParamGroup { proj_semantic, proj_paralinguistic };

std::string_view to_string(ParamGroup g);
ParamGroup param_group_from_string(std::string_view s);
inline constexpr std::array<ParamGroup, 2> kParamGroups = {ParamGroup::proj_semantic,
                                                          ParamGroup::proj_paralinguistic};

struct BranchState {
  model::ProjectorConfig config;
  model::ProjectorParams params;
};

// Versioned projector container. Byte layout, all integers and reals little
// endian, matrices row-major:
//
//   "SIFTCKPT"                     8 bytes
//   version                        u32 (= 1)
//   stage                          u64 length + UTF-8 bytes
//   rng_state                      u64
//   for group in (proj_semantic, proj_paralinguistic):
//     present                      u8
//     if present:
//       d_enc, group, d_hidden, d_llm   i64 each
//       bias                       u8
//       W1, b1 (if bias), W2, b2 (if bias)   f64 each
//   sha256(all preceding bytes)    32 bytes
//
// The content hash is that trailing digest. Group hashes are the SHA-256 of
// the group's own section (present flag onwards).
struct Checkpoint {
  std::string stage = "init";
  std::uint64_t rng_state = 0;
  std::optional<BranchState> semantic;
  std::optional<BranchState> paralinguistic;

  const std::optional<BranchState>& branch(ParamGroup g) const;
  std::optional<BranchState>& branch(ParamGroup g);

  std::vector<std::uint8_t> serialize() const;
  static Checkpoint parse(std::span<const std::uint8_t> bytes);  // throws IoError on corruption
  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  std::string hash() const;
  std::string group_hash(ParamGroup g) const;
};

static constexpr std::uint32_t kCheckpointVersion = 1;

struct FreezeReport {
  std::map<ParamGroup, double> max_abs_diff;  // per frozen group
  bool passed() const;
};

// Max |after - before| over every entry of each listed group. A group absent
// on both sides counts as 0. Throws IncompatibleCheckpoints if presence or
// shapes differ.
FreezeReport verify_freeze(const Checkpoint& before, const Checkpoint& after, const std::set<ParamGroup>& frozen);

}  // namespace sift
