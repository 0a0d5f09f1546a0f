#pragma once

#include <map>
#include <string>

#include "cgsa/cgsc.hpp"
#include "cgsa/params.hpp"

namespace cgsa {

// Human-readable training snapshot. Floats go through %.17g so every array
// round-trips bit-exactly; loading rejects version, shape and truncation
// problems with distinct errors.
struct Checkpoint {
  static constexpr int kVersion = 1;

  std::string config_text;  // canonical RunConfig serialization
  std::size_t step = 0;
  std::uint64_t rng_seed = 0;
  std::uint64_t rng_counter = 0;
  PrototypeMemory memory;
  std::map<std::string, ParameterStore> stores;  // "student", "teacher"
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Rejects stores whose parameter names or shapes differ from `expected`.
void require_same_layout(const ParameterStore& loaded,
                         const ParameterStore& expected,
                         const std::string& role);

}  // namespace cgsa
