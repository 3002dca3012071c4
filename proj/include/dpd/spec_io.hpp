#pragma once

#include <string>
#include <string_view>

#include "dpd/network.hpp"

namespace dpd {

// Network config documents.
//
//   # comment
//   builtin = dpdnet_cifar      (optional: start from a builtin layout)
//   name = dpdnet_cifar
//   input = 32
//   alpha = 1
//   m = 6
//   classes = 10
//   stem.kernel = 3
//   stem.out = 32
//   stem.stride = 1
//   head.pwc = 0
//   head.pool = 8
//
//   [stage 0]
//   kind = dpd                  (resnet_bottleneck | psd | mbv2_inverted | dpd)
//   out = 16
//   mid = 0
//   stride = 1
//   repeat = 1
//
// One `key = value` per line; surrounding whitespace is ignored. Stage sections
// are indexed from 0. `[stage i]` with i below the current stage count
// overrides the listed fields of that stage; i equal to the count appends a
// new stage (kind, out and stride required; mid defaults to 0, repeat to 1).
// Without `builtin`, name, input, stem.*, alpha, m and classes are required;
// with it, alpha, m and classes are. Unknown keys are errors.
//
// Errors are ParseError carrying the 1-based line number and key.
NetworkSpec parse_spec(std::string_view text);
NetworkSpec load_spec_file(const std::string& path);

// Byte-stable: every field is written, stages in order, LF line endings.
std::string emit_spec(const NetworkSpec& spec);

}  // namespace dpd
