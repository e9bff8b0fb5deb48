#pragma once

#include <string_view>

namespace vltd::detail {

// Contents of data/bpe_merges.txt, embedded at configure time.
extern const std::string_view kBuiltinMerges;

}  // namespace vltd::detail
