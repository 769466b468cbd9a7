#pragma once

#include <string_view>

namespace nst {

/// Text of a shipped prompt asset: critic, builder, brevity, domain or
/// calibrate. Throws std::out_of_range for other names.
std::string_view prompt_asset(std::string_view name);

}  // namespace nst
