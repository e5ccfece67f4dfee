// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace finmoe {

inline constexpr int kNumQuestions = 15;
inline constexpr int kNumPrefixes = 10;

// The fixed question/prefix registry used to render training sequences.
const std::vector<std::string>& sft_questions();
const std::vector<std::string>& sft_prefixes();

}  // namespace finmoe
