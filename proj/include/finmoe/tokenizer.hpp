// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace finmoe {

// Byte-level tokenizer: every UTF-8 byte maps to byte value + 3, with three
// reserved specials. A bijection on arbitrary text, so span arithmetic over
// rendered examples is exact.
inline constexpr int kPadToken = 0;
inline constexpr int kBosToken = 1;
inline constexpr int kEosToken = 2;
inline constexpr int kByteOffset = 3;
inline constexpr int kVocabSize = 259;

// [BOS] ++ bytes+3 ++ [EOS]
std::vector<int> byte_tokenize(const std::string& s);

// Bytes without the BOS/EOS framing, for building scored continuations.
std::vector<int> byte_ids(const std::string& s);

// Inverse: byte tokens back to text; PAD/BOS/EOS are dropped.
std::string byte_detokenize(const std::vector<int>& ids);

}  // namespace finmoe
