// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "finmoe/errors.hpp"

namespace finmoe {

enum class SentimentLabel { positive = 0, negative = 1, neutral = 2 };

inline constexpr std::array<SentimentLabel, 3> kAllLabels = {
    SentimentLabel::positive, SentimentLabel::negative, SentimentLabel::neutral};

inline const std::string& label_word(SentimentLabel l) {
    static const std::array<std::string, 3> words = {"positive", "negative", "neutral"};
    return words[static_cast<int>(l)];
}

inline std::optional<SentimentLabel> label_from_word(const std::string& w) {
    for (SentimentLabel l : kAllLabels) {
        if (w == label_word(l)) return l;
    }
    return std::nullopt;
}

struct LabelHit {
    size_t offset = 0;
    SentimentLabel label = SentimentLabel::neutral;
};

// Case-insensitive whole-word occurrences of the three label words, in
// order of appearance. A word is whole when neither neighbor is
// alphanumeric or underscore.
std::vector<LabelHit> scan_label_words(const std::string& text);

}  // namespace finmoe
