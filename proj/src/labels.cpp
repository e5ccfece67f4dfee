// SPDX-License-Identifier: Apache-2.0
#include "finmoe/labels.hpp"

#include <algorithm>
#include <cctype>

namespace finmoe {

namespace {

bool word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
}

}  // namespace

std::vector<LabelHit> scan_label_words(const std::string& text) {
    std::string lower(text);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });

    std::vector<LabelHit> hits;
    for (SentimentLabel l : kAllLabels) {
        const std::string& word = label_word(l);
        size_t pos = 0;
        while ((pos = lower.find(word, pos)) != std::string::npos) {
            const bool left_ok = pos == 0 || !word_char(lower[pos - 1]);
            const size_t end = pos + word.size();
            const bool right_ok = end == lower.size() || !word_char(lower[end]);
            if (left_ok && right_ok) hits.push_back(LabelHit{pos, l});
            pos += 1;
        }
    }
    std::sort(hits.begin(), hits.end(),
              [](const LabelHit& a, const LabelHit& b) { return a.offset < b.offset; });
    return hits;
}

}  // namespace finmoe
