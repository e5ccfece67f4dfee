// SPDX-License-Identifier: Apache-2.0
#include "finmoe/tokenizer.hpp"

#include "finmoe/errors.hpp"

namespace finmoe {

std::vector<int> byte_ids(const std::string& s) {
    std::vector<int> ids;
    ids.reserve(s.size());
    for (unsigned char c : s) ids.push_back(static_cast<int>(c) + kByteOffset);
    return ids;
}

std::vector<int> byte_tokenize(const std::string& s) {
    std::vector<int> ids;
    ids.reserve(s.size() + 2);
    ids.push_back(kBosToken);
    for (unsigned char c : s) ids.push_back(static_cast<int>(c) + kByteOffset);
    ids.push_back(kEosToken);
    return ids;
}

std::string byte_detokenize(const std::vector<int>& ids) {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) {
        if (id == kPadToken || id == kBosToken || id == kEosToken) continue;
        if (id < kByteOffset || id >= kVocabSize) {
            throw InputError("byte_detokenize: id " + std::to_string(id) + " out of range");
        }
        out.push_back(static_cast<char>(id - kByteOffset));
    }
    return out;
}

}  // namespace finmoe
