// SPDX-License-Identifier: Apache-2.0
#include "finmoe/templates.hpp"

namespace finmoe {

const std::vector<std::string>& sft_questions() {
    static const std::vector<std::string> questions = {
        "Can you analyze this financial sentiment?",
        "Please evaluate the sentiment of the following text:",
        "Determine the sentiment of this financial statement.",
        "Assess whether this text is positive, negative, or neutral.",
        "Here is a financial text for sentiment analysis:",
        "Classify the sentiment of this passage:",
        "Identify the tone of the following financial text:",
        "Evaluate this statement for sentiment polarity.",
        "What is the sentiment of this financial report?",
        "Is this sentiment optimistic, pessimistic, or neutral?",
        "Analyze the sentiment of the following:",
        "Assess the mood of this financial description.",
        "What sentiment does this statement convey?",
        "Classify the financial sentiment in the text below.",
        "Analyze the sentiment expressed in this passage.",
    };
    return questions;
}

const std::vector<std::string>& sft_prefixes() {
    static const std::vector<std::string> prefixes = {
        "The sentiment of this text is:",
        "This passage conveys a sentiment of:",
        "Analyze and determine the sentiment as:",
        "The tone of the statement is:",
        "Classify the following text's sentiment as:",
        "The correct sentiment is:",
        "This statement reflects a sentiment of:",
        "The mood expressed in this text is:",
        "Determine the sentiment conveyed as:",
        "The following text exhibits a sentiment of:",
    };
    return prefixes;
}

}  // namespace finmoe
