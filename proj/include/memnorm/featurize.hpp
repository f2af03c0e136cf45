#pragma once

// Token-window feature encoding for the classifier, and the ground-truth
// RemainSame / ToBeNormalized labeling.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace memnorm {

constexpr int kTokenSlots = 30;
constexpr int kWindowVectorLen = 94;  // [-1, prev(30), -1, target(30), -1, next(30), -1]

enum class TokenLabel { RemainSame, ToBeNormalized };

// 94 numeric features: code points of up to 30 characters per block,
// zero-padded, with -1 separators at positions 0, 31, 62, 93.
std::vector<double> encode_token_window(const std::optional<std::string>& prev,
                                        const std::string& target,
                                        const std::optional<std::string>& next);

// RemainSame iff after == "<self>", after == "sil", or after == before.
TokenLabel label_token(const std::string& before, const std::string& after);

// UTF-8 decode to code points; invalid bytes decode as their byte value.
std::vector<std::uint32_t> utf8_code_points(const std::string& s);

}  // namespace memnorm
