#pragma once

#include <array>
#include <cstddef>

namespace affect {

inline constexpr std::size_t kNumExpressions = 8;
inline constexpr std::size_t kNumAus = 12;

/// Action unit column names, in annotation CSV order.
inline constexpr std::array<const char*, kNumAus> kAuNames = {
    "AU1",  "AU2",  "AU4",  "AU6",  "AU7",  "AU10",
    "AU12", "AU15", "AU23", "AU24", "AU25", "AU26"};

/// Expression class names, index = label value.
inline constexpr std::array<const char*, kNumExpressions> kExpressionNames = {
    "neutral", "anger",    "disgust", "fear",
    "happiness", "sadness", "surprise", "other"};

}  // namespace affect
