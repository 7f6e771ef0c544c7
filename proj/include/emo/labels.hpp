#ifndef EMO_LABELS_HPP
#define EMO_LABELS_HPP

#include <array>
#include <optional>
#include <string>

namespace emo {

// Fixed label order; every 6-vector in the system uses these indices.
enum class EmotionLabel : int {
  Anger = 0,
  Disgust = 1,
  Fear = 2,
  Joy = 3,
  Sadness = 4,
  Surprise = 5,
};

inline constexpr int kNumEmotions = 6;

// Dataset label strings ("sad", not "sadness").
inline constexpr std::array<const char*, kNumEmotions> kLabelNames = {
    "anger", "disgust", "fear", "joy", "sad", "surprise"};

inline const char* label_name(EmotionLabel l) {
  return kLabelNames[static_cast<int>(l)];
}

inline std::optional<EmotionLabel> parse_label(const std::string& s) {
  for (int i = 0; i < kNumEmotions; ++i)
    if (s == kLabelNames[i]) return static_cast<EmotionLabel>(i);
  return std::nullopt;
}

}  // namespace emo

#endif
