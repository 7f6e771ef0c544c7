#ifndef EMO_LEXICON_HPP
#define EMO_LEXICON_HPP

#include <map>
#include <string>
#include <vector>

#include "emo/labels.hpp"

namespace emo {

// Per-emotion candidate words substituted for the trigger. Words are stored
// lowercase and unique within an emotion. A lexicon normally covers all six
// emotions; fixtures may carry a subset, in which case downstream results
// cover only the emotions present.
class EmotionLexicon {
 public:
  void set_words(EmotionLabel e, std::vector<std::string> words);
  const std::vector<std::string>& words(EmotionLabel e) const;
  bool has(EmotionLabel e) const;
  bool contains(EmotionLabel e, const std::string& word) const;

  // Emotions present, in label-index order.
  std::vector<EmotionLabel> emotions() const;
  std::size_t total_words() const;

  // One line per emotion: "emotion: w1, w2, ...".
  static EmotionLexicon from_file(const std::string& path);
  void save(const std::string& path) const;

  // Serialized form feeding the feature schema hash.
  std::string canonical_string() const;

  // Built-in default: 44 words over the six emotions.
  static const EmotionLexicon& builtin();

 private:
  std::map<EmotionLabel, std::vector<std::string>> words_;
};

}  // namespace emo

#endif
