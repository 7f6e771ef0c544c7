#include "emo/lexicon.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "emo/errors.hpp"

namespace emo {

namespace {

std::string lower(std::string s) {
  for (char& c : s)
    if (c >= 'A' && c <= 'Z') c += 32;
  return s;
}

std::string strip(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

void EmotionLexicon::set_words(EmotionLabel e, std::vector<std::string> words) {
  if (words.empty())
    throw Error(ErrorCode::Config,
                std::string("lexicon entry for '") + label_name(e) + "' is empty");
  std::vector<std::string> lowered;
  lowered.reserve(words.size());
  for (auto& w : words) {
    std::string lw = lower(strip(w));
    if (lw.empty()) continue;
    if (std::find(lowered.begin(), lowered.end(), lw) != lowered.end())
      throw Error(ErrorCode::Config, "duplicate lexicon word '" + lw + "'");
    lowered.push_back(std::move(lw));
  }
  words_[e] = std::move(lowered);
}

const std::vector<std::string>& EmotionLexicon::words(EmotionLabel e) const {
  auto it = words_.find(e);
  if (it == words_.end())
    throw Error(ErrorCode::Config,
                std::string("lexicon has no entry for '") + label_name(e) + "'");
  return it->second;
}

bool EmotionLexicon::has(EmotionLabel e) const { return words_.count(e) > 0; }

bool EmotionLexicon::contains(EmotionLabel e, const std::string& word) const {
  auto it = words_.find(e);
  if (it == words_.end()) return false;
  return std::find(it->second.begin(), it->second.end(), lower(word)) !=
         it->second.end();
}

std::vector<EmotionLabel> EmotionLexicon::emotions() const {
  std::vector<EmotionLabel> out;
  for (const auto& [e, _] : words_) out.push_back(e);
  return out;
}

std::size_t EmotionLexicon::total_words() const {
  std::size_t n = 0;
  for (const auto& [_, ws] : words_) n += ws.size();
  return n;
}

EmotionLexicon EmotionLexicon::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::Io, "cannot open lexicon " + path);
  EmotionLexicon lex;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const std::string s = strip(line);
    if (s.empty() || s[0] == '#') continue;
    const std::size_t colon = s.find(':');
    if (colon == std::string::npos)
      throw Error(ErrorCode::Format, "lexicon line " + std::to_string(lineno) +
                                         ": expected 'emotion: w1, w2, ...'");
    const std::string name = lower(strip(s.substr(0, colon)));
    auto label = parse_label(name);
    if (!label)
      throw Error(ErrorCode::Format, "lexicon line " + std::to_string(lineno) +
                                         ": unknown emotion '" + name + "'");
    std::vector<std::string> words;
    std::stringstream rest(s.substr(colon + 1));
    std::string w;
    while (std::getline(rest, w, ',')) {
      w = strip(w);
      if (!w.empty()) words.push_back(w);
    }
    lex.set_words(*label, std::move(words));
  }
  if (lex.words_.empty())
    throw Error(ErrorCode::Format, "lexicon file has no entries: " + path);
  return lex;
}

void EmotionLexicon::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::Io, "cannot write lexicon " + path);
  for (const auto& [e, ws] : words_) {
    f << label_name(e) << ": ";
    for (std::size_t i = 0; i < ws.size(); ++i)
      f << ws[i] << (i + 1 < ws.size() ? ", " : "");
    f << '\n';
  }
}

std::string EmotionLexicon::canonical_string() const {
  std::string out;
  for (const auto& [e, ws] : words_) {
    out += label_name(e);
    out += ':';
    for (const auto& w : ws) {
      out += w;
      out += ',';
    }
    out += '\n';
  }
  return out;
}

const EmotionLexicon& EmotionLexicon::builtin() {
  static const EmotionLexicon lex = [] {
    EmotionLexicon l;
    l.set_words(EmotionLabel::Anger,
                {"anger", "angry", "fuming", "angrily", "angrier", "angers",
                 "angered", "furious"});
    l.set_words(EmotionLabel::Disgust,
                {"disgust", "disgusted", "disgusting", "disgustedly",
                 "disgusts"});
    l.set_words(EmotionLabel::Fear,
                {"fear", "feared", "fearing", "fearfully", "frightens",
                 "fearful", "afraid", "scared"});
    l.set_words(EmotionLabel::Joy,
                {"joy", "happy", "thrilling", "joyfully", "happily", "happier",
                 "delights", "joyful", "joyous"});
    l.set_words(EmotionLabel::Sadness,
                {"sad", "sadden", "depressing", "depressingly", "sadder",
                 "depresses", "sorrowful", "saddened"});
    l.set_words(EmotionLabel::Surprise,
                {"surprise", "surprised", "surprising", "surprisingly",
                 "surprises", "shocked"});
    return l;
  }();
  return lex;
}

}  // namespace emo
