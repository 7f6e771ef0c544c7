#ifndef EMO_CLOZE_HPP
#define EMO_CLOZE_HPP

#include <string>
#include <vector>

#include "emo/lexicon.hpp"
#include "emo/lm.hpp"
#include "emo/parallel.hpp"
#include "emo/textprep.hpp"

namespace emo {

struct Candidate {
  EmotionLabel emotion;
  std::string word;                 // lexicon word
  std::vector<std::string> tokens;  // tweet with the trigger substituted
};

struct ScoredCandidate {
  EmotionLabel emotion;
  std::string word;
  double log_prob;
  double shifted;  // log_prob - complexity; the best candidate scores 0
};

// Per-tweet cloze output. Covers the emotions present in the lexicon (all
// six for the default lexicon), in label-index order.
struct ClozeResult {
  std::vector<EmotionLabel> emotions;      // present emotions, ascending
  std::vector<ScoredCandidate> candidates; // lexicon order within emotion
  std::vector<double> per_emotion_max;     // aligned with `emotions`
  double complexity = 0;                   // max over all candidates
  std::vector<double> probs;               // normalized, aligned, sums to 1

  double prob_of(EmotionLabel e) const;
  double max_of(EmotionLabel e) const;
  const ScoredCandidate& candidate(const std::string& word) const;
};

// Replaces the trigger token with each lexicon word; a glued prefix is
// applied as prefix+word in one token.
std::vector<std::string> substitute_trigger(
    const std::vector<std::string>& tokens, std::size_t trigger_index,
    const std::string& word, const std::optional<std::string>& prefix);

std::vector<Candidate> generate_candidates(const Tweet& tweet,
                                           const EmotionLexicon& lexicon);

// Stable softmax: out_i = exp(v_i - max) / sum_j exp(v_j - max).
// Throws NonFinite on any non-finite input.
std::vector<double> normalize_log_probs(const std::vector<double>& values);

// Scores every candidate, takes per-emotion maxima and normalizes them into
// the emotion distribution; fills complexity and shifted log-probs.
ClozeResult classify(const Tweet& tweet, const LanguageModel& model,
                     const EmotionLexicon& lexicon);

// Batch driver, parallel across tweets (candidate scoring inside each tweet
// stays serial so results match the one-tweet path bit for bit).
std::vector<ClozeResult> classify_batch(const std::vector<Tweet>& tweets,
                                        const LanguageModel& model,
                                        const EmotionLexicon& lexicon,
                                        Exec exec = default_exec());

// Argmax over probs; ties break toward the lowest label index.
EmotionLabel predict_label(const ClozeResult& result);

// Most probable lexicon word within the given emotion (used to build the
// substituted corpus for continued training).
std::string argmax_replacement(const Tweet& tweet, const LanguageModel& model,
                               const EmotionLexicon& lexicon,
                               EmotionLabel emotion);

}  // namespace emo

#endif
