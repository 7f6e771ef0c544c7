#include "emo/cloze.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>

namespace emo {

double ClozeResult::prob_of(EmotionLabel e) const {
  for (std::size_t i = 0; i < emotions.size(); ++i)
    if (emotions[i] == e) return probs[i];
  throw Error(ErrorCode::Config,
              std::string("emotion not in result: ") + label_name(e));
}

double ClozeResult::max_of(EmotionLabel e) const {
  for (std::size_t i = 0; i < emotions.size(); ++i)
    if (emotions[i] == e) return per_emotion_max[i];
  throw Error(ErrorCode::Config,
              std::string("emotion not in result: ") + label_name(e));
}

const ScoredCandidate& ClozeResult::candidate(const std::string& word) const {
  for (const auto& c : candidates)
    if (c.word == word) return c;
  throw Error(ErrorCode::Config, "candidate word not in result: " + word);
}

std::vector<std::string> substitute_trigger(
    const std::vector<std::string>& tokens, std::size_t trigger_index,
    const std::string& word, const std::optional<std::string>& prefix) {
  std::vector<std::string> out = tokens;
  out.at(trigger_index) = prefix ? *prefix + word : word;
  return out;
}

std::vector<Candidate> generate_candidates(const Tweet& tweet,
                                           const EmotionLexicon& lexicon) {
  if (!tweet.trigger_index)
    throw Error(ErrorCode::NoTrigger, "tweet " + tweet.id + " has no trigger");
  std::vector<Candidate> out;
  for (EmotionLabel e : lexicon.emotions()) {
    for (const std::string& w : lexicon.words(e)) {
      out.push_back({e, w,
                     substitute_trigger(tweet.tokens, *tweet.trigger_index, w,
                                        tweet.trigger_prefix)});
    }
  }
  return out;
}

std::vector<double> normalize_log_probs(const std::vector<double>& values) {
  if (values.empty())
    throw Error(ErrorCode::EmptyInput, "no values to normalize");
  for (double v : values)
    if (!std::isfinite(v))
      throw Error(ErrorCode::NonFinite, "non-finite log probability");
  const double mx = *std::max_element(values.begin(), values.end());
  std::vector<double> out(values.size());
  double sum = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[i] = std::exp(values[i] - mx);
    sum += out[i];
  }
  for (double& p : out) p /= sum;
  return out;
}

ClozeResult classify(const Tweet& tweet, const LanguageModel& model,
                     const EmotionLexicon& lexicon) {
  const std::vector<Candidate> cands = generate_candidates(tweet, lexicon);
  ClozeResult res;
  res.emotions = lexicon.emotions();
  res.per_emotion_max.assign(res.emotions.size(),
                             -std::numeric_limits<double>::infinity());
  res.candidates.reserve(cands.size());

  for (const Candidate& c : cands) {
    double lp;
    try {
      lp = model.score(c.tokens);
    } catch (const Error& e) {
      throw Error(e.code(), "scoring candidate '" + c.word + "' of tweet " +
                                tweet.id + ": " + e.what());
    }
    res.candidates.push_back({c.emotion, c.word, lp, 0.0});
    for (std::size_t i = 0; i < res.emotions.size(); ++i)
      if (res.emotions[i] == c.emotion)
        res.per_emotion_max[i] = std::max(res.per_emotion_max[i], lp);
  }

  res.complexity = *std::max_element(res.per_emotion_max.begin(),
                                     res.per_emotion_max.end());
  for (auto& c : res.candidates) c.shifted = c.log_prob - res.complexity;
  res.probs = normalize_log_probs(res.per_emotion_max);
  return res;
}

std::vector<ClozeResult> classify_batch(const std::vector<Tweet>& tweets,
                                        const LanguageModel& model,
                                        const EmotionLexicon& lexicon,
                                        Exec exec) {
  std::vector<ClozeResult> out(tweets.size());
  // Exceptions must not escape the worker threads; keep the first one.
  std::exception_ptr first_error;
  par::parallel_for(
      tweets.size(), exec,
      [&](std::size_t i) {
        try {
          out[i] = classify(tweets[i], model, lexicon);
        } catch (...) {
#pragma omp critical(emo_classify_batch_err)
          if (!first_error) first_error = std::current_exception();
        }
      },
      1);
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

EmotionLabel predict_label(const ClozeResult& result) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < result.probs.size(); ++i)
    if (result.probs[i] > result.probs[best]) best = i;
  return result.emotions[best];
}

std::string argmax_replacement(const Tweet& tweet, const LanguageModel& model,
                               const EmotionLexicon& lexicon,
                               EmotionLabel emotion) {
  if (!tweet.trigger_index)
    throw Error(ErrorCode::NoTrigger, "tweet " + tweet.id + " has no trigger");
  const std::vector<std::string>& words = lexicon.words(emotion);
  std::string best;
  double best_lp = -std::numeric_limits<double>::infinity();
  for (const std::string& w : words) {
    const double lp = model.score(substitute_trigger(
        tweet.tokens, *tweet.trigger_index, w, tweet.trigger_prefix));
    if (lp > best_lp) {
      best_lp = lp;
      best = w;
    }
  }
  return best;
}

}  // namespace emo
