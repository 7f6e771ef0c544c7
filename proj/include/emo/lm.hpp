#ifndef EMO_LM_HPP
#define EMO_LM_HPP

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "emo/errors.hpp"
#include "emo/lexicon.hpp"
#include "emo/parallel.hpp"
#include "emo/textprep.hpp"

namespace emo {

// Sentence-level language model. score() returns the natural-log
// probability of the token sequence, including an end-of-sequence term for
// backends that model one. Trained models are immutable; score() is
// thread-safe const.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual double score(std::span<const std::string> tokens) const = 0;

  // One score per sentence, order-preserving; parallel across sentences.
  virtual std::vector<double> score_batch(
      const std::vector<std::vector<std::string>>& batch,
      Exec exec = default_exec()) const;

  // Returns the model retrained on the substituted task tweets ("LM2").
  virtual std::unique_ptr<LanguageModel> continued(
      const std::vector<std::vector<std::string>>& substituted,
      double weight) const = 0;

  virtual std::string backend_name() const = 0;
  virtual uint64_t vocabulary_hash() const = 0;
  virtual void save(const std::string& path) const = 0;
};

struct NgramOptions {
  int order = 4;
  double discount = 0.75;  // 0 gives exact maximum likelihood (test mode)
  bool include_eos = true;
};

// Absolute-discounting n-gram model with interpolated backoff:
//   p_k(w|c) = max(count(c,w) - d, 0)/count(c) + lambda(c) * p_{k-1}(w|c')
//   lambda(c) = d * distinct(c) / count(c)
// terminating in a uniform floor over the prediction events (the vocabulary,
// plus the end-of-sequence symbol when enabled). For fractional counts
// (weighted continued training) lambda uses sum_w min(count, d) so every
// conditional still sums to exactly 1.
class NgramModel : public LanguageModel {
 public:
  NgramModel(Vocabulary vocab, NgramOptions opts);
  // Raw-id mode for tests and fixtures: ids in [0, vocab_size).
  NgramModel(int vocab_size, NgramOptions opts);

  static NgramModel train(const std::vector<std::vector<std::string>>& corpus,
                          const Vocabulary& vocab, NgramOptions opts);

  // Adds one sentence's n-grams with the given multiplier (exclusive access).
  void add_sentence(std::span<const std::string> tokens, double weight = 1.0);
  void add_sentence_ids(std::span<const int> ids, double weight = 1.0);

  double score(std::span<const std::string> tokens) const override;
  double score_ids(std::span<const int> ids) const;

  // p(word | context); context is the preceding ids, most recent last.
  // word may be the EOS id (== base_vocab_size()) when EOS is enabled.
  double cond_prob(int word, std::span<const int> context) const;

  int base_vocab_size() const { return vocab_size_; }
  int event_count() const { return vocab_size_ + (opts_.include_eos ? 1 : 0); }
  int eos_id() const { return vocab_size_; }
  int bos_id() const { return vocab_size_ + 1; }
  const NgramOptions& options() const { return opts_; }
  const Vocabulary& vocabulary() const;

  double count(std::span<const int> context, int word) const;
  double context_total(std::span<const int> context) const;

  std::unique_ptr<LanguageModel> continued(
      const std::vector<std::vector<std::string>>& substituted,
      double weight) const override;

  std::string backend_name() const override { return "ngram"; }
  uint64_t vocabulary_hash() const override;
  void save(const std::string& path) const override;

  // Container payload (without the EMLM header).
  void write_payload(std::ostream& out) const;
  static NgramModel read_payload(std::istream& in, Vocabulary vocab);

 private:
  struct VecHash {
    std::size_t operator()(const std::vector<int>& v) const {
      std::size_t h = 1469598103934665603ULL;
      for (int x : v) {
        h ^= static_cast<std::size_t>(static_cast<uint32_t>(x));
        h *= 1099511628211ULL;
      }
      return h;
    }
  };
  struct Cell {
    double total = 0;
    double discount_mass = 0;  // sum over words of min(count, d)
    std::unordered_map<int, double> words;
  };
  using Table = std::unordered_map<std::vector<int>, Cell, VecHash>;

  std::vector<int> to_ids(std::span<const std::string> tokens) const;
  double level_prob(int level, int word, std::span<const int> context) const;

  std::optional<Vocabulary> vocab_;
  int vocab_size_ = 0;
  NgramOptions opts_;
  std::vector<Table> tables_;  // tables_[k-1] holds order-k counts
};

// Validates order/discount bounds and trains on the corpus.
NgramModel train_ngram(const std::vector<std::vector<std::string>>& corpus,
                       const Vocabulary& vocab, int order, double discount);

// Fixed sentence -> log-prob table; used for fixtures and the wire stub.
// Keys are tokens joined with single spaces.
class TableLM : public LanguageModel {
 public:
  explicit TableLM(std::unordered_map<std::string, double> entries)
      : entries_(std::move(entries)) {}
  static TableLM from_file(const std::string& path);

  double score(std::span<const std::string> tokens) const override;
  std::unique_ptr<LanguageModel> continued(
      const std::vector<std::vector<std::string>>&, double) const override;
  std::string backend_name() const override { return "table"; }
  uint64_t vocabulary_hash() const override { return 0; }
  void save(const std::string& path) const override;

 private:
  std::unordered_map<std::string, double> entries_;
};

// LM2 procedure: every tweet must be labeled and each replacement word must
// belong to the gold label's lexicon entry; the trigger token is replaced by
// prefix+word and the base model is retrained on the result.
std::unique_ptr<LanguageModel> continue_training(
    const LanguageModel& base, const std::vector<Tweet>& labeled,
    const std::vector<std::string>& replacements, const EmotionLexicon& lexicon,
    double weight);

// Versioned binary container (magic "EMLM"). Loading verifies the stored
// vocabulary hash against the supplied vocabulary.
void save_lm(const LanguageModel& model, const std::string& path);
std::unique_ptr<LanguageModel> load_lm(const std::string& path,
                                       const Vocabulary& vocab);

}  // namespace emo

#endif
