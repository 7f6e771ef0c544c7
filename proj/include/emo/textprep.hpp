#ifndef EMO_TEXTPREP_HPP
#define EMO_TEXTPREP_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "emo/errors.hpp"
#include "emo/labels.hpp"
#include "emo/parallel.hpp"

namespace emo {

// Special token literals. The trigger placeholder is the literal used by
// the IEST dataset files.
inline constexpr const char* kRareTok = "<rare>";
inline constexpr const char* kUrlTok = "<url>";
inline constexpr const char* kEmailTok = "<email>";
inline constexpr const char* kUserTok = "<user>";
inline constexpr const char* kPadTok = "<pad>";
inline constexpr const char* kTriggerTok = "[#TRIGGERWORD#]";

inline constexpr int kNumSpecials = 6;

struct Tweet {
  std::string id;
  std::string raw_text;  // text field as read from the file
  std::vector<std::string> tokens;
  std::optional<std::size_t> trigger_index;  // token position of the trigger
  std::optional<std::string> trigger_prefix;  // glued chars before it, if any
  std::optional<EmotionLabel> label;
};

// Replaces URLs, emails and @-usernames with their token literals.
// Total and idempotent.
std::string regex_clean(const std::string& text);

enum class PrepProfile { None, Clean, FullIngest };
PrepProfile parse_profile(const std::string& s);

struct TokenizeResult {
  std::vector<std::string> tokens;
  std::vector<std::size_t> trigger_positions;  // indices into tokens
  std::optional<std::string> trigger_prefix;   // prefix of the first trigger
};

// Deterministic rule tokenizer: whitespace + punctuation boundaries,
// ASCII lowercasing, emoji isolated, special-token literals kept atomic.
// A trigger placeholder with glued leading characters becomes one trigger
// token with the prefix recorded.
TokenizeResult tokenize_ex(const std::string& text);
std::vector<std::string> tokenize(const std::string& text);

// Exact duplicates removed first, then any tweet with similarity >= threshold
// to an earlier retained tweet is dropped. First occurrence wins; order kept.
// The retained-set scan is the data-parallel part; the merge is sequential.
std::vector<std::string> dedup_corpus(const std::vector<std::string>& tweets,
                                      double threshold,
                                      Exec exec = default_exec());

class Vocabulary {
 public:
  Vocabulary();

  // id order is fixed: <pad> 0, <rare> 1, <url> 2, <email> 3, <user> 4,
  // trigger 5, then corpus tokens.
  int pad_id() const { return 0; }
  int rare_id() const { return 1; }
  int trigger_id() const { return 5; }

  int size() const { return static_cast<int>(id_to_token_.size()); }
  std::size_t max_size() const { return max_size_; }

  // Unknown tokens resolve to the rare id.
  int lookup(const std::string& token) const;
  bool contains(const std::string& token) const;
  const std::string& token(int id) const { return id_to_token_.at(id); }

  void add(const std::string& token);  // no-op if present
  void set_max_size(std::size_t m) { max_size_ = m; }

  // FNV-1a over tokens in id order; stored in model containers.
  uint64_t hash() const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
  std::size_t max_size_ = 300000;
};

// Frequency-ranked vocabulary, ties broken lexicographically; keeps the top
// (max_size - #specials) tokens.
Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpus,
                       std::size_t max_size);

struct DatasetStats {
  std::array<std::int64_t, kNumEmotions> per_label{};
  std::int64_t total = 0;      // labeled + unlabeled parsed records
  std::int64_t unlabeled = 0;
  std::int64_t skipped = 0;    // lenient mode only
};

struct LineError {
  std::size_t line;  // 1-based
  ErrorCode code;
  std::string message;
};

struct LoadOptions {
  bool strict = true;
  std::size_t max_len = 64;
  PrepProfile profile = PrepProfile::Clean;
  bool require_trigger = true;
};

struct LoadedDataset {
  std::vector<Tweet> tweets;
  DatasetStats stats;
  std::vector<LineError> errors;  // populated in lenient mode
};

// "label<TAB>text" records; ids are 1-based line numbers. Strict mode throws
// on the first bad line; lenient mode skips and records it.
LoadedDataset load_iest_dataset(const std::string& path,
                                const LoadOptions& opts = {});
LoadedDataset parse_iest_lines(const std::vector<std::string>& lines,
                               const LoadOptions& opts = {});

// Writes records back as "label<TAB>text" (lossless for valid files).
void save_iest_dataset(const std::vector<Tweet>& tweets,
                       const std::string& path);

// True iff non-whitespace characters are glued immediately before the
// placeholder in raw_text. Throws NoTrigger when the tweet has none.
bool detect_trigger_prefix(const Tweet& tweet);

// Tail truncation to max_len; if the trigger would be cut, keeps a centered
// window around it instead.
void truncate_tokens(std::vector<std::string>& tokens,
                     std::optional<std::size_t>& trigger_index,
                     std::size_t max_len);

}  // namespace emo

#endif
