#ifndef EMO_FEATURES_HPP
#define EMO_FEATURES_HPP

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "emo/cloze.hpp"
#include "emo/lexicon.hpp"
#include "emo/textprep.hpp"

namespace emo {

struct BlockSpec {
  std::string name;
  std::size_t width = 0;
  bool optional = false;
};

// Fixed block order: lm1_probs, lm2_probs, lm1_shifted, lm2_shifted,
// lm1_complexity, lm2_complexity, prefix_bit, then any enabled externals
// (semeval_t1 4, semeval_t5 11, universal 3584, deepmoji 2304). Probability
// and shifted widths follow the lexicon (6 and 44 for the default). The
// hash covers block names, widths, order and the lexicon contents; trained
// models store it and refuse mismatching feature files.
class FeatureSchema {
 public:
  static FeatureSchema make(const EmotionLexicon& lexicon,
                            const std::vector<std::string>& externals = {});
  static const std::vector<std::string>& known_externals();

  const std::vector<BlockSpec>& blocks() const { return blocks_; }
  std::size_t width() const { return width_; }
  std::size_t optional_count() const { return optional_count_; }
  uint64_t hash() const { return hash_; }

  bool has_block(const std::string& name) const;
  // offset, width within the value vector
  std::pair<std::size_t, std::size_t> block_range(
      const std::string& name) const;
  // index among optional blocks (for the presence mask)
  std::size_t optional_index(const std::string& name) const;

  std::size_t emotion_count() const { return emotion_count_; }
  std::size_t lexicon_words() const { return lexicon_words_; }

 private:
  std::vector<BlockSpec> blocks_;
  std::size_t width_ = 0;
  std::size_t optional_count_ = 0;
  std::size_t emotion_count_ = 0;
  std::size_t lexicon_words_ = 0;
  uint64_t hash_ = 0;
};

struct FeatureVector {
  std::vector<double> values;    // schema width
  std::vector<double> presence;  // 1/0 per optional block, schema order
};

// File-backed optional block, keyed by tweet id.
struct ExternalBlock {
  std::unordered_map<std::string, std::vector<double>> rows;
  std::set<std::string> zero_filled;  // ids resolved by the zero-fill policy
};

enum class MissingIdPolicy { Error, ZeroFill };

// TSV with a "#width=W name=<block>" header. Every id in `ids` must resolve
// or fall under the policy; rows must match the expected width exactly.
ExternalBlock load_external_block(const std::string& path,
                                  std::size_t expected_width,
                                  const std::vector<std::string>& ids,
                                  MissingIdPolicy policy);

// Per-tweet feature assembly. Cloze results must come from the schema's
// lexicon; enabled external blocks are read from `externals` (zero-filled
// with presence 0 when the block has no row for the tweet).
FeatureVector assemble(
    const Tweet& tweet, const ClozeResult& lm1, const ClozeResult& lm2,
    const FeatureSchema& schema,
    const std::map<std::string, ExternalBlock>* externals = nullptr);

// Feature table serialization: header "#schema=<hex> width=W presence=P",
// then "id<TAB>values...<TAB>presence...".
struct FeatureMatrix {
  uint64_t schema_hash = 0;
  std::size_t width = 0;
  std::size_t presence_width = 0;
  std::vector<std::string> ids;
  std::vector<FeatureVector> rows;
};

void save_feature_matrix(const FeatureMatrix& m, const std::string& path);
FeatureMatrix load_feature_matrix(const std::string& path,
                                  uint64_t expected_schema_hash = 0);

}  // namespace emo

#endif
