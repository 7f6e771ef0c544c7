#include <fstream>

#include "emo/cloze.hpp"
#include "emo/lm.hpp"
#include "emo/neural_lm.hpp"
#include "emo/serialize.hpp"

namespace emo {

namespace {
constexpr uint32_t kFormatVersion = 1;
constexpr uint8_t kBackendNgram = 0;
constexpr uint8_t kBackendNeural = 1;
}  // namespace

void save_lm(const LanguageModel& model, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Io, "cannot write model " + path);
  f.write("EMLM", 4);
  io::write_u32(f, kFormatVersion);
  if (const auto* ng = dynamic_cast<const NgramModel*>(&model)) {
    io::write_u8(f, kBackendNgram);
    io::write_u64(f, model.vocabulary_hash());
    ng->write_payload(f);
  } else if (const auto* nn = dynamic_cast<const NeuralLM*>(&model)) {
    io::write_u8(f, kBackendNeural);
    io::write_u64(f, model.vocabulary_hash());
    nn->write_payload(f);
  } else {
    throw Error(ErrorCode::Config,
                "backend '" + model.backend_name() + "' is not serializable");
  }
}

std::unique_ptr<LanguageModel> load_lm(const std::string& path,
                                       const Vocabulary& vocab) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Io, "cannot read model " + path);
  io::expect_magic(f, "EMLM");
  const uint32_t version = io::read_u32(f);
  if (version != kFormatVersion)
    throw Error(ErrorCode::Format,
                "unsupported model version " + std::to_string(version));
  const uint8_t backend = io::read_u8(f);
  const uint64_t stored_hash = io::read_u64(f);
  if (stored_hash != vocab.hash())
    throw Error(ErrorCode::SchemaMismatch,
                "model was built against a different vocabulary (hash "
                "mismatch); re-run with the matching vocabulary file");
  switch (backend) {
    case kBackendNgram:
      return std::make_unique<NgramModel>(NgramModel::read_payload(f, vocab));
    case kBackendNeural:
      return std::make_unique<NeuralLM>(NeuralLM::read_payload(f, vocab));
    default:
      throw Error(ErrorCode::Format,
                  "unknown backend tag " + std::to_string(backend));
  }
}

std::unique_ptr<LanguageModel> continue_training(
    const LanguageModel& base, const std::vector<Tweet>& labeled,
    const std::vector<std::string>& replacements, const EmotionLexicon& lexicon,
    double weight) {
  if (labeled.size() != replacements.size())
    throw Error(ErrorCode::Config,
                "one replacement word per tweet is required");
  std::vector<std::vector<std::string>> substituted;
  substituted.reserve(labeled.size());
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    const Tweet& tw = labeled[i];
    if (!tw.label)
      throw Error(ErrorCode::MissingLabel, "tweet " + tw.id + " is unlabeled");
    if (!tw.trigger_index)
      throw Error(ErrorCode::NoTrigger, "tweet " + tw.id + " has no trigger");
    if (!lexicon.contains(*tw.label, replacements[i]))
      throw Error(ErrorCode::BadReplacement,
                  "replacement '" + replacements[i] + "' is not in the '" +
                      label_name(*tw.label) + "' lexicon entry (tweet " +
                      tw.id + ")");
    substituted.push_back(substitute_trigger(
        tw.tokens, *tw.trigger_index, replacements[i], tw.trigger_prefix));
  }
  return base.continued(substituted, weight);
}

}  // namespace emo
