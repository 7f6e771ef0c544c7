#ifndef EMO_NEURAL_LM_HPP
#define EMO_NEURAL_LM_HPP

#include <iosfwd>

#include "emo/autodiff.hpp"
#include "emo/lm.hpp"

namespace emo {

struct NeuralLMConfig {
  std::size_t embed_dim = 32;
  std::size_t hidden = 64;
  int epochs = 8;
  int batch = 16;
  double lr = 1e-2;
  uint64_t seed = 42;
};

// Small recurrent next-token model: embedding -> LSTM -> dense -> softmax
// over the vocabulary plus an end-of-sequence class. Double precision.
// Training runs through the layer graph; scoring uses a stateless evaluator
// over the same parameters, so trained models are safe for concurrent
// read-only scoring.
class NeuralLM : public LanguageModel {
 public:
  NeuralLM(Vocabulary vocab, NeuralLMConfig cfg);

  static NeuralLM train(const std::vector<std::vector<std::string>>& corpus,
                        const Vocabulary& vocab, NeuralLMConfig cfg);

  // Additional gradient epochs on the given sentences at rate lr * weight.
  void train_more(const std::vector<std::vector<std::string>>& corpus,
                  double lr_scale, int epochs);

  double score(std::span<const std::string> tokens) const override;
  double score_ids(std::span<const int> ids) const;

  // Per-step next-token distribution after consuming `prefix` (evaluator
  // path; used by tests to pin evaluator == graph).
  std::vector<double> step_distribution(std::span<const int> prefix) const;

  std::unique_ptr<LanguageModel> continued(
      const std::vector<std::vector<std::string>>& substituted,
      double weight) const override;

  std::string backend_name() const override { return "neural"; }
  uint64_t vocabulary_hash() const override { return vocab_.hash(); }
  void save(const std::string& path) const override;

  void write_payload(std::ostream& out) const;
  static NeuralLM read_payload(std::istream& in, Vocabulary vocab);

  const NeuralLMConfig& config() const { return cfg_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  ad::LayerGraph<double>& graph() { return graph_; }

  int bos_row() const { return vocab_.size(); }       // embedding row
  int eos_class() const { return vocab_.size(); }     // output class
  int num_classes() const { return vocab_.size() + 1; }

 private:
  void run_epochs(const std::vector<std::vector<int>>& sents, double lr,
                  int epochs);

  Vocabulary vocab_;
  NeuralLMConfig cfg_;
  ad::LayerGraph<double> graph_;
};

}  // namespace emo

#endif
