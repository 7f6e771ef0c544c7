#ifndef EMO_MODELS_HPP
#define EMO_MODELS_HPP

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "emo/autodiff.hpp"
#include "emo/features.hpp"
#include "emo/metrics.hpp"
#include "emo/textprep.hpp"

namespace emo {

// Hyperparameter ranges for the per-replica draws (log-uniform). Paper-scale
// defaults; desk-scale runs shrink them through the config.
struct MiniRanges {
  std::size_t embedding = 1000;
  std::size_t lstm_lo = 128, lstm_hi = 512;
  std::size_t filters_lo = 128, filters_hi = 512;
  std::size_t dense_lo = 16, dense_hi = 32;
};

struct MiniAscConfig {
  std::size_t embedding_size = 1000;
  std::size_t lstm_hidden = 256;
  std::size_t num_filters = 256;
  std::size_t dense_size = 24;
  double dropout = 0.5;  // fixed by the architecture
  std::size_t kernel = 3;
  uint64_t seed = 0;

  // Sizes must be positive; when `ranges` is given (drawn configs) they must
  // also fall inside it. Throws listing the offending field.
  void validate(const MiniRanges* ranges = nullptr) const;
};

MiniAscConfig draw_mini_config(std::mt19937_64& rng, const MiniRanges& ranges,
                               uint64_t seed);

// Sub-network input selections; defaults are the three canonical blocks:
// (a) universal + deepmoji, (b) lm1 + lm2 predictions, (c) semeval + lm1.
struct E1Blocks {
  std::vector<std::vector<std::string>> selections = {
      {"universal", "deepmoji"},
      {"lm1_probs", "lm2_probs"},
      {"semeval_t1", "semeval_t5", "lm1_probs"},
  };
};

struct EnsembleSpec {
  MiniRanges ranges;
  int mini_per_e1 = 4;
  E1Blocks blocks;
  int e1_per_e2 = 8;
  std::size_t stack_e1_dense = 16;
  std::size_t stack_feat_dense = 100;
  int e2_replicas = 128;
  // Blocks absent from the feature schema are zero-fed when set; otherwise
  // building a network that needs them is an error.
  bool zero_missing_blocks = false;
};

// One encoded training record: token ids with the trigger mapped to the
// rare id and flagged through the bit channel, plus the feature vector
// (values ++ presence mask).
struct TrainExample {
  std::string id;
  std::vector<int> ids;
  std::vector<double> bits;
  int length = 0;
  std::vector<double> features;
  int label = -1;
};

std::vector<TrainExample> encode_examples(const std::vector<Tweet>& tweets,
                                          const FeatureMatrix& features,
                                          const Vocabulary& vocab,
                                          bool require_labels);

// How a built graph is fed at batch time.
struct NetIO {
  bool wants_tokens = false;
  bool wants_feat = false;  // "feat" input: values ++ presence mask
  std::vector<std::pair<std::string, std::vector<std::string>>> subnet_inputs;
  int pad_id = 0;
};

template <typename T>
struct BuiltNet {
  ad::LayerGraph<T> graph;
  std::vector<std::string> heads;  // trained against the labels
  std::string output;              // prediction distribution (B, 6)
  NetIO io;
  std::vector<MiniAscConfig> mini_configs;  // drawn configs, build order
};

// Width of a named block: from the schema when present, else the canonical
// width (externals) so absent blocks can be zero-fed.
std::size_t block_width(const FeatureSchema& schema, const std::string& name);

// --- builders ---------------------------------------------------------------

template <typename T>
std::string append_mini_asc(ad::LayerGraph<T>& g, const std::string& prefix,
                            const MiniAscConfig& cfg, std::size_t vocab_size);

template <typename T>
BuiltNet<T> build_mini_asc(const MiniAscConfig& cfg, std::size_t vocab_size,
                           uint64_t seed);

template <typename T>
BuiltNet<T> build_subnetwork(std::size_t input_dim, uint64_t seed);

// 4 mini classifiers + 3 sub-networks, 7 heads; the combined output is the
// mean of the head distributions.
template <typename T>
BuiltNet<T> build_e1(const EnsembleSpec& spec, const FeatureSchema& schema,
                     std::size_t vocab_size, uint64_t seed);

// e1_per_e2 E1 subgraphs (prefixes "e1_<i>/") + the stacking layers:
// dense(16) over the E1 outputs, dense(100) over features ++ E1 outputs,
// concat -> dense(6, softmax).
template <typename T>
BuiltNet<T> build_e2(const EnsembleSpec& spec, const FeatureSchema& schema,
                     std::size_t vocab_size, uint64_t seed);

// --- batching / evaluation ----------------------------------------------------

template <typename T>
void set_batch_inputs(ad::LayerGraph<T>& g, const NetIO& io,
                      const FeatureSchema& schema,
                      const std::vector<const TrainExample*>& batch);

template <typename T>
std::vector<std::vector<double>> predict_probs(
    BuiltNet<T>& net, const FeatureSchema& schema,
    const std::vector<TrainExample>& examples, int batch_size = 64);

// Elementwise arithmetic mean of member distributions.
std::vector<double> soft_vote(const std::vector<std::vector<double>>& dists);

// --- training -------------------------------------------------------------------

struct TrainOptions {
  int batch = 32;
  int epochs_cap = 30;
  int patience = 3;      // early stop on validation macro-F1; <=0 disables
  double lr = 5e-4;
  double decay = 5e-5;
  uint64_t seed = 1;
  double stop_at_train_acc = 0;  // >0: stop once training accuracy reaches it
  bool record_train_acc = true;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0;
  double train_acc = 0;
  double val_f1 = 0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;
  double best_val_f1 = 0;
  bool aborted_non_finite = false;
};

template <typename T>
TrainHistory train_classifier(BuiltNet<T>& net, const FeatureSchema& schema,
                              const std::vector<TrainExample>& train,
                              const std::vector<TrainExample>& val,
                              const TrainOptions& opts);

// --- ensemble orchestration -------------------------------------------------------

// On-disk layout: <dir>/manifest.json + one checkpoint per E2 member. The
// manifest carries the spec, seeds, schema/vocabulary hashes and the train
// ids; a run is reproducible from it alone.
struct EnsembleModel {
  EnsembleSpec spec;
  uint64_t schema_hash = 0;
  uint64_t vocab_hash = 0;
  std::size_t vocab_size = 0;
  uint64_t root_seed = 0;
  std::vector<uint64_t> member_seeds;
  std::vector<std::string> checkpoints;  // absolute or dir-relative paths
  std::vector<std::string> train_ids;
  std::string dir;
};

template <typename T>
EnsembleModel train_ensemble(const EnsembleSpec& spec,
                             const FeatureSchema& schema,
                             const Vocabulary& vocab,
                             const std::vector<TrainExample>& train,
                             const std::vector<TrainExample>& val,
                             const TrainOptions& opts,
                             const std::string& out_dir);

EnsembleModel load_ensemble_manifest(const std::string& dir);
void save_ensemble_manifest(const EnsembleModel& m);

template <typename T>
std::vector<std::vector<double>> predict_ensemble(
    const EnsembleModel& m, const FeatureSchema& schema,
    const std::vector<TrainExample>& examples);

struct FineTuneOptions {
  int epochs = 4;
  int batch = 900;
  bool stack_only = false;
  double lr = 5e-4;
  double decay = 5e-5;
  uint64_t seed = 7;
  double holdout_fraction = 0.1;  // slice kept out for the pre/post metrics
};

struct FineTuneReport {
  double pre_f1 = 0;
  double post_f1 = 0;
  std::size_t holdout_size = 0;
  int updates_per_member = 0;
};

// Trains every member for `epochs` epochs at the large batch size on the
// validation examples (ids must be disjoint from the manifest's train ids).
template <typename T>
FineTuneReport fine_tune(EnsembleModel& m, const FeatureSchema& schema,
                         const std::vector<TrainExample>& validation,
                         const FineTuneOptions& opts);

}  // namespace emo

#endif
