#include "emo/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

namespace emo {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t derive_seed(uint64_t seed, uint64_t salt) {
  return splitmix64(seed ^ splitmix64(salt));
}

std::size_t draw_log_uniform(std::mt19937_64& rng, std::size_t lo,
                             std::size_t hi) {
  if (lo >= hi) return lo;
  std::uniform_real_distribution<double> u(std::log(double(lo)),
                                           std::log(double(hi) + 1.0));
  const double v = std::exp(u(rng));
  return std::min<std::size_t>(hi, std::max<std::size_t>(lo, std::size_t(v)));
}

}  // namespace

void MiniAscConfig::validate(const MiniRanges* ranges) const {
  std::vector<std::string> bad;
  if (embedding_size < 1) bad.push_back("embedding_size");
  if (lstm_hidden < 1) bad.push_back("lstm_hidden");
  if (num_filters < 1) bad.push_back("num_filters");
  if (dense_size < 1) bad.push_back("dense_size");
  if (kernel < 1 || kernel % 2 == 0) bad.push_back("kernel");
  if (!(dropout >= 0.0 && dropout < 1.0)) bad.push_back("dropout");
  if (ranges) {
    if (lstm_hidden < ranges->lstm_lo || lstm_hidden > ranges->lstm_hi)
      bad.push_back("lstm_hidden(range)");
    if (num_filters < ranges->filters_lo || num_filters > ranges->filters_hi)
      bad.push_back("num_filters(range)");
    if (dense_size < ranges->dense_lo || dense_size > ranges->dense_hi)
      bad.push_back("dense_size(range)");
  }
  if (!bad.empty()) {
    std::string msg = "bad classifier config field(s):";
    for (const auto& f : bad) msg += " " + f;
    throw Error(ErrorCode::Config, msg);
  }
}

MiniAscConfig draw_mini_config(std::mt19937_64& rng, const MiniRanges& ranges,
                               uint64_t seed) {
  MiniAscConfig cfg;
  cfg.embedding_size = ranges.embedding;
  cfg.lstm_hidden = draw_log_uniform(rng, ranges.lstm_lo, ranges.lstm_hi);
  cfg.num_filters = draw_log_uniform(rng, ranges.filters_lo, ranges.filters_hi);
  cfg.dense_size = draw_log_uniform(rng, ranges.dense_lo, ranges.dense_hi);
  cfg.seed = seed;
  return cfg;
}

std::size_t block_width(const FeatureSchema& schema, const std::string& name) {
  if (schema.has_block(name)) return schema.block_range(name).second;
  static const std::unordered_map<std::string, std::size_t> canonical = {
      {"semeval_t1", 4}, {"semeval_t5", 11}, {"universal", 3584},
      {"deepmoji", 2304}};
  auto it = canonical.find(name);
  if (it == canonical.end())
    throw Error(ErrorCode::MissingBlock, "unknown feature block '" + name + "'");
  return it->second;
}

// --- builders ---------------------------------------------------------------

template <typename T>
std::string append_mini_asc(ad::LayerGraph<T>& g, const std::string& prefix,
                            const MiniAscConfig& cfg, std::size_t vocab_size) {
  cfg.validate();
  const T rate = static_cast<T>(cfg.dropout);
  auto emb = g.embedding(prefix + "emb", "ids", "bits", vocab_size,
                         cfg.embedding_size);
  auto d0 = g.dropout(prefix + "do0", emb, rate);
  auto h = g.lstm(prefix + "lstm", d0, "lens", cfg.embedding_size + 1,
                  cfg.lstm_hidden, /*bidirectional=*/true);
  auto d1 = g.dropout(prefix + "do1", h, rate);
  auto c = g.conv1d(prefix + "conv", d1, "lens", 2 * cfg.lstm_hidden,
                    cfg.num_filters, cfg.kernel, ad::Act::ReLU);
  auto pool = g.global_max_pool(prefix + "pool", c, "lens");
  auto d2 = g.dropout(prefix + "do2", pool, rate);
  auto dn = g.dense(prefix + "dense", d2, cfg.num_filters, cfg.dense_size,
                    ad::Act::ReLU);
  auto d3 = g.dropout(prefix + "do3", dn, rate);
  // Residual path from the pooled features to the output layer.
  auto cat = g.concat(prefix + "cat", {d3, pool});
  auto logits = g.dense(prefix + "logits", cat, cfg.dense_size + cfg.num_filters,
                        kNumEmotions);
  return g.softmax(prefix + "probs", logits);
}

template <typename T>
BuiltNet<T> build_mini_asc(const MiniAscConfig& cfg, std::size_t vocab_size,
                           uint64_t seed) {
  BuiltNet<T> net{ad::LayerGraph<T>(seed), {}, "", {}, {}};
  net.output = append_mini_asc(net.graph, "", cfg, vocab_size);
  net.heads = {net.output};
  net.io.wants_tokens = true;
  net.mini_configs = {cfg};
  return net;
}

template <typename T>
std::string append_subnetwork(ad::LayerGraph<T>& g, const std::string& prefix,
                              const std::string& input, std::size_t input_dim) {
  if (input_dim < 1)
    throw Error(ErrorCode::Config, "sub-network input width must be >= 1");
  auto d0 = g.dropout(prefix + "do0", input, T(0.5));
  auto dn = g.dense(prefix + "dense", d0, input_dim, 16, ad::Act::ReLU);
  auto cat = g.concat(prefix + "cat", {input, dn});
  auto d1 = g.dropout(prefix + "do1", cat, T(0.5));
  auto logits = g.dense(prefix + "logits", d1, input_dim + 16, kNumEmotions);
  return g.softmax(prefix + "probs", logits);
}

template <typename T>
BuiltNet<T> build_subnetwork(std::size_t input_dim, uint64_t seed) {
  BuiltNet<T> net{ad::LayerGraph<T>(seed), {}, "", {}, {}};
  net.output = append_subnetwork(net.graph, "", "sub_in", input_dim);
  net.heads = {net.output};
  return net;
}

namespace {

// Shared by build_e1 and build_e2; subnet input tensors are global (the
// replicas read the same feature slices).
template <typename T>
struct E1Parts {
  std::vector<std::string> heads;
  std::string combined;
  std::vector<MiniAscConfig> minis;
};

template <typename T>
E1Parts<T> append_e1(ad::LayerGraph<T>& g, const std::string& prefix,
                     const EnsembleSpec& spec, const FeatureSchema& schema,
                     std::size_t vocab_size, uint64_t draw_seed, NetIO& io) {
  if (spec.mini_per_e1 < 1)
    throw Error(ErrorCode::Config, "mini_per_e1 must be >= 1");
  E1Parts<T> parts;
  std::mt19937_64 draws(draw_seed);
  for (int i = 0; i < spec.mini_per_e1; ++i) {
    MiniAscConfig cfg =
        draw_mini_config(draws, spec.ranges, derive_seed(draw_seed, i));
    parts.minis.push_back(cfg);
    parts.heads.push_back(append_mini_asc(
        g, prefix + "m" + std::to_string(i) + "/", cfg, vocab_size));
  }
  for (std::size_t k = 0; k < spec.blocks.selections.size(); ++k) {
    const auto& sel = spec.blocks.selections[k];
    std::size_t width = 0;
    for (const auto& b : sel) {
      if (!schema.has_block(b) && !spec.zero_missing_blocks)
        throw Error(ErrorCode::MissingBlock,
                    "feature block '" + b +
                        "' is not in the schema (enable zero_missing_blocks "
                        "to feed zeros)");
      width += block_width(schema, b);
    }
    const std::string in = "sub" + std::to_string(k) + "_in";
    bool registered = false;
    for (const auto& [name, _] : io.subnet_inputs)
      if (name == in) registered = true;
    if (!registered) io.subnet_inputs.emplace_back(in, sel);
    parts.heads.push_back(append_subnetwork(
        g, prefix + "s" + std::to_string(k) + "/", in, width));
  }
  parts.combined = g.mean(prefix + "probs", parts.heads);
  io.wants_tokens = true;
  return parts;
}

}  // namespace

template <typename T>
BuiltNet<T> build_e1(const EnsembleSpec& spec, const FeatureSchema& schema,
                     std::size_t vocab_size, uint64_t seed) {
  BuiltNet<T> net{ad::LayerGraph<T>(seed), {}, "", {}, {}};
  E1Parts<T> parts = append_e1(net.graph, "", spec, schema, vocab_size,
                               derive_seed(seed, 0xE1), net.io);
  net.heads = parts.heads;
  net.output = parts.combined;
  net.mini_configs = parts.minis;
  return net;
}

template <typename T>
BuiltNet<T> build_e2(const EnsembleSpec& spec, const FeatureSchema& schema,
                     std::size_t vocab_size, uint64_t seed) {
  if (spec.e1_per_e2 < 1)
    throw Error(ErrorCode::Config, "e1_per_e2 must be >= 1");
  if (spec.e1_per_e2 != 8)
    std::fprintf(stderr,
                 "warning: stacking %d E1 replicas (the reference "
                 "configuration uses 8)\n",
                 spec.e1_per_e2);
  BuiltNet<T> net{ad::LayerGraph<T>(seed), {}, "", {}, {}};
  std::vector<std::string> e1_outputs;
  for (int r = 0; r < spec.e1_per_e2; ++r) {
    E1Parts<T> parts =
        append_e1(net.graph, "e1_" + std::to_string(r) + "/", spec, schema,
                  vocab_size, derive_seed(seed, r), net.io);
    e1_outputs.push_back(parts.combined);
    for (auto& c : parts.minis) net.mini_configs.push_back(c);
  }
  auto e1cat = net.graph.concat("stack/e1cat", e1_outputs);
  const std::size_t e1w = std::size_t(spec.e1_per_e2) * kNumEmotions;
  auto d16 = net.graph.dense("stack/d16", e1cat, e1w, spec.stack_e1_dense,
                             ad::Act::ReLU);
  const std::size_t featw = schema.width() + schema.optional_count();
  auto allfeat = net.graph.concat("stack/allfeat", {"feat", e1cat});
  auto d100 = net.graph.dense("stack/d100", allfeat, featw + e1w,
                              spec.stack_feat_dense, ad::Act::ReLU);
  auto cat = net.graph.concat("stack/cat", {d16, d100});
  auto logits = net.graph.dense(
      "stack/logits", cat, spec.stack_e1_dense + spec.stack_feat_dense,
      kNumEmotions);
  net.output = net.graph.softmax("e2_probs", logits);
  net.heads = {net.output};
  net.io.wants_feat = true;
  return net;
}

// --- encoding / batching -------------------------------------------------------

std::vector<TrainExample> encode_examples(const std::vector<Tweet>& tweets,
                                          const FeatureMatrix& features,
                                          const Vocabulary& vocab,
                                          bool require_labels) {
  std::unordered_map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < features.ids.size(); ++i)
    row_of[features.ids[i]] = i;
  std::vector<TrainExample> out;
  out.reserve(tweets.size());
  for (const Tweet& tw : tweets) {
    auto it = row_of.find(tw.id);
    if (it == row_of.end())
      throw Error(ErrorCode::UnknownId,
                  "tweet " + tw.id + " has no feature row");
    TrainExample ex;
    ex.id = tw.id;
    ex.length = static_cast<int>(tw.tokens.size());
    ex.ids.resize(tw.tokens.size());
    ex.bits.assign(tw.tokens.size(), 0.0);
    for (std::size_t t = 0; t < tw.tokens.size(); ++t)
      ex.ids[t] = vocab.lookup(tw.tokens[t]);
    if (tw.trigger_index) {
      // The trigger embeds as the rare token; the bit channel tells it apart
      // from other unknown words.
      ex.ids[*tw.trigger_index] = vocab.rare_id();
      ex.bits[*tw.trigger_index] = 1.0;
    }
    const FeatureVector& fv = features.rows[it->second];
    ex.features = fv.values;
    ex.features.insert(ex.features.end(), fv.presence.begin(),
                       fv.presence.end());
    if (tw.label) {
      ex.label = static_cast<int>(*tw.label);
    } else if (require_labels) {
      throw Error(ErrorCode::MissingLabel, "tweet " + tw.id + " is unlabeled");
    }
    out.push_back(std::move(ex));
  }
  return out;
}

template <typename T>
void set_batch_inputs(ad::LayerGraph<T>& g, const NetIO& io,
                      const FeatureSchema& schema,
                      const std::vector<const TrainExample*>& batch) {
  const std::size_t B = batch.size();
  if (B == 0) throw Error(ErrorCode::EmptyInput, "empty batch");
  if (io.wants_tokens) {
    std::size_t maxlen = 1;
    for (const auto* ex : batch)
      maxlen = std::max(maxlen, ex->ids.size());
    ad::IdMatrix ids{B, maxlen, std::vector<int>(B * maxlen, io.pad_id)};
    ad::Tensor<T> bits({B, maxlen});
    std::vector<int> lens(B);
    for (std::size_t b = 0; b < B; ++b) {
      const auto* ex = batch[b];
      lens[b] = ex->length;
      for (std::size_t t = 0; t < ex->ids.size(); ++t) {
        ids.v[b * maxlen + t] = ex->ids[t];
        bits.v[b * maxlen + t] = static_cast<T>(ex->bits[t]);
      }
    }
    g.set_ids("ids", std::move(ids));
    g.set_input("bits", std::move(bits));
    g.set_lengths("lens", std::move(lens));
  }
  if (io.wants_feat) {
    const std::size_t fw = batch[0]->features.size();
    ad::Tensor<T> feat({B, fw});
    for (std::size_t b = 0; b < B; ++b) {
      if (batch[b]->features.size() != fw)
        throw Error(ErrorCode::WidthMismatch, "ragged feature rows in batch");
      for (std::size_t j = 0; j < fw; ++j)
        feat.v[b * fw + j] = static_cast<T>(batch[b]->features[j]);
    }
    g.set_input("feat", std::move(feat));
  }
  for (const auto& [name, blocks] : io.subnet_inputs) {
    std::size_t width = 0;
    for (const auto& blk : blocks) width += block_width(schema, blk);
    ad::Tensor<T> in({B, width});
    for (std::size_t b = 0; b < B; ++b) {
      std::size_t off = 0;
      for (const auto& blk : blocks) {
        const std::size_t w = block_width(schema, blk);
        if (schema.has_block(blk)) {
          const auto [boff, bw] = schema.block_range(blk);
          for (std::size_t j = 0; j < bw; ++j)
            in.v[b * width + off + j] =
                static_cast<T>(batch[b]->features[boff + j]);
        }
        off += w;  // absent blocks stay zero
      }
    }
    g.set_input(name, std::move(in));
  }
}

template <typename T>
std::vector<std::vector<double>> predict_probs(
    BuiltNet<T>& net, const FeatureSchema& schema,
    const std::vector<TrainExample>& examples, int batch_size) {
  std::vector<std::vector<double>> out;
  out.reserve(examples.size());
  for (std::size_t at = 0; at < examples.size();
       at += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(examples.size(), at + static_cast<std::size_t>(batch_size));
    std::vector<const TrainExample*> batch;
    for (std::size_t i = at; i < end; ++i) batch.push_back(&examples[i]);
    set_batch_inputs(net.graph, net.io, schema, batch);
    net.graph.forward(ad::Mode::Eval);
    const ad::Tensor<T>& probs = net.graph.tensor(net.output);
    const std::size_t k = probs.last_dim();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      std::vector<double> row(k);
      for (std::size_t j = 0; j < k; ++j)
        row[j] = static_cast<double>(probs.v[b * k + j]);
      out.push_back(std::move(row));
    }
  }
  return out;
}

std::vector<double> soft_vote(const std::vector<std::vector<double>>& dists) {
  if (dists.empty())
    throw Error(ErrorCode::EmptyEnsemble, "no distributions to vote over");
  const std::size_t k = dists[0].size();
  std::vector<double> mean(k, 0.0);
  for (const auto& d : dists) {
    if (d.size() != k)
      throw Error(ErrorCode::ShapeMismatch, "vote members differ in width");
    double sum = 0;
    for (double v : d) sum += v;
    if (std::abs(sum - 1.0) > 1e-6)
      throw Error(ErrorCode::NotDistribution,
                  "vote member sums to " + std::to_string(sum));
    for (std::size_t j = 0; j < k; ++j) mean[j] += d[j];
  }
  for (double& v : mean) v /= double(dists.size());
  return mean;
}

// --- training ----------------------------------------------------------------

namespace {

template <typename T>
std::map<std::string, std::vector<T>> snapshot_params(
    const ad::LayerGraph<T>& g) {
  std::map<std::string, std::vector<T>> snap;
  for (const auto& [name, p] : g.params()) snap[name] = p.t.v;
  return snap;
}

template <typename T>
void restore_params(ad::LayerGraph<T>& g,
                    const std::map<std::string, std::vector<T>>& snap) {
  for (const auto& [name, vals] : snap) g.param(name).t.v = vals;
}

int argmax_row(const std::vector<double>& row) {
  int best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = static_cast<int>(j);
  return best;
}

template <typename T>
double eval_macro_f1(BuiltNet<T>& net, const FeatureSchema& schema,
                     const std::vector<TrainExample>& examples) {
  const auto probs = predict_probs(net, schema, examples);
  std::vector<int> pred(probs.size()), gold(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    pred[i] = argmax_row(probs[i]);
    gold[i] = examples[i].label;
  }
  return macro_f1(pred, gold, kNumEmotions).macro_f1;
}

template <typename T>
double eval_accuracy(BuiltNet<T>& net, const FeatureSchema& schema,
                     const std::vector<TrainExample>& examples) {
  const auto probs = predict_probs(net, schema, examples);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < probs.size(); ++i)
    if (argmax_row(probs[i]) == examples[i].label) ++correct;
  return examples.empty() ? 0.0 : double(correct) / double(examples.size());
}

}  // namespace

template <typename T>
TrainHistory train_classifier(BuiltNet<T>& net, const FeatureSchema& schema,
                              const std::vector<TrainExample>& train,
                              const std::vector<TrainExample>& val,
                              const TrainOptions& opts) {
  if (train.empty()) throw Error(ErrorCode::EmptyCorpus, "empty training set");
  for (const auto& ex : train)
    if (ex.label < 0)
      throw Error(ErrorCode::MissingLabel, "example " + ex.id + " unlabeled");

  ad::AdamConfig<T> acfg;
  acfg.lr = static_cast<T>(opts.lr);
  acfg.decay = static_cast<T>(opts.decay);
  ad::Adam<T> optimizer(acfg);

  TrainHistory hist;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  auto last_good = snapshot_params(net.graph);
  std::map<std::string, std::vector<T>> best;
  int since_best = 0;

  for (int epoch = 0; epoch < opts.epochs_cap; ++epoch) {
    std::mt19937_64 shuffle_rng(derive_seed(opts.seed, 0x5u + epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0;
    int batches = 0;
    bool aborted = false;
    for (std::size_t at = 0; at < order.size();
         at += static_cast<std::size_t>(opts.batch)) {
      const std::size_t end = std::min(
          order.size(), at + static_cast<std::size_t>(opts.batch));
      std::vector<const TrainExample*> batch;
      std::vector<int> gold;
      for (std::size_t i = at; i < end; ++i) {
        batch.push_back(&train[order[i]]);
        gold.push_back(train[order[i]].label);
      }
      set_batch_inputs(net.graph, net.io, schema, batch);
      try {
        net.graph.forward(ad::Mode::Train);
        const T loss = ad::multi_head_loss(net.graph, net.heads, gold, true);
        if (!std::isfinite(static_cast<double>(loss)))
          throw Error(ErrorCode::NonFinite, "non-finite loss");
        net.graph.backward();
        optimizer.step(net.graph);
        loss_sum += static_cast<double>(loss);
        ++batches;
      } catch (const Error& e) {
        if (!is_numeric_error(e.code())) throw;
        restore_params(net.graph, last_good);
        hist.aborted_non_finite = true;
        aborted = true;
        break;
      }
    }
    if (aborted) break;

    EpochStats st;
    st.epoch = epoch;
    st.mean_loss = batches > 0 ? loss_sum / batches : 0.0;
    if (opts.record_train_acc || opts.stop_at_train_acc > 0)
      st.train_acc = eval_accuracy(net, schema, train);
    if (!val.empty()) st.val_f1 = eval_macro_f1(net, schema, val);
    hist.epochs.push_back(st);
    last_good = snapshot_params(net.graph);

    if (!val.empty() && opts.patience > 0) {
      if (hist.best_epoch < 0 || st.val_f1 > hist.best_val_f1) {
        hist.best_epoch = epoch;
        hist.best_val_f1 = st.val_f1;
        best = last_good;
        since_best = 0;
      } else if (++since_best >= opts.patience) {
        break;
      }
    }
    if (opts.stop_at_train_acc > 0 && st.train_acc >= opts.stop_at_train_acc)
      break;
  }
  if (!best.empty()) restore_params(net.graph, best);
  return hist;
}

// --- ensemble orchestration ------------------------------------------------------

namespace {

json spec_to_json(const EnsembleSpec& s) {
  json j;
  j["ranges"] = {{"embedding", s.ranges.embedding},
                 {"lstm", {s.ranges.lstm_lo, s.ranges.lstm_hi}},
                 {"filters", {s.ranges.filters_lo, s.ranges.filters_hi}},
                 {"dense", {s.ranges.dense_lo, s.ranges.dense_hi}}};
  j["mini_per_e1"] = s.mini_per_e1;
  j["blocks"] = s.blocks.selections;
  j["e1_per_e2"] = s.e1_per_e2;
  j["stack_e1_dense"] = s.stack_e1_dense;
  j["stack_feat_dense"] = s.stack_feat_dense;
  j["e2_replicas"] = s.e2_replicas;
  j["zero_missing_blocks"] = s.zero_missing_blocks;
  return j;
}

EnsembleSpec spec_from_json(const json& j) {
  EnsembleSpec s;
  const auto& r = j.at("ranges");
  s.ranges.embedding = r.at("embedding").get<std::size_t>();
  s.ranges.lstm_lo = r.at("lstm")[0].get<std::size_t>();
  s.ranges.lstm_hi = r.at("lstm")[1].get<std::size_t>();
  s.ranges.filters_lo = r.at("filters")[0].get<std::size_t>();
  s.ranges.filters_hi = r.at("filters")[1].get<std::size_t>();
  s.ranges.dense_lo = r.at("dense")[0].get<std::size_t>();
  s.ranges.dense_hi = r.at("dense")[1].get<std::size_t>();
  s.mini_per_e1 = j.at("mini_per_e1").get<int>();
  s.blocks.selections =
      j.at("blocks").get<std::vector<std::vector<std::string>>>();
  s.e1_per_e2 = j.at("e1_per_e2").get<int>();
  s.stack_e1_dense = j.at("stack_e1_dense").get<std::size_t>();
  s.stack_feat_dense = j.at("stack_feat_dense").get<std::size_t>();
  s.e2_replicas = j.at("e2_replicas").get<int>();
  s.zero_missing_blocks = j.at("zero_missing_blocks").get<bool>();
  return s;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)v);
  return buf;
}

uint64_t from_hex64(const std::string& s) {
  return std::stoull(s, nullptr, 16);
}

}  // namespace

void save_ensemble_manifest(const EnsembleModel& m) {
  json j;
  j["version"] = 1;
  j["root_seed"] = m.root_seed;
  j["schema_hash"] = hex64(m.schema_hash);
  j["vocab_hash"] = hex64(m.vocab_hash);
  j["vocab_size"] = m.vocab_size;
  j["spec"] = spec_to_json(m.spec);
  j["member_seeds"] = m.member_seeds;
  j["checkpoints"] = m.checkpoints;
  j["train_ids"] = m.train_ids;
  std::ofstream f(fs::path(m.dir) / "manifest.json");
  if (!f) throw Error(ErrorCode::Io, "cannot write manifest in " + m.dir);
  f << j.dump(2) << '\n';
}

EnsembleModel load_ensemble_manifest(const std::string& dir) {
  std::ifstream f(fs::path(dir) / "manifest.json");
  if (!f) throw Error(ErrorCode::Io, "cannot read manifest in " + dir);
  json j;
  f >> j;
  EnsembleModel m;
  m.dir = dir;
  m.root_seed = j.at("root_seed").get<uint64_t>();
  m.schema_hash = from_hex64(j.at("schema_hash").get<std::string>());
  m.vocab_hash = from_hex64(j.at("vocab_hash").get<std::string>());
  m.vocab_size = j.at("vocab_size").get<std::size_t>();
  m.spec = spec_from_json(j.at("spec"));
  m.member_seeds = j.at("member_seeds").get<std::vector<uint64_t>>();
  m.checkpoints = j.at("checkpoints").get<std::vector<std::string>>();
  m.train_ids = j.at("train_ids").get<std::vector<std::string>>();
  return m;
}

template <typename T>
EnsembleModel train_ensemble(const EnsembleSpec& spec,
                             const FeatureSchema& schema,
                             const Vocabulary& vocab,
                             const std::vector<TrainExample>& train,
                             const std::vector<TrainExample>& val,
                             const TrainOptions& opts,
                             const std::string& out_dir) {
  fs::create_directories(out_dir);
  EnsembleModel m;
  m.spec = spec;
  m.schema_hash = schema.hash();
  m.vocab_hash = vocab.hash();
  m.vocab_size = static_cast<std::size_t>(vocab.size());
  m.root_seed = opts.seed;
  m.dir = out_dir;
  for (const auto& ex : train) m.train_ids.push_back(ex.id);

  for (int r = 0; r < spec.e2_replicas; ++r) {
    const uint64_t seed_r = derive_seed(opts.seed, 0xE200 + r);
    m.member_seeds.push_back(seed_r);

    // Stage 1: train each E1 replica standalone.
    std::vector<std::string> e1_ckpts;
    for (int i = 0; i < spec.e1_per_e2; ++i) {
      BuiltNet<T> e1{ad::LayerGraph<T>(derive_seed(seed_r, 0x1000 + i)),
                     {}, "", {}, {}};
      E1Parts<T> parts = append_e1(e1.graph, "", spec, schema,
                                   m.vocab_size, derive_seed(seed_r, i),
                                   e1.io);
      e1.heads = parts.heads;
      e1.output = parts.combined;
      TrainOptions e1opts = opts;
      e1opts.seed = derive_seed(seed_r, 0x2000 + i);
      e1opts.record_train_acc = false;
      train_classifier(e1, schema, train, val, e1opts);
      const std::string ck = (fs::path(out_dir) /
                              ("e1_" + std::to_string(r) + "_" +
                               std::to_string(i) + ".ckpt"))
                                 .string();
      ad::save_checkpoint(e1.graph, ck);
      e1_ckpts.push_back(ck);
    }

    // Stage 2: assemble E2, load the frozen E1 snapshots, train the stack.
    BuiltNet<T> e2 = build_e2<T>(spec, schema, m.vocab_size, seed_r);
    for (int i = 0; i < spec.e1_per_e2; ++i)
      ad::load_checkpoint(e2.graph, e1_ckpts[i],
                          "e1_" + std::to_string(i) + "/");
    e2.graph.freeze("e1_", true);
    TrainOptions e2opts = opts;
    e2opts.seed = derive_seed(seed_r, 0x3000);
    e2opts.record_train_acc = false;
    train_classifier(e2, schema, train, val, e2opts);

    const std::string ck =
        (fs::path(out_dir) / ("e2_" + std::to_string(r) + ".ckpt")).string();
    ad::save_checkpoint(e2.graph, ck);
    m.checkpoints.push_back(ck);
  }
  save_ensemble_manifest(m);
  return m;
}

template <typename T>
std::vector<std::vector<double>> predict_ensemble(
    const EnsembleModel& m, const FeatureSchema& schema,
    const std::vector<TrainExample>& examples) {
  if (m.checkpoints.empty())
    throw Error(ErrorCode::EmptyEnsemble, "manifest lists no members");
  if (schema.hash() != m.schema_hash)
    throw Error(ErrorCode::SchemaMismatch,
                "feature schema does not match the trained ensemble");
  std::vector<std::vector<std::vector<double>>> member_probs;
  for (std::size_t r = 0; r < m.checkpoints.size(); ++r) {
    BuiltNet<T> e2 = build_e2<T>(m.spec, schema, m.vocab_size,
                                 m.member_seeds[r]);
    ad::load_checkpoint(e2.graph, m.checkpoints[r]);
    member_probs.push_back(predict_probs(e2, schema, examples));
  }
  std::vector<std::vector<double>> voted;
  voted.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    std::vector<std::vector<double>> per_member;
    per_member.reserve(member_probs.size());
    for (const auto& mp : member_probs) per_member.push_back(mp[i]);
    voted.push_back(soft_vote(per_member));
  }
  return voted;
}

namespace {

std::vector<int> vote_predictions(
    const std::vector<std::vector<double>>& probs) {
  std::vector<int> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = argmax_row(probs[i]);
  return out;
}

template <typename T>
double ensemble_f1(const EnsembleModel& m, const FeatureSchema& schema,
                   const std::vector<TrainExample>& examples) {
  if (examples.empty()) return 0.0;
  const auto probs = predict_ensemble<T>(m, schema, examples);
  std::vector<int> gold(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) gold[i] = examples[i].label;
  return macro_f1(vote_predictions(probs), gold, kNumEmotions).macro_f1;
}

}  // namespace

template <typename T>
FineTuneReport fine_tune(EnsembleModel& m, const FeatureSchema& schema,
                         const std::vector<TrainExample>& validation,
                         const FineTuneOptions& opts) {
  if (validation.empty())
    throw Error(ErrorCode::EmptyCorpus, "empty validation set");
  std::unordered_set<std::string> train_ids(m.train_ids.begin(),
                                            m.train_ids.end());
  for (const auto& ex : validation)
    if (train_ids.count(ex.id))
      throw Error(ErrorCode::LeakDetected,
                  "validation example " + ex.id +
                      " was in the ensemble's training set");

  // Deterministic holdout slice for the pre/post comparison.
  std::vector<TrainExample> shuffled = validation;
  std::mt19937_64 rng(derive_seed(opts.seed, 0xF17E));
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const std::size_t holdout_n = static_cast<std::size_t>(
      std::floor(opts.holdout_fraction * double(shuffled.size())));
  std::vector<TrainExample> tune(shuffled.begin(), shuffled.end() - holdout_n);
  std::vector<TrainExample> holdout(shuffled.end() - holdout_n,
                                    shuffled.end());

  FineTuneReport rep;
  rep.holdout_size = holdout.size();
  rep.pre_f1 = ensemble_f1<T>(m, schema, holdout);

  const int batches_per_epoch = static_cast<int>(
      (tune.size() + std::size_t(opts.batch) - 1) / std::size_t(opts.batch));
  rep.updates_per_member = opts.epochs * batches_per_epoch;

  for (std::size_t r = 0; r < m.checkpoints.size(); ++r) {
    BuiltNet<T> e2 = build_e2<T>(m.spec, schema, m.vocab_size,
                                 m.member_seeds[r]);
    ad::load_checkpoint(e2.graph, m.checkpoints[r]);
    if (opts.stack_only) e2.graph.freeze("e1_", true);
    TrainOptions topts;
    topts.batch = opts.batch;
    topts.epochs_cap = opts.epochs;
    topts.patience = 0;  // exactly `epochs` epochs
    topts.lr = opts.lr;
    topts.decay = opts.decay;
    topts.seed = derive_seed(opts.seed, r);
    topts.record_train_acc = false;
    if (opts.epochs > 0) train_classifier(e2, schema, tune, {}, topts);
    ad::save_checkpoint(e2.graph, m.checkpoints[r]);
  }
  rep.post_f1 = ensemble_f1<T>(m, schema, holdout);
  return rep;
}

// --- explicit instantiations ----------------------------------------------------

template std::string append_mini_asc<float>(ad::LayerGraph<float>&,
                                            const std::string&,
                                            const MiniAscConfig&, std::size_t);
template std::string append_mini_asc<double>(ad::LayerGraph<double>&,
                                             const std::string&,
                                             const MiniAscConfig&, std::size_t);
template BuiltNet<float> build_mini_asc<float>(const MiniAscConfig&,
                                               std::size_t, uint64_t);
template BuiltNet<double> build_mini_asc<double>(const MiniAscConfig&,
                                                 std::size_t, uint64_t);
template BuiltNet<float> build_subnetwork<float>(std::size_t, uint64_t);
template BuiltNet<double> build_subnetwork<double>(std::size_t, uint64_t);
template BuiltNet<float> build_e1<float>(const EnsembleSpec&,
                                         const FeatureSchema&, std::size_t,
                                         uint64_t);
template BuiltNet<double> build_e1<double>(const EnsembleSpec&,
                                           const FeatureSchema&, std::size_t,
                                           uint64_t);
template BuiltNet<float> build_e2<float>(const EnsembleSpec&,
                                         const FeatureSchema&, std::size_t,
                                         uint64_t);
template BuiltNet<double> build_e2<double>(const EnsembleSpec&,
                                           const FeatureSchema&, std::size_t,
                                           uint64_t);
template void set_batch_inputs<float>(ad::LayerGraph<float>&, const NetIO&,
                                      const FeatureSchema&,
                                      const std::vector<const TrainExample*>&);
template void set_batch_inputs<double>(ad::LayerGraph<double>&, const NetIO&,
                                       const FeatureSchema&,
                                       const std::vector<const TrainExample*>&);
template std::vector<std::vector<double>> predict_probs<float>(
    BuiltNet<float>&, const FeatureSchema&, const std::vector<TrainExample>&,
    int);
template std::vector<std::vector<double>> predict_probs<double>(
    BuiltNet<double>&, const FeatureSchema&, const std::vector<TrainExample>&,
    int);
template TrainHistory train_classifier<float>(BuiltNet<float>&,
                                              const FeatureSchema&,
                                              const std::vector<TrainExample>&,
                                              const std::vector<TrainExample>&,
                                              const TrainOptions&);
template TrainHistory train_classifier<double>(
    BuiltNet<double>&, const FeatureSchema&, const std::vector<TrainExample>&,
    const std::vector<TrainExample>&, const TrainOptions&);
template EnsembleModel train_ensemble<float>(const EnsembleSpec&,
                                             const FeatureSchema&,
                                             const Vocabulary&,
                                             const std::vector<TrainExample>&,
                                             const std::vector<TrainExample>&,
                                             const TrainOptions&,
                                             const std::string&);
template EnsembleModel train_ensemble<double>(const EnsembleSpec&,
                                              const FeatureSchema&,
                                              const Vocabulary&,
                                              const std::vector<TrainExample>&,
                                              const std::vector<TrainExample>&,
                                              const TrainOptions&,
                                              const std::string&);
template std::vector<std::vector<double>> predict_ensemble<float>(
    const EnsembleModel&, const FeatureSchema&,
    const std::vector<TrainExample>&);
template std::vector<std::vector<double>> predict_ensemble<double>(
    const EnsembleModel&, const FeatureSchema&,
    const std::vector<TrainExample>&);
template FineTuneReport fine_tune<float>(EnsembleModel&, const FeatureSchema&,
                                         const std::vector<TrainExample>&,
                                         const FineTuneOptions&);
template FineTuneReport fine_tune<double>(EnsembleModel&, const FeatureSchema&,
                                          const std::vector<TrainExample>&,
                                          const FineTuneOptions&);

}  // namespace emo
