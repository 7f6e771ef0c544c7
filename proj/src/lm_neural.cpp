#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>

#include "emo/kernels.hpp"
#include "emo/neural_lm.hpp"
#include "emo/serialize.hpp"

namespace emo {

namespace {
constexpr const char* kIds = "ids";
constexpr const char* kBits = "bits";
constexpr const char* kLens = "lens";
}  // namespace

NeuralLM::NeuralLM(Vocabulary vocab, NeuralLMConfig cfg)
    : vocab_(std::move(vocab)), cfg_(cfg), graph_(cfg.seed) {
  const std::size_t rows = static_cast<std::size_t>(vocab_.size()) + 1;  // + BOS
  auto emb = graph_.embedding("emb", kIds, kBits, rows, cfg_.embed_dim);
  auto h = graph_.lstm("lstm", emb, kLens, cfg_.embed_dim + 1, cfg_.hidden,
                       /*bidirectional=*/false);
  auto logits = graph_.dense("logits", h, cfg_.hidden,
                             static_cast<std::size_t>(num_classes()));
  graph_.softmax("probs", logits);
}

namespace {

std::vector<int> lookup_ids(const Vocabulary& v,
                            std::span<const std::string> tokens) {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(v.lookup(t));
  return ids;
}

}  // namespace

void NeuralLM::run_epochs(const std::vector<std::vector<int>>& sents,
                          double lr, int epochs) {
  if (sents.empty()) throw Error(ErrorCode::EmptyCorpus, "empty corpus");
  ad::AdamConfig<double> acfg;
  acfg.lr = lr;
  acfg.decay = 0;
  ad::Adam<double> opt(acfg);
  std::mt19937_64 shuffle_rng(cfg_.seed ^ 0x9e3779b97f4a7c15ULL);

  std::vector<std::size_t> order(sents.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t B = static_cast<std::size_t>(cfg_.batch);
  for (int ep = 0; ep < epochs; ++ep) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t at = 0; at < order.size(); at += B) {
      const std::size_t bsz = std::min(B, order.size() - at);
      std::size_t maxlen = 1;
      for (std::size_t k = 0; k < bsz; ++k)
        maxlen = std::max(maxlen, sents[order[at + k]].size() + 1);

      ad::IdMatrix ids{bsz, maxlen, std::vector<int>(bsz * maxlen, 0)};
      ad::Tensor<double> bits({bsz, maxlen});
      std::vector<int> lens(bsz);
      std::vector<std::vector<int>> targets(bsz);
      for (std::size_t k = 0; k < bsz; ++k) {
        const std::vector<int>& s = sents[order[at + k]];
        lens[k] = static_cast<int>(s.size() + 1);
        ids.v[k * maxlen] = bos_row();
        for (std::size_t j = 0; j < s.size(); ++j)
          ids.v[k * maxlen + j + 1] = s[j];
        targets[k] = s;
        targets[k].push_back(eos_class());
      }
      graph_.set_ids(kIds, std::move(ids));
      graph_.set_input(kBits, std::move(bits));
      graph_.set_lengths(kLens, std::move(lens));

      graph_.forward(ad::Mode::Train);
      // Mean CE over all valid steps in the batch.
      ad::Tensor<double>& probs = graph_.tensor("probs");
      const std::size_t K = probs.last_dim();
      std::size_t steps = 0;
      for (const auto& t : targets) steps += t.size();
      for (std::size_t k = 0; k < bsz; ++k) {
        for (std::size_t j = 0; j < targets[k].size(); ++j) {
          const std::size_t row = k * maxlen + j;
          const int gold = targets[k][j];
          const double p = probs.v[row * K + gold];
          if (p > 1e-7 && p < 1.0 - 1e-7)
            probs.g[row * K + gold] -= 1.0 / (p * static_cast<double>(steps));
        }
      }
      graph_.backward();
      opt.step(graph_);
    }
  }
}

NeuralLM NeuralLM::train(const std::vector<std::vector<std::string>>& corpus,
                         const Vocabulary& vocab, NeuralLMConfig cfg) {
  if (corpus.empty()) throw Error(ErrorCode::EmptyCorpus, "empty corpus");
  NeuralLM lm(vocab, cfg);
  std::vector<std::vector<int>> sents;
  sents.reserve(corpus.size());
  for (const auto& s : corpus)
    if (!s.empty()) sents.push_back(lookup_ids(vocab, s));
  lm.run_epochs(sents, cfg.lr, cfg.epochs);
  return lm;
}

void NeuralLM::train_more(const std::vector<std::vector<std::string>>& corpus,
                          double lr_scale, int epochs) {
  if (lr_scale == 0 || epochs == 0) return;
  std::vector<std::vector<int>> sents;
  for (const auto& s : corpus)
    if (!s.empty()) sents.push_back(lookup_ids(vocab_, s));
  run_epochs(sents, cfg_.lr * lr_scale, epochs);
}

std::vector<double> NeuralLM::step_distribution(
    std::span<const int> prefix) const {
  // Stateless forward over the trained parameters.
  const std::size_t E = cfg_.embed_dim + 1;
  const std::size_t H = cfg_.hidden;
  const std::size_t K = static_cast<std::size_t>(num_classes());
  const auto& table = graph_.param("emb.table").t;
  const auto& wx = graph_.param("lstm.fwd.wx").t;
  const auto& wh = graph_.param("lstm.fwd.wh").t;
  const auto& b = graph_.param("lstm.fwd.b").t;
  const auto& dw = graph_.param("logits.w").t;
  const auto& db = graph_.param("logits.b").t;

  std::vector<double> h(H, 0.0), c(H, 0.0), z(4 * H), x(E);
  for (const int id : prefix) {
    std::copy(table.v.data() + static_cast<std::size_t>(id) * cfg_.embed_dim,
              table.v.data() + static_cast<std::size_t>(id + 1) * cfg_.embed_dim,
              x.data());
    x[cfg_.embed_dim] = 0.0;  // trigger-bit channel unused by the LM
    std::copy(b.v.begin(), b.v.end(), z.begin());
    kern::gemm_nn(x.data(), wx.v.data(), z.data(), 1, E, 4 * H, true,
                  Exec::Serial);
    kern::gemm_nn(h.data(), wh.v.data(), z.data(), 1, H, 4 * H, true,
                  Exec::Serial);
    for (std::size_t j = 0; j < H; ++j) {
      const double ig = 1.0 / (1.0 + std::exp(-z[j]));
      const double fg = 1.0 / (1.0 + std::exp(-z[H + j]));
      const double gg = std::tanh(z[2 * H + j]);
      const double og = 1.0 / (1.0 + std::exp(-z[3 * H + j]));
      c[j] = fg * c[j] + ig * gg;
      h[j] = og * std::tanh(c[j]);
    }
  }
  std::vector<double> logits(K);
  std::copy(db.v.begin(), db.v.end(), logits.begin());
  kern::gemm_nn(h.data(), dw.v.data(), logits.data(), 1, H, K, true,
                Exec::Serial);
  std::vector<double> probs(K);
  kern::softmax_rows(logits.data(), probs.data(), 1, K, Exec::Serial);
  return probs;
}

double NeuralLM::score_ids(std::span<const int> ids) const {
  if (ids.empty()) throw Error(ErrorCode::EmptyInput, "empty sentence");
  std::vector<int> prefix{bos_row()};
  double lp = 0;
  for (std::size_t i = 0; i <= ids.size(); ++i) {
    const std::vector<double> dist = step_distribution(prefix);
    const int target = i < ids.size() ? ids[i] : eos_class();
    lp += std::log(dist[static_cast<std::size_t>(target)]);
    if (i < ids.size()) prefix.push_back(ids[i]);
  }
  return lp;
}

double NeuralLM::score(std::span<const std::string> tokens) const {
  return score_ids(lookup_ids(vocab_, tokens));
}

std::unique_ptr<LanguageModel> NeuralLM::continued(
    const std::vector<std::vector<std::string>>& substituted,
    double weight) const {
  if (weight < 0) throw Error(ErrorCode::Config, "negative training weight");
  auto out = std::make_unique<NeuralLM>(vocab_, cfg_);
  for (auto& [name, p] : out->graph_.params())
    p.t.v = graph_.param(name).t.v;
  out->train_more(substituted, weight, cfg_.epochs);
  return out;
}

void NeuralLM::write_payload(std::ostream& out) const {
  io::write_u64(out, cfg_.embed_dim);
  io::write_u64(out, cfg_.hidden);
  io::write_i32(out, cfg_.epochs);
  io::write_i32(out, cfg_.batch);
  io::write_f64(out, cfg_.lr);
  io::write_u64(out, cfg_.seed);
  io::write_u32(out, static_cast<uint32_t>(graph_.params().size()));
  for (const auto& [name, p] : graph_.params()) {
    io::write_string(out, name);
    io::write_u64(out, p.t.v.size());
    for (double v : p.t.v) io::write_f64(out, v);
  }
}

NeuralLM NeuralLM::read_payload(std::istream& in, Vocabulary vocab) {
  NeuralLMConfig cfg;
  cfg.embed_dim = io::read_u64(in);
  cfg.hidden = io::read_u64(in);
  cfg.epochs = io::read_i32(in);
  cfg.batch = io::read_i32(in);
  cfg.lr = io::read_f64(in);
  cfg.seed = io::read_u64(in);
  NeuralLM lm(std::move(vocab), cfg);
  const uint32_t n = io::read_u32(in);
  for (uint32_t i = 0; i < n; ++i) {
    const std::string name = io::read_string(in);
    const uint64_t sz = io::read_u64(in);
    auto& p = lm.graph_.param(name);
    if (p.t.v.size() != sz)
      throw Error(ErrorCode::ShapeMismatch,
                  "stored parameter '" + name + "' has " + std::to_string(sz) +
                      " values, graph expects " + std::to_string(p.t.v.size()));
    for (auto& v : p.t.v) v = io::read_f64(in);
  }
  return lm;
}

void NeuralLM::save(const std::string& path) const { save_lm(*this, path); }

}  // namespace emo
