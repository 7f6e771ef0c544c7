#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include "emo/lm.hpp"
#include "emo/serialize.hpp"

namespace emo {

std::vector<double> LanguageModel::score_batch(
    const std::vector<std::vector<std::string>>& batch, Exec exec) const {
  std::vector<double> out(batch.size());
  par::parallel_for(
      batch.size(), exec,
      [&](std::size_t i) { out[i] = score(batch[i]); }, 1);
  return out;
}

namespace {

void check_ngram_options(const NgramOptions& opts) {
  if (opts.order < 1)
    throw Error(ErrorCode::Config, "n-gram order must be >= 1");
  if (opts.discount < 0.0 || opts.discount >= 1.0)
    throw Error(ErrorCode::Config,
                "discount must be in [0,1); 0 is the exact-ML test mode");
}

}  // namespace

NgramModel::NgramModel(Vocabulary vocab, NgramOptions opts)
    : vocab_(std::move(vocab)), opts_(opts) {
  check_ngram_options(opts_);
  vocab_size_ = vocab_->size();
  tables_.resize(opts_.order);
}

NgramModel::NgramModel(int vocab_size, NgramOptions opts) : opts_(opts) {
  check_ngram_options(opts_);
  if (vocab_size < 1)
    throw Error(ErrorCode::Config, "vocab_size must be positive");
  vocab_size_ = vocab_size;
  tables_.resize(opts_.order);
}

const Vocabulary& NgramModel::vocabulary() const {
  if (!vocab_)
    throw Error(ErrorCode::Config, "raw-id n-gram model has no vocabulary");
  return *vocab_;
}

std::vector<int> NgramModel::to_ids(
    std::span<const std::string> tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  if (vocab_) {
    for (const auto& t : tokens) ids.push_back(vocab_->lookup(t));
  } else {
    throw Error(ErrorCode::Config,
                "raw-id n-gram model cannot score token strings");
  }
  return ids;
}

void NgramModel::add_sentence(std::span<const std::string> tokens,
                              double weight) {
  add_sentence_ids(to_ids(tokens), weight);
}

void NgramModel::add_sentence_ids(std::span<const int> ids, double weight) {
  if (ids.empty()) throw Error(ErrorCode::EmptyInput, "empty sentence");
  if (weight < 0)
    throw Error(ErrorCode::Config, "negative training weight");
  if (weight == 0) return;
  const double d = opts_.discount;

  // Padded event stream: (order-1) BOS markers, tokens, optional EOS.
  std::vector<int> ev;
  ev.reserve(ids.size() + opts_.order);
  for (int k = 0; k + 1 < opts_.order; ++k) ev.push_back(bos_id());
  ev.insert(ev.end(), ids.begin(), ids.end());
  if (opts_.include_eos) ev.push_back(eos_id());

  const std::size_t first = static_cast<std::size_t>(opts_.order) - 1;
  for (std::size_t pos = first; pos < ev.size(); ++pos) {
    const int w = ev[pos];
    for (int k = 1; k <= opts_.order; ++k) {
      std::vector<int> ctx(ev.begin() + pos - (k - 1), ev.begin() + pos);
      Cell& cell = tables_[k - 1][ctx];
      double& cnt = cell.words[w];
      cell.discount_mass += std::min(cnt + weight, d) - std::min(cnt, d);
      cnt += weight;
      cell.total += weight;
    }
  }
}

NgramModel NgramModel::train(
    const std::vector<std::vector<std::string>>& corpus,
    const Vocabulary& vocab, NgramOptions opts) {
  if (corpus.empty()) throw Error(ErrorCode::EmptyCorpus, "empty corpus");
  NgramModel m(vocab, opts);
  for (const auto& sent : corpus)
    if (!sent.empty()) m.add_sentence(sent);
  return m;
}

NgramModel train_ngram(const std::vector<std::vector<std::string>>& corpus,
                       const Vocabulary& vocab, int order, double discount) {
  NgramOptions opts;
  opts.order = order;
  opts.discount = discount;
  return NgramModel::train(corpus, vocab, opts);
}

double NgramModel::level_prob(int level, int word,
                              std::span<const int> context) const {
  const double uniform = 1.0 / static_cast<double>(event_count());
  if (level == 0) return uniform;
  const std::vector<int> key(context.end() - (level - 1), context.end());
  const Table& table = tables_[level - 1];
  auto it = table.find(key);
  if (it == table.end() || it->second.total <= 0)
    return level_prob(level - 1, word, context);
  const Cell& cell = it->second;
  const double d = opts_.discount;
  double cnt = 0;
  auto wit = cell.words.find(word);
  if (wit != cell.words.end()) cnt = wit->second;
  const double pml = std::max(cnt - d, 0.0) / cell.total;
  const double lambda = cell.discount_mass / cell.total;
  if (lambda == 0) return pml;
  return pml + lambda * level_prob(level - 1, word, context);
}

double NgramModel::cond_prob(int word, std::span<const int> context) const {
  const int use = std::min<int>(opts_.order - 1, context.size());
  std::span<const int> ctx = context.subspan(context.size() - use);
  return level_prob(use + 1, word, ctx);
}

double NgramModel::score_ids(std::span<const int> ids) const {
  if (ids.empty()) throw Error(ErrorCode::EmptyInput, "empty sentence");
  std::vector<int> ev;
  ev.reserve(ids.size() + opts_.order);
  for (int k = 0; k + 1 < opts_.order; ++k) ev.push_back(bos_id());
  ev.insert(ev.end(), ids.begin(), ids.end());
  if (opts_.include_eos) ev.push_back(eos_id());
  const std::size_t first = static_cast<std::size_t>(opts_.order) - 1;
  double lp = 0;
  for (std::size_t pos = first; pos < ev.size(); ++pos) {
    std::span<const int> ctx(ev.data() + pos - (opts_.order - 1),
                             static_cast<std::size_t>(opts_.order - 1));
    lp += std::log(level_prob(opts_.order, ev[pos], ctx));
  }
  return lp;
}

double NgramModel::score(std::span<const std::string> tokens) const {
  return score_ids(to_ids(tokens));
}

double NgramModel::count(std::span<const int> context, int word) const {
  if (context.size() + 1 > static_cast<std::size_t>(opts_.order)) return 0;
  const std::vector<int> key(context.begin(), context.end());
  const Table& table = tables_[context.size()];
  auto it = table.find(key);
  if (it == table.end()) return 0;
  auto wit = it->second.words.find(word);
  return wit == it->second.words.end() ? 0 : wit->second;
}

double NgramModel::context_total(std::span<const int> context) const {
  if (context.size() + 1 > static_cast<std::size_t>(opts_.order)) return 0;
  const std::vector<int> key(context.begin(), context.end());
  const Table& table = tables_[context.size()];
  auto it = table.find(key);
  return it == table.end() ? 0 : it->second.total;
}

std::unique_ptr<LanguageModel> NgramModel::continued(
    const std::vector<std::vector<std::string>>& substituted,
    double weight) const {
  auto out = std::make_unique<NgramModel>(*this);
  for (const auto& sent : substituted)
    if (!sent.empty()) out->add_sentence(sent, weight);
  return out;
}

uint64_t NgramModel::vocabulary_hash() const {
  return vocab_ ? vocab_->hash() : 0;
}

void NgramModel::write_payload(std::ostream& out) const {
  io::write_u32(out, static_cast<uint32_t>(opts_.order));
  io::write_f64(out, opts_.discount);
  io::write_u8(out, opts_.include_eos ? 1 : 0);
  io::write_u32(out, static_cast<uint32_t>(vocab_size_));
  for (int k = 1; k <= opts_.order; ++k) {
    const Table& table = tables_[k - 1];
    // Deterministic on-disk order.
    std::vector<const std::pair<const std::vector<int>, Cell>*> entries;
    entries.reserve(table.size());
    for (const auto& e : table) entries.push_back(&e);
    std::sort(entries.begin(), entries.end(),
              [](const auto* a, const auto* b) { return a->first < b->first; });
    io::write_u64(out, entries.size());
    for (const auto* e : entries) {
      io::write_u16(out, static_cast<uint16_t>(e->first.size()));
      for (int id : e->first) io::write_i32(out, id);
      io::write_f64(out, e->second.total);
      io::write_f64(out, e->second.discount_mass);
      std::vector<std::pair<int, double>> words(e->second.words.begin(),
                                                e->second.words.end());
      std::sort(words.begin(), words.end());
      io::write_u64(out, words.size());
      for (const auto& [id, cnt] : words) {
        io::write_i32(out, id);
        io::write_f64(out, cnt);
      }
    }
  }
}

NgramModel NgramModel::read_payload(std::istream& in, Vocabulary vocab) {
  NgramOptions opts;
  opts.order = static_cast<int>(io::read_u32(in));
  opts.discount = io::read_f64(in);
  opts.include_eos = io::read_u8(in) != 0;
  const int vocab_size = static_cast<int>(io::read_u32(in));
  NgramModel m(std::move(vocab), opts);
  if (m.vocab_size_ != vocab_size)
    throw Error(ErrorCode::SchemaMismatch,
                "model vocabulary size " + std::to_string(vocab_size) +
                    " != supplied " + std::to_string(m.vocab_size_));
  for (int k = 1; k <= opts.order; ++k) {
    const uint64_t n = io::read_u64(in);
    for (uint64_t i = 0; i < n; ++i) {
      const uint16_t clen = io::read_u16(in);
      std::vector<int> ctx(clen);
      for (auto& id : ctx) id = io::read_i32(in);
      Cell cell;
      cell.total = io::read_f64(in);
      cell.discount_mass = io::read_f64(in);
      const uint64_t nw = io::read_u64(in);
      for (uint64_t j = 0; j < nw; ++j) {
        const int id = io::read_i32(in);
        cell.words[id] = io::read_f64(in);
      }
      m.tables_[k - 1].emplace(std::move(ctx), std::move(cell));
    }
  }
  return m;
}

void NgramModel::save(const std::string& path) const { save_lm(*this, path); }

TableLM TableLM::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::Io, "cannot open table LM " + path);
  std::unordered_map<std::string, double> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const std::size_t tab = line.rfind('\t');
    if (tab == std::string::npos)
      throw Error(ErrorCode::Format, "table LM line " + std::to_string(lineno) +
                                         ": expected 'text<TAB>logprob'");
    entries[line.substr(0, tab)] = std::stod(line.substr(tab + 1));
  }
  return TableLM(std::move(entries));
}

double TableLM::score(std::span<const std::string> tokens) const {
  if (tokens.empty()) throw Error(ErrorCode::EmptyInput, "empty sentence");
  std::string key;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) key += ' ';
    key += tokens[i];
  }
  auto it = entries_.find(key);
  if (it == entries_.end())
    throw Error(ErrorCode::UnknownId, "sentence not in table: '" + key + "'");
  return it->second;
}

std::unique_ptr<LanguageModel> TableLM::continued(
    const std::vector<std::vector<std::string>>&, double) const {
  throw Error(ErrorCode::Config, "table backend cannot be retrained");
}

void TableLM::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::Io, "cannot write table LM " + path);
  std::vector<std::pair<std::string, double>> rows(entries_.begin(),
                                                   entries_.end());
  std::sort(rows.begin(), rows.end());
  for (const auto& [k, v] : rows) f << k << '\t' << v << '\n';
}

}  // namespace emo
