#include "emo/textprep.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <regex>
#include <sstream>
#include <unordered_set>

#include "emo/similarity.hpp"
#include "emo/unicode.hpp"

namespace emo {

namespace {

const std::regex kUrlRe(R"((https?://[^\s]+|www\.[^\s]+))",
                        std::regex::optimize);
const std::regex kEmailRe(R"([A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,})",
                          std::regex::optimize);
const std::regex kUserRe(R"(@\w+)", std::regex::optimize);

const std::array<const char*, kNumSpecials> kSpecialOrder = {
    kPadTok, kRareTok, kUrlTok, kEmailTok, kUserTok, kTriggerTok};

}  // namespace

std::string regex_clean(const std::string& text) {
  // URLs first (they may contain @), then emails, then bare usernames.
  std::string s = std::regex_replace(text, kUrlRe, kUrlTok);
  s = std::regex_replace(s, kEmailRe, kEmailTok);
  s = std::regex_replace(s, kUserRe, kUserTok);
  return s;
}

PrepProfile parse_profile(const std::string& s) {
  if (s == "none") return PrepProfile::None;
  if (s == "clean") return PrepProfile::Clean;
  if (s == "full-ingest") return PrepProfile::FullIngest;
  throw Error(ErrorCode::Config, "unknown preprocessing profile '" + s + "'");
}

namespace {

// Returns the length in codepoints of a special literal starting at cps[i],
// or 0. Specials are matched case-sensitively (they are stored lowercase,
// the trigger uppercase, and survive the lowercasing around them).
std::size_t match_literal(const std::vector<uint32_t>& cps, std::size_t i,
                          const char* lit) {
  std::size_t k = 0;
  for (; lit[k] != '\0'; ++k) {
    if (i + k >= cps.size() ||
        cps[i + k] != static_cast<uint32_t>(static_cast<unsigned char>(lit[k])))
      return 0;
  }
  return k;
}

std::size_t match_any_special(const std::vector<uint32_t>& cps, std::size_t i,
                              const char** which) {
  static const std::array<const char*, 5> lits = {kUrlTok, kEmailTok, kUserTok,
                                                  kRareTok, kPadTok};
  for (const char* lit : lits) {
    const std::size_t n = match_literal(cps, i, lit);
    if (n > 0) {
      *which = lit;
      return n;
    }
  }
  return 0;
}

}  // namespace

TokenizeResult tokenize_ex(const std::string& text) {
  TokenizeResult res;
  const std::vector<uint32_t> cps = decode_utf8(text);
  std::string word;  // current in-progress word token

  auto flush = [&] {
    if (!word.empty()) {
      res.tokens.push_back(std::move(word));
      word.clear();
    }
  };

  std::size_t i = 0;
  while (i < cps.size()) {
    const uint32_t cp = cps[i];

    const std::size_t trig = match_literal(cps, i, kTriggerTok);
    if (trig > 0) {
      // Glued leading characters become the prefix of one trigger token.
      if (!word.empty()) {
        if (res.trigger_positions.empty() && !res.trigger_prefix)
          res.trigger_prefix = word;
        word.clear();
      }
      res.trigger_positions.push_back(res.tokens.size());
      res.tokens.emplace_back(kTriggerTok);
      i += trig;
      continue;
    }

    const char* which = nullptr;
    const std::size_t sp = match_any_special(cps, i, &which);
    if (sp > 0) {
      flush();
      res.tokens.emplace_back(which);
      i += sp;
      continue;
    }

    if (cp_is_space(cp)) {
      flush();
      ++i;
      continue;
    }
    if (cp_is_emoji(cp)) {
      flush();
      std::string t;
      append_utf8(t, cp);
      res.tokens.push_back(std::move(t));
      ++i;
      continue;
    }
    if (cp_is_ascii_punct(cp)) {
      // Apostrophe glues to following letters: "i'm" -> "i", "'m".
      if (cp == '\'' && !word.empty() && i + 1 < cps.size() &&
          !cp_is_space(cps[i + 1]) && !cp_is_ascii_punct(cps[i + 1]) &&
          !cp_is_emoji(cps[i + 1])) {
        flush();
        word.push_back('\'');
        ++i;
        continue;
      }
      flush();
      std::string t;
      append_utf8(t, cp);
      res.tokens.push_back(std::move(t));
      ++i;
      continue;
    }
    append_utf8(word, cp_to_lower(cp));
    ++i;
  }
  flush();
  return res;
}

std::vector<std::string> tokenize(const std::string& text) {
  return tokenize_ex(text).tokens;
}

std::vector<std::string> dedup_corpus(const std::vector<std::string>& tweets,
                                      double threshold, Exec exec) {
  std::vector<std::string> out;
  std::vector<std::vector<uint32_t>> retained_cp;
  std::unordered_set<std::string> seen;
  for (const std::string& t : tweets) {
    if (!seen.insert(t).second) continue;  // exact duplicate
    const std::vector<uint32_t> cp = decode_utf8(t);
    std::atomic<bool> similar{false};
    par::parallel_for(
        retained_cp.size(), exec,
        [&](std::size_t j) {
          if (similar.load(std::memory_order_relaxed)) return;
          if (similarity_cp(cp, retained_cp[j]) >= threshold)
            similar.store(true, std::memory_order_relaxed);
        },
        8);
    if (!similar.load()) {
      out.push_back(t);
      retained_cp.push_back(cp);
    }
  }
  return out;
}

Vocabulary::Vocabulary() {
  for (const char* s : kSpecialOrder) {
    token_to_id_.emplace(s, static_cast<int>(id_to_token_.size()));
    id_to_token_.emplace_back(s);
  }
}

int Vocabulary::lookup(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? rare_id() : it->second;
}

bool Vocabulary::contains(const std::string& token) const {
  return token_to_id_.count(token) > 0;
}

void Vocabulary::add(const std::string& token) {
  if (token_to_id_.count(token)) return;
  token_to_id_.emplace(token, static_cast<int>(id_to_token_.size()));
  id_to_token_.push_back(token);
}

uint64_t Vocabulary::hash() const {
  uint64_t h = 1469598103934665603ULL;
  for (const std::string& t : id_to_token_) {
    for (char c : t) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
    h ^= '\n';
    h *= 1099511628211ULL;
  }
  return h;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::Io, "cannot write vocabulary to " + path);
  for (const std::string& t : id_to_token_) f << t << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::Io, "cannot read vocabulary from " + path);
  Vocabulary v;
  std::string line;
  int id = 0;
  while (std::getline(f, line)) {
    if (id < kNumSpecials) {
      if (line != v.id_to_token_[id])
        throw Error(ErrorCode::Format,
                    "vocabulary file must list specials first; line " +
                        std::to_string(id + 1) + " is '" + line + "'");
    } else {
      v.add(line);
    }
    ++id;
  }
  if (id < kNumSpecials)
    throw Error(ErrorCode::Format, "vocabulary file too short: " + path);
  v.max_size_ = std::max<std::size_t>(v.id_to_token_.size(), kNumSpecials);
  return v;
}

Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpus,
                       std::size_t max_size) {
  if (max_size <= static_cast<std::size_t>(kNumSpecials))
    throw Error(ErrorCode::Config,
                "vocabulary max_size must exceed the special-token count");
  Vocabulary v;
  v.set_max_size(max_size);
  std::unordered_map<std::string, std::int64_t> freq;
  for (const auto& sent : corpus)
    for (const auto& tok : sent)
      if (!v.contains(tok)) ++freq[tok];
  std::vector<std::pair<std::string, std::int64_t>> ranked(freq.begin(),
                                                           freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  const std::size_t keep = max_size - kNumSpecials;
  for (std::size_t i = 0; i < ranked.size() && i < keep; ++i)
    v.add(ranked[i].first);
  return v;
}

namespace {

std::optional<Tweet> parse_line(const std::string& line, std::size_t lineno,
                                const LoadOptions& opts,
                                std::vector<LineError>& errors,
                                DatasetStats& stats) {
  auto fail = [&](ErrorCode code, const std::string& msg) -> std::optional<Tweet> {
    if (opts.strict)
      throw Error(code, "line " + std::to_string(lineno) + ": " + msg);
    errors.push_back({lineno, code, msg});
    ++stats.skipped;
    return std::nullopt;
  };

  const std::size_t tab = line.find('\t');
  if (tab == std::string::npos)
    return fail(ErrorCode::BadRecord, "expected 'label<TAB>text'");

  const std::string label_str = line.substr(0, tab);
  const std::string text = line.substr(tab + 1);

  std::optional<EmotionLabel> label;
  if (!label_str.empty()) {
    label = parse_label(label_str);
    if (!label)
      return fail(ErrorCode::UnknownLabel, "unknown label '" + label_str + "'");
  }

  Tweet tw;
  tw.id = std::to_string(lineno);
  tw.raw_text = text;
  tw.label = label;

  const std::string prepped =
      opts.profile == PrepProfile::None ? text : regex_clean(text);
  TokenizeResult tok = tokenize_ex(prepped);

  if (opts.require_trigger) {
    if (tok.trigger_positions.empty())
      return fail(ErrorCode::MissingTrigger, "no trigger placeholder");
    if (tok.trigger_positions.size() > 1)
      return fail(ErrorCode::DuplicateTrigger, "multiple trigger placeholders");
  }
  if (tok.tokens.empty()) return fail(ErrorCode::BadRecord, "empty text");

  tw.tokens = std::move(tok.tokens);
  if (!tok.trigger_positions.empty())
    tw.trigger_index = tok.trigger_positions.front();
  tw.trigger_prefix = std::move(tok.trigger_prefix);
  truncate_tokens(tw.tokens, tw.trigger_index, opts.max_len);

  ++stats.total;
  if (label)
    ++stats.per_label[static_cast<int>(*label)];
  else
    ++stats.unlabeled;
  return tw;
}

}  // namespace

LoadedDataset parse_iest_lines(const std::vector<std::string>& lines,
                               const LoadOptions& opts) {
  LoadedDataset ds;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto tw = parse_line(lines[i], i + 1, opts, ds.errors, ds.stats);
    if (tw) ds.tweets.push_back(std::move(*tw));
  }
  return ds;
}

LoadedDataset load_iest_dataset(const std::string& path,
                                const LoadOptions& opts) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::Io, "cannot open dataset " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return parse_iest_lines(lines, opts);
}

void save_iest_dataset(const std::vector<Tweet>& tweets,
                       const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::Io, "cannot write dataset " + path);
  for (const Tweet& t : tweets) {
    f << (t.label ? label_name(*t.label) : "") << '\t' << t.raw_text << '\n';
  }
}

bool detect_trigger_prefix(const Tweet& tweet) {
  if (!tweet.trigger_index)
    throw Error(ErrorCode::NoTrigger, "tweet " + tweet.id + " has no trigger");
  const std::size_t pos = tweet.raw_text.find(kTriggerTok);
  if (pos == std::string::npos || pos == 0) return false;
  const char before = tweet.raw_text[pos - 1];
  return before != ' ' && before != '\t' && before != '\n' && before != '\r';
}

void truncate_tokens(std::vector<std::string>& tokens,
                     std::optional<std::size_t>& trigger_index,
                     std::size_t max_len) {
  if (tokens.size() <= max_len || max_len == 0) return;
  std::size_t start = 0;
  if (trigger_index && *trigger_index >= max_len) {
    // Centered window that always contains the trigger.
    start = *trigger_index - max_len / 2;
    start = std::min(start, tokens.size() - max_len);
  }
  tokens = std::vector<std::string>(tokens.begin() + start,
                                    tokens.begin() + start + max_len);
  if (trigger_index) *trigger_index -= start;
}

}  // namespace emo
