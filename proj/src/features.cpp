#include "emo/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace emo {

namespace {

uint64_t fnv1a(const std::string& s, uint64_t h) {
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

const std::map<std::string, std::size_t> kExternalWidths = {
    {"semeval_t1", 4},
    {"semeval_t5", 11},
    {"universal", 7 * 512},
    {"deepmoji", 2304},
};

}  // namespace

const std::vector<std::string>& FeatureSchema::known_externals() {
  static const std::vector<std::string> names = {"semeval_t1", "semeval_t5",
                                                 "universal", "deepmoji"};
  return names;
}

FeatureSchema FeatureSchema::make(const EmotionLexicon& lexicon,
                                  const std::vector<std::string>& externals) {
  FeatureSchema s;
  s.emotion_count_ = lexicon.emotions().size();
  s.lexicon_words_ = lexicon.total_words();
  s.blocks_ = {
      {"lm1_probs", s.emotion_count_, false},
      {"lm2_probs", s.emotion_count_, false},
      {"lm1_shifted", s.lexicon_words_, false},
      {"lm2_shifted", s.lexicon_words_, false},
      {"lm1_complexity", 1, false},
      {"lm2_complexity", 1, false},
      {"prefix_bit", 1, false},
  };
  // Externals keep the canonical order regardless of how they were listed.
  for (const auto& name : known_externals()) {
    const bool enabled = std::find(externals.begin(), externals.end(), name) !=
                         externals.end();
    if (enabled) s.blocks_.push_back({name, kExternalWidths.at(name), true});
  }
  for (const auto& name : externals)
    if (!kExternalWidths.count(name))
      throw Error(ErrorCode::Config, "unknown external block '" + name + "'");

  uint64_t h = 1469598103934665603ULL;
  for (const auto& b : s.blocks_) {
    h = fnv1a(b.name, h);
    h = fnv1a(":" + std::to_string(b.width) + ";", h);
    s.width_ += b.width;
    if (b.optional) ++s.optional_count_;
  }
  h = fnv1a("|lexicon|" + lexicon.canonical_string(), h);
  s.hash_ = h;
  return s;
}

bool FeatureSchema::has_block(const std::string& name) const {
  for (const auto& b : blocks_)
    if (b.name == name) return true;
  return false;
}

std::pair<std::size_t, std::size_t> FeatureSchema::block_range(
    const std::string& name) const {
  std::size_t off = 0;
  for (const auto& b : blocks_) {
    if (b.name == name) return {off, b.width};
    off += b.width;
  }
  throw Error(ErrorCode::MissingBlock,
              "schema has no block named '" + name + "'");
}

std::size_t FeatureSchema::optional_index(const std::string& name) const {
  std::size_t idx = 0;
  for (const auto& b : blocks_) {
    if (!b.optional) continue;
    if (b.name == name) return idx;
    ++idx;
  }
  throw Error(ErrorCode::MissingBlock,
              "schema has no optional block named '" + name + "'");
}

ExternalBlock load_external_block(const std::string& path,
                                  std::size_t expected_width,
                                  const std::vector<std::string>& ids,
                                  MissingIdPolicy policy) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::Io, "cannot open external block " + path);
  std::string header;
  if (!std::getline(f, header) || header.rfind("#width=", 0) != 0)
    throw Error(ErrorCode::Format,
                "external block must start with '#width=W name=<block>'");
  const std::size_t sp = header.find(' ');
  const std::size_t file_width =
      std::stoul(header.substr(7, sp == std::string::npos ? std::string::npos
                                                          : sp - 7));
  if (file_width != expected_width)
    throw Error(ErrorCode::WidthMismatch,
                "block width " + std::to_string(file_width) + " != expected " +
                    std::to_string(expected_width) + " in " + path);

  ExternalBlock out;
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string id, cell;
    if (!std::getline(ss, id, '\t'))
      throw Error(ErrorCode::Format,
                  "row " + std::to_string(lineno) + ": missing id");
    std::vector<double> row;
    row.reserve(expected_width);
    while (std::getline(ss, cell, '\t')) row.push_back(std::stod(cell));
    if (row.size() != expected_width)
      throw Error(ErrorCode::WidthMismatch,
                  "row " + std::to_string(lineno) + " has width " +
                      std::to_string(row.size()) + ", expected " +
                      std::to_string(expected_width));
    if (!out.rows.emplace(id, std::move(row)).second)
      throw Error(ErrorCode::DuplicateId,
                  "duplicate id '" + id + "' at row " + std::to_string(lineno));
  }
  for (const auto& id : ids) {
    if (out.rows.count(id)) continue;
    if (policy == MissingIdPolicy::Error)
      throw Error(ErrorCode::UnknownId,
                  "id '" + id + "' has no row in " + path);
    out.rows.emplace(id, std::vector<double>(expected_width, 0.0));
    out.zero_filled.insert(id);
  }
  return out;
}

namespace {

void check_cloze_matches_schema(const char* which, const ClozeResult& r,
                                const FeatureSchema& schema) {
  if (r.probs.size() != schema.emotion_count() ||
      r.candidates.size() != schema.lexicon_words())
    throw Error(ErrorCode::SchemaMismatch,
                std::string(which) +
                    " cloze result does not match the schema lexicon (" +
                    std::to_string(r.candidates.size()) + " candidates vs " +
                    std::to_string(schema.lexicon_words()) + ")");
}

}  // namespace

FeatureVector assemble(const Tweet& tweet, const ClozeResult& lm1,
                       const ClozeResult& lm2, const FeatureSchema& schema,
                       const std::map<std::string, ExternalBlock>* externals) {
  check_cloze_matches_schema("lm1", lm1, schema);
  check_cloze_matches_schema("lm2", lm2, schema);

  FeatureVector fv;
  fv.values.assign(schema.width(), 0.0);
  fv.presence.assign(schema.optional_count(), 0.0);

  auto put = [&](const std::string& block, const double* src, std::size_t n) {
    const auto [off, width] = schema.block_range(block);
    if (n != width)
      throw Error(ErrorCode::WidthMismatch,
                  "block '" + block + "' expects width " +
                      std::to_string(width) + ", got " + std::to_string(n));
    std::copy(src, src + n, fv.values.begin() + off);
  };

  put("lm1_probs", lm1.probs.data(), lm1.probs.size());
  put("lm2_probs", lm2.probs.data(), lm2.probs.size());
  std::vector<double> shifted(schema.lexicon_words());
  for (std::size_t i = 0; i < lm1.candidates.size(); ++i)
    shifted[i] = lm1.candidates[i].shifted;
  put("lm1_shifted", shifted.data(), shifted.size());
  for (std::size_t i = 0; i < lm2.candidates.size(); ++i)
    shifted[i] = lm2.candidates[i].shifted;
  put("lm2_shifted", shifted.data(), shifted.size());
  put("lm1_complexity", &lm1.complexity, 1);
  put("lm2_complexity", &lm2.complexity, 1);
  const double prefix_bit = detect_trigger_prefix(tweet) ? 1.0 : 0.0;
  put("prefix_bit", &prefix_bit, 1);

  for (const auto& b : schema.blocks()) {
    if (!b.optional) continue;
    const std::size_t pidx = schema.optional_index(b.name);
    const ExternalBlock* blk = nullptr;
    if (externals) {
      auto it = externals->find(b.name);
      if (it != externals->end()) blk = &it->second;
    }
    if (!blk) continue;  // zero-filled, presence 0
    auto row = blk->rows.find(tweet.id);
    if (row == blk->rows.end() || blk->zero_filled.count(tweet.id)) continue;
    put(b.name, row->second.data(), row->second.size());
    fv.presence[pidx] = 1.0;
  }
  return fv;
}

void save_feature_matrix(const FeatureMatrix& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::Io, "cannot write features " + path);
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx",
                static_cast<unsigned long long>(m.schema_hash));
  f << "#schema=" << hex << " width=" << m.width
    << " presence=" << m.presence_width << '\n';
  f.precision(17);
  for (std::size_t i = 0; i < m.ids.size(); ++i) {
    f << m.ids[i];
    for (double v : m.rows[i].values) f << '\t' << v;
    for (double v : m.rows[i].presence) f << '\t' << v;
    f << '\n';
  }
}

FeatureMatrix load_feature_matrix(const std::string& path,
                                  uint64_t expected_schema_hash) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::Io, "cannot read features " + path);
  std::string header;
  if (!std::getline(f, header) || header.rfind("#schema=", 0) != 0)
    throw Error(ErrorCode::Format, "feature file missing '#schema=' header");
  FeatureMatrix m;
  std::stringstream hs(header);
  std::string field;
  while (hs >> field) {
    if (field.rfind("#schema=", 0) == 0)
      m.schema_hash = std::stoull(field.substr(8), nullptr, 16);
    else if (field.rfind("width=", 0) == 0)
      m.width = std::stoul(field.substr(6));
    else if (field.rfind("presence=", 0) == 0)
      m.presence_width = std::stoul(field.substr(9));
  }
  if (expected_schema_hash != 0 && m.schema_hash != expected_schema_hash)
    throw Error(ErrorCode::SchemaMismatch,
                "feature file schema hash does not match the model's schema");
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, cell;
    std::getline(ss, id, '\t');
    std::vector<double> all;
    while (std::getline(ss, cell, '\t')) all.push_back(std::stod(cell));
    if (all.size() != m.width + m.presence_width)
      throw Error(ErrorCode::WidthMismatch,
                  "feature row " + std::to_string(lineno) + " has " +
                      std::to_string(all.size()) + " values, expected " +
                      std::to_string(m.width + m.presence_width));
    FeatureVector fv;
    fv.values.assign(all.begin(), all.begin() + m.width);
    fv.presence.assign(all.begin() + m.width, all.end());
    m.ids.push_back(id);
    m.rows.push_back(std::move(fv));
  }
  return m;
}

}  // namespace emo
