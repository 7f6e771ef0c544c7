#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "emo/features.hpp"
#include "testutil.hpp"

using namespace emo;

namespace {

struct Fixture {
  Tweet tweet = testutil::make_tweet("1", "I was un[#TRIGGERWORD#] today",
                                     EmotionLabel::Sadness);
  TableLM lm{[] {
    std::unordered_map<std::string, double> t;
    const EmotionLexicon& lex = EmotionLexicon::builtin();
    double s = -10.0;
    for (int e = 0; e < kNumEmotions; ++e)
      for (const auto& w : lex.words(EmotionLabel(e)))
        t["i was un" + w + " today"] = s -= 0.25;
    return t;
  }()};
  ClozeResult r1, r2;
  Fixture() {
    r1 = classify(tweet, lm, EmotionLexicon::builtin());
    r2 = r1;
  }
};

}  // namespace

TEST_CASE("feature schema: widths with and without externals") {
  const auto core = FeatureSchema::make(EmotionLexicon::builtin());
  CHECK(core.width() == 6 + 6 + 44 + 44 + 1 + 1 + 1);  // 103
  CHECK(core.optional_count() == 0);

  const auto full = FeatureSchema::make(
      EmotionLexicon::builtin(),
      {"semeval_t1", "semeval_t5", "universal", "deepmoji"});
  CHECK(full.width() == 103 + 4 + 11 + 3584 + 2304);  // 6006
  CHECK(full.optional_count() == 4);
}

TEST_CASE("feature schema: hash tracks widths, order and lexicon") {
  const auto a = FeatureSchema::make(EmotionLexicon::builtin());
  const auto b = FeatureSchema::make(EmotionLexicon::builtin());
  CHECK(a.hash() == b.hash());

  const auto with_t1 =
      FeatureSchema::make(EmotionLexicon::builtin(), {"semeval_t1"});
  CHECK(a.hash() != with_t1.hash());

  EmotionLexicon tweaked = EmotionLexicon::builtin();
  auto words = tweaked.words(EmotionLabel::Joy);
  words.push_back("gleeful");
  tweaked.set_words(EmotionLabel::Joy, words);
  CHECK(FeatureSchema::make(tweaked).hash() != a.hash());
}

TEST_CASE("assemble: core layout and purity") {
  Fixture fx;
  const auto schema = FeatureSchema::make(EmotionLexicon::builtin());
  const FeatureVector fv = assemble(fx.tweet, fx.r1, fx.r2, schema);
  CHECK(fv.values.size() == 103);
  CHECK(fv.presence.empty());

  // probability blocks are in place and sum to one
  const auto [p1off, p1w] = schema.block_range("lm1_probs");
  double sum = 0;
  for (std::size_t j = 0; j < p1w; ++j) sum += fv.values[p1off + j];
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));

  // prefix bit delegates to detect_trigger_prefix (glued "un")
  const auto [pboff, pbw] = schema.block_range("prefix_bit");
  CHECK(pbw == 1);
  CHECK(fv.values[pboff] == 1.0);

  // complexity lands in its slot
  const auto [c1off, c1w] = schema.block_range("lm1_complexity");
  CHECK(fv.values[c1off] == fx.r1.complexity);

  // purity: same inputs, identical output
  const FeatureVector again = assemble(fx.tweet, fx.r1, fx.r2, schema);
  CHECK(again.values == fv.values);
}

TEST_CASE("assemble: lexicon mismatch is rejected") {
  Fixture fx;
  EmotionLexicon small;
  small.set_words(EmotionLabel::Joy, {"happy"});
  const auto schema = FeatureSchema::make(small);
  CHECK_THROWS_WITH_AS(assemble(fx.tweet, fx.r1, fx.r2, schema),
                       doctest::Contains("SchemaMismatch"), Error);
}

TEST_CASE("assemble: optional blocks fill, zero-fill and mask") {
  Fixture fx;
  const auto schema =
      FeatureSchema::make(EmotionLexicon::builtin(), {"semeval_t1"});
  CHECK(schema.width() == 107);

  std::map<std::string, ExternalBlock> blocks;
  ExternalBlock blk;
  blk.rows["1"] = {0.25, 0.25, 0.25, 0.25};
  blocks["semeval_t1"] = blk;

  const FeatureVector with = assemble(fx.tweet, fx.r1, fx.r2, schema, &blocks);
  const auto [off, w] = schema.block_range("semeval_t1");
  CHECK(with.values[off] == 0.25);
  REQUIRE(with.presence.size() == 1);
  CHECK(with.presence[0] == 1.0);

  // absent row -> zero fill + presence 0; prob blocks unaffected
  blocks["semeval_t1"].rows.clear();
  const FeatureVector without =
      assemble(fx.tweet, fx.r1, fx.r2, schema, &blocks);
  for (std::size_t j = 0; j < w; ++j) CHECK(without.values[off + j] == 0.0);
  CHECK(without.presence[0] == 0.0);
  const auto [p1off, p1w] = schema.block_range("lm1_probs");
  double sum = 0;
  for (std::size_t j = 0; j < p1w; ++j) sum += without.values[p1off + j];
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("load_external_block") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path();

  SUBCASE("well-formed file resolves all ids") {
    const auto path = (dir / "emo_blk_ok.tsv").string();
    std::ofstream(path) << "#width=4 name=semeval_t1\n"
                        << "1\t0.1\t0.2\t0.3\t0.4\n"
                        << "2\t0.5\t0.5\t0\t0\n"
                        << "3\t1\t0\t0\t0\n";
    const auto blk = load_external_block(path, 4, {"1", "2", "3"},
                                         MissingIdPolicy::Error);
    CHECK(blk.rows.size() == 3);
    CHECK(blk.rows.at("2")[1] == 0.5);
    CHECK(blk.zero_filled.empty());
  }
  SUBCASE("row width mismatch names the row") {
    const auto path = (dir / "emo_blk_w.tsv").string();
    std::ofstream(path) << "#width=4 name=semeval_t1\n"
                        << "1\t0.1\t0.2\t0.3\n";
    CHECK_THROWS_WITH_AS(
        load_external_block(path, 4, {"1"}, MissingIdPolicy::Error),
        doctest::Contains("WidthMismatch"), Error);
  }
  SUBCASE("header width must match the expectation") {
    const auto path = (dir / "emo_blk_h.tsv").string();
    std::ofstream(path) << "#width=3 name=semeval_t1\n1\t1\t2\t3\n";
    CHECK_THROWS_AS(load_external_block(path, 4, {}, MissingIdPolicy::Error),
                    Error);
  }
  SUBCASE("duplicate ids are rejected") {
    const auto path = (dir / "emo_blk_d.tsv").string();
    std::ofstream(path) << "#width=2 name=semeval_t1\n"
                        << "1\t1\t2\n1\t3\t4\n";
    CHECK_THROWS_WITH_AS(
        load_external_block(path, 2, {"1"}, MissingIdPolicy::Error),
        doctest::Contains("DuplicateId"), Error);
  }
  SUBCASE("missing id policy") {
    const auto path = (dir / "emo_blk_m.tsv").string();
    std::ofstream(path) << "#width=2 name=semeval_t1\n1\t1\t2\n";
    CHECK_THROWS_WITH_AS(
        load_external_block(path, 2, {"1", "9"}, MissingIdPolicy::Error),
        doctest::Contains("UnknownId"), Error);
    const auto blk =
        load_external_block(path, 2, {"1", "9"}, MissingIdPolicy::ZeroFill);
    CHECK(blk.rows.at("9") == std::vector<double>{0.0, 0.0});
    CHECK(blk.zero_filled.count("9") == 1);
  }
}

TEST_CASE("feature matrix: file round trip and schema hash check") {
  namespace fs = std::filesystem;
  Fixture fx;
  const auto schema = FeatureSchema::make(EmotionLexicon::builtin());
  FeatureMatrix m;
  m.schema_hash = schema.hash();
  m.width = schema.width();
  m.presence_width = 0;
  m.ids = {"1"};
  m.rows = {assemble(fx.tweet, fx.r1, fx.r2, schema)};

  const auto path = (fs::temp_directory_path() / "emo_feats.tsv").string();
  save_feature_matrix(m, path);
  const FeatureMatrix r = load_feature_matrix(path, schema.hash());
  REQUIRE(r.ids == m.ids);
  CHECK(r.rows[0].values == m.rows[0].values);

  CHECK_THROWS_WITH_AS(load_feature_matrix(path, schema.hash() + 1),
                       doctest::Contains("SchemaMismatch"), Error);
}
