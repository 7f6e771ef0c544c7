#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "emo/models.hpp"
#include "testutil.hpp"

using namespace emo;

namespace {

FeatureSchema core_schema() {
  return FeatureSchema::make(EmotionLexicon::builtin());
}

EnsembleSpec tiny_spec() {
  EnsembleSpec spec;
  spec.ranges = {8, 4, 6, 4, 6, 4, 6};  // embedding 8, everything tiny
  spec.mini_per_e1 = 2;
  spec.e1_per_e2 = 2;
  spec.e2_replicas = 2;
  spec.zero_missing_blocks = true;
  return spec;
}

std::vector<TrainExample> feature_only_examples(int n, int width, int seed) {
  std::mt19937_64 rng(seed);
  std::vector<TrainExample> out;
  for (int i = 0; i < n; ++i) {
    TrainExample ex;
    ex.id = "f" + std::to_string(i);
    ex.label = i % kNumEmotions;
    ex.ids = {1, 2, 3};
    ex.bits = {0, 1, 0};
    ex.length = 3;
    ex.features.resize(width);
    for (auto& v : ex.features)
      v = std::uniform_real_distribution<double>(-1, 1)(rng);
    // plant a linear clue for the label
    ex.features[ex.label] += 2.0;
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace

TEST_CASE("mini classifier: shapes, trigger-bit width, determinism") {
  MiniAscConfig cfg;
  cfg.embedding_size = 8;
  cfg.lstm_hidden = 6;
  cfg.num_filters = 5;
  cfg.dense_size = 4;
  auto net = build_mini_asc<double>(cfg, 20, 42);

  // the LSTM consumes embedding + 1 trigger bit
  CHECK(net.graph.param("lstm.fwd.wx").t.shape ==
        std::vector<std::size_t>{9, 24});

  auto ex = testutil::make_synth_token_set(4, 20, 1, 5);
  std::vector<const TrainExample*> batch;
  for (const auto& e : ex) batch.push_back(&e);
  set_batch_inputs(net.graph, net.io, core_schema(), batch);
  net.graph.forward(ad::Mode::Eval);
  const auto& probs = net.graph.tensor(net.output);
  REQUIRE(probs.shape == std::vector<std::size_t>{4, 6});
  for (std::size_t r = 0; r < 4; ++r) {
    double sum = 0;
    for (int k = 0; k < 6; ++k) sum += probs.v[r * 6 + k];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }

  auto net2 = build_mini_asc<double>(cfg, 20, 42);
  for (const auto& [name, p] : net.graph.params())
    CHECK(p.t.v == net2.graph.param(name).t.v);
}

TEST_CASE("mini config validation lists offending fields") {
  MiniAscConfig cfg;
  cfg.lstm_hidden = 0;
  cfg.dropout = 1.5;
  try {
    cfg.validate();
    FAIL("expected config error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("lstm_hidden") != std::string::npos);
    CHECK(msg.find("dropout") != std::string::npos);
  }
  MiniAscConfig drawn;
  drawn.lstm_hidden = 64;  // outside [128,512]
  MiniRanges ranges;
  CHECK_THROWS_AS(drawn.validate(&ranges), Error);
}

TEST_CASE("sub-network: widths and degenerate inputs") {
  auto net = build_subnetwork<double>(12, 7);
  CHECK(net.graph.param("logits.w").t.shape ==
        std::vector<std::size_t>{28, 6});  // concat(12 + 16) -> 6

  ad::Tensor<double> zero({3, 12});
  net.graph.set_input("sub_in", zero);
  net.graph.forward(ad::Mode::Eval);
  const auto& probs = net.graph.tensor(net.output);
  for (std::size_t r = 0; r < 3; ++r) {
    double sum = 0;
    for (int k = 0; k < 6; ++k) {
      CHECK(probs.v[r * 6 + k] > 0);
      sum += probs.v[r * 6 + k];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("E1: seven heads, combined output is their mean") {
  auto net = build_e1<double>(tiny_spec(), core_schema(), 24, 11);
  CHECK(net.heads.size() == 2 + 3);  // tiny spec: 2 minis + 3 sub-networks

  auto ex = testutil::make_synth_token_set(3, 24, 1, 8);
  for (auto& e : ex) e.features.assign(core_schema().width(), 0.25);
  std::vector<const TrainExample*> batch;
  for (const auto& e : ex) batch.push_back(&e);
  set_batch_inputs(net.graph, net.io, core_schema(), batch);
  net.graph.forward(ad::Mode::Eval);

  const auto& combined = net.graph.tensor(net.output);
  for (std::size_t r = 0; r < 3; ++r)
    for (int k = 0; k < 6; ++k) {
      double mean = 0;
      for (const auto& head : net.heads)
        mean += net.graph.tensor(head).v[r * 6 + k] / double(net.heads.size());
      CHECK(combined.v[r * 6 + k] == doctest::Approx(mean).epsilon(1e-15));
    }
}

TEST_CASE("E1: full spec has 4 minis + 3 sub-networks = 7 heads") {
  EnsembleSpec spec = tiny_spec();
  spec.mini_per_e1 = 4;
  auto net = build_e1<double>(spec, core_schema(), 24, 3);
  CHECK(net.heads.size() == 7);
  CHECK(net.mini_configs.size() == 4);
}

TEST_CASE("E1: missing block is an error unless zero-fed") {
  EnsembleSpec spec = tiny_spec();
  spec.zero_missing_blocks = false;
  CHECK_THROWS_WITH_AS(build_e1<double>(spec, core_schema(), 24, 3),
                       doctest::Contains("MissingBlock"), Error);
}

TEST_CASE("E2: stacking widths and frozen E1 training") {
  EnsembleSpec spec = tiny_spec();
  const FeatureSchema schema = core_schema();
  auto net = build_e2<double>(spec, schema, 24, 13);

  const std::size_t e1w = spec.e1_per_e2 * 6;
  const std::size_t featw = schema.width() + schema.optional_count();
  CHECK(net.graph.param("stack/d16.w").t.shape ==
        std::vector<std::size_t>{e1w, 16});
  CHECK(net.graph.param("stack/d100.w").t.shape ==
        std::vector<std::size_t>{featw + e1w, 100});
  CHECK(net.graph.param("stack/logits.w").t.shape ==
        std::vector<std::size_t>{116, 6});

  auto ex = testutil::make_synth_token_set(8, 24, 1, 21);
  for (auto& e : ex) e.features.assign(featw, 0.1);
  std::vector<TrainExample> examples(ex.begin(), ex.end());

  // rows sum to one
  auto probs = predict_probs(net, schema, examples, 4);
  for (const auto& row : probs) {
    double sum = 0;
    for (double v : row) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }

  // freezing the E1 prefixes: one training step changes only stack params
  net.graph.freeze("e1_", true);
  const auto before = [&] {
    std::map<std::string, std::vector<double>> snap;
    for (const auto& [name, p] : net.graph.params()) snap[name] = p.t.v;
    return snap;
  }();
  TrainOptions opts;
  opts.batch = 8;
  opts.epochs_cap = 1;
  opts.patience = 0;
  opts.record_train_acc = false;
  train_classifier(net, schema, examples, {}, opts);
  for (const auto& [name, p] : net.graph.params()) {
    if (name.rfind("e1_", 0) == 0)
      CHECK(p.t.v == before.at(name));
    else
      CHECK(p.t.v != before.at(name));
  }
}

TEST_CASE("soft_vote") {
  SUBCASE("two one-hots average to a half-half") {
    const auto v = soft_vote({{1, 0, 0, 0, 0, 0}, {0, 1, 0, 0, 0, 0}});
    CHECK(v == std::vector<double>{0.5, 0.5, 0, 0, 0, 0});
  }
  SUBCASE("128 copies reproduce the distribution") {
    const std::vector<double> d = {0.3, 0.1, 0.2, 0.05, 0.15, 0.2};
    std::vector<std::vector<double>> members(128, d);
    const auto v = soft_vote(members);
    for (int k = 0; k < 6; ++k) CHECK(v[k] == doctest::Approx(d[k]));
  }
  SUBCASE("independent columnwise mean oracle on random sets") {
    std::mt19937_64 rng(3);
    for (int it = 0; it < 50; ++it) {
      const int n = 1 + int(rng() % 9);
      std::vector<std::vector<double>> dists(n, std::vector<double>(6));
      for (auto& d : dists) {
        double sum = 0;
        for (auto& v : d) {
          v = std::uniform_real_distribution<double>(0.01, 1.0)(rng);
          sum += v;
        }
        for (auto& v : d) v /= sum;
      }
      std::vector<double> expect(6, 0.0);
      for (int k = 0; k < 6; ++k) {
        for (const auto& d : dists) expect[k] += d[k];
        expect[k] /= n;
      }
      const auto got = soft_vote(dists);
      for (int k = 0; k < 6; ++k)
        CHECK(got[k] == doctest::Approx(expect[k]).epsilon(1e-12));
    }
  }
  SUBCASE("permutation invariance") {
    std::vector<std::vector<double>> dists = {
        {0.5, 0.1, 0.1, 0.1, 0.1, 0.1},
        {0.1, 0.5, 0.1, 0.1, 0.1, 0.1},
        {0.1, 0.1, 0.5, 0.1, 0.1, 0.1},
    };
    auto shuffled = dists;
    std::swap(shuffled[0], shuffled[2]);
    CHECK(soft_vote(dists) == soft_vote(shuffled));
  }
  SUBCASE("empty ensemble is an error") {
    CHECK_THROWS_WITH_AS(soft_vote({}), doctest::Contains("EmptyEnsemble"),
                         Error);
  }
}

TEST_CASE("loss is non-increasing across epochs on a separable toy") {
  // sub-network over planted linear clues, trained by hand
  auto net = build_subnetwork<double>(8, 17);
  auto examples = feature_only_examples(60, 8, 19);

  ad::AdamConfig<double> acfg;
  acfg.lr = 0.02;
  acfg.decay = 0;
  ad::Adam<double> opt(acfg);
  std::vector<double> epoch_losses;
  for (int epoch = 0; epoch < 3; ++epoch) {
    double sum = 0;
    int batches = 0;
    for (std::size_t at = 0; at < examples.size(); at += 20) {
      const std::size_t B = std::min<std::size_t>(20, examples.size() - at);
      ad::Tensor<double> in({B, 8});
      std::vector<int> gold(B);
      for (std::size_t b = 0; b < B; ++b) {
        for (int j = 0; j < 8; ++j)
          in.v[b * 8 + j] = examples[at + b].features[j];
        gold[b] = examples[at + b].label;
      }
      net.graph.set_input("sub_in", std::move(in));
      net.graph.forward(ad::Mode::Train);
      sum += ad::multi_head_loss(net.graph, net.heads, gold, true);
      ++batches;
      net.graph.backward();
      opt.step(net.graph);
    }
    epoch_losses.push_back(sum / batches);
  }
  CHECK(epoch_losses[1] <= epoch_losses[0] + 1e-6);
  CHECK(epoch_losses[2] <= epoch_losses[1] + 1e-6);
}

TEST_CASE("train_classifier: overfits a small token set and records history") {
  MiniAscConfig cfg;
  cfg.embedding_size = 12;
  cfg.lstm_hidden = 10;
  cfg.num_filters = 10;
  cfg.dense_size = 8;
  auto net = build_mini_asc<double>(cfg, 24, 31);
  auto examples = testutil::make_synth_token_set(48, 24, 1, 37);

  TrainOptions opts;
  opts.batch = 16;
  opts.epochs_cap = 60;
  opts.patience = 0;
  opts.lr = 3e-3;
  opts.decay = 0;
  opts.seed = 5;
  opts.stop_at_train_acc = 0.95;
  const TrainHistory hist = train_classifier(net, core_schema(), examples, {},
                                             opts);
  REQUIRE(!hist.epochs.empty());
  CHECK(hist.epochs.size() <= 60);
  CHECK(hist.epochs.back().train_acc >= 0.95);
  // history length equals epochs actually run
  for (std::size_t i = 0; i < hist.epochs.size(); ++i)
    CHECK(hist.epochs[i].epoch == int(i));
}

TEST_CASE("ensemble: train, manifest round trip, reproducible predictions") {
  namespace fs = std::filesystem;
  const auto dir = (fs::temp_directory_path() / "emo_ens_test").string();
  fs::remove_all(dir);

  EnsembleSpec spec = tiny_spec();
  const FeatureSchema schema = core_schema();
  Vocabulary vocab;
  for (int i = 0; i < 18; ++i) vocab.add("w" + std::to_string(i));

  auto all = testutil::make_synth_token_set(36, vocab.size(), 1, 41);
  const std::size_t featw = schema.width() + schema.optional_count();
  std::mt19937_64 rng(43);
  for (auto& e : all) {
    e.features.assign(featw, 0.0);
    for (auto& v : e.features)
      v = std::uniform_real_distribution<double>(0, 0.2)(rng);
    e.features[e.label] += 1.0;
  }
  std::vector<TrainExample> train(all.begin(), all.begin() + 24);
  std::vector<TrainExample> val(all.begin() + 24, all.end());
  for (auto& v : val) v.id = "v" + v.id;  // keep id sets disjoint

  TrainOptions opts;
  opts.batch = 12;
  opts.epochs_cap = 2;
  opts.patience = 0;
  opts.seed = 47;
  opts.record_train_acc = false;
  EnsembleModel model =
      train_ensemble<double>(spec, schema, vocab, train, val, opts, dir);
  CHECK(model.checkpoints.size() == 2);
  CHECK(fs::exists(fs::path(dir) / "manifest.json"));

  const auto probs1 = predict_ensemble<double>(model, schema, val);
  EnsembleModel reloaded = load_ensemble_manifest(dir);
  const auto probs2 = predict_ensemble<double>(reloaded, schema, val);
  REQUIRE(probs1.size() == probs2.size());
  for (std::size_t i = 0; i < probs1.size(); ++i)
    CHECK(probs1[i] == probs2[i]);  // bit-identical reload

  SUBCASE("fine-tune: epochs=0 leaves members unchanged") {
    EnsembleModel m2 = load_ensemble_manifest(dir);
    FineTuneOptions fopts;
    fopts.epochs = 0;
    fopts.holdout_fraction = 0.25;
    const FineTuneReport rep = fine_tune<double>(m2, schema, val, fopts);
    CHECK(rep.updates_per_member == 0);
    const auto probs3 = predict_ensemble<double>(m2, schema, val);
    for (std::size_t i = 0; i < probs1.size(); ++i)
      CHECK(probs1[i] == probs3[i]);
    CHECK(rep.pre_f1 == doctest::Approx(rep.post_f1));
  }
  SUBCASE("fine-tune: batch arithmetic (100 examples, batch 900 -> 4 updates)") {
    EnsembleModel m2 = load_ensemble_manifest(dir);
    std::vector<TrainExample> hundred;
    for (int i = 0; i < 100; ++i) {
      TrainExample e = val[i % val.size()];
      e.id = "h" + std::to_string(i);
      hundred.push_back(e);
    }
    FineTuneOptions fopts;
    fopts.epochs = 4;
    fopts.batch = 900;
    fopts.holdout_fraction = 0.0;
    const FineTuneReport rep = fine_tune<double>(m2, schema, hundred, fopts);
    CHECK(rep.updates_per_member == 4);
  }
  SUBCASE("fine-tune: leak detection") {
    EnsembleModel m2 = load_ensemble_manifest(dir);
    std::vector<TrainExample> leaky = val;
    leaky[0].id = train[0].id;
    FineTuneOptions fopts;
    CHECK_THROWS_WITH_AS(fine_tune<double>(m2, schema, leaky, fopts),
                         doctest::Contains("LeakDetected"), Error);
  }
}
