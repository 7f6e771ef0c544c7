// Command-line surface: prep, train-lm, continue-lm, cloze-classify,
// features, train-ensemble, fine-tune, evaluate, predict, serve-stub.
// Configuration is a JSON file plus --section.key=value overrides; every
// command writes a JSON run report with the effective config, seeds,
// metrics and timings. Exit codes: 0 ok, 2 config error, 3 data error,
// 4 numeric failure.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "emo/cloze.hpp"
#include "emo/features.hpp"
#include "emo/lm.hpp"
#include "emo/metrics.hpp"
#include "emo/models.hpp"
#include "emo/neural_lm.hpp"
#include "emo/remote.hpp"
#include "emo/textprep.hpp"
#include "json.hpp"

using nlohmann::json;
namespace fs = std::filesystem;
using namespace emo;

namespace {

// ---------------------------------------------------------------------------
// config plumbing
// ---------------------------------------------------------------------------

json default_config() {
  return json{
      {"seed", 42},
      {"threads", 0},
      {"exec", "parallel"},
      {"precision", "f64"},
      {"report", ""},
      {"prep",
       {{"input", ""}, {"output", ""}, {"vocab", ""}, {"profile", "clean"},
        {"dedup_threshold", 0.9}, {"vocab_size", 300000}}},
      {"lm",
       {{"backend", "ngram"}, {"model", ""}, {"vocab", ""}, {"table", ""},
        {"endpoint", ""}, {"max_batch", 64}, {"retries", 3},
        {"backoff_ms", 100}, {"timeout_s", 10}, {"max_inflight", 1},
        {"order", 4}, {"discount", 0.75}, {"include_eos", true},
        {"embed_dim", 32}, {"hidden", 64}, {"epochs", 8}, {"batch", 16},
        {"lr", 0.01}}},
      {"trainlm", {{"corpus", ""}, {"output", ""}, {"profile", "none"}}},
      {"continuelm",
       {{"dataset", ""}, {"output", ""}, {"weight", 1.0}, {"strict", true}}},
      {"cloze",
       {{"input", ""}, {"output", ""}, {"lexicon", "builtin"},
        {"print", false}, {"strict", true}}},
      {"features",
       {{"input", ""}, {"output", ""}, {"lm2_model", ""},
        {"semeval_t1", ""}, {"semeval_t5", ""}, {"universal", ""},
        {"deepmoji", ""}, {"missing_policy", "zero"}, {"strict", true}}},
      {"ensemble",
       {{"train", ""}, {"val", ""}, {"features_train", ""},
        {"features_val", ""}, {"dir", ""}, {"mini_per_e1", 4},
        {"e1_per_e2", 8}, {"e2_replicas", 128}, {"embedding", 1000},
        {"lstm_lo", 128}, {"lstm_hi", 512}, {"filters_lo", 128},
        {"filters_hi", 512}, {"dense_lo", 16}, {"dense_hi", 32},
        {"zero_missing_blocks", true}, {"batch", 32}, {"epochs_cap", 30},
        {"patience", 3}, {"lr", 5e-4}, {"decay", 5e-5}, {"strict", true}}},
      {"finetune",
       {{"dir", ""}, {"val", ""}, {"features", ""}, {"epochs", 4},
        {"batch", 900}, {"stack_only", false}, {"holdout", 0.1},
        {"lr", 5e-4}, {"decay", 5e-5}, {"strict", true}}},
      {"eval", {{"pred", ""}, {"gold", ""}, {"strict", true}}},
      {"predict",
       {{"model", "cloze"}, {"input", ""}, {"output", ""}, {"dir", ""},
        {"features", ""}, {"strict", true}}},
      {"serve", {{"port", 8123}, {"constant", nullptr}}},
  };
}

void set_by_path(json& cfg, const std::string& path, const json& value) {
  json* cur = &cfg;
  std::size_t start = 0;
  for (;;) {
    const std::size_t dot = path.find('.', start);
    const std::string key = path.substr(
        start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw Error(ErrorCode::Config, "bad option '" + path + "'");
    if (dot == std::string::npos) {
      (*cur)[key] = value;
      return;
    }
    cur = &(*cur)[key];
    start = dot + 1;
  }
}

json parse_override_value(const std::string& raw) {
  try {
    return json::parse(raw);
  } catch (...) {
    return json(raw);  // plain string
  }
}

json load_config(int argc, char** argv, std::string& command) {
  if (argc < 2)
    throw Error(ErrorCode::Config,
                "usage: emocloze <command> [--config=FILE] [--key=value ...]");
  command = argv[1];
  json cfg = default_config();
  // --config first so flag overrides win.
  for (int i = 2; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg.rfind("--config=", 0) == 0) {
      std::ifstream f(arg.substr(9));
      if (!f)
        throw Error(ErrorCode::Config, "cannot open config " + arg.substr(9));
      json file_cfg;
      f >> file_cfg;
      cfg.merge_patch(file_cfg);
    }
  }
  for (int i = 2; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg.rfind("--config=", 0) == 0) continue;
    if (arg.rfind("--", 0) != 0)
      throw Error(ErrorCode::Config, "unexpected argument '" + arg + "'");
    const std::size_t eq = arg.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCode::Config,
                  "options take the form --key=value: '" + arg + "'");
    set_by_path(cfg, arg.substr(2, eq - 2), parse_override_value(arg.substr(eq + 1)));
  }
  return cfg;
}

std::string req_path(const json& section, const char* key,
                     const char* what) {
  const std::string p = section.at(key).get<std::string>();
  if (p.empty())
    throw Error(ErrorCode::Config, std::string(what) + " (--" + key +
                                       ") is required");
  return p;
}

void ensure_parent_dir(const std::string& path) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

// ---------------------------------------------------------------------------
// shared pieces
// ---------------------------------------------------------------------------

EmotionLexicon open_lexicon(const json& cfg) {
  const std::string spec = cfg.at("cloze").at("lexicon").get<std::string>();
  if (spec.empty() || spec == "builtin") return EmotionLexicon::builtin();
  return EmotionLexicon::from_file(spec);
}

Vocabulary open_vocab(const json& lm) {
  return Vocabulary::load(req_path(lm, "vocab", "vocabulary file"));
}

std::unique_ptr<LanguageModel> open_backend(const json& lm,
                                            const std::string& model_override = "") {
  const std::string backend = lm.at("backend").get<std::string>();
  if (backend == "table") {
    return std::make_unique<TableLM>(
        TableLM::from_file(req_path(lm, "table", "table file")));
  }
  if (backend == "remote") {
    RemoteOptions opts;
    opts.endpoint = req_path(lm, "endpoint", "remote endpoint");
    opts.max_batch = lm.at("max_batch").get<std::size_t>();
    opts.retries = lm.at("retries").get<int>();
    opts.backoff_ms = lm.at("backoff_ms").get<int>();
    opts.timeout_s = lm.at("timeout_s").get<int>();
    opts.max_inflight = lm.at("max_inflight").get<int>();
    return std::make_unique<RemoteLM>(opts);
  }
  if (backend == "ngram" || backend == "neural") {
    const std::string model =
        model_override.empty()
            ? req_path(lm, "model", "model file")
            : model_override;
    return load_lm(model, open_vocab(lm));
  }
  throw Error(ErrorCode::Config, "unknown LM backend '" + backend + "'");
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::Io, "cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

LoadedDataset load_dataset(const std::string& path, bool strict) {
  LoadOptions opts;
  opts.strict = strict;
  return load_iest_dataset(path, opts);
}

json stats_to_json(const DatasetStats& s) {
  json j;
  for (int i = 0; i < kNumEmotions; ++i)
    j[kLabelNames[i]] = s.per_label[i];
  j["total"] = s.total;
  j["unlabeled"] = s.unlabeled;
  j["skipped"] = s.skipped;
  return j;
}

json metrics_to_json(const Metrics& m) {
  json j;
  j["macro_f1"] = m.macro_f1;
  j["accuracy"] = m.accuracy;
  json per;
  for (int c = 0; c < m.num_classes; ++c) {
    const char* name = c < kNumEmotions ? kLabelNames[c] : "?";
    per[name] = {{"precision", m.precision[c]},
                 {"recall", m.recall[c]},
                 {"f1", m.f1[c]}};
  }
  j["per_class"] = per;
  j["confusion"] = m.confusion;
  return j;
}

char hex_digit(uint64_t v) { return "0123456789abcdef"[v & 0xF]; }

std::string hex64(uint64_t v) {
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = hex_digit(v);
  return s;
}

// Cloze dump rows use the fixed label order; emotions absent from the
// lexicon print 0.
void write_cloze_dump(std::ostream& out, const std::string& id,
                      const ClozeResult& r) {
  out << id;
  std::array<double, kNumEmotions> p{};
  for (std::size_t i = 0; i < r.emotions.size(); ++i)
    p[static_cast<int>(r.emotions[i])] = r.probs[i];
  out.precision(17);
  for (double v : p) out << '\t' << v;
  out << '\t' << r.complexity << '\t' << label_name(predict_label(r)) << '\n';
}

void write_predictions(const std::string& path,
                       const std::vector<std::string>& ids,
                       const std::vector<std::vector<double>>& probs) {
  ensure_parent_dir(path);
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::Io, "cannot write predictions " + path);
  f.precision(17);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    int best = 0;
    for (std::size_t j = 1; j < probs[i].size(); ++j)
      if (probs[i][j] > probs[i][best]) best = static_cast<int>(j);
    f << ids[i] << '\t' << kLabelNames[best];
    for (double v : probs[i]) f << '\t' << v;
    f << '\n';
  }
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

void cmd_prep(const json& cfg, json& report) {
  const json& p = cfg.at("prep");
  const std::string input = req_path(p, "input", "input corpus");
  std::vector<std::string> lines = read_lines(input);
  lines.erase(std::remove_if(lines.begin(), lines.end(),
                             [](const std::string& s) { return s.empty(); }),
              lines.end());
  const std::size_t n_in = lines.size();

  const PrepProfile profile = parse_profile(p.at("profile").get<std::string>());
  if (profile != PrepProfile::None)
    for (auto& l : lines) l = regex_clean(l);

  const double threshold = p.at("dedup_threshold").get<double>();
  std::vector<std::string> kept = dedup_corpus(lines, threshold);

  const std::string output = p.at("output").get<std::string>();
  if (!output.empty()) {
    ensure_parent_dir(output);
    std::ofstream f(output);
    for (const auto& l : kept) f << l << '\n';
    report["artifacts"].push_back(output);
  }

  const std::string vocab_out = p.at("vocab").get<std::string>();
  if (!vocab_out.empty()) {
    std::vector<std::vector<std::string>> corpus;
    corpus.reserve(kept.size());
    for (const auto& l : kept) corpus.push_back(tokenize(l));
    Vocabulary v = build_vocab(corpus, p.at("vocab_size").get<std::size_t>());
    ensure_parent_dir(vocab_out);
    v.save(vocab_out);
    report["artifacts"].push_back(vocab_out);
    report["vocab_size"] = v.size();
    report["schema_hashes"]["vocab"] = hex64(v.hash());
  }
  report["input_count"] = n_in;
  report["output_count"] = kept.size();
  report["removed"] = n_in - kept.size();
}

void cmd_train_lm(const json& cfg, json& report) {
  const json& t = cfg.at("trainlm");
  const json& lm = cfg.at("lm");
  const std::string corpus_path = req_path(t, "corpus", "training corpus");
  const std::string output = req_path(t, "output", "model output");
  Vocabulary vocab = open_vocab(lm);

  std::vector<std::vector<std::string>> corpus;
  const PrepProfile profile = parse_profile(t.at("profile").get<std::string>());
  for (const auto& line : read_lines(corpus_path)) {
    if (line.empty()) continue;
    corpus.push_back(
        tokenize(profile == PrepProfile::None ? line : regex_clean(line)));
  }

  const std::string backend = lm.at("backend").get<std::string>();
  ensure_parent_dir(output);
  if (backend == "ngram") {
    NgramOptions opts;
    opts.order = lm.at("order").get<int>();
    opts.discount = lm.at("discount").get<double>();
    opts.include_eos = lm.at("include_eos").get<bool>();
    NgramModel model = NgramModel::train(corpus, vocab, opts);
    model.save(output);
  } else if (backend == "neural") {
    NeuralLMConfig ncfg;
    ncfg.embed_dim = lm.at("embed_dim").get<std::size_t>();
    ncfg.hidden = lm.at("hidden").get<std::size_t>();
    ncfg.epochs = lm.at("epochs").get<int>();
    ncfg.batch = lm.at("batch").get<int>();
    ncfg.lr = lm.at("lr").get<double>();
    ncfg.seed = cfg.at("seed").get<uint64_t>();
    NeuralLM model = NeuralLM::train(corpus, vocab, ncfg);
    model.save(output);
  } else {
    throw Error(ErrorCode::Config,
                "train-lm supports the ngram and neural backends");
  }
  report["artifacts"].push_back(output);
  report["sentences"] = corpus.size();
  report["schema_hashes"]["vocab"] = hex64(vocab.hash());
}

void cmd_continue_lm(const json& cfg, json& report) {
  const json& c = cfg.at("continuelm");
  const json& lm = cfg.at("lm");
  const std::string output = req_path(c, "output", "LM2 output");
  auto base = open_backend(lm);
  const EmotionLexicon lexicon = open_lexicon(cfg);

  LoadedDataset ds = load_dataset(req_path(c, "dataset", "labeled dataset"),
                                  c.at("strict").get<bool>());
  std::vector<Tweet> labeled;
  for (auto& tw : ds.tweets)
    if (tw.label) labeled.push_back(tw);
  if (labeled.empty())
    throw Error(ErrorCode::EmptyCorpus, "dataset has no labeled tweets");

  std::vector<std::string> replacements(labeled.size());
  par::parallel_for(labeled.size(), [&](std::size_t i) {
    replacements[i] =
        argmax_replacement(labeled[i], *base, lexicon, *labeled[i].label);
  });

  auto lm2 =
      continue_training(*base, labeled, replacements, lexicon,
                        c.at("weight").get<double>());
  ensure_parent_dir(output);
  lm2->save(output);
  report["artifacts"].push_back(output);
  report["tweets_used"] = labeled.size();
  report["stats"] = stats_to_json(ds.stats);
}

void cmd_cloze_classify(const json& cfg, json& report) {
  const json& c = cfg.at("cloze");
  auto model = open_backend(cfg.at("lm"));
  const EmotionLexicon lexicon = open_lexicon(cfg);
  LoadedDataset ds = load_dataset(req_path(c, "input", "input dataset"),
                                  c.at("strict").get<bool>());

  const std::vector<ClozeResult> results =
      classify_batch(ds.tweets, *model, lexicon);

  const std::string output = c.at("output").get<std::string>();
  if (!output.empty()) {
    ensure_parent_dir(output);
    std::ofstream f(output);
    if (!f) throw Error(ErrorCode::Io, "cannot write " + output);
    for (std::size_t i = 0; i < results.size(); ++i)
      write_cloze_dump(f, ds.tweets[i].id, results[i]);
    report["artifacts"].push_back(output);
  }
  if (c.at("print").get<bool>()) {
    for (std::size_t i = 0; i < results.size(); ++i)
      write_cloze_dump(std::cout, ds.tweets[i].id, results[i]);
  }

  std::vector<EmotionLabel> preds, golds;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (!ds.tweets[i].label) continue;
    preds.push_back(predict_label(results[i]));
    golds.push_back(*ds.tweets[i].label);
  }
  if (!golds.empty())
    report["metrics"] = metrics_to_json(macro_f1(preds, golds));
  report["stats"] = stats_to_json(ds.stats);
  report["classified"] = results.size();
}

void cmd_features(const json& cfg, json& report) {
  const json& fc = cfg.at("features");
  const json& lm = cfg.at("lm");
  const std::string output = req_path(fc, "output", "feature output");
  auto lm1 = open_backend(lm);
  const std::string lm2_path = fc.at("lm2_model").get<std::string>();
  std::unique_ptr<LanguageModel> lm2;
  if (!lm2_path.empty()) lm2 = open_backend(lm, lm2_path);
  const LanguageModel& lm2_ref = lm2 ? *lm2 : *lm1;

  const EmotionLexicon lexicon = open_lexicon(cfg);
  LoadedDataset ds = load_dataset(req_path(fc, "input", "input dataset"),
                                  fc.at("strict").get<bool>());

  std::vector<std::string> ids;
  for (const auto& tw : ds.tweets) ids.push_back(tw.id);

  std::vector<std::string> externals;
  std::map<std::string, ExternalBlock> blocks;
  const MissingIdPolicy policy =
      fc.at("missing_policy").get<std::string>() == "error"
          ? MissingIdPolicy::Error
          : MissingIdPolicy::ZeroFill;
  for (const auto& name : FeatureSchema::known_externals()) {
    const std::string path = fc.at(name).get<std::string>();
    if (path.empty()) continue;
    externals.push_back(name);
    const std::size_t width =
        FeatureSchema::make(lexicon, {name}).block_range(name).second;
    blocks.emplace(name, load_external_block(path, width, ids, policy));
  }
  const FeatureSchema schema = FeatureSchema::make(lexicon, externals);

  const std::vector<ClozeResult> r1 = classify_batch(ds.tweets, *lm1, lexicon);
  const std::vector<ClozeResult> r2 =
      lm2 ? classify_batch(ds.tweets, lm2_ref, lexicon) : r1;

  FeatureMatrix mat;
  mat.schema_hash = schema.hash();
  mat.width = schema.width();
  mat.presence_width = schema.optional_count();
  for (std::size_t i = 0; i < ds.tweets.size(); ++i) {
    mat.ids.push_back(ds.tweets[i].id);
    mat.rows.push_back(assemble(ds.tweets[i], r1[i], r2[i], schema, &blocks));
  }
  ensure_parent_dir(output);
  save_feature_matrix(mat, output);
  report["artifacts"].push_back(output);
  report["rows"] = mat.ids.size();
  report["width"] = mat.width;
  report["schema_hashes"]["features"] = hex64(schema.hash());
}

EnsembleSpec spec_from_config(const json& e) {
  EnsembleSpec spec;
  spec.ranges.embedding = e.at("embedding").get<std::size_t>();
  spec.ranges.lstm_lo = e.at("lstm_lo").get<std::size_t>();
  spec.ranges.lstm_hi = e.at("lstm_hi").get<std::size_t>();
  spec.ranges.filters_lo = e.at("filters_lo").get<std::size_t>();
  spec.ranges.filters_hi = e.at("filters_hi").get<std::size_t>();
  spec.ranges.dense_lo = e.at("dense_lo").get<std::size_t>();
  spec.ranges.dense_hi = e.at("dense_hi").get<std::size_t>();
  spec.mini_per_e1 = e.at("mini_per_e1").get<int>();
  spec.e1_per_e2 = e.at("e1_per_e2").get<int>();
  spec.e2_replicas = e.at("e2_replicas").get<int>();
  spec.zero_missing_blocks = e.at("zero_missing_blocks").get<bool>();
  return spec;
}

struct JoinedData {
  FeatureSchema schema;
  std::vector<TrainExample> examples;
  DatasetStats stats;
};

JoinedData join_dataset_features(const json& cfg, const std::string& ds_path,
                                 const std::string& feat_path, bool strict,
                                 bool require_labels) {
  const EmotionLexicon lexicon = open_lexicon(cfg);
  LoadedDataset ds = load_dataset(ds_path, strict);
  FeatureMatrix mat = load_feature_matrix(feat_path);

  // Recover the external list from the width; the hash check pins it.
  std::vector<std::string> externals;
  for (const auto& name : FeatureSchema::known_externals()) {
    std::vector<std::string> trial = externals;
    trial.push_back(name);
    if (FeatureSchema::make(lexicon, trial).hash() == mat.schema_hash)
      externals = trial;
  }
  FeatureSchema schema = FeatureSchema::make(lexicon, externals);
  if (schema.hash() != mat.schema_hash) {
    // Try every subset (4 bits) before giving up.
    bool found = false;
    for (int mask = 0; mask < 16 && !found; ++mask) {
      std::vector<std::string> trial;
      for (int b = 0; b < 4; ++b)
        if (mask & (1 << b)) trial.push_back(FeatureSchema::known_externals()[b]);
      FeatureSchema s = FeatureSchema::make(lexicon, trial);
      if (s.hash() == mat.schema_hash) {
        schema = s;
        found = true;
      }
    }
    if (!found)
      throw Error(ErrorCode::SchemaMismatch,
                  "feature file was built with a different schema or lexicon");
  }

  const Vocabulary vocab = open_vocab(cfg.at("lm"));
  JoinedData out{schema,
                 encode_examples(ds.tweets, mat, vocab, require_labels),
                 ds.stats};
  return out;
}

template <typename T>
void run_train_ensemble(const json& cfg, json& report) {
  const json& e = cfg.at("ensemble");
  const std::string dir = req_path(e, "dir", "ensemble output dir");
  const bool strict = e.at("strict").get<bool>();
  JoinedData train = join_dataset_features(
      cfg, req_path(e, "train", "training dataset"),
      req_path(e, "features_train", "training features"), strict, true);
  JoinedData val;
  if (!e.at("val").get<std::string>().empty()) {
    val = join_dataset_features(cfg, e.at("val").get<std::string>(),
                                req_path(e, "features_val", "val features"),
                                strict, true);
  }

  EnsembleSpec spec = spec_from_config(e);
  TrainOptions opts;
  opts.batch = e.at("batch").get<int>();
  opts.epochs_cap = e.at("epochs_cap").get<int>();
  opts.patience = e.at("patience").get<int>();
  opts.lr = e.at("lr").get<double>();
  opts.decay = e.at("decay").get<double>();
  opts.seed = cfg.at("seed").get<uint64_t>();
  opts.record_train_acc = false;

  const Vocabulary vocab = open_vocab(cfg.at("lm"));
  EnsembleModel model = train_ensemble<T>(spec, train.schema, vocab,
                                          train.examples, val.examples, opts,
                                          dir);
  report["artifacts"].push_back((fs::path(dir) / "manifest.json").string());
  report["members"] = model.checkpoints.size();
  report["schema_hashes"]["features"] = hex64(model.schema_hash);
  report["schema_hashes"]["vocab"] = hex64(model.vocab_hash);

  if (!val.examples.empty()) {
    const auto probs = predict_ensemble<T>(model, train.schema, val.examples);
    std::vector<int> pred(probs.size()), gold(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
      pred[i] = 0;
      for (std::size_t j = 1; j < probs[i].size(); ++j)
        if (probs[i][j] > probs[i][pred[i]]) pred[i] = static_cast<int>(j);
      gold[i] = val.examples[i].label;
    }
    report["metrics"] = metrics_to_json(macro_f1(pred, gold, kNumEmotions));
  }
}

template <typename T>
void run_fine_tune(const json& cfg, json& report) {
  const json& f = cfg.at("finetune");
  const std::string dir = req_path(f, "dir", "ensemble dir");
  EnsembleModel model = load_ensemble_manifest(dir);
  JoinedData val = join_dataset_features(
      cfg, req_path(f, "val", "validation dataset"),
      req_path(f, "features", "validation features"),
      f.at("strict").get<bool>(), true);

  FineTuneOptions opts;
  opts.epochs = f.at("epochs").get<int>();
  opts.batch = f.at("batch").get<int>();
  opts.stack_only = f.at("stack_only").get<bool>();
  opts.holdout_fraction = f.at("holdout").get<double>();
  opts.lr = f.at("lr").get<double>();
  opts.decay = f.at("decay").get<double>();
  opts.seed = cfg.at("seed").get<uint64_t>();

  const FineTuneReport r = fine_tune<T>(model, val.schema, val.examples, opts);
  save_ensemble_manifest(model);
  report["pre_f1"] = r.pre_f1;
  report["post_f1"] = r.post_f1;
  report["holdout_size"] = r.holdout_size;
  report["updates_per_member"] = r.updates_per_member;
}

void cmd_evaluate(const json& cfg, json& report) {
  const json& e = cfg.at("eval");
  LoadedDataset gold = load_dataset(req_path(e, "gold", "gold dataset"),
                                    e.at("strict").get<bool>());
  std::unordered_map<std::string, std::string> pred_label;
  for (const auto& line : read_lines(req_path(e, "pred", "predictions file"))) {
    if (line.empty()) continue;
    const std::size_t t1 = line.find('\t');
    if (t1 == std::string::npos)
      throw Error(ErrorCode::Format, "bad prediction row: " + line);
    const std::size_t t2 = line.find('\t', t1 + 1);
    pred_label[line.substr(0, t1)] =
        line.substr(t1 + 1, t2 == std::string::npos ? std::string::npos
                                                    : t2 - t1 - 1);
  }
  std::vector<EmotionLabel> preds, golds;
  for (const auto& tw : gold.tweets) {
    if (!tw.label) continue;
    auto it = pred_label.find(tw.id);
    if (it == pred_label.end())
      throw Error(ErrorCode::UnknownId,
                  "no prediction for tweet " + tw.id);
    auto lbl = parse_label(it->second);
    if (!lbl)
      throw Error(ErrorCode::UnknownLabel,
                  "bad predicted label '" + it->second + "'");
    preds.push_back(*lbl);
    golds.push_back(*tw.label);
  }
  if (golds.empty())
    throw Error(ErrorCode::EmptyCorpus, "gold dataset has no labeled tweets");
  report["metrics"] = metrics_to_json(macro_f1(preds, golds));
  report["pairs"] = golds.size();
}

template <typename T>
void run_predict(const json& cfg, json& report) {
  const json& p = cfg.at("predict");
  const std::string output = req_path(p, "output", "predictions output");
  const std::string mode = p.at("model").get<std::string>();
  if (mode == "cloze") {
    auto model = open_backend(cfg.at("lm"));
    const EmotionLexicon lexicon = open_lexicon(cfg);
    LoadedDataset ds = load_dataset(req_path(p, "input", "input dataset"),
                                    p.at("strict").get<bool>());
    const auto results = classify_batch(ds.tweets, *model, lexicon);
    std::vector<std::string> ids;
    std::vector<std::vector<double>> probs;
    for (std::size_t i = 0; i < results.size(); ++i) {
      ids.push_back(ds.tweets[i].id);
      std::vector<double> row(kNumEmotions, 0.0);
      for (std::size_t j = 0; j < results[i].emotions.size(); ++j)
        row[static_cast<int>(results[i].emotions[j])] = results[i].probs[j];
      probs.push_back(std::move(row));
    }
    write_predictions(output, ids, probs);
    report["predicted"] = ids.size();
  } else if (mode == "ensemble") {
    EnsembleModel model =
        load_ensemble_manifest(req_path(p, "dir", "ensemble dir"));
    JoinedData data = join_dataset_features(
        cfg, req_path(p, "input", "input dataset"),
        req_path(p, "features", "features file"), p.at("strict").get<bool>(),
        false);
    const auto probs = predict_ensemble<T>(model, data.schema, data.examples);
    std::vector<std::string> ids;
    for (const auto& ex : data.examples) ids.push_back(ex.id);
    write_predictions(output, ids, probs);
    report["predicted"] = ids.size();
  } else {
    throw Error(ErrorCode::Config, "predict.model must be cloze or ensemble");
  }
  report["artifacts"].push_back(output);
}

void cmd_serve_stub(const json& cfg, json& report) {
  const json& s = cfg.at("serve");
  ScoreServer::Handler handler;
  if (!s.at("constant").is_null()) {
    const double value = s.at("constant").get<double>();
    handler = [value](const std::vector<std::string>& texts) {
      return std::vector<double>(texts.size(), value);
    };
  } else {
    auto model = std::shared_ptr<LanguageModel>(open_backend(cfg.at("lm")));
    handler = [model](const std::vector<std::string>& texts) {
      std::vector<double> out(texts.size());
      for (std::size_t i = 0; i < texts.size(); ++i)
        out[i] = model->score(tokenize(texts[i]));
      return out;
    };
  }
  ScoreServer server(std::move(handler));
  const int port = server.start(s.at("port").get<int>());
  report["port"] = port;
  std::cout << "serving /score on port " << port << std::endl;
  server.wait();
}

// ---------------------------------------------------------------------------

int exit_code_for(ErrorCode c) {
  if (is_config_error(c)) return 2;
  if (is_numeric_error(c)) return 4;
  return 3;
}

void dispatch(const std::string& command, const json& cfg, json& report) {
  const bool f64 = cfg.at("precision").get<std::string>() != "f32";
  if (command == "prep") return cmd_prep(cfg, report);
  if (command == "train-lm") return cmd_train_lm(cfg, report);
  if (command == "continue-lm") return cmd_continue_lm(cfg, report);
  if (command == "cloze-classify") return cmd_cloze_classify(cfg, report);
  if (command == "features") return cmd_features(cfg, report);
  if (command == "train-ensemble")
    return f64 ? run_train_ensemble<double>(cfg, report)
               : run_train_ensemble<float>(cfg, report);
  if (command == "fine-tune")
    return f64 ? run_fine_tune<double>(cfg, report)
               : run_fine_tune<float>(cfg, report);
  if (command == "evaluate") return cmd_evaluate(cfg, report);
  if (command == "predict")
    return f64 ? run_predict<double>(cfg, report)
               : run_predict<float>(cfg, report);
  if (command == "serve-stub") return cmd_serve_stub(cfg, report);
  throw Error(ErrorCode::Config, "unknown command '" + command + "'");
}

}  // namespace

int main(int argc, char** argv) {
  const auto t0 = std::chrono::steady_clock::now();
  std::string command;
  json cfg;
  json report;
  report["report_version"] = 1;
  report["errors"] = json::array();
  report["artifacts"] = json::array();

  int code = 0;
  try {
    cfg = load_config(argc, argv, command);
    report["command"] = command;
    set_max_threads(cfg.at("threads").get<int>());
    set_default_exec(cfg.at("exec").get<std::string>() == "serial"
                         ? Exec::Serial
                         : Exec::Parallel);
    report["seeds"]["root"] = cfg.at("seed").get<uint64_t>();
    dispatch(command, cfg, report);
  } catch (const Error& e) {
    code = exit_code_for(e.code());
    report["errors"].push_back(
        {{"code", error_code_name(e.code())}, {"message", e.what()}});
    std::cerr << "error: " << e.what() << std::endl;
  } catch (const std::exception& e) {
    code = 3;
    report["errors"].push_back({{"code", "Unhandled"}, {"message", e.what()}});
    std::cerr << "error: " << e.what() << std::endl;
  }

  report["status"] = code == 0 ? "ok" : "error";
  report["exit_code"] = code;
  report["timings"]["total_ms"] =
      std::chrono::duration_cast<std::chrono::milliseconds>(
          std::chrono::steady_clock::now() - t0)
          .count();
  report["config"] = cfg.is_null() ? json::object() : cfg;

  std::string report_path = "report.json";
  if (!cfg.is_null() && cfg.contains("report") &&
      !cfg.at("report").get<std::string>().empty())
    report_path = cfg.at("report").get<std::string>();
  else if (!command.empty())
    report_path = command + "-report.json";
  try {
    ensure_parent_dir(report_path);
    std::ofstream f(report_path);
    f << report.dump(2) << '\n';
  } catch (...) {
    std::cerr << "warning: could not write run report to " << report_path
              << std::endl;
  }
  return code;
}
