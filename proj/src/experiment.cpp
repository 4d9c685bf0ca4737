#include "dialcomp/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dialcomp/errors.hpp"
#include "dialcomp/eval.hpp"
#include "dialcomp/log.hpp"
#include "dialcomp/version.hpp"

namespace dialcomp {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

const char* kDefaultConfig = R"json({
  "paths": {"corpus": "", "out_dir": "out"},
  "root_seed": 1234,
  "corpus": {
    "fractions": [0.8, 0.1, 0.1],
    "split_seed": null,
    "mixture_allocation": "proportional"
  },
  "tokenizer": {"vocab_size": 4000, "lowercase": true},
  "augment": {
    "strategy": "random",
    "fraction": 0.5,
    "fold": 1,
    "inject_topic_change": false,
    "seed": null
  },
  "model": {
    "num_layers": 2,
    "num_heads": 4,
    "model_dim": 128,
    "ffn_dim": 512,
    "dropout": 0.1,
    "max_context_len": 256,
    "use_positional_encoding": true,
    "disc_hidden_dim": 0
  },
  "train": {
    "alpha": 0.001,
    "learning_rate": 0.001,
    "batch_size": 8,
    "max_steps": 1000,
    "seed": null,
    "optimizer": "adam",
    "adam_beta1": 0.9,
    "adam_beta2": 0.98,
    "adam_eps": 1e-9,
    "eval_every": 0,
    "warmup_steps": 0,
    "per_dialogue_labels": false,
    "gradient_reversal": false,
    "data": "all",
    "synthetic": ""
  },
  "eval": {
    "ngram_n": 4,
    "smooth_bleu": false,
    "max_gen_len": 64,
    "cross_turn_ngrams": false,
    "split": "valid",
    "checkpoint": "",
    "vocab": ""
  },
  "ablation": {
    "total": 2150,
    "rows": [[2150, 0], [1836, 314], [1522, 628], [1208, 942],
             [894, 1256], [580, 1570], [266, 1884]]
  },
  "alpha_sweep": {"alphas": [0.0, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1]},
  "gradcheck": {"tolerance": 1e-4, "coords_per_block": 32, "batch_examples": 2}
})json";

void merge_into(ordered_json& base, const ordered_json& overlay) {
  if (!overlay.is_object() || !base.is_object()) {
    base = overlay;
    return;
  }
  for (const auto& [key, value] : overlay.items()) {
    if (base.contains(key) && base[key].is_object() && value.is_object()) {
      merge_into(base[key], value);
    } else {
      base[key] = value;
    }
  }
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory '" + dir + "': " + ec.message());
}

// Manifests accumulate one entry per subcommand run in this output
// directory, recording the hash chain from inputs to artifacts.
class ManifestWriter {
 public:
  ManifestWriter(const ExperimentConfig& cfg, const std::string& subcommand)
      : out_dir_(cfg.out_dir()), entry_() {
    ensure_dir(out_dir_);
    entry_["subcommand"] = subcommand;
    entry_["tool_version"] = kVersion;
    entry_["config"] = cfg.json();
    entry_["overrides"] = cfg.overrides();
    entry_["inputs"] = ordered_json::object();
    entry_["artifacts"] = ordered_json::array();
  }

  void input(const std::string& name, const std::string& path) {
    entry_["inputs"][name] = {{"path", path}, {"hash", hash_file(path)}};
  }
  void artifact(const std::string& path) {
    entry_["artifacts"].push_back({{"path", fs::path(path).lexically_relative(out_dir_).string()},
                                   {"hash", hash_file(path)}});
  }

  void commit() {
    const std::string path = out_dir_ + "/manifest.json";
    ordered_json manifest;
    if (fs::exists(path)) {
      try {
        manifest = ordered_json::parse(read_file(path));
      } catch (...) {
        manifest = ordered_json::object();
      }
    }
    if (!manifest.contains("runs") || !manifest["runs"].is_array())
      manifest["runs"] = ordered_json::array();
    manifest["runs"].push_back(entry_);
    write_file(path, manifest.dump(2) + "\n");
  }

 private:
  std::string out_dir_;
  ordered_json entry_;
};

std::vector<Dialogue> load_labeled_corpus(const ExperimentConfig& cfg) {
  if (cfg.corpus_path().empty())
    throw UsageError("no corpus file configured (paths.corpus or --corpus)");
  auto dialogues = parse_corpus_file(cfg.corpus_path());
  relabel_corpus(dialogues);
  if (dialogues.empty()) throw DataError("corpus has no labeled dialogues");
  return dialogues;
}

void write_report_pair(ManifestWriter& manifest, const std::string& base_path,
                       const ordered_json& j, const std::string& csv) {
  write_file(base_path + ".json", j.dump(2) + "\n");
  write_file(base_path + ".csv", csv);
  manifest.artifact(base_path + ".json");
  manifest.artifact(base_path + ".csv");
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig cfg;
  cfg.doc_ = ordered_json::parse(kDefaultConfig);
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& config_path,
                                        const std::vector<std::string>& overrides) {
  ExperimentConfig cfg = defaults();
  if (!config_path.empty()) {
    ordered_json user;
    try {
      user = ordered_json::parse(read_file(config_path));
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError("config parse error in '" + config_path + "': " + e.what());
    }
    merge_into(cfg.doc_, user);
  }
  for (const auto& o : overrides) cfg.apply_override(o);
  return cfg;
}

void ExperimentConfig::apply_override(const std::string& dotted) {
  const size_t eq = dotted.find('=');
  if (eq == std::string::npos)
    throw UsageError("override '" + dotted + "' must look like section.key=value");
  const std::string key = dotted.substr(0, eq);
  const std::string raw = dotted.substr(eq + 1);

  std::string pointer = "/";
  for (char c : key) pointer += (c == '.') ? '/' : c;

  ordered_json value;
  try {
    value = ordered_json::parse(raw);
  } catch (...) {
    value = raw;  // unquoted strings pass through
  }
  doc_[nlohmann::json::json_pointer(pointer)] = value;
  overrides_.push_back(dotted);
}

std::string ExperimentConfig::corpus_path() const { return doc_.at("paths").value("corpus", ""); }
std::string ExperimentConfig::out_dir() const { return doc_.at("paths").value("out_dir", "out"); }
uint64_t ExperimentConfig::root_seed() const { return doc_.value("root_seed", 1234ULL); }

SplitFractions ExperimentConfig::split_fractions() const {
  const auto& f = doc_.at("corpus").at("fractions");
  if (!f.is_array() || f.size() != 3)
    throw UsageError("corpus.fractions must be [train, valid, test]");
  return {f[0].get<double>(), f[1].get<double>(), f[2].get<double>()};
}

namespace {
uint64_t seed_or_derive(const ordered_json& node, uint64_t root, const char* name) {
  if (node.is_null()) return derive_seed(root, name);
  return node.get<uint64_t>();
}
}  // namespace

uint64_t ExperimentConfig::split_seed() const {
  return seed_or_derive(doc_.at("corpus").at("split_seed"), root_seed(), "corpus.split");
}

MixtureAllocation ExperimentConfig::mixture_allocation() const {
  const std::string mode = doc_.at("corpus").value("mixture_allocation", "proportional");
  if (mode == "proportional") return MixtureAllocation::GreedyProportional;
  if (mode == "random") return MixtureAllocation::Random;
  throw UsageError("corpus.mixture_allocation must be 'proportional' or 'random'");
}

int ExperimentConfig::vocab_size() const { return doc_.at("tokenizer").value("vocab_size", 4000); }
bool ExperimentConfig::lowercase() const { return doc_.at("tokenizer").value("lowercase", true); }

AugmentConfig ExperimentConfig::augment_config() const {
  const auto& a = doc_.at("augment");
  AugmentConfig cfg;
  const std::string strategy = a.value("strategy", "random");
  if (strategy == "random") {
    cfg.strategy = AugmentStrategy::RandomAugment;
  } else if (strategy == "targeted") {
    cfg.strategy = AugmentStrategy::TargetedAugment;
  } else {
    throw UsageError("augment.strategy must be 'random' or 'targeted'");
  }
  cfg.augment_fraction = a.value("fraction", 0.5);
  cfg.augment_fold = a.value("fold", 1);
  cfg.inject_topic_change = a.value("inject_topic_change", false);
  cfg.seed = seed_or_derive(a.at("seed"), root_seed(), "augment");
  return cfg;
}

ModelConfig ExperimentConfig::model_config() const {
  const auto& m = doc_.at("model");
  ModelConfig cfg;
  cfg.num_layers = m.value("num_layers", 2);
  cfg.num_heads = m.value("num_heads", 4);
  cfg.model_dim = m.value("model_dim", 128);
  cfg.ffn_dim = m.value("ffn_dim", 512);
  cfg.dropout_rate = m.value("dropout", 0.1);
  cfg.max_context_len = m.value("max_context_len", 256);
  cfg.use_positional_encoding = m.value("use_positional_encoding", true);
  cfg.disc_hidden_dim = m.value("disc_hidden_dim", 0);
  return cfg;
}

TrainConfig ExperimentConfig::train_config() const {
  const auto& t = doc_.at("train");
  TrainConfig cfg;
  cfg.alpha = t.value("alpha", 0.001);
  cfg.learning_rate = t.value("learning_rate", 1e-3);
  cfg.batch_size = t.value("batch_size", 8);
  cfg.max_steps = t.value("max_steps", 1000LL);
  cfg.seed = seed_or_derive(t.at("seed"), root_seed(), "train");
  const std::string opt = t.value("optimizer", "adam");
  if (opt == "adam") {
    cfg.optimizer = OptimizerKind::Adam;
  } else if (opt == "sgd") {
    cfg.optimizer = OptimizerKind::SGD;
  } else {
    throw UsageError("train.optimizer must be 'adam' or 'sgd'");
  }
  cfg.adam_beta1 = t.value("adam_beta1", 0.9);
  cfg.adam_beta2 = t.value("adam_beta2", 0.98);
  cfg.adam_eps = t.value("adam_eps", 1e-9);
  cfg.eval_every = t.value("eval_every", 0LL);
  cfg.warmup_steps = t.value("warmup_steps", 0LL);
  cfg.per_dialogue_labels = t.value("per_dialogue_labels", false);
  cfg.gradient_reversal = t.value("gradient_reversal", false);
  return cfg;
}

EvalOptions ExperimentConfig::eval_options() const {
  const auto& e = doc_.at("eval");
  EvalOptions opts;
  opts.max_gen_len = e.value("max_gen_len", 64);
  opts.smooth_bleu = e.value("smooth_bleu", false);
  return opts;
}

int ExperimentConfig::ngram_n() const { return doc_.at("eval").value("ngram_n", 4); }
bool ExperimentConfig::cross_turn_ngrams() const {
  return doc_.at("eval").value("cross_turn_ngrams", false);
}

std::vector<MixtureSpec> ExperimentConfig::ablation_rows() const {
  std::vector<MixtureSpec> rows;
  for (const auto& r : doc_.at("ablation").at("rows"))
    rows.push_back({r.at(0).get<int>(), r.at(1).get<int>()});
  return rows;
}

int ExperimentConfig::ablation_total() const { return doc_.at("ablation").value("total", 2150); }

std::vector<double> ExperimentConfig::alpha_grid() const {
  return doc_.at("alpha_sweep").at("alphas").get<std::vector<double>>();
}

std::string ExperimentConfig::eval_split_name() const {
  return doc_.at("eval").value("split", "valid");
}

double ExperimentConfig::gradcheck_tolerance() const {
  return doc_.at("gradcheck").value("tolerance", 1e-4);
}

uint64_t fnv1a64(const std::string& bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string fnv1a64_hex(const std::string& bytes) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

std::string hash_file(const std::string& path) { return fnv1a64_hex(read_file(path)); }

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  ensure_dir(fs::path(path).parent_path().string());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file '" + path + "'");
  out << content;
  if (!out) throw DataError("failed writing file '" + path + "'");
}

void write_split_files(const CorpusSplit& split, const std::string& splits_dir) {
  ensure_dir(splits_dir);
  auto dump_ids = [&](const std::vector<Dialogue>& pool, const std::string& name) {
    ordered_json ids = ordered_json::array();
    for (const auto& d : pool) ids.push_back(d.id);
    write_file(splits_dir + "/" + name + ".json", ids.dump(2) + "\n");
  };
  dump_ids(split.train, "train");
  dump_ids(split.valid, "valid");
  dump_ids(split.test, "test");
  ordered_json manifest;
  manifest["split_seed"] = split.split_seed;
  manifest["counts"] = {{"train", split.train.size()},
                        {"valid", split.valid.size()},
                        {"test", split.test.size()}};
  write_file(splits_dir + "/manifest.json", manifest.dump(2) + "\n");
}

CorpusSplit load_split_files(const std::vector<Dialogue>& labeled_corpus,
                             const std::string& splits_dir) {
  std::map<std::string, const Dialogue*> by_id;
  for (const auto& d : labeled_corpus) by_id[d.id] = &d;
  auto load_ids = [&](const std::string& name) {
    ordered_json ids = ordered_json::parse(read_file(splits_dir + "/" + name + ".json"));
    std::vector<Dialogue> pool;
    for (const auto& jid : ids) {
      const std::string id = jid.get<std::string>();
      auto it = by_id.find(id);
      if (it == by_id.end())
        throw DataError("split references unknown dialogue id '" + id + "'");
      pool.push_back(*it->second);
    }
    return pool;
  };
  CorpusSplit split;
  split.train = load_ids("train");
  split.valid = load_ids("valid");
  split.test = load_ids("test");
  ordered_json manifest = ordered_json::parse(read_file(splits_dir + "/manifest.json"));
  split.split_seed = manifest.value("split_seed", 0ULL);
  return split;
}

int run_preprocess(const ExperimentConfig& cfg) {
  ManifestWriter manifest(cfg, "preprocess");
  manifest.input("corpus", cfg.corpus_path());

  auto dialogues = parse_corpus_file(cfg.corpus_path());
  const size_t parsed = dialogues.size();
  const size_t dropped = relabel_corpus(dialogues);
  if (dialogues.empty()) throw DataError("corpus has no labeled dialogues");

  auto split = make_splits(dialogues, cfg.split_fractions(), cfg.split_seed());
  const std::string splits_dir = cfg.out_dir() + "/splits";
  write_split_files(split, splits_dir);
  manifest.artifact(splits_dir + "/train.json");
  manifest.artifact(splits_dir + "/valid.json");
  manifest.artifact(splits_dir + "/test.json");
  manifest.artifact(splits_dir + "/manifest.json");

  // Label statistics report.
  ordered_json stats;
  stats["dialogues_parsed"] = parsed;
  stats["dialogues_dropped_unlabeled"] = dropped;
  auto count = [](const std::vector<Dialogue>& pool) {
    size_t single = 0, multi = 0;
    std::map<std::string, size_t> domains;
    for (const auto& d : pool) {
      (d.is_single_task() ? single : multi) += 1;
      for (const auto& dom : d.domains) domains[dom] += 1;
    }
    ordered_json j;
    j["total"] = pool.size();
    j["single_task"] = single;
    j["multi_task"] = multi;
    j["domain_counts"] = domains;
    return j;
  };
  stats["train"] = count(split.train);
  stats["valid"] = count(split.valid);
  stats["test"] = count(split.test);
  const std::string stats_path = cfg.out_dir() + "/reports/label_stats.json";
  write_file(stats_path, stats.dump(2) + "\n");
  manifest.artifact(stats_path);
  manifest.commit();
  return 0;
}

int run_augment(const ExperimentConfig& cfg) {
  ManifestWriter manifest(cfg, "augment");
  manifest.input("corpus", cfg.corpus_path());
  auto dialogues = load_labeled_corpus(cfg);
  auto split = load_split_files(dialogues, cfg.out_dir() + "/splits");
  manifest.input("splits_manifest", cfg.out_dir() + "/splits/manifest.json");

  std::vector<Dialogue> pool;
  for (const auto& d : split.train)
    if (d.is_single_task()) pool.push_back(d);

  const AugmentConfig acfg = cfg.augment_config();
  std::vector<Dialogue> synthetic;
  if (acfg.strategy == AugmentStrategy::RandomAugment) {
    synthetic = random_augment(pool, acfg);
  } else {
    std::vector<Dialogue> train_multi;
    for (const auto& d : split.train)
      if (d.is_multi_task()) train_multi.push_back(d);
    TaskComboDistribution dist;
    if (!train_multi.empty()) dist = estimate_task_combo_distribution(train_multi);
    else log_warn("no multi-task training dialogues; targeted sampling falls back to uniform");
    const auto bank = extract_topic_changes(train_multi);
    const auto dev_combos = observed_combos(split.valid);
    synthetic = targeted_augment(pool, dev_combos, dist, bank, acfg);
  }

  const std::string syn_dir = cfg.out_dir() + "/synthetic";
  const std::string syn_path = syn_dir + "/synthetic.json";
  write_file(syn_path, corpus_to_json(synthetic));
  manifest.artifact(syn_path);

  ordered_json prov;
  prov["config"] = {{"strategy",
                     acfg.strategy == AugmentStrategy::RandomAugment ? "random" : "targeted"},
                    {"fraction", acfg.augment_fraction},
                    {"fold", acfg.augment_fold},
                    {"inject_topic_change", acfg.inject_topic_change},
                    {"seed", acfg.seed}};
  ordered_json records = ordered_json::array();
  for (const auto& s : synthetic) {
    records.push_back({{"id", s.id},
                       {"prefix_source_id", s.provenance->prefix_source_id},
                       {"body_source_id", s.provenance->body_source_id},
                       {"prefix_exchange_count", s.provenance->prefix_exchange_count},
                       {"topic_change_injected", s.provenance->topic_change_injected}});
  }
  prov["dialogues"] = std::move(records);
  const std::string prov_path = syn_dir + "/provenance.json";
  write_file(prov_path, prov.dump(2) + "\n");
  manifest.artifact(prov_path);
  manifest.commit();
  return 0;
}

namespace {

std::vector<Dialogue> training_data_for(const ExperimentConfig& cfg, const CorpusSplit& split) {
  const std::string mode = cfg.json().at("train").value("data", "all");
  std::vector<Dialogue> data;
  if (mode == "all") {
    data = split.train;
  } else if (mode == "single_only") {
    for (const auto& d : split.train)
      if (d.is_single_task()) data.push_back(d);
  } else {
    throw UsageError("train.data must be 'all' or 'single_only'");
  }
  const std::string syn_path = cfg.json().at("train").value("synthetic", "");
  if (!syn_path.empty()) {
    auto synthetic = parse_corpus_file(syn_path);
    relabel_corpus(synthetic);
    for (auto& s : synthetic) {
      s.origin = Origin::Synthetic;
      data.push_back(std::move(s));
    }
  }
  if (data.empty()) throw DataError("training selection produced no dialogues");
  return data;
}

}  // namespace

int run_train(const ExperimentConfig& cfg) {
  ManifestWriter manifest(cfg, "train");
  manifest.input("corpus", cfg.corpus_path());
  auto dialogues = load_labeled_corpus(cfg);
  auto split = load_split_files(dialogues, cfg.out_dir() + "/splits");
  manifest.input("splits_manifest", cfg.out_dir() + "/splits/manifest.json");
  const std::string syn_path = cfg.json().at("train").value("synthetic", "");
  if (!syn_path.empty()) manifest.input("synthetic", syn_path);

  auto train_data = training_data_for(cfg, split);
  BpeVocab vocab = train_bpe(collect_turn_texts(train_data), cfg.vocab_size(), cfg.lowercase());
  const std::string vocab_path = cfg.out_dir() + "/vocab.json";
  vocab.save(vocab_path);
  manifest.artifact(vocab_path);

  ModelConfig mc = cfg.model_config();
  mc.vocab_size = vocab.size();
  TrainConfig tc = cfg.train_config();
  Model model(mc, derive_seed(tc.seed, "init"));
  auto examples = build_training_examples(train_data, vocab, mc, tc.per_dialogue_labels);
  auto valid_examples = build_training_examples(split.valid, vocab, mc, tc.per_dialogue_labels);

  const std::string logs_dir = cfg.out_dir() + "/logs";
  ensure_dir(logs_dir);
  std::ofstream metrics(logs_dir + "/metrics.jsonl", std::ios::binary);
  if (!metrics) throw DataError("cannot write metrics log");

  const std::string ckpt_dir = cfg.out_dir() + "/checkpoints";
  ensure_dir(ckpt_dir);
  const int64_t checkpoint_every = cfg.json().at("train").value("checkpoint_every", 0LL);

  Trainer trainer(model, std::move(examples), tc);
  MetricsSink sink = [&](int64_t step, const LossBreakdown& lb) {
    ordered_json line;
    line["step"] = step;
    line["l_lm"] = lb.l_lm;
    line["l_disc"] = lb.l_disc;
    line["l_train"] = lb.l_train;
    line["alpha"] = lb.alpha;
    if (tc.eval_every > 0 && step % tc.eval_every == 0 && !valid_examples.empty()) {
      const size_t n = std::min<size_t>(valid_examples.size(), 64);
      line["valid_l_lm"] = lm_loss(
          model, std::span<const TrainingExample>(valid_examples.data(), n), false);
    }
    metrics << line.dump() << "\n";
    if (checkpoint_every > 0 && step % checkpoint_every == 0 && step < tc.max_steps) {
      const std::string path = ckpt_dir + "/step_" + std::to_string(step) + ".ckpt";
      model.save_checkpoint(path, vocab.content_hash(), step);
      manifest.artifact(path);
    }
  };
  trainer.run(tc.max_steps, sink);
  metrics.close();
  manifest.artifact(logs_dir + "/metrics.jsonl");

  const std::string ckpt_path = ckpt_dir + "/final.ckpt";
  model.save_checkpoint(ckpt_path, vocab.content_hash(), trainer.steps_done());
  manifest.artifact(ckpt_path);
  manifest.commit();
  return 0;
}

int run_eval(const ExperimentConfig& cfg) {
  ManifestWriter manifest(cfg, "eval");
  manifest.input("corpus", cfg.corpus_path());
  auto dialogues = load_labeled_corpus(cfg);
  auto split = load_split_files(dialogues, cfg.out_dir() + "/splits");

  std::string ckpt_path = cfg.json().at("eval").value("checkpoint", "");
  if (ckpt_path.empty()) ckpt_path = cfg.out_dir() + "/checkpoints/final.ckpt";
  std::string vocab_path = cfg.json().at("eval").value("vocab", "");
  if (vocab_path.empty()) vocab_path = cfg.out_dir() + "/vocab.json";
  manifest.input("checkpoint", ckpt_path);
  manifest.input("vocab", vocab_path);

  auto loaded = Model::load_checkpoint(ckpt_path);
  BpeVocab vocab = BpeVocab::load(vocab_path);
  if (vocab.content_hash() != loaded.vocab_hash)
    throw DataError("vocabulary does not match the checkpoint's recorded vocab hash");

  const std::string split_name = cfg.eval_split_name();
  const std::vector<Dialogue>* eval_pool = nullptr;
  if (split_name == "valid") {
    eval_pool = &split.valid;
  } else if (split_name == "test") {
    eval_pool = &split.test;
  } else if (split_name == "train") {
    eval_pool = &split.train;
  } else {
    throw UsageError("eval.split must be 'train', 'valid' or 'test'");
  }

  auto result = zero_shot_eval(loaded.model, vocab, *eval_pool, cfg.eval_options());

  ordered_json j;
  j["split"] = split_name;
  j["contexts"] = result.contexts_evaluated;
  j["multi_contexts"] = result.multi_contexts_evaluated;
  j["bleu_overall"] = result.overall.score;
  if (result.multiple_only) {
    j["bleu_multiple_only"] = result.multiple_only->score;
  } else {
    j["bleu_multiple_only"] = nullptr;
  }
  std::string csv = "metric,value\n";
  csv += "bleu_multiple_only," +
         (result.multiple_only ? fmt_double(result.multiple_only->score) : std::string("absent")) +
         "\n";
  csv += "bleu_overall," + fmt_double(result.overall.score) + "\n";
  write_report_pair(manifest, cfg.out_dir() + "/reports/zero_shot", j, csv);
  manifest.commit();
  return 0;
}

namespace {

PipelineConfig pipeline_config(const ExperimentConfig& cfg) {
  PipelineConfig p;
  p.model = cfg.model_config();
  p.train = cfg.train_config();
  p.vocab_size = cfg.vocab_size();
  p.lowercase = cfg.lowercase();
  p.eval_max_gen_len = cfg.eval_options().max_gen_len;
  p.smooth_bleu = cfg.eval_options().smooth_bleu;
  p.mixture_allocation = cfg.mixture_allocation();
  p.mixture_seed = derive_seed(cfg.root_seed(), "mixture");
  return p;
}

}  // namespace

int run_ablation(const ExperimentConfig& cfg) {
  ManifestWriter manifest(cfg, "ablation");
  manifest.input("corpus", cfg.corpus_path());
  auto dialogues = load_labeled_corpus(cfg);
  auto split = load_split_files(dialogues, cfg.out_dir() + "/splits");

  const PipelineConfig pcfg = pipeline_config(cfg);

  // Each row's mixture, persisted as an id array next to the splits.
  // build_mixture is pure in (pool, spec, seed), so this re-derivation is
  // exactly what the schedule trains on.
  const std::string mix_dir = cfg.out_dir() + "/splits/mixtures";
  ordered_json mix_manifest = ordered_json::array();
  for (const auto& spec : cfg.ablation_rows()) {
    auto mixture = build_mixture(split.train, spec, pcfg.mixture_seed, pcfg.mixture_allocation);
    ordered_json ids = ordered_json::array();
    for (const auto& d : mixture) ids.push_back(d.id);
    const std::string name =
        "mixture_" + std::to_string(spec.n_single) + "_" + std::to_string(spec.n_multiple);
    write_file(mix_dir + "/" + name + ".json", ids.dump(2) + "\n");
    manifest.artifact(mix_dir + "/" + name + ".json");
    mix_manifest.push_back({{"file", name + ".json"},
                            {"n_single", spec.n_single},
                            {"n_multiple", spec.n_multiple},
                            {"seed", pcfg.mixture_seed}});
  }
  write_file(mix_dir + "/manifest.json", mix_manifest.dump(2) + "\n");
  manifest.artifact(mix_dir + "/manifest.json");

  auto rows = run_ablation_schedule(split, cfg.ablation_total(), cfg.ablation_rows(), pcfg);

  ordered_json j = ordered_json::array();
  std::string csv = "single,multiple,bleu_multiple_only,bleu_overall,final_l_lm\n";
  for (const auto& r : rows) {
    ordered_json row;
    row["single"] = r.spec.n_single;
    row["multiple"] = r.spec.n_multiple;
    if (r.bleu_multiple_only) {
      row["bleu_multiple_only"] = *r.bleu_multiple_only;
    } else {
      row["bleu_multiple_only"] = nullptr;
    }
    row["bleu_overall"] = r.bleu_overall;
    row["final_l_lm"] = r.final_l_lm;
    j.push_back(row);
    csv += std::to_string(r.spec.n_single) + "," + std::to_string(r.spec.n_multiple) + "," +
           (r.bleu_multiple_only ? fmt_double(*r.bleu_multiple_only) : std::string("absent")) +
           "," + fmt_double(r.bleu_overall) + "," + fmt_double(r.final_l_lm) + "\n";
  }
  write_report_pair(manifest, cfg.out_dir() + "/reports/ablation", j, csv);
  manifest.commit();
  return 0;
}

int run_alpha_sweep(const ExperimentConfig& cfg) {
  ManifestWriter manifest(cfg, "alpha-sweep");
  manifest.input("corpus", cfg.corpus_path());
  auto dialogues = load_labeled_corpus(cfg);
  auto split = load_split_files(dialogues, cfg.out_dir() + "/splits");

  auto rows = alpha_sweep(split, cfg.alpha_grid(), pipeline_config(cfg));

  ordered_json j = ordered_json::array();
  std::string csv = "alpha,bleu_multiple_only,bleu_overall,final_l_lm,final_l_disc\n";
  for (const auto& r : rows) {
    ordered_json row;
    row["alpha"] = r.alpha;
    if (r.bleu_multiple_only) {
      row["bleu_multiple_only"] = *r.bleu_multiple_only;
    } else {
      row["bleu_multiple_only"] = nullptr;
    }
    row["bleu_overall"] = r.bleu_overall;
    row["final_l_lm"] = r.final_l_lm;
    row["final_l_disc"] = r.final_l_disc;
    j.push_back(row);
    char alpha_buf[32];
    std::snprintf(alpha_buf, sizeof alpha_buf, "%g", r.alpha);
    csv += std::string(alpha_buf) + "," +
           (r.bleu_multiple_only ? fmt_double(*r.bleu_multiple_only) : std::string("absent")) +
           "," + fmt_double(r.bleu_overall) + "," + fmt_double(r.final_l_lm) + "," +
           fmt_double(r.final_l_disc) + "\n";
  }
  write_report_pair(manifest, cfg.out_dir() + "/reports/alpha_sweep", j, csv);
  manifest.commit();
  return 0;
}

int run_overlap(const ExperimentConfig& cfg) {
  ManifestWriter manifest(cfg, "overlap");
  manifest.input("corpus", cfg.corpus_path());
  auto dialogues = load_labeled_corpus(cfg);
  auto split = load_split_files(dialogues, cfg.out_dir() + "/splits");

  auto rows = overlap_table(split, cfg.ngram_n(), cfg.cross_turn_ngrams());

  ordered_json j = ordered_json::array();
  std::string csv = "train,valid,n,train_distinct,valid_distinct,intersection,percent_unseen\n";
  for (const auto& r : rows) {
    ordered_json row;
    row["train"] = r.train_label;
    row["valid"] = r.valid_label;
    row["n"] = r.report.n;
    row["train_distinct"] = r.report.train_distinct;
    row["valid_distinct"] = r.report.valid_distinct;
    row["intersection"] = r.report.intersection;
    row["percent_unseen"] = r.report.percent_unseen;
    j.push_back(row);
    csv += r.train_label + "," + r.valid_label + "," + std::to_string(r.report.n) + "," +
           std::to_string(r.report.train_distinct) + "," +
           std::to_string(r.report.valid_distinct) + "," +
           std::to_string(r.report.intersection) + "," + fmt_double(r.report.percent_unseen) +
           "\n";
  }
  write_report_pair(manifest, cfg.out_dir() + "/reports/overlap", j, csv);
  manifest.commit();
  return 0;
}

int run_gradcheck(const ExperimentConfig& cfg) {
  ManifestWriter manifest(cfg, "gradcheck");
  manifest.input("corpus", cfg.corpus_path());
  auto dialogues = load_labeled_corpus(cfg);

  BpeVocab vocab = train_bpe(collect_turn_texts(dialogues), cfg.vocab_size(), cfg.lowercase());
  ModelConfig mc = cfg.model_config();
  mc.vocab_size = vocab.size();
  TrainConfig tc = cfg.train_config();
  Model model(mc, derive_seed(tc.seed, "init"));

  auto examples = build_training_examples(dialogues, vocab, mc, tc.per_dialogue_labels);
  const int want = cfg.json().at("gradcheck").value("batch_examples", 2);
  if (static_cast<int>(examples.size()) > want) examples.resize(want);

  const int coords = cfg.json().at("gradcheck").value("coords_per_block", 32);
  auto blocks = grad_check(model, examples, tc, cfg.gradcheck_tolerance(),
                           derive_seed(cfg.root_seed(), "gradcheck"), coords);

  bool all_pass = true;
  ordered_json j = ordered_json::array();
  std::string csv = "tensor,coords,max_rel_err,pass\n";
  for (const auto& b : blocks) {
    all_pass = all_pass && b.pass;
    ordered_json row;
    row["tensor"] = b.name;
    row["coords"] = b.coords_checked;
    row["max_rel_err"] = b.max_rel_err;
    row["pass"] = b.pass;
    j.push_back(row);
    char err_buf[32];
    std::snprintf(err_buf, sizeof err_buf, "%.3e", b.max_rel_err);
    csv += b.name + "," + std::to_string(b.coords_checked) + "," + err_buf + "," +
           (b.pass ? "pass" : "FAIL") + "\n";
  }
  write_report_pair(manifest, cfg.out_dir() + "/reports/gradcheck", j, csv);
  manifest.commit();
  if (!all_pass) {
    log_warn("gradient check failed; see reports/gradcheck.csv");
    return 3;
  }
  return 0;
}

void write_zero_shot_comparison(const std::vector<ZeroShotComparisonRow>& rows,
                                const std::string& json_path, const std::string& csv_path) {
  ordered_json j = ordered_json::array();
  std::string csv = "data,bleu_multiple_only,bleu_overall\n";
  for (const auto& r : rows) {
    ordered_json row;
    row["data"] = r.data_label;
    if (r.bleu_multiple_only) {
      row["bleu_multiple_only"] = *r.bleu_multiple_only;
    } else {
      row["bleu_multiple_only"] = nullptr;
    }
    row["bleu_overall"] = r.bleu_overall;
    j.push_back(row);
    csv += r.data_label + "," +
           (r.bleu_multiple_only ? fmt_double(*r.bleu_multiple_only) : std::string("absent")) +
           "," + fmt_double(r.bleu_overall) + "\n";
  }
  write_file(json_path, j.dump(2) + "\n");
  write_file(csv_path, csv);
}

}  // namespace dialcomp
