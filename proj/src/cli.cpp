#include "dlm/cli.hpp"

#include <fmt/chrono.h>
#include <fmt/format.h>

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>

#include "dlm/checkpoint.hpp"
#include "dlm/corpus.hpp"
#include "dlm/eval.hpp"
#include "dlm/metrics.hpp"

#ifndef DLM_VERSION
#define DLM_VERSION "0.0.0"
#endif

namespace dlm::cli {
namespace fs = std::filesystem;

namespace {

std::size_t parse_size(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    if (value.empty() || value.front() == '-' || value.front() == '+') throw std::invalid_argument("sign");
    v = std::stoull(value, &pos);
  } catch (const std::logic_error&) {
    pos = std::string::npos;
  }
  if (pos != value.size()) throw ConfigError(fmt::format("{}: '{}' is not a non-negative integer", key, value));
  return static_cast<std::size_t>(v);
}

double parse_real(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &pos);
  } catch (const std::logic_error&) {
    pos = std::string::npos;
  }
  if (pos != value.size() || !std::isfinite(v)) throw ConfigError(fmt::format("{}: '{}' is not a number", key, value));
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true") return true;
  if (value == "0" || value == "false") return false;
  throw ConfigError(fmt::format("{}: '{}' is not a boolean (true/false/1/0)", key, value));
}

std::string real_text(double v) { return fmt::format("{}", v); }

struct SettingDef {
  std::string key;
  std::string help;
  std::function<void(Settings&, const std::string&)> set;
  std::function<std::string(const Settings&)> get;
};

#define DLM_SIZE_SETTING(key, field, help)                                                   \
  SettingDef {                                                                               \
    key, help, [](Settings& s, const std::string& v) { s.field = parse_size(key, v); },      \
        [](const Settings& s) { return std::to_string(s.field); }                            \
  }
#define DLM_REAL_SETTING(key, field, help)                                                   \
  SettingDef {                                                                               \
    key, help, [](Settings& s, const std::string& v) { s.field = parse_real(key, v); },      \
        [](const Settings& s) { return real_text(s.field); }                                 \
  }

const std::vector<SettingDef>& setting_defs() {
  static const std::vector<SettingDef> defs{
      DLM_SIZE_SETTING("batch_size", train.batch_size, "sequences per batch"),
      DLM_SIZE_SETTING("max_len", train.max_len, "maximum sequence length in tokens"),
      DLM_SIZE_SETTING("epochs", train.epochs, "training epochs"),
      DLM_REAL_SETTING("learning_rate", train.learning_rate, "peak learning rate"),
      DLM_REAL_SETTING("weight_decay", train.weight_decay, "decoupled weight decay"),
      DLM_REAL_SETTING("warmup_fraction", train.warmup_fraction, "fraction of steps spent warming up"),
      DLM_REAL_SETTING("grad_clip_norm", train.grad_clip_norm, "global gradient norm limit"),
      SettingDef{"seed", "seed for every random choice",
                 [](Settings& s, const std::string& v) { s.train.seed = parse_size("seed", v); },
                 [](const Settings& s) { return std::to_string(s.train.seed); }},
      DLM_REAL_SETTING("mask_rate", train.mask_rate, "fraction of maskable tokens selected"),
      DLM_REAL_SETTING("holdout_fraction", train.holdout_fraction, "selection split when no dev set exists"),
      DLM_SIZE_SETTING("num_layers", model.num_layers, "encoder layers"),
      DLM_SIZE_SETTING("hidden_size", model.hidden_size, "hidden width"),
      DLM_SIZE_SETTING("num_heads", model.num_heads, "attention heads"),
      DLM_SIZE_SETTING("intermediate_size", model.intermediate_size, "feed-forward width"),
      DLM_SIZE_SETTING("max_position", model.max_position, "position embeddings"),
      DLM_REAL_SETTING("dropout_rate", model.dropout_rate, "dropout probability"),
      SettingDef{"tie_mlm_weights", "share the MLM projection with the word embeddings",
                 [](Settings& s, const std::string& v) { s.model.tie_mlm_weights = parse_bool("tie_mlm_weights", v); },
                 [](const Settings& s) { return std::string(s.model.tie_mlm_weights ? "true" : "false"); }},
      DLM_REAL_SETTING("layer_norm_eps", model.layer_norm_eps, "layer norm epsilon"),
      DLM_REAL_SETTING("init_std", model.init_std, "initializer standard deviation"),
      DLM_SIZE_SETTING("vocab_size", vocab.target_size, "target vocabulary size"),
      DLM_SIZE_SETTING("min_frequency", vocab.min_frequency, "minimum pair frequency for a merge"),
      DLM_REAL_SETTING("threshold", threshold, "dialect probability threshold"),
  };
  return defs;
}

#undef DLM_SIZE_SETTING
#undef DLM_REAL_SETTING

const SettingDef* find_setting(const std::string& key) {
  for (const auto& d : setting_defs()) {
    if (d.key == key) return &d;
  }
  return nullptr;
}

std::string dashed(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

const std::vector<std::string> kTrainKeys{"batch_size",     "max_len", "epochs",    "learning_rate",
                                          "weight_decay",   "warmup_fraction", "grad_clip_norm", "seed",
                                          "mask_rate",      "holdout_fraction"};
const std::vector<std::string> kModelKeys{"num_layers",        "hidden_size",  "num_heads",
                                          "intermediate_size", "max_position", "dropout_rate",
                                          "tie_mlm_weights",   "layer_norm_eps", "init_std"};

std::vector<std::string> settings_for(std::string_view sub) {
  std::vector<std::string> keys;
  auto add = [&](const std::vector<std::string>& more) { keys.insert(keys.end(), more.begin(), more.end()); };
  if (sub == "train-vocab") {
    add({"vocab_size", "min_frequency"});
  } else if (sub == "filter-corpus") {
    add(kTrainKeys);
    add(kModelKeys);
    add({"vocab_size", "min_frequency", "threshold"});
  } else if (sub == "pretrain") {
    add(kTrainKeys);
    add(kModelKeys);
  } else if (sub == "finetune") {
    add(kTrainKeys);
  } else if (sub == "evaluate") {
    for (const auto& k : kTrainKeys) {
      if (k != "seed") keys.push_back(k);
    }
  }
  return keys;
}

using Kind = FlagSpec::Kind;

std::vector<FlagSpec> build_flags(std::string_view sub) {
  std::vector<FlagSpec> flags;
  if (sub == "train-vocab") {
    flags.push_back({"corpus", Kind::kList, "corpus text file(s), one sentence per line", true, {}, {}});
    flags.push_back({"out", Kind::kValue, "output directory (vocab.txt, manifest.txt)", true, {}, {}});
  } else if (sub == "filter-corpus") {
    flags.push_back({"input", Kind::kList, "raw corpus dump(s) to filter", true, {}, {}});
    flags.push_back({"out", Kind::kValue, "output directory", true, {}, {}});
    flags.push_back({"filter-ckpt", Kind::kValue, "trained MSA/dialect classifier checkpoint", false,
                     {"train-msa", "train-dialect"}, {}});
    flags.push_back({"train-msa", Kind::kList, "MSA sentences for training a classifier", false, {}, {"train-dialect"}});
    flags.push_back({"train-dialect", Kind::kList, "dialect sentences for training a classifier", false, {}, {"train-msa"}});
    flags.push_back({"vocab", Kind::kValue, "vocabulary (default: next to --filter-ckpt, or trained)", false, {}, {}});
    flags.push_back({"init-ckpt", Kind::kValue, "pretrained encoder to fine-tune the classifier from", false,
                     {"filter-ckpt"}, {}});
  } else if (sub == "pretrain") {
    flags.push_back({"corpus", Kind::kList, "training corpus file(s)", true, {}, {}});
    flags.push_back({"vocab", Kind::kValue, "vocabulary file", true, {}, {}});
    flags.push_back({"out", Kind::kValue, "output directory (ckpt-epoch<k>, train.log)", true, {}, {}});
    flags.push_back({"init-ckpt", Kind::kValue, "continue from this checkpoint", false, {}, {}});
  } else if (sub == "finetune") {
    flags.push_back({"dataset", Kind::kValue, "TSV file or directory with train/dev/test.tsv", true, {}, {}});
    flags.push_back({"ckpt", Kind::kValue, "pretrained checkpoint", true, {}, {}});
    flags.push_back({"vocab", Kind::kValue, "vocabulary (default: vocab.txt next to --ckpt)", false, {}, {}});
    flags.push_back({"out", Kind::kValue, "output directory (ckpt-best, train.log)", true, {}, {}});
  } else if (sub == "evaluate") {
    flags.push_back({"dataset", Kind::kValue, "TSV file or directory with train/dev/test.tsv", true, {}, {}});
    flags.push_back({"ckpt", Kind::kValue, "pretrained checkpoint", true, {}, {}});
    flags.push_back({"vocab", Kind::kValue, "vocabulary (default: vocab.txt next to --ckpt)", false, {}, {}});
    flags.push_back({"seeds", Kind::kValue, "comma-separated fine-tuning seeds (default 1,2,3,4,5)", false, {}, {}});
    flags.push_back({"out", Kind::kValue, "output directory for report.txt (default .)", false, {}, {}});
    flags.push_back({"baseline-report", Kind::kValue, "report of another model to test against", false, {}, {}});
    flags.push_back({"paired", Kind::kSwitch, "paired t-test by seed instead of Welch", false, {}, {"baseline-report"}});
  } else if (sub == "stats") {
    flags.push_back({"input", Kind::kList, "corpus file(s)", true, {}, {}});
    flags.push_back({"out", Kind::kValue, "also write stats.txt and a manifest here", false, {}, {}});
  }
  if (sub != "stats") flags.push_back({"config", Kind::kValue, "key=value settings file; flags override", false, {}, {}});
  for (const auto& key : settings_for(sub)) {
    flags.push_back({dashed(key), Kind::kSetting, find_setting(key)->help, false, {}, {}});
  }
  return flags;
}

std::string utc_now() {
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::chrono::system_clock::to_time_t(std::chrono::system_clock::now())));
}

// Values gathered from the command line, keyed by flag name.
struct Invocation {
  std::string subcommand;
  std::map<std::string, std::string> values;
  std::map<std::string, std::vector<std::string>> lists;
  std::set<std::string> switches;
  Settings settings;

  bool has(const std::string& flag) const { return values.count(flag) || lists.count(flag) || switches.count(flag); }
  const std::string& value(const std::string& flag) const { return values.at(flag); }
  std::string value_or(const std::string& flag, std::string fallback) const {
    const auto it = values.find(flag);
    return it == values.end() ? fallback : it->second;
  }
  std::vector<fs::path> paths(const std::string& flag) const {
    std::vector<fs::path> out;
    if (const auto it = lists.find(flag); it != lists.end()) out.assign(it->second.begin(), it->second.end());
    return out;
  }
};

struct Outcome {
  std::vector<std::string> outputs;
};

Vocab locate_vocab(const Invocation& inv, const fs::path& ckpt) {
  if (inv.has("vocab")) return Vocab::load(inv.value("vocab"));
  const fs::path beside = ckpt.parent_path() / "vocab.txt";
  if (!fs::exists(beside)) {
    throw std::runtime_error("no --vocab given and no vocab.txt next to " + ckpt.string());
  }
  return Vocab::load(beside);
}

void copy_vocab(const Vocab& vocab, const fs::path& out_dir, Outcome& outcome) {
  const fs::path path = out_dir / "vocab.txt";
  vocab.save(path);
  outcome.outputs.push_back(path.string());
}

std::vector<std::string> read_corpus(const std::vector<fs::path>& paths, std::ostream& err) {
  IngestResult ingested = ingest(paths);
  if (ingested.repaired > 0) err << fmt::format("note: repaired {} malformed UTF-8 sequence(s)\n", ingested.repaired);
  return std::move(ingested.sentences);
}

void run_train_vocab(const Invocation& inv, const fs::path& out_dir, std::ostream& out, std::ostream& err,
                     Outcome& outcome) {
  const auto corpus = read_corpus(inv.paths("corpus"), err);
  const Vocab vocab = train_vocab(corpus, inv.settings.vocab);
  copy_vocab(vocab, out_dir, outcome);
  out << fmt::format("vocab size={} sentences={}\n", vocab.size(), corpus.size());
}

void run_filter_corpus(const Invocation& inv, const fs::path& out_dir, std::ostream& out, std::ostream& err,
                       Outcome& outcome) {
  const Settings& s = inv.settings;
  FilterModel filter;
  if (inv.has("filter-ckpt")) {
    const fs::path ckpt_path = inv.value("filter-ckpt");
    filter.checkpoint = Checkpoint::load(ckpt_path);
    filter.vocab = locate_vocab(inv, ckpt_path);
    filter.threshold = s.threshold;
    filter.max_len = s.train.max_len;
  } else {
    if (!inv.has("train-msa")) throw ConfigError("filter-corpus needs --filter-ckpt or --train-msa with --train-dialect");
    const auto msa = read_corpus(inv.paths("train-msa"), err);
    const auto dialect = read_corpus(inv.paths("train-dialect"), err);
    FilterTrainConfig fc;
    fc.train = s.train;
    fc.model = s.model;
    fc.vocab_size = s.vocab.target_size;
    fc.threshold = s.threshold;
    std::optional<Vocab> vocab;
    if (inv.has("vocab")) vocab = Vocab::load(inv.value("vocab"));
    fc.vocab = vocab ? &*vocab : nullptr;
    std::optional<Checkpoint> init;
    if (inv.has("init-ckpt")) init = Checkpoint::load(inv.value("init-ckpt"));
    fc.start = init ? &*init : nullptr;
    FilterTrainResult trained = train_filter(msa, dialect, fc);
    for (const auto& w : trained.warnings) err << "warning: " << w << "\n";
    out << fmt::format("filter held-out accuracy={:.4f} train={} test={}\n", trained.heldout_accuracy,
                       trained.train_examples, trained.test_examples);
    filter = std::move(trained.model);
    const fs::path ckpt_path = out_dir / "filter.ckpt";
    filter.checkpoint.save(ckpt_path);
    outcome.outputs.push_back(ckpt_path.string());
    copy_vocab(filter.vocab, out_dir, outcome);
  }

  IngestResult ingested = ingest(inv.paths("input"));
  const PipelineResult result = run_corpus_pipeline(std::move(ingested), filter, s.train.batch_size);
  const fs::path dialect_path = out_dir / "dialect.txt";
  const fs::path msa_path = out_dir / "msa.txt";
  const fs::path stats_path = out_dir / "stats.txt";
  write_lines(dialect_path, result.dialect);
  write_lines(msa_path, result.msa);
  std::ofstream(stats_path) << result.stats.line() << "\n";
  outcome.outputs.insert(outcome.outputs.end(), {dialect_path.string(), msa_path.string(), stats_path.string()});
  out << result.stats.line() << "\n";
}

void run_pretrain(const Invocation& inv, const fs::path& out_dir, std::ostream& out, std::ostream& err,
                  Outcome& outcome) {
  const Settings& s = inv.settings;
  const Vocab vocab = Vocab::load(inv.value("vocab"));
  ModelConfig mc = s.model;
  mc.vocab_size = vocab.size();
  mc.num_labels = 0;
  if (mc.max_position < s.train.max_len) {
    throw ConfigError(fmt::format("max_position {} is smaller than max_len {}", mc.max_position, s.train.max_len));
  }
  mc.validate();
  std::vector<TokenizedSequence> corpus;
  for (const auto& sentence : read_corpus(inv.paths("corpus"), err)) corpus.push_back(encode(sentence, vocab, s.train.max_len));

  std::optional<Checkpoint> init;
  if (inv.has("init-ckpt")) init = Checkpoint::load(inv.value("init-ckpt"));
  PretrainOptions options;
  options.out_dir = out_dir;
  options.init = init ? &*init : nullptr;
  options.on_epoch = [&](std::size_t epoch, const Checkpoint&, const TrainLog& log) {
    out << fmt::format("epoch {} mean_loss={:.6f}\n", epoch, log.epoch_mean_loss.back());
    outcome.outputs.push_back((out_dir / fmt::format("ckpt-epoch{}", epoch)).string());
  };
  const TrainResult result = pretrain(corpus, s.train, mc, options);
  result.log.write(out_dir / "train.log");
  outcome.outputs.push_back((out_dir / "train.log").string());
  copy_vocab(vocab, out_dir, outcome);
}

LabeledSequences encode_rows(std::span<const LabeledText> rows, const Vocab& vocab, std::size_t max_len) {
  LabeledSequences out;
  for (const auto& row : rows) {
    out.sequences.push_back(encode(row.text, vocab, max_len));
    out.labels.push_back(row.label);
  }
  return out;
}

void run_finetune(const Invocation& inv, const fs::path& out_dir, std::ostream& out, std::ostream&, Outcome& outcome) {
  const Settings& s = inv.settings;
  const fs::path ckpt_path = inv.value("ckpt");
  const Checkpoint start = Checkpoint::load(ckpt_path);
  const Vocab vocab = locate_vocab(inv, ckpt_path);
  if (start.config.vocab_size != vocab.size()) {
    throw std::runtime_error(fmt::format("checkpoint vocabulary {} does not match vocab {}", start.config.vocab_size,
                                         vocab.size()));
  }
  const LabeledDataset ds = load_dataset(inv.value("dataset"));
  const LabeledSequences train = encode_rows(ds.train, vocab, s.train.max_len);
  std::optional<LabeledSequences> dev;
  if (ds.dev && !ds.dev->empty()) dev = encode_rows(*ds.dev, vocab, s.train.max_len);
  FinetuneOptions options;
  options.dev = dev ? &*dev : nullptr;
  options.on_epoch = [&](std::size_t epoch, const Checkpoint& ckpt, const TrainLog& log) {
    out << fmt::format("epoch {} mean_loss={:.6f} selection_accuracy={}\n", epoch, log.epoch_mean_loss.back(),
                       ckpt.metadata.at("selection_accuracy"));
  };
  FinetuneResult result = finetune(start, train, s.train, ds.num_labels(), options);
  for (std::size_t i = 0; i < ds.label_names.size(); ++i) {
    result.checkpoint.metadata[fmt::format("label.{}", i)] = ds.label_names[i];
  }
  const fs::path best = out_dir / "ckpt-best";
  result.checkpoint.save(best);
  result.log.write(out_dir / "train.log");
  outcome.outputs.insert(outcome.outputs.end(), {best.string(), (out_dir / "train.log").string()});
  copy_vocab(vocab, out_dir, outcome);

  const LabeledSequences test = encode_rows(ds.test, vocab, s.train.max_len);
  const auto preds = predict(load_model<float>(result.checkpoint), test.sequences, s.train.batch_size);
  out << fmt::format("best epoch {} test macro_f1={:.4f} accuracy={:.4f}\n", result.best_epoch,
                     macro_f1(preds, test.labels, ds.num_labels()), accuracy(preds, test.labels));
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t comma = text.find(',', pos);
    if (comma == std::string::npos) comma = text.size();
    seeds.push_back(parse_size("seeds", text.substr(pos, comma - pos)));
    pos = comma + 1;
  }
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seeds: values must be distinct");
  }
  return seeds;
}

void run_evaluate(const Invocation& inv, const fs::path& out_dir, std::ostream& out, std::ostream& err,
                  Outcome& outcome) {
  const Settings& s = inv.settings;
  const auto seeds = inv.has("seeds") ? parse_seeds(inv.value("seeds")) : default_seeds();
  const fs::path ckpt_path = inv.value("ckpt");
  const Checkpoint start = Checkpoint::load(ckpt_path);
  const Vocab vocab = locate_vocab(inv, ckpt_path);
  const LabeledDataset ds = load_dataset(inv.value("dataset"));

  EvalOptions options;
  options.model_name = ckpt_path.filename().string();
  options.paired = inv.switches.count("paired") > 0;
  if (inv.has("baseline-report")) {
    std::ifstream in(inv.value("baseline-report"), std::ios::binary);
    if (!in) throw std::runtime_error("cannot read baseline report " + inv.value("baseline-report"));
    std::stringstream buffer;
    buffer << in.rdbuf();
    const EvalReport baseline = EvalReport::parse(buffer.str());
    options.baseline_name = baseline.model.empty() ? inv.value("baseline-report") : baseline.model;
    options.baseline_scores = baseline.f1_scores();
  }
  options.on_run = [&](const SeedRun& run) {
    out << fmt::format("seed {} macro_f1={:.4f} accuracy={:.4f}\n", run.seed, run.macro_f1, run.accuracy);
  };
  const fs::path report_path = out_dir / "report.txt";
  try {
    const EvalReport report = run_multiseed(ds, start, vocab, s.train, seeds, options);
    std::ofstream(report_path, std::ios::binary) << report.serialize();
    for (const auto& w : report.warnings) err << "warning: " << w << "\n";
  } catch (const EvalError& e) {
    const fs::path partial = out_dir / "report.partial.txt";
    std::ofstream(partial, std::ios::binary) << e.partial().serialize();
    outcome.outputs.push_back(partial.string());
    throw;
  }
  outcome.outputs.push_back(report_path.string());
  out << "report written to " << report_path.string() << "\n";
}

void run_stats(const Invocation& inv, const fs::path* out_dir, std::ostream& out, std::ostream&, Outcome& outcome) {
  IngestResult ingested = ingest(inv.paths("input"));
  const std::size_t input_count = ingested.sentences.size();
  const DedupResult unique = dedup(std::move(ingested.sentences));
  const CorpusStats stats = compute_stats(unique.sentences, unique.duplicates, 0, input_count, ingested.repaired);
  out << stats.line() << "\n";
  if (out_dir) {
    const fs::path path = *out_dir / "stats.txt";
    std::ofstream(path) << stats.line() << "\n";
    outcome.outputs.push_back(path.string());
  }
}

}  // namespace

const std::vector<std::string>& setting_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& d : setting_defs()) k.push_back(d.key);
    return k;
  }();
  return keys;
}

Settings default_settings(std::string_view subcommand) {
  Settings s;
  if (subcommand == "filter-corpus") {
    const FilterTrainConfig fc;
    s.train = fc.train;
    s.model = fc.model;
    s.vocab.target_size = fc.vocab_size;
    s.threshold = fc.threshold;
  }
  return s;
}

void apply_setting(Settings& settings, const std::string& key, const std::string& value) {
  const SettingDef* def = find_setting(key);
  if (!def) throw ConfigError("unknown setting '" + key + "'");
  def->set(settings, value);
}

std::string format_setting(const Settings& settings, const std::string& key) {
  const SettingDef* def = find_setting(key);
  if (!def) throw ConfigError("unknown setting '" + key + "'");
  return def->get(settings);
}

void apply_config_text(Settings& settings, std::string_view text, const std::string& source) {
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("{}:{}: expected key=value", source, line_no));
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      apply_setting(settings, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("{}:{}: {}", source, line_no, e.what()));
    }
  }
}

Settings load_config(const fs::path& path, std::string_view subcommand) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  Settings s = default_settings(subcommand);
  apply_config_text(s, buffer.str(), path.string());
  try {
    s.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return s;
}

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names{"train-vocab", "filter-corpus", "pretrain", "finetune", "evaluate", "stats"};
  return names;
}

const std::vector<FlagSpec>& flags_for(std::string_view subcommand) {
  static const std::map<std::string, std::vector<FlagSpec>, std::less<>> table = [] {
    std::map<std::string, std::vector<FlagSpec>, std::less<>> t;
    for (const auto& sub : subcommands()) t[sub] = build_flags(sub);
    return t;
  }();
  const auto it = table.find(subcommand);
  if (it == table.end()) throw std::out_of_range("unknown subcommand " + std::string(subcommand));
  return it->second;
}

std::string RunManifest::serialize() const {
  std::string out = "run " + subcommand + "\n";
  out += "version=" + version + "\n";
  out += "started=" + started + "\n";
  out += fmt::format("seed={}\n", seed);
  for (const auto& [k, v] : flags) out += "flag." + k + "=" + v + "\n";
  for (const auto& [k, v] : settings) out += "setting." + k + "=" + v + "\n";
  for (const auto& o : outputs) out += "output=" + o + "\n";
  out += "finished=" + finished + "\n";
  out += "status=" + status + "\n";
  out += "end\n";
  return out;
}

std::vector<RunManifest> RunManifest::parse_all(std::string_view text) {
  std::vector<RunManifest> records;
  std::istringstream in{std::string(text)};
  std::string line;
  RunManifest* current = nullptr;
  while (std::getline(in, line)) {
    if (line.rfind("run ", 0) == 0) {
      records.emplace_back();
      current = &records.back();
      current->subcommand = line.substr(4);
      continue;
    }
    if (!current) throw std::invalid_argument("manifest: record does not start with 'run'");
    if (line == "end") {
      current = nullptr;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("manifest: malformed line " + line);
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "version") current->version = value;
    else if (key == "started") current->started = value;
    else if (key == "finished") current->finished = value;
    else if (key == "status") current->status = value;
    else if (key == "seed") current->seed = std::stoull(value);
    else if (key == "output") current->outputs.push_back(value);
    else if (key.rfind("flag.", 0) == 0) current->flags.emplace_back(key.substr(5), value);
    else if (key.rfind("setting.", 0) == 0) current->settings.emplace_back(key.substr(8), value);
    else throw std::invalid_argument("manifest: unknown key " + key);
  }
  return records;
}

void append_manifest(const fs::path& dir, const RunManifest& manifest) {
  std::ofstream out(dir / "manifest.txt", std::ios::binary | std::ios::app);
  if (!out) throw std::runtime_error("cannot append to " + (dir / "manifest.txt").string());
  out << manifest.serialize();
}

std::vector<std::string> replay_argv(const RunManifest& manifest, const fs::path& out_dir) {
  std::vector<std::string> args{manifest.subcommand};
  for (const auto& [name, value] : manifest.flags) {
    if (name == "out" || name == "config") continue;
    args.push_back("--" + name);
    if (!value.empty()) args.push_back(value);
  }
  for (const auto& [key, value] : manifest.settings) {
    args.push_back("--" + dashed(key));
    args.push_back(value);
  }
  args.push_back("--out");
  args.push_back(out_dir.string());
  return args;
}

std::string version() { return DLM_VERSION; }

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dialect corpus filtering, WordPiece tokenization, masked-LM pretraining and evaluation", "dlm"};
  app.set_version_flag("--version", version());
  app.require_subcommand(1);
  app.fallthrough(false);

  Invocation inv;
  std::map<std::string, std::map<std::string, CLI::Option*>> options;
  std::map<std::string, std::string> value_store;
  std::map<std::string, std::vector<std::string>> list_store;
  std::map<std::string, bool> switch_store;
  for (const auto& sub_name : subcommands()) {
    CLI::App* sub = app.add_subcommand(sub_name, "");
    auto& opts = options[sub_name];
    const std::string prefix = sub_name + "/";
    for (const auto& flag : flags_for(sub_name)) {
      const std::string id = prefix + flag.name;
      CLI::Option* opt = nullptr;
      switch (flag.kind) {
        case Kind::kValue:
        case Kind::kSetting:
          opt = sub->add_option("--" + flag.name, value_store[id], flag.help)
                    ->type_name(flag.kind == Kind::kSetting ? "VALUE" : flag.name == "seeds" ? "LIST" : "PATH");
          break;
        case Kind::kList:
          opt = sub->add_option("--" + flag.name, list_store[id], flag.help)->expected(1, -1)->type_name("PATH");
          break;
        case Kind::kSwitch:
          opt = sub->add_flag("--" + flag.name, switch_store[id], flag.help);
          break;
      }
      if (flag.required) opt->required();
      opts[flag.name] = opt;
    }
    for (const auto& flag : flags_for(sub_name)) {
      for (const auto& other : flag.excludes) opts[flag.name]->excludes(opts.at(other));
      for (const auto& other : flag.needs) opts[flag.name]->needs(opts.at(other));
    }
  }
  app.get_subcommand("train-vocab")->description("train a WordPiece vocabulary");
  app.get_subcommand("filter-corpus")->description("normalize, deduplicate and drop MSA sentences");
  app.get_subcommand("pretrain")->description("masked-LM pretraining");
  app.get_subcommand("finetune")->description("fine-tune a sequence classifier");
  app.get_subcommand("evaluate")->description("multi-seed fine-tuning evaluation with significance test");
  app.get_subcommand("stats")->description("corpus statistics");

  if (!args.empty() && !args.front().empty() && args.front().front() != '-' &&
      std::find(subcommands().begin(), subcommands().end(), args.front()) == subcommands().end()) {
    err << "error: unknown subcommand '" << args.front() << "'\n\n" << app.help();
    return kExitUsage;
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  } catch (const CLI::CallForVersion& e) {
    out << version() << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto selected = app.get_subcommands();
    err << (selected.empty() ? app.help() : selected.front()->help());
    return kExitUsage;
  }

  CLI::App* chosen = app.get_subcommands().front();
  inv.subcommand = chosen->get_name();
  const std::string prefix = inv.subcommand + "/";
  RunManifest manifest;
  manifest.subcommand = inv.subcommand;
  manifest.version = version();
  manifest.started = utc_now();

  std::optional<fs::path> out_dir;
  try {
    inv.settings = default_settings(inv.subcommand);
    const auto& flags = flags_for(inv.subcommand);
    const auto& opts = options.at(inv.subcommand);
    if (opts.count("config") && opts.at("config")->count() > 0) {
      const std::string path = value_store.at(prefix + "config");
      std::ifstream in(path, std::ios::binary);
      if (!in) throw ConfigError("cannot read config file " + path);
      std::stringstream buffer;
      buffer << in.rdbuf();
      apply_config_text(inv.settings, buffer.str(), path);
    }
    for (const auto& flag : flags) {
      const CLI::Option* opt = opts.at(flag.name);
      if (opt->count() == 0) continue;
      const std::string id = prefix + flag.name;
      switch (flag.kind) {
        case Kind::kSetting: {
          std::string key = flag.name;
          std::replace(key.begin(), key.end(), '-', '_');
          apply_setting(inv.settings, key, value_store.at(id));
          break;
        }
        case Kind::kValue:
          inv.values[flag.name] = value_store.at(id);
          manifest.flags.emplace_back(flag.name, value_store.at(id));
          break;
        case Kind::kList:
          inv.lists[flag.name] = list_store.at(id);
          for (const auto& v : list_store.at(id)) manifest.flags.emplace_back(flag.name, v);
          break;
        case Kind::kSwitch:
          inv.switches.insert(flag.name);
          manifest.flags.emplace_back(flag.name, "");
          break;
      }
    }
    try {
      inv.settings.train.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    for (const auto& key : settings_for(inv.subcommand)) {
      manifest.settings.emplace_back(key, format_setting(inv.settings, key));
    }
    manifest.seed = inv.settings.train.seed;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  Outcome outcome;
  int code = kExitOk;
  try {
    if (inv.has("out")) {
      out_dir = fs::path(inv.value("out"));
    } else if (inv.subcommand == "evaluate") {
      out_dir = fs::path(".");
    }
    if (out_dir) fs::create_directories(*out_dir);
    if (inv.subcommand == "train-vocab") run_train_vocab(inv, *out_dir, out, err, outcome);
    else if (inv.subcommand == "filter-corpus") run_filter_corpus(inv, *out_dir, out, err, outcome);
    else if (inv.subcommand == "pretrain") run_pretrain(inv, *out_dir, out, err, outcome);
    else if (inv.subcommand == "finetune") run_finetune(inv, *out_dir, out, err, outcome);
    else if (inv.subcommand == "evaluate") run_evaluate(inv, *out_dir, out, err, outcome);
    else run_stats(inv, out_dir ? &*out_dir : nullptr, out, err, outcome);
    manifest.status = "ok";
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    manifest.status = std::string("usage error: ") + e.what();
    code = kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    manifest.status = std::string("failed: ") + e.what();
    code = kExitFailure;
  }
  std::replace(manifest.status.begin(), manifest.status.end(), '\n', ' ');
  manifest.outputs = outcome.outputs;
  manifest.finished = utc_now();
  if (out_dir && fs::is_directory(*out_dir)) {
    try {
      append_manifest(*out_dir, manifest);
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      code = kExitFailure;
    }
  }
  return code;
}

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return dispatch(args, out, err);
}

}  // namespace dlm::cli
