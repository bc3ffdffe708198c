#include "dlm/eval.hpp"

#include <fmt/format.h>

#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

namespace dlm {
namespace {

constexpr std::uint64_t kSingleFileSplitSeed = 0x5EED;
constexpr double kSingleFileTestFraction = 0.2;

std::vector<TsvRow> split_rows(const std::vector<TsvRow>& rows, const std::vector<std::size_t>& idx) {
  std::vector<TsvRow> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(rows[i]);
  return out;
}

std::vector<LabeledText> to_labeled(std::span<const TsvRow> rows, const std::unordered_map<std::string, std::int32_t>& ids,
                                    const char* split) {
  std::vector<LabeledText> out;
  out.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto it = ids.find(rows[i].label);
    if (it == ids.end()) {
      throw std::invalid_argument(fmt::format("{} row {}: label '{}' does not occur in the train split", split, i + 1,
                                              rows[i].label));
    }
    out.push_back({rows[i].text, it->second});
  }
  return out;
}

LabeledSequences encode_split(std::span<const LabeledText> rows, const Vocab& vocab, std::size_t max_len) {
  LabeledSequences out;
  for (const auto& row : rows) {
    out.sequences.push_back(encode(row.text, vocab, max_len));
    out.labels.push_back(row.label);
  }
  return out;
}

std::string num(double x) { return fmt::format("{}", x); }

}  // namespace

std::vector<TsvRow> read_tsv(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument(source + ": empty file (expected header text<TAB>label)");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "text\tlabel") throw std::invalid_argument(source + ": header must be 'text<TAB>label'");
  std::vector<TsvRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t tab = line.rfind('\t');
    if (tab == std::string::npos || tab + 1 == line.size()) {
      throw std::invalid_argument(fmt::format("{}:{}: expected text<TAB>label", source, line_no));
    }
    rows.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return rows;
}

std::vector<TsvRow> read_tsv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read dataset file: " + path.string());
  return read_tsv(in, path.string());
}

void write_tsv(const std::filesystem::path& path, std::span<const TsvRow> rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "text\tlabel\n";
  for (const auto& row : rows) out << row.text << '\t' << row.label << '\n';
}

LabeledDataset make_dataset(std::string name, std::span<const TsvRow> train, const std::vector<TsvRow>* dev,
                            std::span<const TsvRow> test) {
  if (train.empty()) throw std::invalid_argument("dataset '" + name + "': train split is empty");
  if (test.empty()) throw std::invalid_argument("dataset '" + name + "': test split is empty");
  LabeledDataset ds;
  ds.name = std::move(name);
  std::unordered_map<std::string, std::int32_t> ids;
  for (const auto& row : train) {
    if (ids.emplace(row.label, static_cast<std::int32_t>(ds.label_names.size())).second) {
      ds.label_names.push_back(row.label);
    }
  }
  ds.train = to_labeled(train, ids, "train");
  if (dev) ds.dev = to_labeled(*dev, ids, "dev");
  ds.test = to_labeled(test, ids, "test");
  return ds;
}

LabeledDataset load_dataset(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (fs::is_directory(path)) {
    const auto train = read_tsv(path / "train.tsv");
    const auto test = read_tsv(path / "test.tsv");
    std::optional<std::vector<TsvRow>> dev;
    if (fs::exists(path / "dev.tsv")) dev = read_tsv(path / "dev.tsv");
    return make_dataset(path.filename().string(), train, dev ? &*dev : nullptr, test);
  }
  const auto rows = read_tsv(path);
  if (rows.size() < 2) throw std::invalid_argument(path.string() + ": need at least two rows to split");
  auto [train_idx, test_idx] = holdout_split(rows.size(), kSingleFileTestFraction, kSingleFileSplitSeed);
  return make_dataset(path.stem().string(), split_rows(rows, train_idx), nullptr, split_rows(rows, test_idx));
}

std::vector<double> EvalReport::f1_scores() const {
  std::vector<double> out;
  for (const auto& r : runs) out.push_back(r.macro_f1);
  return out;
}

std::vector<double> EvalReport::accuracy_scores() const {
  std::vector<double> out;
  for (const auto& r : runs) out.push_back(r.accuracy);
  return out;
}

std::string EvalReport::serialize() const {
  std::string out;
  out += fmt::format("evaluation of {} on {}\n", model.empty() ? "(unnamed)" : model, dataset);
  out += "metric: macro-F1 (unweighted over classes), accuracy\n";
  for (const auto& r : runs) {
    out += fmt::format("  seed {:>4}  macro_f1 {:.4f}  accuracy {:.4f}  best epoch {}\n", r.seed, r.macro_f1,
                       r.accuracy, r.best_epoch);
  }
  out += fmt::format("macro_f1  {:.4f} +/- {:.4f} over {} runs\n", mean_f1, std_f1, runs.size());
  out += fmt::format("accuracy  {:.4f} +/- {:.4f} over {} runs\n", mean_accuracy, std_accuracy, runs.size());
  if (comparison) {
    const auto& c = *comparison;
    out += fmt::format("vs {}: {} t-test on macro_f1, t={:.4f} df={:.4f} p={:.6g} ({} at 0.05)\n", c.baseline,
                       c.paired ? "paired" : "Welch", c.test.t, c.test.df, c.test.p_value,
                       c.significant ? "significant" : "not significant");
  }
  for (const auto& w : warnings) out += "warning: " + w + "\n";

  out += "[results]\n";
  out += "dataset=" + dataset + "\n";
  out += "model=" + model + "\n";
  out += fmt::format("runs={}\n", runs.size());
  for (std::size_t i = 0; i < runs.size(); ++i) {
    out += fmt::format("run.{}.seed={}\n", i, runs[i].seed);
    out += fmt::format("run.{}.macro_f1={}\n", i, num(runs[i].macro_f1));
    out += fmt::format("run.{}.accuracy={}\n", i, num(runs[i].accuracy));
    out += fmt::format("run.{}.best_epoch={}\n", i, runs[i].best_epoch);
  }
  out += "mean.macro_f1=" + num(mean_f1) + "\n";
  out += "std.macro_f1=" + num(std_f1) + "\n";
  out += "mean.accuracy=" + num(mean_accuracy) + "\n";
  out += "std.accuracy=" + num(std_accuracy) + "\n";
  if (comparison) {
    const auto& c = *comparison;
    out += "comparison.baseline=" + c.baseline + "\n";
    out += fmt::format("comparison.paired={}\n", c.paired ? 1 : 0);
    for (std::size_t i = 0; i < c.baseline_scores.size(); ++i) {
      out += fmt::format("comparison.score.{}={}\n", i, num(c.baseline_scores[i]));
    }
    out += "comparison.t=" + num(c.test.t) + "\n";
    out += "comparison.df=" + num(c.test.df) + "\n";
    out += "comparison.p_value=" + num(c.test.p_value) + "\n";
    out += fmt::format("comparison.significant={}\n", c.significant ? 1 : 0);
  }
  out += fmt::format("warnings={}\n", warnings.size());
  return out;
}

EvalReport EvalReport::parse(std::string_view text) {
  const std::size_t start = text.find("[results]\n");
  if (start == std::string_view::npos) throw std::invalid_argument("report has no [results] block");
  std::map<std::string, std::string> kv;
  std::istringstream in(std::string(text.substr(start + 10)));
  std::string line;
  while (std::getline(in, line)) {
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("malformed report line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const std::string& key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) throw std::invalid_argument("report lacks key '" + key + "'");
    return it->second;
  };
  EvalReport r;
  try {
    r.dataset = get("dataset");
    r.model = get("model");
    const std::size_t n = std::stoull(get("runs"));
    for (std::size_t i = 0; i < n; ++i) {
      SeedRun run;
      run.seed = std::stoull(get(fmt::format("run.{}.seed", i)));
      run.macro_f1 = std::stod(get(fmt::format("run.{}.macro_f1", i)));
      run.accuracy = std::stod(get(fmt::format("run.{}.accuracy", i)));
      run.best_epoch = std::stoull(get(fmt::format("run.{}.best_epoch", i)));
      r.runs.push_back(run);
    }
    r.mean_f1 = std::stod(get("mean.macro_f1"));
    r.std_f1 = std::stod(get("std.macro_f1"));
    r.mean_accuracy = std::stod(get("mean.accuracy"));
    r.std_accuracy = std::stod(get("std.accuracy"));
    if (kv.count("comparison.baseline")) {
      Comparison c;
      c.baseline = get("comparison.baseline");
      c.paired = get("comparison.paired") == "1";
      for (std::size_t i = 0; kv.count(fmt::format("comparison.score.{}", i)); ++i) {
        c.baseline_scores.push_back(std::stod(get(fmt::format("comparison.score.{}", i))));
      }
      c.test.t = std::stod(get("comparison.t"));
      c.test.df = std::stod(get("comparison.df"));
      c.test.p_value = std::stod(get("comparison.p_value"));
      c.significant = get("comparison.significant") == "1";
      r.comparison = std::move(c);
    }
  } catch (const std::logic_error& e) {
    throw std::invalid_argument(std::string("bad report: ") + e.what());
  }
  return r;
}

void summarize(EvalReport& report, const EvalOptions& options) {
  const auto f1 = report.f1_scores();
  const auto acc = report.accuracy_scores();
  if (f1.empty()) return;
  report.mean_f1 = mean(f1);
  report.std_f1 = sample_std(f1);
  report.mean_accuracy = mean(acc);
  report.std_accuracy = sample_std(acc);
  if (f1.size() == 1) report.warnings.push_back("single run: standard deviation reported as 0");
  if (options.baseline_name) {
    Comparison c;
    c.baseline = *options.baseline_name;
    c.baseline_scores = options.baseline_scores;
    c.paired = options.paired;
    c.test = options.paired ? paired_t_test(f1, c.baseline_scores) : welch_t_test(f1, c.baseline_scores);
    c.significant = c.test.p_value < kSignificanceLevel;
    report.comparison = std::move(c);
  }
}

EvalReport run_multiseed(const LabeledDataset& dataset, const Checkpoint& start, const Vocab& vocab,
                         const TrainConfig& config, std::span<const std::uint64_t> seeds,
                         const EvalOptions& options) {
  if (seeds.empty()) throw std::invalid_argument("run_multiseed: no seeds given");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw std::invalid_argument("run_multiseed: seeds must be distinct");
  }
  if (dataset.num_labels() < 2) throw std::invalid_argument("run_multiseed: dataset has fewer than two labels");
  if (start.config.vocab_size != vocab.size()) {
    throw std::invalid_argument(fmt::format("run_multiseed: checkpoint vocabulary {} does not match vocab {}",
                                            start.config.vocab_size, vocab.size()));
  }

  const LabeledSequences train = encode_split(dataset.train, vocab, config.max_len);
  const LabeledSequences test = encode_split(dataset.test, vocab, config.max_len);
  std::optional<LabeledSequences> dev;
  if (dataset.dev && !dataset.dev->empty()) dev = encode_split(*dataset.dev, vocab, config.max_len);

  EvalReport report;
  report.dataset = dataset.name;
  report.model = options.model_name;
  for (std::uint64_t seed : seeds) {
    try {
      TrainConfig run_config = config;
      run_config.seed = seed;
      FinetuneOptions ft;
      ft.dev = dev ? &*dev : nullptr;
      const FinetuneResult tuned = finetune(start, train, run_config, dataset.num_labels(), ft);
      const auto preds = predict(load_model<float>(tuned.checkpoint), test.sequences, config.batch_size);
      SeedRun run{seed, macro_f1(preds, test.labels, dataset.num_labels()), accuracy(preds, test.labels),
                  tuned.best_epoch};
      report.runs.push_back(run);
      if (options.on_run) options.on_run(run);
    } catch (const std::exception& e) {
      EvalReport partial = report;
      summarize(partial, EvalOptions{});
      partial.warnings.push_back(fmt::format("aborted at seed {}: {}", seed, e.what()));
      throw EvalError(fmt::format("run with seed {} failed: {}", seed, e.what()), std::move(partial));
    }
  }
  summarize(report, options);
  return report;
}

}  // namespace dlm
