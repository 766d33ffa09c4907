#include "novoseq/pipeline.hpp"

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <random>
#include <sstream>

#include "novoseq/metrics.hpp"
#include "novoseq/training.hpp"

namespace novoseq {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Key order here is the order of default_config_text().
const std::vector<std::pair<std::string, std::string>>& defaults() {
  static const std::vector<std::pair<std::string, std::string>> d = {
      {"run.seed", ""},
      {"run.out", "."},
      {"model.d", "64"},
      {"model.heads", "2"},
      {"model.hidden", "128"},
      {"model.enc_layers", "2"},
      {"model.at_layers", "2"},
      {"model.nat_layers", "2"},
      {"model.t_max", "24"},
      {"model.max_charge", "10"},
      {"model.cross_additive", "false"},
      {"model.paired_frequencies", "false"},
      {"training.steps", "2000"},
      {"training.batch_size", "8"},
      {"training.lr", "0.0005"},
      {"training.warmup", "100"},
      {"training.finetune_epochs", "200"},
      {"training.finetune_lr", "0.0001"},
      {"training.blocked", "true"},
      {"training.checkpoint_every", "500"},
      {"simulation.train_count", "100"},
      {"simulation.test_count", "20"},
      {"simulation.min_length", "5"},
      {"simulation.max_length", "12"},
      {"simulation.mz_jitter", "0.005"},
      {"simulation.drop_probability", "0.1"},
      {"simulation.noise_peaks", "5"},
      {"decoding.decoder", "at-beam"},
      {"decoding.beam", "5"},
      {"decoding.max_len", "0"},
      {"decoding.tolerance", "0.1"},
      {"decoding.bin", "0.001"},
      {"decoding.max_states", "20000"},
      {"paths.corpus", ""},
      {"paths.test", ""},
      {"paths.checkpoint", ""},
      {"paths.predictions", ""},
      {"paths.truth", ""},
  };
  return d;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  const auto e = s.find_last_not_of(" \t\r\n");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty())
    throw ConfigError("config " + key + ": cannot parse '" + v + "'");
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  const double x = parse_number<double>(key, v);
  if (!std::isfinite(x)) throw ConfigError("config " + key + ": value must be finite");
  return x;
}

bool parse_flag(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config " + key + ": expected true or false, got '" + v + "'");
}

void set_value(std::map<std::string, std::string>& values, const std::string& key,
               const std::string& v) {
  if (!values.count(key)) throw ConfigError("unknown config key '" + key + "'");
  values[key] = trim(v);
}

void build_typed(RunConfig& c) {
  const auto& v = c.values;
  auto u = [&](const char* k) { return parse_number<std::uint64_t>(k, v.at(k)); };
  auto z = [&](const char* k) { return static_cast<std::size_t>(u(k)); };
  auto r = [&](const char* k) { return parse_real(k, v.at(k)); };
  auto b = [&](const char* k) { return parse_flag(k, v.at(k)); };

  if (!v.at("run.seed").empty()) c.seed = u("run.seed");
  c.out = v.at("run.out").empty() ? "." : v.at("run.out");

  c.model.d = z("model.d");
  c.model.heads = z("model.heads");
  c.model.hidden = z("model.hidden");
  c.model.enc_layers = z("model.enc_layers");
  c.model.at_layers = z("model.at_layers");
  c.model.nat_layers = z("model.nat_layers");
  c.model.t_max = z("model.t_max");
  c.model.max_charge = z("model.max_charge");
  c.model.cross_additive = b("model.cross_additive");
  c.model.paired_frequencies = b("model.paired_frequencies");
  try {
    c.model.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }

  c.training.steps = u("training.steps");
  c.training.batch_size = z("training.batch_size");
  c.training.lr = r("training.lr");
  c.training.warmup = u("training.warmup");
  c.training.finetune_epochs = u("training.finetune_epochs");
  c.training.finetune_lr = r("training.finetune_lr");
  c.training.blocked = b("training.blocked");
  c.training.checkpoint_every = u("training.checkpoint_every");
  if (c.training.batch_size == 0) throw ConfigError("training.batch_size must be >= 1");
  if (c.training.lr < 0 || c.training.finetune_lr < 0)
    throw ConfigError("learning rates must be >= 0");

  c.simulation.train_count = z("simulation.train_count");
  c.simulation.test_count = z("simulation.test_count");
  c.simulation.min_length = z("simulation.min_length");
  c.simulation.max_length = z("simulation.max_length");
  c.simulation.noise.mz_jitter = r("simulation.mz_jitter");
  c.simulation.noise.drop_probability = r("simulation.drop_probability");
  c.simulation.noise.noise_peaks = z("simulation.noise_peaks");
  if (c.simulation.min_length == 0 || c.simulation.min_length > c.simulation.max_length)
    throw ConfigError("simulation: need 1 <= min_length <= max_length");
  if (c.simulation.noise.mz_jitter < 0 || c.simulation.noise.drop_probability < 0 ||
      c.simulation.noise.drop_probability > 1)
    throw ConfigError("simulation: jitter must be >= 0 and drop_probability in [0, 1]");

  try {
    c.decoding.kind = parse_decoder_kind(v.at("decoding.decoder"));
  } catch (const DataError& e) {
    throw ConfigError(std::string("decoding.decoder: ") + e.what());
  }
  c.decoding.beam = z("decoding.beam");
  c.decoding.max_len = z("decoding.max_len");
  c.decoding.pmc_tolerance = r("decoding.tolerance");
  c.decoding.pmc_bin = r("decoding.bin");
  c.decoding.pmc_max_states = z("decoding.max_states");
  if (c.decoding.beam == 0) throw ConfigError("decoding.beam must be >= 1");
  if (c.decoding.pmc_bin <= 0 || c.decoding.pmc_tolerance < 0)
    throw ConfigError("decoding: bin must be > 0 and tolerance >= 0");

  c.paths.corpus = v.at("paths.corpus");
  c.paths.test = v.at("paths.test");
  c.paths.checkpoint = v.at("paths.checkpoint");
  c.paths.predictions = v.at("paths.predictions");
  c.paths.truth = v.at("paths.truth");
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t RunConfig::require_seed() const {
  if (!seed) throw ConfigError("a seed is required (--seed N or run.seed in the config)");
  return *seed;
}

std::string RunConfig::hash() const {
  std::string canon;
  for (const auto& [k, v] : values) {
    if (k == "run.out") continue;  // where results go does not change them
    canon += k + "=" + v + "\n";
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canon)));
  return buf;
}

RunConfig load_run_config(const std::string& ini_path, const std::vector<std::string>& overrides) {
  RunConfig c;
  for (const auto& [k, v] : defaults()) c.values[k] = v;
  if (!ini_path.empty()) {
    boost::property_tree::ptree pt;
    try {
      boost::property_tree::ini_parser::read_ini(ini_path, pt);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ConfigError("config " + ini_path + ": " + e.message() +
                        (e.line() ? " (line " + std::to_string(e.line()) + ")" : ""));
    }
    for (const auto& [section, tree] : pt) {
      if (tree.empty()) throw ConfigError("config key '" + section + "' outside a [section]");
      for (const auto& [key, leaf] : tree) set_value(c.values, section + "." + key, leaf.data());
    }
  }
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not section.key=value");
    set_value(c.values, trim(o.substr(0, eq)), o.substr(eq + 1));
  }
  build_typed(c);
  return c;
}

std::string default_config_text() {
  std::string out, section;
  for (const auto& [k, v] : defaults()) {
    const auto dot = k.find('.');
    const std::string s = k.substr(0, dot);
    if (s != section) {
      out += (section.empty() ? "" : "\n") + std::string("[") + s + "]\n";
      section = s;
    }
    out += k.substr(dot + 1) + " = " + v + "\n";
  }
  return out;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return splitmix64(splitmix64(seed ^ splitmix64(stream)) + index);
}

constexpr std::uint64_t kPeptideStream = 1, kSpectrumStream = 2, kTestOffset = 1ULL << 40;
constexpr std::uint64_t kFinetuneStream = 3;

fs::path out_dir(const RunConfig& c) {
  fs::path p(c.out);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw DataError("cannot create output directory " + p.string() + ": " + ec.message());
  return p;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw DataError("cannot write " + path.string());
}

json base_manifest(const std::string& command, const RunConfig& c) {
  json m;
  m["command"] = command;
  m["seed"] = c.seed ? json(*c.seed) : json(nullptr);
  m["cfg_hash"] = c.hash();
  json cfg = json::object();
  for (const auto& [k, v] : c.values) cfg[k] = v;
  m["config"] = cfg;
  return m;
}

void write_manifest(const fs::path& dir, const std::string& command, const json& m) {
  write_file(dir / (command + ".manifest.json"), m.dump(2) + "\n");
}

const std::string& require_path(const std::string& p, const char* key) {
  if (p.empty()) throw ConfigError(std::string("paths.") + key + " is required for this command");
  return p;
}

std::vector<Spectrum> read_annotated(const std::string& path) {
  std::vector<std::string> warnings;
  std::vector<Spectrum> spectra = read_mgf_file(path, &warnings);
  for (const auto& w : warnings) std::cerr << path << ": warning: " << w << "\n";
  if (spectra.empty()) throw DataError(path + ": no spectra");
  for (const Spectrum& s : spectra)
    if (!s.truth || s.truth->empty()) throw DataError(path + ": spectrum " + s.id + " has no SEQ");
  return spectra;
}

void check_lengths(const std::vector<Spectrum>& spectra, const ModelConfig& m) {
  for (const Spectrum& s : spectra)
    if (s.truth && s.truth->size() + 2 > m.t_max)
      throw DataError("spectrum " + s.id + ": peptide length " + std::to_string(s.truth->size()) +
                      " needs t_max >= " + std::to_string(s.truth->size() + 2));
}

class MetricsLog {
 public:
  explicit MetricsLog(const fs::path& path) {
    const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
    out_.open(path, std::ios::app);
    if (!out_) throw DataError("cannot open " + path.string());
    if (fresh) write_metrics_header(out_);
  }
  void add(const StepMetrics& m) {
    write_metrics_row(out_, m);
    if (!out_) throw DataError("metrics write failed");
  }

 private:
  std::ofstream out_;
};

std::vector<TrainingExample> examples_for(const std::vector<Spectrum>& spectra,
                                          const AminoAcidTable& table) {
  std::vector<TrainingExample> ex;
  ex.reserve(spectra.size());
  for (const Spectrum& s : spectra) ex.push_back(make_example(s, table));
  return ex;
}

std::vector<TrainingExample> pick(const std::vector<TrainingExample>& all,
                                  const std::vector<std::size_t>& idx) {
  std::vector<TrainingExample> b;
  b.reserve(idx.size());
  for (std::size_t i : idx) b.push_back(all[i]);
  return b;
}

std::uint64_t report_every(std::uint64_t total) { return std::max<std::uint64_t>(1, total / 20); }

std::vector<ad::Tensor> partition_values(const ad::ParameterStore& store, const char* partition) {
  std::vector<ad::Tensor> out;
  store.for_each([&](const std::string& part, const std::string&, const ad::Parameter& p) {
    if (part == partition) out.push_back(p.value);
  });
  return out;
}

}  // namespace

Peptide random_peptide(std::uint64_t seed, std::size_t min_length, std::size_t max_length,
                       const AminoAcidTable& table) {
  if (min_length == 0 || min_length > max_length) throw DataError("bad peptide length range");
  std::mt19937_64 rng(seed);
  const std::size_t n = min_length + static_cast<std::size_t>(rng() % (max_length - min_length + 1));
  Peptide p;
  for (std::size_t i = 0; i < n; ++i) p.residues.push_back(table.symbol(rng() % table.size()));
  return p;
}

void cmd_simulate(const RunConfig& c) {
  const std::uint64_t seed = c.require_seed();
  const fs::path dir = out_dir(c);
  const AminoAcidTable& table = AminoAcidTable::standard();
  auto make = [&](std::size_t count, std::uint64_t offset, const std::string& prefix) {
    std::vector<Spectrum> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      const Peptide p = random_peptide(derive_seed(seed, kPeptideStream, offset + i),
                                       c.simulation.min_length, c.simulation.max_length, table);
      Spectrum s = simulate_spectrum(p, derive_seed(seed, kSpectrumStream, offset + i),
                                     c.simulation.noise, table);
      s.id = prefix + std::to_string(i);
      out.push_back(std::move(s));
    }
    return out;
  };
  const auto train = make(c.simulation.train_count, 0, "train-");
  const auto test = make(c.simulation.test_count, kTestOffset, "test-");
  write_mgf_file((dir / "train.mgf").string(), train);
  write_mgf_file((dir / "test.mgf").string(), test);

  json m = base_manifest("simulate", c);
  m["outputs"] = {{"train", (dir / "train.mgf").string()}, {"test", (dir / "test.mgf").string()}};
  m["train_count"] = train.size();
  m["test_count"] = test.size();
  write_manifest(dir, "simulate", m);
  std::cout << "wrote " << train.size() << " training and " << test.size()
            << " test spectra to " << dir.string() << "\n";
}

void cmd_train(const RunConfig& c) {
  const std::uint64_t seed = c.require_seed();
  const std::vector<Spectrum> corpus = read_annotated(require_path(c.paths.corpus, "corpus"));
  const fs::path dir = out_dir(c);

  std::optional<Model> model;
  std::uint64_t start = 0;
  if (!c.paths.checkpoint.empty()) {
    Checkpoint ck = load_checkpoint(c.paths.checkpoint);
    if (ck.meta.stage != "stage1" && ck.meta.stage != "init")
      throw DataError("cannot resume stage-1 training from a '" + ck.meta.stage + "' checkpoint");
    start = ck.meta.stage == "stage1" ? ck.meta.step : 0;
    model.emplace(std::move(ck.model));
  } else {
    model.emplace(Model::initialize(c.model, AminoAcidTable::standard(), seed));
  }
  check_lengths(corpus, model->config());
  const std::vector<TrainingExample> examples = examples_for(corpus, model->table());

  TrainState st;
  st.seed = seed;
  st.anneal = {start, c.training.steps};
  st.lr = {c.training.lr, c.training.warmup, c.training.steps};
  if (start > c.training.steps)
    throw DataError("checkpoint is at step " + std::to_string(start) + ", past training.steps");

  MetricsLog log(dir / "metrics.csv");
  const std::string ckpt = (dir / "stage1.ckpt").string();
  auto save = [&] { save_checkpoint(*model, {"stage1", st.anneal.i, seed}, ckpt); };
  StepMetrics last;
  try {
    while (st.anneal.i < c.training.steps) {
      const auto idx = batch_indices(seed, st.anneal.i, c.training.batch_size, examples.size());
      last = train_stage1_step(*model, pick(examples, idx), st);
      log.add(last);
      if (last.step % report_every(c.training.steps) == 0 || st.anneal.i == c.training.steps)
        std::cout << "step " << last.step << " at_loss " << last.at_loss << " nat_loss "
                  << last.nat_loss << " lambda " << last.lambda << " lr " << last.lr << "\n";
      if (c.training.checkpoint_every && st.anneal.i % c.training.checkpoint_every == 0) save();
    }
  } catch (const NumericError&) {
    // The failed step never reached the optimizer, so the parameters are the
    // last good ones.
    save();
    throw;
  }
  save();

  json m = base_manifest("train", c);
  m["start_step"] = start;
  m["end_step"] = st.anneal.i;
  m["final_at_loss"] = last.at_loss;
  m["final_nat_loss"] = last.nat_loss;
  m["outputs"] = {{"checkpoint", ckpt}, {"metrics", (dir / "metrics.csv").string()}};
  write_manifest(dir, "train", m);
}

void cmd_finetune(const RunConfig& c) {
  const std::uint64_t seed = c.require_seed();
  const std::string& in = require_path(c.paths.checkpoint, "checkpoint");
  if (!fs::exists(in)) throw DataError("checkpoint " + in + " does not exist");
  Checkpoint ck = load_checkpoint(in);
  const fs::path dir = out_dir(c);
  const std::string ckpt = (dir / "stage2.ckpt").string();
  json m = base_manifest("finetune", c);
  m["input_checkpoint"] = in;
  m["epochs"] = c.training.finetune_epochs;
  m["outputs"] = {{"checkpoint", ckpt}};

  if (c.training.finetune_epochs == 0) {
    save_checkpoint(ck.model, ck.meta, ckpt);
    m["frozen_partitions_unchanged"] = true;
    m["steps"] = 0;
    write_manifest(dir, "finetune", m);
    return;
  }

  const std::vector<Spectrum> corpus = read_annotated(require_path(c.paths.corpus, "corpus"));
  Model& model = ck.model;
  check_lengths(corpus, model.config());
  const std::vector<TrainingExample> examples = examples_for(corpus, model.table());
  const auto enc_before = partition_values(model.params(), kEncoderPartition);
  const auto nat_before = partition_values(model.params(), kNatPartition);

  model.params().set_frozen(kEncoderPartition, true);
  model.params().set_frozen(kNatPartition, true);
  model.params().set_frozen(kAtPartition, false);
  model.config().cross_decoder = true;

  FinetuneState st;
  st.lr_ft = c.training.finetune_lr;
  st.blocked = c.training.blocked;
  const std::size_t per_epoch =
      (examples.size() + c.training.batch_size - 1) / c.training.batch_size;
  const std::uint64_t ft_seed = derive_seed(seed, kFinetuneStream, 0);
  MetricsLog log(dir / "metrics.csv");
  double first_epoch = 0.0, last_epoch = 0.0;
  for (std::uint64_t e = 0; e < c.training.finetune_epochs; ++e) {
    double epoch_loss = 0.0;
    for (std::size_t k = 0; k < per_epoch; ++k) {
      const auto idx = batch_indices(ft_seed, st.step, c.training.batch_size, examples.size());
      const StepMetrics sm = finetune_stage2_step(model, pick(examples, idx), st);
      log.add(sm);
      epoch_loss += sm.at_loss / static_cast<double>(per_epoch);
    }
    if (e == 0) first_epoch = epoch_loss;
    last_epoch = epoch_loss;
    if (e % report_every(c.training.finetune_epochs) == 0 || e + 1 == c.training.finetune_epochs)
      std::cout << "epoch " << e << " at_loss " << epoch_loss << "\n";
  }

  const bool unchanged = partition_values(model.params(), kEncoderPartition) == enc_before &&
                         partition_values(model.params(), kNatPartition) == nat_before;
  save_checkpoint(model, {"stage2", st.step, seed}, ckpt);
  m["steps"] = st.step;
  m["blocked"] = st.blocked;
  m["frozen_partitions_unchanged"] = unchanged;
  m["at_loss_first_epoch"] = first_epoch;
  m["at_loss_last_epoch"] = last_epoch;
  write_manifest(dir, "finetune", m);
  if (!unchanged) throw Error("frozen encoder/NAT parameters changed during fine-tuning");
}

void cmd_decode(const RunConfig& c) {
  c.require_seed();
  const std::string& ck_path = require_path(c.paths.checkpoint, "checkpoint");
  const std::string& mgf = c.paths.test.empty() ? c.paths.corpus : c.paths.test;
  if (mgf.empty()) throw ConfigError("paths.test (or paths.corpus) is required for decode");
  Checkpoint ck = load_checkpoint(ck_path);
  if (!(ck.model.table() == AminoAcidTable::standard()))
    throw DataError("checkpoint vocabulary does not match the residue table");
  std::vector<std::string> warnings;
  const std::vector<Spectrum> spectra = read_mgf_file(mgf, &warnings);
  for (const auto& w : warnings) std::cerr << mgf << ": warning: " << w << "\n";
  const fs::path dir = out_dir(c);

  std::vector<DecodeRow> rows;
  rows.reserve(spectra.size());
  std::size_t flagged = 0;
  for (const Spectrum& s : spectra) {
    rows.push_back(decode_spectrum(ck.model, s, c.decoding));
    flagged += rows.back().feasible ? 0 : 1;
  }
  std::ostringstream csv;
  write_decode_csv(csv, rows);
  write_file(dir / "predictions.csv", csv.str());

  json m = base_manifest("decode", c);
  m["decoder"] = to_string(c.decoding.kind);
  m["spectra"] = rows.size();
  m["flagged_rows"] = flagged;
  m["checkpoint_stage"] = ck.meta.stage;
  m["outputs"] = {{"predictions", (dir / "predictions.csv").string()}};
  write_manifest(dir, "decode", m);
  std::cout << "decoded " << rows.size() << " spectra with " << to_string(c.decoding.kind)
            << " (" << flagged << " flagged)\n";
}

void cmd_eval(const RunConfig& c) {
  c.require_seed();
  const std::string& pred_path = require_path(c.paths.predictions, "predictions");
  const std::string& truth_path = require_path(c.paths.truth, "truth");
  std::ifstream pin(pred_path);
  if (!pin) throw DataError("cannot open " + pred_path);
  const std::vector<DecodeRow> rows = read_decode_csv(pin);
  const std::vector<Spectrum> truth_spectra = read_annotated(truth_path);
  std::map<std::string, Peptide> truths;
  for (const Spectrum& s : truth_spectra)
    if (!truths.emplace(s.id, *s.truth).second)
      throw DataError(truth_path + ": duplicate spectrum id " + s.id);
  std::vector<Prediction> preds;
  for (const DecodeRow& r : rows) preds.push_back({r.spectrum_id, r.peptide, r.confidence});

  const AminoAcidTable& table = AminoAcidTable::standard();
  const EvalReport report = corpus_eval(preds, truths, table);
  const auto curve = precision_coverage(report);
  const fs::path dir = out_dir(c);
  std::ostringstream rows_csv, summary_csv, curve_csv;
  write_eval_rows_csv(rows_csv, report);
  write_summary_csv(summary_csv, report);
  write_curve_csv(curve_csv, curve);
  write_file(dir / "eval_rows.csv", rows_csv.str());
  write_file(dir / "summary.csv", summary_csv.str());
  write_file(dir / "curve.csv", curve_csv.str());

  json m = base_manifest("eval", c);
  m["aa_precision"] = report.aa_precision;
  m["peptide_recall"] = report.peptide_recall;
  m["spectra"] = report.rows.size();
  m["outputs"] = {{"rows", (dir / "eval_rows.csv").string()},
                  {"summary", (dir / "summary.csv").string()},
                  {"curve", (dir / "curve.csv").string()}};
  write_manifest(dir, "eval", m);
  std::cout << "aa_precision " << report.aa_precision << " peptide_recall "
            << report.peptide_recall << " over " << report.rows.size() << " spectra\n";
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitUsage;
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  return kExitData;
}

int run_guarded(const std::string& command, void (*fn)(const RunConfig&), const RunConfig& cfg) {
  try {
    fn(cfg);
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "novoseq " << command << ": error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

}  // namespace novoseq
