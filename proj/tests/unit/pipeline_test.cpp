#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "novoseq/metrics.hpp"
#include "novoseq/pipeline.hpp"

using namespace novoseq;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

RunConfig tiny(const fs::path& out, std::vector<std::string> extra = {}) {
  std::vector<std::string> o{"run.seed=7",          "run.out=" + out.string(),
                             "model.d=16",          "model.hidden=16",
                             "model.enc_layers=1",  "model.at_layers=1",
                             "model.nat_layers=1",  "model.t_max=12",
                             "simulation.train_count=6", "simulation.test_count=2",
                             "simulation.min_length=3",  "simulation.max_length=5",
                             "training.steps=4",    "training.batch_size=2",
                             "training.warmup=1",   "training.finetune_epochs=1",
                             "training.checkpoint_every=0"};
  o.insert(o.end(), extra.begin(), extra.end());
  return load_run_config("", o);
}

}  // namespace

TEST(Config, DefaultsAndOverrides) {
  const RunConfig c = load_run_config("", {"training.steps=10", "decoding.decoder=nat-pmc"});
  EXPECT_EQ(c.training.steps, 10u);
  EXPECT_EQ(c.training.batch_size, 8u);
  EXPECT_EQ(c.decoding.kind, DecoderKind::NatPmc);
  EXPECT_FALSE(c.seed.has_value());
  EXPECT_THROW(c.require_seed(), ConfigError);
}

TEST(Config, FileThenOverride) {
  TempDir d("novoseq_cfg_test");
  const fs::path ini = d.path / "run.ini";
  std::ofstream(ini) << "[run]\nseed = 3\n[training]\nsteps = 50\nbatch_size = 4\n";
  const RunConfig c = load_run_config(ini.string(), {"training.steps=60"});
  EXPECT_EQ(c.require_seed(), 3u);
  EXPECT_EQ(c.training.steps, 60u);
  EXPECT_EQ(c.training.batch_size, 4u);
}

TEST(Config, DefaultTextParsesBack) {
  TempDir d("novoseq_cfg_default");
  const fs::path ini = d.path / "default.ini";
  std::ofstream(ini) << default_config_text();
  EXPECT_EQ(load_run_config(ini.string(), {}).hash(), load_run_config("", {}).hash());
}

TEST(Config, Rejections) {
  EXPECT_THROW(load_run_config("", {"training.nonsense=1"}), ConfigError);
  EXPECT_THROW(load_run_config("", {"training.steps=abc"}), ConfigError);
  EXPECT_THROW(load_run_config("", {"no_equals_sign"}), ConfigError);
  EXPECT_THROW(load_run_config("", {"decoding.decoder=viterbi"}), ConfigError);
  EXPECT_THROW(load_run_config("/nonexistent/x.ini", {}), ConfigError);
}

TEST(Config, HashIgnoresOutputDirOnly) {
  const auto a = load_run_config("", {"run.seed=1", "run.out=/tmp/a"});
  const auto b = load_run_config("", {"run.seed=1", "run.out=/tmp/b"});
  const auto c = load_run_config("", {"run.seed=2", "run.out=/tmp/a"});
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), c.hash());
  EXPECT_EQ(a.hash().size(), 16u);
}

TEST(Fnv, KnownVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(RandomPeptide, LengthRangeAndDeterminism) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const Peptide p = random_peptide(s, 5, 8, AminoAcidTable::standard());
    EXPECT_GE(p.residues.size(), 5u);
    EXPECT_LE(p.residues.size(), 8u);
    EXPECT_EQ(p, random_peptide(s, 5, 8, AminoAcidTable::standard()));
  }
}

TEST(Simulate, DeterministicWithSequences) {
  TempDir a("novoseq_sim_a"), b("novoseq_sim_b");
  cmd_simulate(tiny(a.path));
  cmd_simulate(tiny(b.path));
  EXPECT_EQ(slurp(a.path / "train.mgf"), slurp(b.path / "train.mgf"));
  const auto spectra = read_mgf_file((a.path / "train.mgf").string());
  ASSERT_EQ(spectra.size(), 6u);
  for (const auto& s : spectra) {
    ASSERT_TRUE(s.truth.has_value());
    EXPECT_GE(s.truth->residues.size(), 3u);
    EXPECT_LE(s.truth->residues.size(), 5u);
  }
  const auto m = nlohmann::json::parse(slurp(a.path / "simulate.manifest.json"));
  EXPECT_EQ(m["seed"], 7);
  EXPECT_EQ(m["cfg_hash"], tiny(a.path).hash());
}

TEST(Pipeline, EndToEndSmallRun) {
  TempDir d("novoseq_pipe");
  cmd_simulate(tiny(d.path));
  const std::string corpus = (d.path / "train.mgf").string();
  const auto train_cfg = tiny(d.path, {"paths.corpus=" + corpus});
  cmd_train(train_cfg);
  ASSERT_TRUE(fs::exists(d.path / "stage1.ckpt"));
  const std::string metrics1 = slurp(d.path / "metrics.csv");

  // Same seed, fresh directory: identical checkpoint.
  TempDir d2("novoseq_pipe2");
  cmd_train(tiny(d2.path, {"paths.corpus=" + corpus}));
  EXPECT_EQ(slurp(d.path / "stage1.ckpt"), slurp(d2.path / "stage1.ckpt"));

  // Resuming continues the step numbering.
  const auto resume = tiny(d2.path, {"paths.corpus=" + corpus,
                                     "paths.checkpoint=" + (d2.path / "stage1.ckpt").string(),
                                     "training.steps=6"});
  cmd_train(resume);
  EXPECT_EQ(load_checkpoint((d2.path / "stage1.ckpt").string()).meta.step, 6u);

  const std::string ck1 = (d.path / "stage1.ckpt").string();
  cmd_finetune(tiny(d.path, {"paths.corpus=" + corpus, "paths.checkpoint=" + ck1}));
  const auto fm = nlohmann::json::parse(slurp(d.path / "finetune.manifest.json"));
  EXPECT_EQ(fm["frozen_partitions_unchanged"], true);

  const std::string ck2 = (d.path / "stage2.ckpt").string();
  for (const char* dec : {"at-greedy", "at-beam", "nat-pmc"}) {
    cmd_decode(tiny(d.path, {"paths.checkpoint=" + ck2, "paths.test=" + corpus,
                             std::string("decoding.decoder=") + dec}));
    std::ifstream in(d.path / "predictions.csv");
    EXPECT_EQ(read_decode_csv(in).size(), 6u) << dec;
  }
  cmd_eval(tiny(d.path, {"paths.predictions=" + (d.path / "predictions.csv").string(),
                         "paths.truth=" + corpus}));
  EXPECT_TRUE(fs::exists(d.path / "summary.csv"));
  EXPECT_TRUE(fs::exists(d.path / "curve.csv"));
}

TEST(Pipeline, BeamOneMatchesGreedy) {
  TempDir d("novoseq_beam1");
  cmd_simulate(tiny(d.path));
  const std::string corpus = (d.path / "train.mgf").string();
  cmd_train(tiny(d.path, {"paths.corpus=" + corpus}));
  const std::string ck = (d.path / "stage1.ckpt").string();
  auto decode = [&](std::vector<std::string> extra) {
    extra.push_back("paths.checkpoint=" + ck);
    extra.push_back("paths.test=" + corpus);
    cmd_decode(tiny(d.path, extra));
    std::ifstream in(d.path / "predictions.csv");
    return read_decode_csv(in);
  };
  const auto g = decode({"decoding.decoder=at-greedy"});
  const auto b = decode({"decoding.decoder=at-beam", "decoding.beam=1"});
  ASSERT_EQ(g.size(), b.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    EXPECT_EQ(g[i].peptide, b[i].peptide);
    EXPECT_EQ(g[i].confidence, b[i].confidence);
  }
}

TEST(Finetune, ZeroEpochsCopiesCheckpoint) {
  TempDir d("novoseq_ft0");
  cmd_simulate(tiny(d.path));
  const std::string corpus = (d.path / "train.mgf").string();
  cmd_train(tiny(d.path, {"paths.corpus=" + corpus}));
  const std::string ck1 = (d.path / "stage1.ckpt").string();
  cmd_finetune(tiny(d.path, {"paths.corpus=" + corpus, "paths.checkpoint=" + ck1,
                             "training.finetune_epochs=0"}));
  EXPECT_EQ(slurp(d.path / "stage2.ckpt"), slurp(ck1));
}

TEST(Eval, SelfEvalIsPerfect) {
  TempDir d("novoseq_self");
  cmd_simulate(tiny(d.path));
  const std::string truth = (d.path / "train.mgf").string();
  std::vector<DecodeRow> rows;
  for (const auto& s : read_mgf_file(truth)) rows.push_back({s.id, *s.truth, -0.1, DecoderKind::AtGreedy, true});
  {
    std::ofstream out(d.path / "self.csv");
    write_decode_csv(out, rows);
  }
  cmd_eval(tiny(d.path, {"paths.predictions=" + (d.path / "self.csv").string(), "paths.truth=" + truth}));
  EXPECT_EQ(slurp(d.path / "summary.csv"), "aa_precision,peptide_recall\n1,1\n");
  const std::string curve = slurp(d.path / "curve.csv");
  EXPECT_NE(curve.find("\n1,1\n"), std::string::npos);
}

TEST(ExitCodes, Mapping) {
  TempDir d("novoseq_exit");
  EXPECT_EQ(run_guarded("train", cmd_train, load_run_config("", {"run.out=" + d.path.string()})), kExitUsage);
  EXPECT_EQ(run_guarded("train", cmd_train,
                        tiny(d.path, {"paths.corpus=/nonexistent/corpus.mgf"})),
            kExitData);
  EXPECT_EQ(exit_code_for(NumericError("nan")), kExitNumeric);

  cmd_simulate(tiny(d.path));
  std::vector<DecodeRow> rows{{"not-a-spectrum", Peptide{"PEP"}, 0, DecoderKind::AtGreedy, true}};
  {
    std::ofstream out(d.path / "bad.csv");
    write_decode_csv(out, rows);
  }
  EXPECT_EQ(run_guarded("eval", cmd_eval,
                        tiny(d.path, {"paths.predictions=" + (d.path / "bad.csv").string(),
                                      "paths.truth=" + (d.path / "train.mgf").string()})),
            kExitData);
}
