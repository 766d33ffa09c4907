#include "novoseq/network.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>
#include <random>
#include <set>
#include <sstream>

#include "novoseq/errors.hpp"

namespace novoseq {

using ad::Graph;
using ad::Tensor;
using ad::Var;

void ModelConfig::validate() const {
  if (d == 0 || heads == 0 || hidden == 0 || enc_layers == 0 || at_layers == 0 ||
      nat_layers == 0 || t_max == 0 || max_charge == 0)
    throw DataError("model config: all sizes must be at least 1");
  if (d % heads != 0) throw DataError("model config: d must be divisible by heads");
  if (d % 2 != 0) throw DataError("model config: d must be even for the float encoders");
}

std::vector<MassPair> step_masses(std::span<const std::size_t> at_tokens,
                                  const AminoAcidTable& table, double neutral_mass) {
  std::vector<MassPair> out;
  out.reserve(at_tokens.size());
  double prefix = 0.0;
  for (std::size_t id : at_tokens) {
    if (auto r = table.residue_of_at(id)) prefix += table.mass(*r);
    out.push_back({prefix, neutral_mass - kWater - prefix});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Layout and initialization

namespace {

using Init = Model::ParamSpec::Init;

void add_norm(std::vector<Model::ParamSpec>& out, const std::string& part, const std::string& p,
              std::size_t d) {
  out.push_back({part, p + "/g", {d}, Init::One});
  out.push_back({part, p + "/b", {d}, Init::Zero});
}

void add_attention(std::vector<Model::ParamSpec>& out, const std::string& part,
                   const std::string& p, std::size_t d) {
  for (const char* w : {"q", "k", "v", "o"}) {
    out.push_back({part, p + "/w" + w, {d, d}, Init::Normal});
    out.push_back({part, p + "/b" + w, {d}, Init::Zero});
  }
}

void add_ffn(std::vector<Model::ParamSpec>& out, const std::string& part, const std::string& p,
             std::size_t d, std::size_t hidden) {
  out.push_back({part, p + "/w1", {d, hidden}, Init::Normal});
  out.push_back({part, p + "/b1", {hidden}, Init::Zero});
  out.push_back({part, p + "/w2", {hidden, d}, Init::Normal});
  out.push_back({part, p + "/b2", {d}, Init::Zero});
}

std::string layer_name(std::size_t l) { return "layer" + std::to_string(l); }

}  // namespace

std::vector<Model::ParamSpec> Model::layout(const ModelConfig& cfg, const AminoAcidTable& table) {
  const std::size_t d = cfg.d;
  std::vector<ParamSpec> out;
  const std::string enc = kEncoderPartition, at = kAtPartition, nat = kNatPartition;

  out.push_back({enc, "charge_emb", {cfg.max_charge, d}, Init::Normal});
  for (std::size_t l = 0; l < cfg.enc_layers; ++l) {
    const std::string p = layer_name(l);
    add_norm(out, enc, p + "/ln1", d);
    add_attention(out, enc, p + "/self", d);
    add_norm(out, enc, p + "/ln2", d);
    add_ffn(out, enc, p + "/ffn", d, cfg.hidden);
  }
  add_norm(out, enc, "final_ln", d);

  out.push_back({at, "tok_emb", {table.at_vocab_size(), d}, Init::Normal});
  out.push_back({at, "seg_nat", {d}, Init::Normal});
  out.push_back({at, "seg_spec", {d}, Init::Normal});
  for (std::size_t l = 0; l < cfg.at_layers; ++l) {
    const std::string p = layer_name(l);
    add_norm(out, at, p + "/ln1", d);
    add_attention(out, at, p + "/self", d);
    add_norm(out, at, p + "/ln2", d);
    add_attention(out, at, p + "/cross", d);
    add_norm(out, at, p + "/ln3", d);
    add_ffn(out, at, p + "/ffn", d, cfg.hidden);
  }
  add_norm(out, at, "final_ln", d);
  out.push_back({at, "head/w", {d, table.at_vocab_size()}, Init::Normal});
  out.push_back({at, "head/b", {table.at_vocab_size()}, Init::Zero});

  out.push_back({nat, "pos_emb", {cfg.t_max, d}, Init::Normal});
  for (std::size_t l = 0; l < cfg.nat_layers; ++l) {
    const std::string p = layer_name(l);
    add_norm(out, nat, p + "/ln1", d);
    add_attention(out, nat, p + "/self", d);
    add_norm(out, nat, p + "/ln2", d);
    add_attention(out, nat, p + "/cross", d);
    add_norm(out, nat, p + "/ln3", d);
    add_ffn(out, nat, p + "/ffn", d, cfg.hidden);
  }
  add_norm(out, nat, "final_ln", d);
  out.push_back({nat, "head/w", {d, table.nat_vocab_size()}, Init::Normal});
  out.push_back({nat, "head/b", {table.nat_vocab_size()}, Init::Zero});
  return out;
}

Model::Model(ModelConfig cfg, AminoAcidTable table, ad::ParameterStore params)
    : cfg_(cfg), table_(std::move(table)), params_(std::move(params)) {
  cfg_.validate();
  const auto specs = layout(cfg_, table_);
  std::size_t count = 0;
  for (const auto& s : specs) {
    if (!params_.contains(s.partition, s.name))
      throw DataError("model is missing parameter " + s.partition + "/" + s.name);
    const auto& shape = params_.get(s.partition, s.name).value.shape();
    if (shape != s.shape)
      throw ShapeError("parameter " + s.partition + "/" + s.name + " has shape " +
                       ad::shape_str(shape) + ", expected " + ad::shape_str(s.shape));
    ++count;
  }
  std::size_t have = 0;
  for (const auto& [pname, part] : params_.partitions()) have += part.params.size();
  if (have != count) throw DataError("model has parameters outside its layout");
}

Model Model::initialize(const ModelConfig& cfg, const AminoAcidTable& table, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  ad::ParameterStore store;
  for (const auto& s : layout(cfg, table)) {
    Tensor t(s.shape);
    switch (s.init) {
      case Init::Normal:
        for (double& x : t.data()) x = normal(rng);
        break;
      case Init::One:
        for (double& x : t.data()) x = 1.0;
        break;
      case Init::Zero:
        break;
    }
    store.add(s.partition, s.name, std::move(t));
  }
  return Model(cfg, table, std::move(store));
}

// ---------------------------------------------------------------------------
// Forward passes

Var Model::param(Graph& g, const char* partition, const std::string& name, bool grad) {
  ad::Parameter& p = params_.get(partition, name);
  return g.parameter(p, grad && !params_.frozen(partition));
}

Var Model::norm(Graph& g, const char* partition, const std::string& prefix, Var x, bool grad) {
  return ad::layer_norm(x, param(g, partition, prefix + "/g", grad),
                        param(g, partition, prefix + "/b", grad));
}

Var Model::attention(Graph& g, const char* partition, const std::string& prefix, Var x,
                     Var context, const ad::Mask* mask, bool grad) {
  auto w = [&](const char* n) { return param(g, partition, prefix + "/" + n, grad); };
  const Var q = ad::linear(x, w("wq"), w("bq"));
  const Var k = ad::linear(context, w("wk"), w("bk"));
  const Var v = ad::linear(context, w("wv"), w("bv"));
  const std::size_t dh = cfg_.d / cfg_.heads;
  std::vector<Var> heads;
  heads.reserve(cfg_.heads);
  for (std::size_t h = 0; h < cfg_.heads; ++h) {
    const std::size_t b = h * dh, e = b + dh;
    heads.push_back(ad::scaled_dot_attention(ad::slice_cols(q, b, e), ad::slice_cols(k, b, e),
                                             ad::slice_cols(v, b, e), mask));
  }
  const Var merged = cfg_.heads == 1 ? heads[0] : ad::concat_cols(heads);
  return ad::linear(merged, w("wo"), w("bo"));
}

Var Model::feed_forward(Graph& g, const char* partition, const std::string& prefix, Var x,
                        bool grad) {
  auto w = [&](const char* n) { return param(g, partition, prefix + "/" + n, grad); };
  return ad::linear(ad::relu(ad::linear(x, w("w1"), w("b1"))), w("w2"), w("b2"));
}

EncoderOutput Model::encode_spectrum(Graph& g, const Spectrum& s, bool grad) {
  if (s.charge < 1 || static_cast<std::size_t>(s.charge) > cfg_.max_charge)
    throw DataError("spectrum " + s.id + ": charge " + std::to_string(s.charge) +
                    " outside embedding table (1.." + std::to_string(cfg_.max_charge) + ")");
  if (s.peaks.empty()) throw DataError("spectrum " + s.id + " has no peaks");
  const std::size_t d = cfg_.d, k = s.peaks.size();
  FloatEncoderConfig mz_cfg = mz_encoder_config(d);
  FloatEncoderConfig int_cfg = intensity_encoder_config(d);
  mz_cfg.paired_frequencies = int_cfg.paired_frequencies = cfg_.paired_frequencies;

  double max_int = 0.0;
  for (const Peak& p : s.peaks) max_int = std::max(max_int, p.intensity);

  Tensor input({k + 1, d});
  encode_float_into(s.neutral_mass(), mz_cfg, input.data().subspan(0, d));
  for (std::size_t i = 0; i < k; ++i) {
    const auto row = embed_peak(s.peaks[i], max_int, mz_cfg, int_cfg);
    std::copy(row.begin(), row.end(), input.data().begin() + (i + 1) * d);
  }
  const std::size_t charge_row = static_cast<std::size_t>(s.charge - 1);
  const Var charge = ad::gather_rows(param(g, kEncoderPartition, "charge_emb", grad),
                                     std::span<const std::size_t>(&charge_row, 1));
  Var x = ad::add(g.constant(std::move(input)),
                  ad::concat_rows({charge, g.constant(Tensor({k, d}))}));

  for (std::size_t l = 0; l < cfg_.enc_layers; ++l) {
    const std::string p = layer_name(l);
    const Var h = norm(g, kEncoderPartition, p + "/ln1", x, grad);
    x = ad::add(x, attention(g, kEncoderPartition, p + "/self", h, h, nullptr, grad));
    x = ad::add(x, feed_forward(g, kEncoderPartition, p + "/ffn",
                                norm(g, kEncoderPartition, p + "/ln2", x, grad), grad));
  }
  return {norm(g, kEncoderPartition, "final_ln", x, grad)};
}

Var Model::at_forward(Graph& g, std::span<const std::size_t> tokens,
                      std::span<const MassPair> masses, const EncoderOutput& enc,
                      const Var* context, bool grad) {
  const std::size_t n = tokens.size(), d = cfg_.d;
  if (n == 0 || tokens[0] != AminoAcidTable::kBos)
    throw DataError("at_forward: token sequence must start with BOS");
  if (masses.size() != n) throw ShapeError("at_forward: one mass pair per token required");
  for (std::size_t t : tokens)
    if (t >= table_.at_vocab_size())
      throw DataError("at_forward: token id " + std::to_string(t) + " outside vocabulary");

  FloatEncoderConfig mz_cfg = mz_encoder_config(d);
  mz_cfg.paired_frequencies = cfg_.paired_frequencies;
  Tensor mass_enc({n, d});
  std::vector<double> buf(d);
  for (std::size_t t = 0; t < n; ++t) {
    auto row = mass_enc.data().subspan(t * d, d);
    encode_float_into(masses[t].prefix, mz_cfg, row);
    encode_float_into(masses[t].suffix, mz_cfg, buf);
    for (std::size_t j = 0; j < d; ++j) row[j] += buf[j];
  }
  Var h = ad::add(ad::gather_rows(param(g, kAtPartition, "tok_emb", grad), tokens),
                  g.constant(std::move(mass_enc)));

  const ad::Mask causal = ad::Mask::causal(n);
  for (std::size_t l = 0; l < cfg_.at_layers; ++l) {
    const std::string p = layer_name(l);
    const Var a = norm(g, kAtPartition, p + "/ln1", h, grad);
    h = ad::add(h, attention(g, kAtPartition, p + "/self", a, a, &causal, grad));
    const Var q = norm(g, kAtPartition, p + "/ln2", h, grad);
    if (context && !cfg_.cross_additive) {
      h = ad::add(h, attention(g, kAtPartition, p + "/cross", q, *context, nullptr, grad));
    } else {
      h = ad::add(h, attention(g, kAtPartition, p + "/cross", q, enc.features, nullptr, grad));
      if (context) {
        const Var q2 = norm(g, kAtPartition, p + "/ln2", h, grad);
        h = ad::add(h, attention(g, kAtPartition, p + "/cross", q2, *context, nullptr, grad));
      }
    }
    h = ad::add(h, feed_forward(g, kAtPartition, p + "/ffn",
                                norm(g, kAtPartition, p + "/ln3", h, grad), grad));
  }
  h = norm(g, kAtPartition, "final_ln", h, grad);
  return ad::linear(h, param(g, kAtPartition, "head/w", grad),
                    param(g, kAtPartition, "head/b", grad));
}

NatFeatures Model::nat_forward(Graph& g, const EncoderOutput& enc, bool grad) {
  Var h = param(g, kNatPartition, "pos_emb", grad);
  for (std::size_t l = 0; l < cfg_.nat_layers; ++l) {
    const std::string p = layer_name(l);
    const Var a = norm(g, kNatPartition, p + "/ln1", h, grad);
    h = ad::add(h, attention(g, kNatPartition, p + "/self", a, a, nullptr, grad));
    const Var q = norm(g, kNatPartition, p + "/ln2", h, grad);
    h = ad::add(h, attention(g, kNatPartition, p + "/cross", q, enc.features, nullptr, grad));
    h = ad::add(h, feed_forward(g, kNatPartition, p + "/ffn",
                                norm(g, kNatPartition, p + "/ln3", h, grad), grad));
  }
  const Var latents = norm(g, kNatPartition, "final_ln", h, grad);
  const Var logits = ad::linear(latents, param(g, kNatPartition, "head/w", grad),
                                param(g, kNatPartition, "head/b", grad));
  return {latents, logits};
}

Var Model::cross_context(Graph& g, const NatFeatures& nat, const EncoderOutput& enc,
                         bool blocked, bool grad) {
  const Var v = blocked ? ad::stop_gradient(nat.latents) : nat.latents;
  return ad::concat_rows({ad::add_row(v, param(g, kAtPartition, "seg_nat", grad)),
                          ad::add_row(enc.features, param(g, kAtPartition, "seg_spec", grad))});
}

Var Model::cross_decoder_attend(Graph& g, Var h, const NatFeatures& nat, const EncoderOutput& enc,
                                std::size_t layer, bool blocked, bool grad) {
  if (layer >= cfg_.at_layers) throw DataError("cross_decoder_attend: no such AT layer");
  const Var ctx = cross_context(g, nat, enc, blocked, grad);
  return attention(g, kAtPartition, layer_name(layer) + "/cross", h, ctx, nullptr, grad);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'N', 'V', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    out_.append(static_cast<const char*>(p), n);
  }
  template <typename T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i)
      out_.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
  }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}

  void need(std::size_t n, const char* what) {
    if (in_.size() - pos_ < n)
      throw CheckpointError(CheckpointError::Kind::Truncated,
                            std::string("checkpoint truncated while reading ") + what);
  }
  template <typename T>
  T le(const char* what) {
    need(sizeof(T), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  double f64(const char* what) { return std::bit_cast<double>(le<std::uint64_t>(what)); }
  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::string_view in_;
  std::size_t pos_ = 0;
};

nlohmann::json config_json(const ModelConfig& c) {
  return {{"d", c.d},
          {"heads", c.heads},
          {"hidden", c.hidden},
          {"enc_layers", c.enc_layers},
          {"at_layers", c.at_layers},
          {"nat_layers", c.nat_layers},
          {"t_max", c.t_max},
          {"max_charge", c.max_charge},
          {"cross_decoder", c.cross_decoder},
          {"cross_additive", c.cross_additive},
          {"paired_frequencies", c.paired_frequencies}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d = j.at("d").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.enc_layers = j.at("enc_layers").get<std::size_t>();
  c.at_layers = j.at("at_layers").get<std::size_t>();
  c.nat_layers = j.at("nat_layers").get<std::size_t>();
  c.t_max = j.at("t_max").get<std::size_t>();
  c.max_charge = j.at("max_charge").get<std::size_t>();
  c.cross_decoder = j.at("cross_decoder").get<bool>();
  c.cross_additive = j.at("cross_additive").get<bool>();
  c.paired_frequencies = j.at("paired_frequencies").get<bool>();
  return c;
}

}  // namespace

std::string serialize_checkpoint(const Model& model, const CheckpointMeta& meta) {
  Writer w;
  w.bytes(kMagic, 4);
  w.le<std::uint32_t>(kVersion);
  std::uint32_t count = 0;
  model.params().for_each([&](const std::string&, const std::string&, const ad::Parameter&) {
    ++count;
  });
  w.le<std::uint32_t>(count);
  nlohmann::json frozen = nlohmann::json::object();
  for (const auto& [pname, part] : model.params().partitions()) {
    frozen[pname] = part.frozen;
    for (const auto& [name, p] : part.params) {
      const std::string full = pname + "/" + name;
      w.le<std::uint16_t>(static_cast<std::uint16_t>(full.size()));
      w.bytes(full.data(), full.size());
      w.le<std::uint8_t>(static_cast<std::uint8_t>(p.value.rank()));
      for (std::size_t dim : p.value.shape()) w.le<std::uint32_t>(static_cast<std::uint32_t>(dim));
      for (double x : p.value.data()) w.f64(x);
    }
  }
  nlohmann::json vocab = nlohmann::json::array();
  for (const Residue& r : model.table().residues())
    vocab.push_back({std::string(1, r.symbol), r.mass});
  const nlohmann::json blob = {
      {"model", config_json(model.config())},
      {"vocabulary", vocab},
      {"frozen", frozen},
      {"meta", {{"stage", meta.stage}, {"step", meta.step}, {"seed", meta.seed}}}};
  const std::string text = blob.dump();
  w.le<std::uint32_t>(static_cast<std::uint32_t>(text.size()));
  w.bytes(text.data(), text.size());
  return w.take();
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  using Kind = CheckpointError::Kind;
  Reader r(bytes);
  const auto magic = r.take(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kMagic))
    throw CheckpointError(Kind::BadMagic, "not a checkpoint (bad magic)");
  const auto version = r.le<std::uint32_t>("version");
  if (version != kVersion)
    throw CheckpointError(Kind::VersionMismatch,
                          "checkpoint version " + std::to_string(version) + ", expected " +
                              std::to_string(kVersion));
  const auto count = r.le<std::uint32_t>("array count");
  ad::ParameterStore store;
  static const std::set<std::string> known{kEncoderPartition, kAtPartition, kNatPartition};
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.le<std::uint16_t>("name length");
    const std::string full(r.take(name_len, "array name"));
    const auto slash = full.find('/');
    if (slash == std::string::npos || !known.count(full.substr(0, slash)))
      throw CheckpointError(Kind::UnknownPartition, "array '" + full + "' has an unknown partition");
    const auto rank = r.le<std::uint8_t>("rank");
    ad::Shape shape(rank);
    std::uint64_t n = 1;
    for (auto& dim : shape) {
      dim = r.le<std::uint32_t>("dimension");
      n *= dim;
      if (n > bytes.size())
        throw CheckpointError(Kind::Truncated, "checkpoint truncated in array '" + full + "'");
    }
    r.need(n * 8, "array payload");
    std::vector<double> data(n);
    for (double& x : data) x = r.f64("array payload");
    store.add(full.substr(0, slash), full.substr(slash + 1), Tensor(shape, std::move(data)));
  }
  const auto json_len = r.le<std::uint32_t>("config length");
  const auto text = r.take(json_len, "config blob");
  if (!r.done()) throw CheckpointError(Kind::BadConfig, "trailing bytes after config blob");

  try {
    const auto blob = nlohmann::json::parse(text);
    const ModelConfig cfg = config_from_json(blob.at("model"));
    std::vector<Residue> residues;
    for (const auto& e : blob.at("vocabulary")) {
      const auto sym = e.at(0).get<std::string>();
      if (sym.size() != 1) throw CheckpointError(Kind::BadConfig, "bad vocabulary symbol");
      residues.push_back({sym[0], e.at(1).get<double>()});
    }
    for (const auto& [pname, flag] : blob.at("frozen").items()) {
      if (!known.count(pname))
        throw CheckpointError(Kind::UnknownPartition, "unknown partition " + pname);
      if (store.partitions().count(pname)) store.set_frozen(pname, flag.get<bool>());
    }
    CheckpointMeta meta;
    const auto& m = blob.at("meta");
    meta.stage = m.at("stage").get<std::string>();
    meta.step = m.at("step").get<std::uint64_t>();
    meta.seed = m.at("seed").get<std::uint64_t>();
    return Checkpoint{Model(cfg, AminoAcidTable(std::move(residues)), std::move(store)), meta};
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::BadConfig, std::string("bad checkpoint config: ") + e.what());
  } catch (const CheckpointError&) {
    throw;
  } catch (const Error& e) {
    throw CheckpointError(Kind::BadConfig, std::string("checkpoint does not match its config: ") +
                                               e.what());
  }
}

void save_checkpoint(const Model& model, const CheckpointMeta& meta, const std::string& path) {
  const std::string bytes = serialize_checkpoint(model, meta);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(CheckpointError::Kind::Io, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointError::Kind::Io, "write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::Io, "cannot open " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace novoseq
