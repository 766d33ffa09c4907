#pragma once

// Shared spectrum encoder, autoregressive (AT) and non-autoregressive (NAT)
// decoders, and the cross-decoder attention that lets the AT decoder read
// NAT latents. Parameters are partitioned into "enc", "at" and "nat".

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "novoseq/autodiff.hpp"
#include "novoseq/spectra.hpp"

namespace novoseq {

inline constexpr const char* kEncoderPartition = "enc";
inline constexpr const char* kAtPartition = "at";
inline constexpr const char* kNatPartition = "nat";

struct ModelConfig {
  std::size_t d = 64;
  std::size_t heads = 2;
  std::size_t hidden = 128;
  std::size_t enc_layers = 2;
  std::size_t at_layers = 2;
  std::size_t nat_layers = 2;
  std::size_t t_max = 24;
  std::size_t max_charge = 10;
  // AT cross-attention reads [NAT latents ⊕ spectrum features] instead of
  // the spectrum features alone. Switched on for fine-tuning and kept for
  // inference afterwards.
  bool cross_decoder = false;
  // With cross_decoder: attend the augmented context in an extra sublayer
  // after the plain cross-attention instead of replacing it.
  bool cross_additive = false;
  bool paired_frequencies = false;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct EncoderOutput {
  ad::Var features;  // [k+1, d]; row 0 is the precursor token
};

struct NatFeatures {
  ad::Var latents;  // [t_max, d]
  ad::Var logits;   // [t_max, nat vocab]
};

struct MassPair {
  double prefix;
  double suffix;
};

// Prefix/suffix residue masses for each position of a BOS-prefixed AT input.
// prefix excludes BOS; suffix = neutral_mass − water − prefix.
std::vector<MassPair> step_masses(std::span<const std::size_t> at_tokens,
                                  const AminoAcidTable& table, double neutral_mass);

class Model {
 public:
  Model(ModelConfig cfg, AminoAcidTable table, ad::ParameterStore params);

  // Weights ~ N(0, 0.02), biases zero, layer-norm gains one.
  static Model initialize(const ModelConfig& cfg, const AminoAcidTable& table,
                          std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& config() { return cfg_; }
  const AminoAcidTable& table() const { return table_; }
  ad::ParameterStore& params() { return params_; }
  const ad::ParameterStore& params() const { return params_; }

  // `grad` = false builds a graph where no parameter takes gradients; frozen
  // partitions never take gradients.
  EncoderOutput encode_spectrum(ad::Graph& g, const Spectrum& s, bool grad);

  // Logits [n+1, at vocab] for a BOS-prefixed token sequence. With a
  // non-null context (from cross_context()), cross-attention reads it
  // instead of enc.features.
  ad::Var at_forward(ad::Graph& g, std::span<const std::size_t> tokens,
                     std::span<const MassPair> masses, const EncoderOutput& enc,
                     const ad::Var* context, bool grad);

  // Inputs are the learned positional embeddings only; there is no channel
  // for target tokens.
  NatFeatures nat_forward(ad::Graph& g, const EncoderOutput& enc, bool grad);

  // [segA + (blocked ? stop_gradient(V) : V)] ⊕ [segB + E], length t_max + k + 1.
  ad::Var cross_context(ad::Graph& g, const NatFeatures& nat, const EncoderOutput& enc,
                        bool blocked, bool grad);

  // Cross-attention of AT query states h over the augmented context using
  // the cross-attention weights of AT layer `layer`.
  ad::Var cross_decoder_attend(ad::Graph& g, ad::Var h, const NatFeatures& nat,
                               const EncoderOutput& enc, std::size_t layer, bool blocked,
                               bool grad);

  // Shape each parameter must have for a given config and vocabulary.
  struct ParamSpec {
    std::string partition;
    std::string name;
    ad::Shape shape;
    enum class Init { Normal, Zero, One } init;
  };
  static std::vector<ParamSpec> layout(const ModelConfig& cfg, const AminoAcidTable& table);

 private:
  ad::Var param(ad::Graph& g, const char* partition, const std::string& name, bool grad);
  ad::Var attention(ad::Graph& g, const char* partition, const std::string& prefix, ad::Var x,
                    ad::Var context, const ad::Mask* mask, bool grad);
  ad::Var feed_forward(ad::Graph& g, const char* partition, const std::string& prefix, ad::Var x,
                       bool grad);
  ad::Var norm(ad::Graph& g, const char* partition, const std::string& prefix, ad::Var x,
               bool grad);

  ModelConfig cfg_;
  AminoAcidTable table_;
  ad::ParameterStore params_;
};

struct CheckpointMeta {
  std::string stage;       // "init", "stage1", "stage2"
  std::uint64_t step = 0;  // optimizer steps taken in `stage`
  std::uint64_t seed = 0;
  bool operator==(const CheckpointMeta&) const = default;
};

struct Checkpoint {
  Model model;
  CheckpointMeta meta;
};

// Binary layout: "NVCK", u32 version (1), u32 array count; per array u16 name
// length, name "partition/name", u8 rank, u32 dims, f64 LE payload; then a
// u32-length-prefixed JSON blob with the config, vocabulary and metadata.
void save_checkpoint(const Model& model, const CheckpointMeta& meta, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);
std::string serialize_checkpoint(const Model& model, const CheckpointMeta& meta);
Checkpoint deserialize_checkpoint(std::string_view bytes);

}  // namespace novoseq
