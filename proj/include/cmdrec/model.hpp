#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cmdrec/autograd.hpp"
#include "cmdrec/features.hpp"

namespace cmdrec {

enum class Directionality : std::uint8_t { Causal, Bidirectional };
enum class PosEncoding : std::uint8_t { LearnedAbsolute, Rope };
enum class Activation : std::uint8_t { Relu, Gelu, Swiglu };
enum class NormPlacement : std::uint8_t { Pre, Post };

struct BackboneConfig {
  std::string preset = "custom";
  int d_model = 64;
  int n_heads = 8;
  int n_kv_heads = 8;
  int n_layers = 4;
  Directionality direction = Directionality::Causal;
  PosEncoding pos_encoding = PosEncoding::Rope;
  Activation activation = Activation::Swiglu;
  NormPlacement norm = NormPlacement::Pre;
  int window = 0;     // sliding-window size, 0 = full
  int n_experts = 0;  // 0 = dense FFN
  int top_k = 2;
  int d_ff = 256;
  int d_proj = 32;
  int d_text = 16;
  double dropout = 0.1;
  int vocab_size = 0;
  int max_positions = 101;
  bool tie_weights = true;

  void validate() const;
  int head_dim() const { return d_model / n_heads; }
  // Width of the hidden FFN layer; SwiGLU keeps the parameter budget with 2/3.
  int ffn_hidden() const { return activation == Activation::Swiglu ? (2 * d_ff) / 3 : d_ff; }
  bool is_moe() const { return n_experts > 0; }
  Scheme scheme() const { return direction == Directionality::Causal ? Scheme::CLM : Scheme::MLM; }

  std::string to_json_text() const;
  static BackboneConfig from_json_text(const std::string& text);
  bool operator==(const BackboneConfig&) const = default;
};

// Named presets: llama2, mistral, mixtral, bert, encoder-mlm. The llama2
// preset's named shape (32 heads, 32 layers) is kept in `named_shape`; the
// instantiated model is desk sized.
BackboneConfig preset_config(const std::string& name, int vocab_size, int d_model = 64);
// Gradient-check scale: d_model 8, 4 heads, vocab 10.
BackboneConfig tiny_config(const std::string& name, int vocab_size = 10);
std::vector<std::string> preset_names();
std::pair<int, int> named_shape(const std::string& name);  // (heads, layers) as published

struct Parameter {
  std::string name;
  ag::Mat value;
  ag::Mat grad;
  bool trainable = true;
};

struct LoraSpec {
  int rank = 4;
  double alpha = 8.0;
  // Matrix kinds: wq, wk, wv, wo (attention), w1, w2, wg, wu, wd (FFN).
  std::vector<std::string> targets = {"wq", "wk", "wv", "wo"};
  // Restrict to specific layers; empty = every layer.
  std::vector<int> layers;
  bool freeze_base = true;
  bool train_head = false;
};

// Per-layer MoE routing, recorded on one pass and replayed on another.
using MoeRouting = std::vector<std::vector<std::vector<int>>>;

struct ForwardOptions {
  bool train = false;                // enables dropout
  std::mt19937_64* rng = nullptr;    // dropout stream
  MoeRouting* routing = nullptr;     // recorded when empty, replayed otherwise
  std::vector<ag::Mat>* attention_probs = nullptr;  // last layer's attention, if requested
};

struct RankedPrediction {
  std::vector<std::pair<int, double>> items;  // (id, score), best first
  bool clamped = false;                       // k exceeded the rankable ids
};

// Highest scores first, ties by ascending id, reserved ids excluded.
RankedPrediction top_k(const std::vector<double>& scores, std::size_t k);

class Model {
 public:
  Model() = default;
  Model(BackboneConfig config, std::uint64_t seed, double init_gain = 1.0);

  const BackboneConfig& config() const { return config_; }
  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  Parameter& param(const std::string& name);
  const Parameter& param(const std::string& name) const;
  bool has_param(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t parameter_count() const;
  std::size_t trainable_count() const;
  void zero_grad();

  // Hidden states, (batch*length) x d_model.
  ag::Var hidden(ag::Tape& tape, const MaskedBatch& batch, const ForwardOptions& opts = {}) const;
  // Logits for the given hidden rows, rows x vocab_size.
  ag::Var head(ag::Tape& tape, ag::Var hidden_rows) const;
  // Logits for every position, (batch*length) x vocab_size.
  ag::Var logits(ag::Tape& tape, const MaskedBatch& batch, const ForwardOptions& opts = {}) const;
  // Mean cross entropy over supervised positions.
  ag::Var loss(ag::Tape& tape, const MaskedBatch& batch, const ForwardOptions& opts = {}) const;
  double loss_value(const MaskedBatch& batch, const ForwardOptions& opts = {}) const;
  // Scores at each sequence's target position, batch x vocab_size.
  ag::Mat target_scores(const MaskedBatch& batch) const;

  // Reparameterizes matching matrices as W + (alpha/r) A B, B = 0.
  void inject_lora(const LoraSpec& spec, std::uint64_t seed);
  const std::optional<LoraSpec>& lora() const { return lora_; }
  // Names of LoRA-adapted base matrices.
  std::vector<std::string> lora_targets() const;

  // Used by checkpoint loading.
  void add_param(Parameter p);
  void set_lora_spec(const LoraSpec& spec) { lora_ = spec; }

 private:
  ag::Var p(ag::Tape& tape, const std::string& name) const;
  ag::Var linear(ag::Tape& tape, ag::Var x, const std::string& w, const std::string& b = {}) const;
  ag::Var ffn(ag::Tape& tape, ag::Var x, const std::string& prefix) const;
  ag::Var norm(ag::Tape& tape, ag::Var x, const std::string& prefix) const;
  ag::Var attention_block(ag::Tape& tape, ag::Var x, int layer, const MaskedBatch& batch,
                          const ForwardOptions& opts) const;
  ag::Var ffn_block(ag::Tape& tape, ag::Var x, int layer, const ForwardOptions& opts) const;
  void create(const std::string& name, int rows, int cols, double std, std::mt19937_64& rng, double fill = 0.0);

  BackboneConfig config_;
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
  std::optional<LoraSpec> lora_;
};

}  // namespace cmdrec
