#include "cmdrec/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cmdrec/random.hpp"
#include "json.hpp"

namespace cmdrec {

using ag::Mat;
using ag::Tape;
using ag::Var;
using nlohmann::json;

namespace {

const char* dir_name(Directionality d) { return d == Directionality::Causal ? "causal" : "bidirectional"; }
const char* pos_name(PosEncoding p) { return p == PosEncoding::Rope ? "rope" : "learned_absolute"; }
const char* act_name(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Gelu: return "gelu";
    case Activation::Swiglu: return "swiglu";
  }
  return "?";
}
const char* norm_name(NormPlacement n) { return n == NormPlacement::Pre ? "pre" : "post"; }

template <typename E>
E parse_enum(const std::string& s, std::initializer_list<std::pair<const char*, E>> options) {
  for (const auto& [k, v] : options)
    if (s == k) return v;
  throw Error(ErrorCode::InvalidConfig, "unknown option " + s);
}

std::string layer_prefix(int l) { return "layers." + std::to_string(l) + "."; }

}  // namespace

void BackboneConfig::validate() const {
  auto bad = [](const std::string& m) { throw Error(ErrorCode::InvalidConfig, m); };
  if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0) bad("d_model must be a positive multiple of n_heads");
  if (n_kv_heads <= 0 || n_kv_heads > n_heads || n_heads % n_kv_heads != 0) bad("n_kv_heads must divide n_heads");
  if (n_layers < 0) bad("n_layers must be >= 0");
  if (pos_encoding == PosEncoding::Rope && head_dim() % 2 != 0) bad("rope needs an even head dimension");
  if (window < 0) bad("window must be >= 0");
  if (n_experts < 0 || (n_experts > 0 && (top_k < 1 || top_k > n_experts))) bad("top_k must lie in [1, n_experts]");
  if (d_ff <= 0 || ffn_hidden() <= 0 || d_proj <= 0 || d_text <= 0) bad("widths must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) bad("dropout must lie in [0, 1)");
  if (vocab_size <= kNumReserved) bad("vocab_size must exceed the reserved ids");
  if (max_positions < 2) bad("max_positions must be >= 2");
}

std::string BackboneConfig::to_json_text() const {
  json j{{"preset", preset},
         {"d_model", d_model},
         {"n_heads", n_heads},
         {"n_kv_heads", n_kv_heads},
         {"n_layers", n_layers},
         {"directionality", dir_name(direction)},
         {"pos_encoding", pos_name(pos_encoding)},
         {"activation", act_name(activation)},
         {"norm_placement", norm_name(norm)},
         {"window", window},
         {"n_experts", n_experts},
         {"top_k", top_k},
         {"d_ff", d_ff},
         {"d_proj", d_proj},
         {"d_text", d_text},
         {"dropout", dropout},
         {"vocab_size", vocab_size},
         {"max_positions", max_positions},
         {"tie_weights", tie_weights}};
  return j.dump();
}

BackboneConfig BackboneConfig::from_json_text(const std::string& text) {
  BackboneConfig c;
  try {
    auto j = json::parse(text);
    auto get = [&](const char* k, auto& f) {
      if (j.contains(k)) f = j[k].get<std::decay_t<decltype(f)>>();
    };
    get("preset", c.preset);
    get("d_model", c.d_model);
    get("n_heads", c.n_heads);
    get("n_kv_heads", c.n_kv_heads);
    get("n_layers", c.n_layers);
    if (j.contains("directionality"))
      c.direction = parse_enum<Directionality>(
          j["directionality"], {{"causal", Directionality::Causal}, {"bidirectional", Directionality::Bidirectional}});
    if (j.contains("pos_encoding"))
      c.pos_encoding = parse_enum<PosEncoding>(
          j["pos_encoding"], {{"rope", PosEncoding::Rope}, {"learned_absolute", PosEncoding::LearnedAbsolute}});
    if (j.contains("activation"))
      c.activation = parse_enum<Activation>(
          j["activation"], {{"relu", Activation::Relu}, {"gelu", Activation::Gelu}, {"swiglu", Activation::Swiglu}});
    if (j.contains("norm_placement"))
      c.norm = parse_enum<NormPlacement>(j["norm_placement"], {{"pre", NormPlacement::Pre}, {"post", NormPlacement::Post}});
    get("window", c.window);
    get("n_experts", c.n_experts);
    get("top_k", c.top_k);
    get("d_ff", c.d_ff);
    get("d_proj", c.d_proj);
    get("d_text", c.d_text);
    get("dropout", c.dropout);
    get("vocab_size", c.vocab_size);
    get("max_positions", c.max_positions);
    get("tie_weights", c.tie_weights);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, e.what());
  }
  c.validate();
  return c;
}

std::vector<std::string> preset_names() { return {"llama2", "mistral", "mixtral", "bert", "encoder-mlm"}; }

std::pair<int, int> named_shape(const std::string& name) {
  if (name == "llama2") return {32, 32};
  if (name == "mistral" || name == "bert") return {8, 4};
  if (name == "mixtral" || name == "encoder-mlm") return {8, 2};
  throw Error(ErrorCode::InvalidConfig, "unknown preset " + name);
}

namespace {

BackboneConfig preset_shape(const std::string& name, int vocab_size, int d_model) {
  BackboneConfig c;
  c.preset = name;
  c.d_model = d_model;
  c.d_ff = 4 * d_model;
  c.vocab_size = vocab_size;
  c.n_heads = 8;
  c.n_kv_heads = 8;
  if (name == "llama2") {
    c.n_layers = 2;
  } else if (name == "mistral") {
    c.n_layers = 4;
    c.n_kv_heads = 2;
    c.window = 32;
  } else if (name == "mixtral") {
    c.n_layers = 2;
    c.n_kv_heads = 2;
    c.window = 32;
    c.n_experts = 8;
    c.top_k = 2;
  } else if (name == "bert") {
    c.n_layers = 4;
    c.direction = Directionality::Bidirectional;
    c.pos_encoding = PosEncoding::LearnedAbsolute;
    c.activation = Activation::Gelu;
    c.norm = NormPlacement::Post;
  } else if (name == "encoder-mlm") {
    c.n_layers = 2;
    c.direction = Directionality::Bidirectional;
    c.activation = Activation::Gelu;
  } else {
    throw Error(ErrorCode::InvalidConfig, "unknown preset " + name);
  }
  return c;
}

}  // namespace

BackboneConfig preset_config(const std::string& name, int vocab_size, int d_model) {
  auto c = preset_shape(name, vocab_size, d_model);
  c.validate();
  return c;
}

BackboneConfig tiny_config(const std::string& name, int vocab_size) {
  auto c = preset_shape(name, vocab_size, 8);
  c.n_heads = 4;
  c.n_kv_heads = c.n_kv_heads == 8 ? 4 : 2;
  if (c.window > 0) c.window = 3;
  c.d_proj = 4;
  c.d_text = 4;
  c.max_positions = 12;
  c.dropout = 0.0;
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

RankedPrediction top_k(const std::vector<double>& scores, std::size_t k) {
  RankedPrediction out;
  if (k < 1) throw Error(ErrorCode::InvalidConfig, "k must be >= 1");
  std::vector<int> ids;
  for (int i = kNumReserved; i < static_cast<int>(scores.size()); ++i) ids.push_back(i);
  if (k > ids.size()) {
    out.clamped = true;
    k = ids.size();
  }
  auto better = [&](int a, int b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); };
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(), better);
  for (std::size_t i = 0; i < k; ++i) out.items.emplace_back(ids[i], scores[ids[i]]);
  return out;
}

// ---------------------------------------------------------------------------

void Model::create(const std::string& name, int rows, int cols, double std, std::mt19937_64& rng, double fill) {
  Parameter p;
  p.name = name;
  p.value = Mat(rows, cols);
  for (Eigen::Index i = 0; i < p.value.size(); ++i)
    p.value.data()[i] = std > 0 ? std * standard_normal(rng) : fill;
  add_param(std::move(p));
}

void Model::add_param(Parameter p) {
  if (index_.count(p.name)) throw Error(ErrorCode::InvalidConfig, "duplicate parameter " + p.name);
  p.grad = Mat::Zero(p.value.rows(), p.value.cols());
  index_[p.name] = params_.size();
  params_.push_back(std::move(p));
}

Model::Model(BackboneConfig config, std::uint64_t seed, double init_gain) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const auto& c = config_;
  const int d = c.d_model, dp = c.d_proj, hd = c.head_dim(), f = c.ffn_hidden();
  auto w = [&](int fan_in) { return init_gain / std::sqrt(static_cast<double>(fan_in)); };
  const double resid = 1.0 / std::sqrt(2.0 * std::max(1, c.n_layers));

  create("item_emb", c.vocab_size, d, w(d), rng);
  create("proj.item.w", d, dp, w(d), rng);
  create("proj.item.b", 1, dp, 0, rng);
  create("type_emb", kNumTypeCodes, dp, 0.5 * init_gain, rng);
  create("proj.dt.w", 1, dp, init_gain, rng);
  create("proj.dt.b", 1, dp, 0, rng);
  create("proj.text.w", c.d_text, dp, w(c.d_text), rng);
  create("proj.text.b", 1, dp, 0, rng);
  create("fuse.w", 4 * dp, d, w(4 * dp), rng);
  create("fuse.b", 1, d, 0, rng);
  if (c.pos_encoding == PosEncoding::LearnedAbsolute) create("pos_emb", c.max_positions, d, 0.1 * init_gain, rng);

  auto make_norm = [&](const std::string& pre) {
    create(pre + ".g", 1, d, 0, rng, 1.0);
    if (c.norm == NormPlacement::Post) create(pre + ".b", 1, d, 0, rng);
  };
  auto make_ffn = [&](const std::string& pre) {
    if (c.activation == Activation::Swiglu) {
      create(pre + "wg", d, f, w(d), rng);
      create(pre + "wu", d, f, w(d), rng);
      create(pre + "wd", f, d, w(f) * resid, rng);
    } else {
      create(pre + "w1", d, f, w(d), rng);
      create(pre + "b1", 1, f, 0, rng);
      create(pre + "w2", f, d, w(f) * resid, rng);
      create(pre + "b2", 1, d, 0, rng);
    }
  };
  for (int l = 0; l < c.n_layers; ++l) {
    const auto lp = layer_prefix(l);
    make_norm(lp + "norm1");
    create(lp + "attn.wq", d, c.n_heads * hd, w(d), rng);
    create(lp + "attn.wk", d, c.n_kv_heads * hd, w(d), rng);
    create(lp + "attn.wv", d, c.n_kv_heads * hd, w(d), rng);
    create(lp + "attn.wo", c.n_heads * hd, d, w(c.n_heads * hd) * resid, rng);
    make_norm(lp + "norm2");
    if (c.is_moe()) {
      create(lp + "moe.gate", d, c.n_experts, w(d), rng);
      for (int e = 0; e < c.n_experts; ++e) make_ffn(lp + "moe.e" + std::to_string(e) + ".");
    } else {
      make_ffn(lp + "ffn.");
    }
  }
  if (c.norm == NormPlacement::Pre) make_norm("final_norm");
  if (!c.tie_weights) create("head.w", d, c.vocab_size, w(d), rng);
}

Parameter& Model::param(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorCode::InvalidConfig, "no parameter " + name);
  return params_[it->second];
}

const Parameter& Model::param(const std::string& name) const { return const_cast<Model*>(this)->param(name); }

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

std::size_t Model::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p.trainable) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void Model::zero_grad() {
  for (auto& p : params_) p.grad.setZero();
}

Var Model::p(Tape& tape, const std::string& name) const {
  const auto& prm = param(name);
  auto* grad = prm.trainable ? const_cast<Mat*>(&prm.grad) : nullptr;
  return tape.param(prm.value, grad);
}

Var Model::linear(Tape& tape, Var x, const std::string& w, const std::string& b) const {
  Var y = ag::matmul(x, p(tape, w));
  auto a = index_.find(w + ".lora_a");
  if (a != index_.end()) {
    double s = lora_->alpha / static_cast<double>(lora_->rank);
    Var delta = ag::matmul(ag::matmul(x, p(tape, w + ".lora_a")), p(tape, w + ".lora_b"));
    y = ag::add(y, ag::scale(delta, s));
  }
  if (!b.empty()) y = ag::add_row(y, p(tape, b));
  return y;
}

Var Model::norm(Tape& tape, Var x, const std::string& prefix) const {
  if (config_.norm == NormPlacement::Pre) return ag::rms_norm(x, p(tape, prefix + ".g"));
  return ag::layer_norm(x, p(tape, prefix + ".g"), p(tape, prefix + ".b"));
}

Var Model::ffn(Tape& tape, Var x, const std::string& pre) const {
  switch (config_.activation) {
    case Activation::Swiglu: {
      Var gate = ag::silu(linear(tape, x, pre + "wg"));
      Var up = linear(tape, x, pre + "wu");
      return linear(tape, ag::mul(gate, up), pre + "wd");
    }
    case Activation::Gelu:
      return linear(tape, ag::gelu(linear(tape, x, pre + "w1", pre + "b1")), pre + "w2", pre + "b2");
    case Activation::Relu:
      return linear(tape, ag::relu(linear(tape, x, pre + "w1", pre + "b1")), pre + "w2", pre + "b2");
  }
  return x;
}

Var Model::attention_block(Tape& tape, Var x, int layer, const MaskedBatch& batch, const ForwardOptions& opts) const {
  const auto& c = config_;
  const auto lp = layer_prefix(layer) + "attn.";
  const int L = static_cast<int>(batch.length);
  Var q = linear(tape, x, lp + "wq");
  Var k = linear(tape, x, lp + "wk");
  Var v = linear(tape, x, lp + "wv");
  if (c.pos_encoding == PosEncoding::Rope) {
    q = ag::rope(q, c.n_heads, c.head_dim(), L);
    k = ag::rope(k, c.n_kv_heads, c.head_dim(), L);
  }
  ag::AttentionSpec sp;
  sp.batch = static_cast<int>(batch.batch);
  sp.length = L;
  sp.n_heads = c.n_heads;
  sp.n_kv_heads = c.n_kv_heads;
  sp.head_dim = c.head_dim();
  sp.causal = c.direction == Directionality::Causal;
  sp.window = c.window;
  sp.valid = &batch.valid;
  bool last = layer == c.n_layers - 1;
  Var o = ag::attention(q, k, v, sp, last ? opts.attention_probs : nullptr);
  return linear(tape, o, lp + "wo");
}

Var Model::ffn_block(Tape& tape, Var x, int layer, const ForwardOptions& opts) const {
  const auto& c = config_;
  const auto lp = layer_prefix(layer);
  if (!c.is_moe()) return ffn(tape, x, lp + "ffn.");
  Var gate_logits = linear(tape, x, lp + "moe.gate");
  std::vector<std::vector<int>> local;
  std::vector<std::vector<int>>* route = &local;
  if (opts.routing) {
    if (opts.routing->size() < static_cast<std::size_t>(c.n_layers)) opts.routing->resize(c.n_layers);
    route = &(*opts.routing)[static_cast<std::size_t>(layer)];
  }
  Var weights = ag::topk_gate(gate_logits, c.top_k, route);
  std::vector<std::vector<int>> rows(static_cast<std::size_t>(c.n_experts));
  for (std::size_t r = 0; r < route->size(); ++r)
    for (int e : (*route)[r]) rows[static_cast<std::size_t>(e)].push_back(static_cast<int>(r));
  std::optional<Var> out;
  for (int e = 0; e < c.n_experts; ++e) {
    const auto& idx = rows[static_cast<std::size_t>(e)];
    if (idx.empty()) continue;
    Var y = ffn(tape, ag::gather_rows(x, idx), lp + "moe.e" + std::to_string(e) + ".");
    Var part = ag::scatter_weighted(y, idx, weights, e, x.rows());
    out = out ? ag::add(*out, part) : part;
  }
  return out ? *out : ag::scale(x, 0.0);
}

Var Model::hidden(Tape& tape, const MaskedBatch& batch, const ForwardOptions& opts) const {
  const auto& c = config_;
  const auto n = static_cast<Eigen::Index>(batch.batch * batch.length);
  if (batch.d_text != static_cast<std::size_t>(c.d_text))
    throw Error(ErrorCode::DimensionMismatch, "text embedding width differs from the model");
  if (static_cast<int>(batch.length) > c.max_positions)
    throw Error(ErrorCode::DimensionMismatch, "sequence longer than max_positions");
  for (int id : batch.ids)
    if (id < 0 || id >= c.vocab_size) throw Error(ErrorCode::DimensionMismatch, "id outside the vocabulary");

  Var item = linear(tape, ag::gather_rows(p(tape, "item_emb"), batch.ids), "proj.item.w", "proj.item.b");
  Var type = ag::gather_rows(p(tape, "type_emb"), batch.types);
  Mat dtm = Eigen::Map<const Mat>(batch.dt.data(), n, 1);
  Var dt = linear(tape, tape.constant(std::move(dtm)), "proj.dt.w", "proj.dt.b");
  Mat textm = Eigen::Map<const Mat>(batch.text.data(), n, c.d_text);
  Var text = linear(tape, tape.constant(std::move(textm)), "proj.text.w", "proj.text.b");
  Var h = linear(tape, ag::concat_cols({item, type, dt, text}), "fuse.w", "fuse.b");
  if (c.pos_encoding == PosEncoding::LearnedAbsolute) {
    std::vector<int> pos(static_cast<std::size_t>(n));
    for (Eigen::Index r = 0; r < n; ++r) pos[static_cast<std::size_t>(r)] = static_cast<int>(r % batch.length);
    h = ag::add(h, ag::gather_rows(p(tape, "pos_emb"), pos));
  }
  const bool drop = opts.train && opts.rng && c.dropout > 0;
  auto dropout = [&](Var x) { return drop ? ag::dropout(x, c.dropout, *opts.rng) : x; };
  for (int l = 0; l < c.n_layers; ++l) {
    const auto lp = layer_prefix(l);
    if (c.norm == NormPlacement::Pre) {
      h = ag::add(h, dropout(attention_block(tape, norm(tape, h, lp + "norm1"), l, batch, opts)));
      h = ag::add(h, dropout(ffn_block(tape, norm(tape, h, lp + "norm2"), l, opts)));
    } else {
      h = norm(tape, ag::add(h, dropout(attention_block(tape, h, l, batch, opts))), lp + "norm1");
      h = norm(tape, ag::add(h, dropout(ffn_block(tape, h, l, opts))), lp + "norm2");
    }
  }
  if (c.norm == NormPlacement::Pre) h = norm(tape, h, "final_norm");
  return h;
}

Var Model::head(Tape& tape, Var rows) const {
  if (config_.tie_weights) return ag::matmul_nt(rows, p(tape, "item_emb"));
  return ag::matmul(rows, p(tape, "head.w"));
}

Var Model::logits(Tape& tape, const MaskedBatch& batch, const ForwardOptions& opts) const {
  return head(tape, hidden(tape, batch, opts));
}

Var Model::loss(Tape& tape, const MaskedBatch& batch, const ForwardOptions& opts) const {
  std::vector<int> rows, labels;
  for (std::size_t i = 0; i < batch.labels.size(); ++i)
    if (batch.labels[i] != kIgnore) {
      rows.push_back(static_cast<int>(i));
      labels.push_back(batch.labels[i]);
    }
  if (rows.empty()) throw Error(ErrorCode::NoSupervisedPositions, "batch has no supervised positions");
  Var h = hidden(tape, batch, opts);
  return ag::cross_entropy(head(tape, ag::gather_rows(h, rows)), labels);
}

double Model::loss_value(const MaskedBatch& batch, const ForwardOptions& opts) const {
  Tape tape(false);
  return loss(tape, batch, opts).v()(0, 0);
}

Mat Model::target_scores(const MaskedBatch& batch) const {
  Tape tape(false);
  std::vector<int> rows;
  for (std::size_t s = 0; s < batch.batch; ++s)
    rows.push_back(static_cast<int>(s * batch.length) + batch.target_pos[s]);
  Var h = hidden(tape, batch);
  return head(tape, ag::gather_rows(h, rows)).v();
}

// ---------------------------------------------------------------------------

std::vector<std::string> Model::lora_targets() const {
  std::vector<std::string> out;
  for (const auto& prm : params_) {
    const auto& n = prm.name;
    if (n.size() > 7 && n.compare(n.size() - 7, 7, ".lora_a") == 0) out.push_back(n.substr(0, n.size() - 7));
  }
  return out;
}

void Model::inject_lora(const LoraSpec& spec, std::uint64_t seed) {
  if (lora_) throw Error(ErrorCode::InvalidConfig, "LoRA already injected");
  if (spec.rank < 1) throw Error(ErrorCode::RankTooLarge, "rank must be >= 1");
  std::vector<std::string> targets;
  for (const auto& prm : params_) {
    auto dot = prm.name.rfind('.');
    if (prm.name.rfind("layers.", 0) != 0 || dot == std::string::npos) continue;
    auto kind = prm.name.substr(dot + 1);
    if (std::find(spec.targets.begin(), spec.targets.end(), kind) == spec.targets.end()) continue;
    if (!spec.layers.empty()) {
      int layer = std::stoi(prm.name.substr(7));
      if (std::find(spec.layers.begin(), spec.layers.end(), layer) == spec.layers.end()) continue;
    }
    if (spec.rank >= std::min(prm.value.rows(), prm.value.cols()))
      throw Error(ErrorCode::RankTooLarge, "rank " + std::to_string(spec.rank) + " too large for " + prm.name);
    targets.push_back(prm.name);
  }
  if (targets.empty()) throw Error(ErrorCode::InvalidConfig, "no LoRA target matched");
  if (spec.freeze_base)
    for (auto& prm : params_) {
      bool head = prm.name == "head.w" || (config_.tie_weights && prm.name == "item_emb");
      prm.trainable = spec.train_head && head;
    }
  std::mt19937_64 rng(seed);
  for (const auto& t : targets) {
    auto rows = static_cast<int>(param(t).value.rows());
    auto cols = static_cast<int>(param(t).value.cols());
    create(t + ".lora_a", rows, spec.rank, 0.01, rng);
    create(t + ".lora_b", spec.rank, cols, 0, rng);
  }
  lora_ = spec;
}

}  // namespace cmdrec
