#include "cmdrec/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cmdrec/checkpoint.hpp"
#include "cmdrec/random.hpp"
#include "json.hpp"

namespace cmdrec {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) throw Error(ErrorCode::InvalidConfig, "learning rate must be >= 0");
  if (batch_size < 1) throw Error(ErrorCode::InvalidConfig, "batch size must be >= 1");
  if (epochs < 0) throw Error(ErrorCode::InvalidConfig, "epochs must be >= 0");
  if (!(p_mask > 0.0 && p_mask < 1.0)) throw Error(ErrorCode::InvalidConfig, "p_mask must lie in (0, 1)");
}

std::string TrainConfig::to_json_text() const {
  json j{{"epochs", epochs},       {"batch_size", batch_size}, {"lr", lr},
         {"optimizer", optimizer == OptimizerKind::Adam ? "adam" : "sgd"},
         {"beta1", beta1},         {"beta2", beta2},           {"eps", eps},
         {"clip_norm", clip_norm}, {"seed", seed},             {"p_mask", p_mask},
         {"ks", ks},               {"evaluate_each_epoch", evaluate_each_epoch}};
  if (scheme) j["scheme"] = std::string(to_string(*scheme));
  return j.dump();
}

TrainConfig TrainConfig::from_json_text(const std::string& text) {
  TrainConfig c;
  try {
    auto j = json::parse(text);
    auto get = [&](const char* k, auto& f) {
      if (j.contains(k)) f = j[k].get<std::decay_t<decltype(f)>>();
    };
    get("epochs", c.epochs);
    get("batch_size", c.batch_size);
    get("lr", c.lr);
    if (j.contains("optimizer")) {
      auto o = j["optimizer"].get<std::string>();
      if (o == "adam") c.optimizer = OptimizerKind::Adam;
      else if (o == "sgd") c.optimizer = OptimizerKind::Sgd;
      else throw Error(ErrorCode::InvalidConfig, "unknown optimizer " + o);
    }
    get("beta1", c.beta1);
    get("beta2", c.beta2);
    get("eps", c.eps);
    get("clip_norm", c.clip_norm);
    get("seed", c.seed);
    get("p_mask", c.p_mask);
    get("ks", c.ks);
    get("evaluate_each_epoch", c.evaluate_each_epoch);
    if (j.contains("scheme")) c.scheme = parse_scheme(j["scheme"].get<std::string>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, e.what());
  }
  c.validate();
  return c;
}

void Optimizer::step(Model& model) {
  auto& ps = model.params();
  if (m_.size() != ps.size()) {
    m_.resize(ps.size());
    v_.resize(ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i)
      if (m_[i].size() != ps[i].value.size()) {
        m_[i] = ag::Mat::Zero(ps[i].value.rows(), ps[i].value.cols());
        v_[i] = m_[i];
      }
  }
  ++step_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& p = ps[i];
    if (!p.trainable) continue;
    if (config_.optimizer == OptimizerKind::Sgd) {
      p.value -= config_.lr * p.grad;
      continue;
    }
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * p.grad;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * p.grad.cwiseAbs2();
    p.value.array() -= config_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + config_.eps);
  }
}

double clip_gradients(Model& model, double max_norm) {
  double sq = 0.0;
  for (const auto& p : model.params())
    if (p.trainable) sq += p.grad.squaredNorm();
  double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    double f = max_norm / norm;
    for (auto& p : model.params())
      if (p.trainable) p.grad *= f;
  }
  return norm;
}

double compute_gradients(Model& model, const MaskedBatch& batch, const ForwardOptions& opts) {
  model.zero_grad();
  ag::Tape tape;
  auto loss = model.loss(tape, batch, opts);
  double value = loss.v()(0, 0);
  if (!std::isfinite(value)) throw Error(ErrorCode::NonFiniteLoss, "loss is not finite");
  tape.backward(loss);
  return value;
}

FiniteDiffReport finite_diff_check(Model& model, const MaskedBatch& batch, double eps, std::size_t sample_size,
                                   std::uint64_t seed) {
  if (!(eps > 0)) throw Error(ErrorCode::InvalidConfig, "finite-difference eps must be > 0");
  MoeRouting routing;
  ForwardOptions opts;
  opts.routing = &routing;
  compute_gradients(model, batch, opts);

  std::vector<std::size_t> trainable;
  for (std::size_t i = 0; i < model.params().size(); ++i)
    if (model.params()[i].trainable) trainable.push_back(i);
  FiniteDiffReport report;
  if (trainable.empty()) return report;
  std::mt19937_64 rng(seed);
  for (std::size_t s = 0; s < sample_size; ++s) {
    // Round-robin over tensors so small ones are covered too.
    auto& p = model.params()[trainable[s % trainable.size()]];
    auto idx = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::uint64_t>(p.value.size())));
    double& x = p.value.data()[idx];
    const double saved = x;
    x = saved + eps;
    double up = model.loss_value(batch, opts);
    x = saved - eps;
    double down = model.loss_value(batch, opts);
    x = saved;
    double numeric = (up - down) / (2.0 * eps);
    double analytic = p.grad.data()[idx];
    double rel = std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-12);
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_param = p.name;
    }
    ++report.checked;
  }
  return report;
}

std::string EpochRecord::to_json_text() const {
  json j{{"epoch", epoch}, {"train_loss", train_loss}, {"seconds", seconds}};
  if (validation) j["validation"] = json::parse(validation->to_json_text());
  return j.dump();
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<EncodedSequence>& seqs, std::size_t batch_size,
                                                   std::mt19937_64& rng) {
  std::vector<std::size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), 0);
  shuffle_range(order.begin(), order.end(), rng);
  // Sort within pools of many batches, then shuffle the batches.
  const std::size_t pool = batch_size * 50;
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += pool) {
    auto end = std::min(order.size(), start + pool);
    std::stable_sort(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::size_t a, std::size_t b) { return seqs[a].length() < seqs[b].length(); });
    for (auto b = start; b < end; b += batch_size)
      batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                           order.begin() + static_cast<std::ptrdiff_t>(std::min(end, b + batch_size)));
  }
  shuffle_range(batches.begin(), batches.end(), rng);
  return batches;
}

TrainResult train(Model& model, const FeatureEncoder& encoder, const SplitDataset& data, const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  const auto scheme = config.scheme.value_or(model.config().scheme());
  const auto max_items = static_cast<std::size_t>(model.config().max_positions) + (scheme == Scheme::CLM ? 1 : 0);
  std::vector<EncodedSequence> encoded;
  for (const auto& s : data.train) {
    if (s.items.size() < 2) continue;
    auto e = encoder.encode(s);
    if (e.length() > max_items) {
      // Keep the most recent items.
      auto drop = e.length() - max_items;
      e.ids.erase(e.ids.begin(), e.ids.begin() + static_cast<std::ptrdiff_t>(drop));
      e.types.erase(e.types.begin(), e.types.begin() + static_cast<std::ptrdiff_t>(drop));
      e.dt.erase(e.dt.begin(), e.dt.begin() + static_cast<std::ptrdiff_t>(drop));
      e.text.erase(e.text.begin(), e.text.begin() + static_cast<std::ptrdiff_t>(drop * e.d_text));
    }
    encoded.push_back(std::move(e));
  }
  if (encoded.empty()) throw Error(ErrorCode::EmptyCorpus, "no trainable sequences");

  TrainResult result;
  const bool eval = config.evaluate_each_epoch && !data.validation.empty();
  if (eval) result.initial = evaluate(model, encoder, data.validation, config.ks);
  Optimizer opt(config);
  std::mt19937_64 rng(config.seed);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    auto batches = make_batches(encoded, config.batch_size, rng);
    double total = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      std::vector<EncodedSequence> chunk;
      for (auto i : batches[b]) chunk.push_back(encoded[i]);
      auto mb = mask_sequences(chunk, scheme, Mode::Train, rng, config.p_mask);
      ForwardOptions opts;
      opts.train = true;
      opts.rng = &rng;
      double loss;
      try {
        loss = compute_gradients(model, mb, opts);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::NonFiniteLoss)
          throw Error(ErrorCode::NonFiniteLoss, "epoch " + std::to_string(epoch) + " batch " + std::to_string(b));
        throw;
      }
      total += loss;
      clip_gradients(model, config.clip_norm);
      opt.step(model);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = total / static_cast<double>(batches.size());
    if (eval) rec.validation = evaluate(model, encoder, data.validation, config.ks);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

std::string FeatureSnapshot::to_json_text() const {
  return json{{"time_mean", time.mean}, {"time_std", time.std}, {"time_clamp", time.clamp}, {"d_text", d_text}}.dump();
}

FeatureSnapshot FeatureSnapshot::from_json_text(const std::string& text) {
  FeatureSnapshot f;
  try {
    auto j = json::parse(text);
    f.time.mean = j.at("time_mean").get<double>();
    f.time.std = j.at("time_std").get<double>();
    f.time.clamp = j.at("time_clamp").get<double>();
    f.d_text = j.at("d_text").get<std::size_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, e.what());
  }
  return f;
}

void write_run(const std::filesystem::path& dir, const Model& model, const FeatureEncoder& encoder,
               const TrainConfig& config, const TrainResult& result) {
  std::filesystem::create_directories(dir);
  FeatureSnapshot feats{encoder.time, encoder.embedder.dim()};
  {
    json j{{"backbone", json::parse(model.config().to_json_text())},
           {"train", json::parse(config.to_json_text())},
           {"features", json::parse(feats.to_json_text())}};
    std::ofstream out(dir / "config.json");
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + (dir / "config.json").string());
    out << j.dump(2) << '\n';
  }
  encoder.vocab.save(dir / "vocab.tsv");
  {
    std::ofstream out(dir / "metrics.jsonl");
    if (result.initial) {
      EpochRecord r;
      r.validation = result.initial;
      out << r.to_json_text() << '\n';
    }
    for (const auto& r : result.history) out << r.to_json_text() << '\n';
  }
  save_checkpoint(model, dir / "model.ckpt", encoder.vocab.hash(), feats.to_json_text());
}

LoadedRun load_run(const std::filesystem::path& dir) {
  LoadedRun run;
  run.encoder.vocab = Vocabulary::load(dir / "vocab.tsv");
  auto ck = load_checkpoint(dir / "model.ckpt", run.encoder.vocab.hash());
  auto feats = FeatureSnapshot::from_json_text(ck.extra_json);
  run.encoder.time = feats.time;
  run.encoder.embedder = TextEmbedder(feats.d_text);
  run.model = std::move(ck.model);
  if (run.model.config().vocab_size != static_cast<int>(run.encoder.vocab.size()))
    throw Error(ErrorCode::VocabularyMismatch, "model and vocabulary sizes differ");
  return run;
}

}  // namespace cmdrec
