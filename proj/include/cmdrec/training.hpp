#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cmdrec/features.hpp"
#include "cmdrec/metrics.hpp"
#include "cmdrec/model.hpp"

namespace cmdrec {

enum class OptimizerKind : std::uint8_t { Sgd, Adam };

struct TrainConfig {
  int epochs = 10;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
  std::uint64_t seed = 0;
  std::optional<Scheme> scheme;  // defaults to the backbone's
  double p_mask = 0.15;
  std::vector<std::size_t> ks = {5, 10};
  bool evaluate_each_epoch = true;

  void validate() const;
  std::string to_json_text() const;
  static TrainConfig from_json_text(const std::string& text);
};

class Optimizer {
 public:
  explicit Optimizer(const TrainConfig& config) : config_(config) {}
  void step(Model& model);

 private:
  TrainConfig config_;
  std::vector<ag::Mat> m_, v_;
  long step_ = 0;
};

// Global L2 norm of trainable gradients before clipping.
double clip_gradients(Model& model, double max_norm);

// Zeroes gradients, runs forward and backward, returns the loss.
double compute_gradients(Model& model, const MaskedBatch& batch, const ForwardOptions& opts = {});

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t checked = 0;
};

// Central differences on a random sample of trainable coordinates, dropout
// off and MoE routing held at the analytic pass's selection.
FiniteDiffReport finite_diff_check(Model& model, const MaskedBatch& batch, double eps = 1e-5,
                                   std::size_t sample_size = 200, std::uint64_t seed = 0);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<MetricsReport> validation;
  double seconds = 0.0;

  std::string to_json_text() const;
};

struct TrainResult {
  std::optional<MetricsReport> initial;  // untrained validation metrics
  std::vector<EpochRecord> history;
};

// Batches of similar length in a seeded order. Each entry holds indices into
// the encoded training set.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<EncodedSequence>& seqs, std::size_t batch_size,
                                                   std::mt19937_64& rng);

TrainResult train(Model& model, const FeatureEncoder& encoder, const SplitDataset& data, const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

// Everything needed to rebuild features at inference time.
struct FeatureSnapshot {
  TimeNormStats time;
  std::size_t d_text = 16;
  std::string to_json_text() const;
  static FeatureSnapshot from_json_text(const std::string& text);
};

// Run directory: config.json, vocab.tsv, metrics.jsonl, model.ckpt.
void write_run(const std::filesystem::path& dir, const Model& model, const FeatureEncoder& encoder,
               const TrainConfig& config, const TrainResult& result);

struct LoadedRun {
  Model model;
  FeatureEncoder encoder;
};
LoadedRun load_run(const std::filesystem::path& dir);

}  // namespace cmdrec
