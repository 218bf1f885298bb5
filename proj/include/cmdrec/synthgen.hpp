#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cmdrec/preprocess.hpp"

namespace cmdrec {

// Parameters of a synthetic corpus. Clean command sequences follow a planted
// first-order Markov chain; everything else (noise, undo/redo, translations,
// trigger events) is layered on top when the raw log lines are rendered.
struct GeneratorSpec {
  std::size_t n_commands = 50;
  double frac_tool = 0.3;
  double frac_menu = 0.2;
  // Share of Tool/Menu commands that trigger a hidden low-level event.
  double trigger_frac = 0.5;
  // Probability that an invocation of a triggering command completes its event.
  double trigger_probability = 0.95;
  // Dirichlet concentration of transition rows; smaller is more peaked.
  double concentration = 0.15;
  double uniform_floor = 0.02;
  // Mass of every row routed uniformly to triggering commands, so each of
  // them is observed often enough to be recovered.
  double trigger_boost = 0.15;
  // Explicit row-stochastic matrix (n_commands x n_commands), overrides the
  // sampled one.
  std::optional<std::vector<std::vector<double>>> transitions;

  std::vector<std::pair<std::string, double>> languages = {{"en", 1.0}};
  double undo_rate = 0.0;      // per item: an extra command that is then undone
  double redo_rate = 0.0;      // per item: undo followed by redo of the item
  double noise_rate = 0.0;     // per item: denylisted navigation events
  double abort_rate = 0.0;     // per item: an Event that never completes
  double ambiguous_rate = 0.0; // per item: plugin error events on the removal list
  double modifier_rate = 0.1;
  double foreign_category_rate = 0.0;  // lines with a category the parser skips
  double session_anomaly_rate = 0.0;   // sessions opening with an undo on empty history

  std::size_t sessions = 100;
  double length_log_mean = 3.4;
  double length_log_sd = 0.9;
  std::size_t min_session_len = 2;
  std::size_t max_session_len = 400;
  double gap_log_mean = 1.0;  // seconds between clean items, log-normal
  double gap_log_sd = 1.0;
  std::size_t files = 1;
  // Every planted trigger must be invoked at least this often, else InvalidSpec.
  std::size_t min_trigger_support = 0;
  std::uint64_t seed = 1;

  static GeneratorSpec from_json_text(const std::string& text);
  std::string to_json_text() const;
};

struct SynthCommand {
  std::string name;
  Category category = Category::Undo;
  std::int64_t loc_id = 0;
  // Hidden event fired by a triggering Tool/Menu command.
  std::optional<std::string> event_name;
  std::optional<std::int64_t> event_loc;
};

// The planted world: commands and their transition matrix.
struct PlantedChain {
  std::vector<SynthCommand> commands;
  std::vector<std::vector<double>> transitions;
  std::vector<double> stationary;
};

PlantedChain planted_chain(const GeneratorSpec& spec);

struct GroundTruth {
  std::vector<CleanSequence> clean;          // sorted by session id
  std::map<std::int64_t, std::int64_t> triggers;  // trigger loc -> event loc
  TranslationLexicon lexicon;
  Denylist removal;  // ambiguous plugin events
  StatsReport stats;
  PlantedChain chain;
  std::map<std::int64_t, std::size_t> trigger_support;  // raw invocations per trigger
};

struct GeneratedCorpus {
  std::vector<std::string> files;  // raw log text per file
  GroundTruth truth;

  // Pipeline settings matching the generated noise and lexicon.
  PipelineConfig pipeline_config() const;
};

GeneratedCorpus generate(const GeneratorSpec& spec);

// Writes logs/ and truth/ under `dir`.
void write_corpus(const GeneratedCorpus& corpus, const GeneratorSpec& spec, const std::filesystem::path& dir);

// Recall@k of the Bayes-optimal next-command predictor on the planted chain:
// sum over states of stationary(s) times the top-k mass of row s.
double bayes_recall(const PlantedChain& chain, std::size_t k);
double bayes_recall(const GeneratorSpec& spec, std::size_t k);

std::vector<double> stationary_distribution(const std::vector<std::vector<double>>& transitions);

}  // namespace cmdrec
