#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cmdrec/log_core.hpp"

namespace cmdrec {

// ---------------------------------------------------------------------------
// Noise filtering

enum class RuleKind : std::uint8_t { Semantic, Statistical };

// A rule matches when every field that is set matches the event. An empty
// rule matches nothing.
struct MatchRule {
  std::string label;
  RuleKind kind = RuleKind::Semantic;
  std::optional<Category> category;
  std::optional<ActionKind> action;
  std::optional<std::string> name;
  std::optional<std::int64_t> loc_id;

  bool matches(const TimedEvent& ev) const;
};

struct Denylist {
  std::vector<MatchRule> rules;

  // Zoom, pan/scroll, selection-only and internal events.
  static Denylist defaults();
  static Denylist load(const std::filesystem::path& path);
  static Denylist from_json_text(const std::string& text);
  std::string to_json_text() const;

  const MatchRule* match(const TimedEvent& ev) const;
};

struct FilterStats {
  std::map<std::string, std::size_t> removed_by_rule;
  std::size_t aborted = 0;
};

// Removes denylisted events and aborted events (an Event that is not closed
// by an End Event with the same loc_id before the next UNDO record).
Session filter_noise(const Session& session, const Denylist& denylist, FilterStats* stats = nullptr);

// Incremental abort detection. Events are pushed in session order; events
// that are certain to survive are appended to the output vector. Tool/Menu
// records seen while an Event is open are held until the Event resolves.
class AbortFilter {
 public:
  void push(const TimedEvent& ev, std::vector<TimedEvent>& out);
  // Flushes as if the session ended here.
  void finish(std::vector<TimedEvent>& out);
  // Records that would be emitted by finish() without changing state.
  std::vector<TimedEvent> tentative_tail() const { return held_; }
  std::size_t aborted() const { return aborted_; }

 private:
  std::optional<TimedEvent> open_;
  std::vector<TimedEvent> held_;
  std::size_t aborted_ = 0;
};

// ---------------------------------------------------------------------------
// Undo / redo

struct UndoStats {
  std::size_t undone = 0;
  std::size_t redone = 0;
  std::size_t anomalies = 0;  // undo with empty history, redo with empty stack
};

// Replays undo/redo over filtered records. Undo removes the most recent
// surviving completed event, Redo restores the most recently undone one and
// any new completed event clears the redo stack. Undo/Redo records never
// reach the output.
class UndoRedoResolver {
 public:
  void push(const TimedEvent& ev);
  std::vector<TimedEvent> output() const;
  const UndoStats& stats() const { return stats_; }

 private:
  struct Entry {
    TimedEvent ev;
    bool alive = true;
    std::optional<std::size_t> opener;  // index of the matching Event record
  };
  std::vector<Entry> entries_;
  std::vector<std::size_t> completed_;  // alive completed events, in order
  std::vector<std::size_t> redo_;
  std::optional<std::size_t> last_open_;
  UndoStats stats_;
};

Session resolve_undo_redo(const Session& session, UndoStats* stats = nullptr);

// ---------------------------------------------------------------------------
// Language alignment

struct LexiconEntry {
  std::int64_t loc_id = 0;
  std::string source_language;
  std::string source_name;
  std::string english_name;
};

class TranslationLexicon {
 public:
  TranslationLexicon() = default;
  explicit TranslationLexicon(std::vector<LexiconEntry> entries);

  static TranslationLexicon load(const std::filesystem::path& path);
  static TranslationLexicon from_text(const std::string& text);
  std::string to_text() const;

  // (loc_id, name) first, then loc_id alone when it has a single English name.
  std::optional<std::string> lookup(std::int64_t loc_id, const std::string& name) const;
  const std::vector<LexiconEntry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }

 private:
  std::vector<LexiconEntry> entries_;
  std::map<std::pair<std::int64_t, std::string>, std::string> exact_;
  std::map<std::int64_t, std::optional<std::string>> by_loc_;  // nullopt: ambiguous
};

struct AlignStats {
  std::size_t translated = 0;
  std::size_t unmapped = 0;
};

Session align_languages(const Session& session, const TranslationLexicon& lexicon, AlignStats* stats = nullptr);

// Loc ids observed with two or more distinct names but absent from the lexicon.
std::vector<std::int64_t> lexicon_gaps(const std::vector<Session>& sessions, const TranslationLexicon& lexicon);

// ---------------------------------------------------------------------------
// Trigger mapping

struct TriggerOptions {
  double p_min = 0.5;
  std::size_t n_min = 20;
  std::size_t lookahead = 10;
};

enum class TriggerDecisionKind : std::uint8_t { TriggersEvent, NoEvent };

struct TriggerEntry {
  std::int64_t trigger_loc = 0;
  std::string trigger_name;
  Category category = Category::Tool;
  std::size_t support = 0;  // invocations observed
  std::map<std::int64_t, double> distribution;  // event loc -> probability
  double no_event_probability = 0.0;            // invocations with no event in window
  std::map<std::int64_t, std::size_t> counts;
  std::map<std::int64_t, std::string> event_names;
  TriggerDecisionKind decision = TriggerDecisionKind::NoEvent;
  std::int64_t event_loc = 0;  // valid when decision == TriggersEvent
  bool insufficient_data = false;

  // P_max times the number of distinct observed outcomes; near 1 for a flat
  // distribution.
  double uniformity() const;
};

class TriggerMap {
 public:
  std::map<std::int64_t, TriggerEntry> entries;

  const TriggerEntry* find(std::int64_t trigger_loc) const;
  std::optional<std::int64_t> target(std::int64_t trigger_loc) const;

  // Editable review table: trigger_loc_id, trigger_name, event_loc_id,
  // event_name, probability, support, decision.
  std::string to_text() const;
  static TriggerMap from_text(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static TriggerMap load(const std::filesystem::path& path);
};

// First completed event after each Tool/Menu record, bounded by the next
// Tool/Menu record and by `lookahead` records.
TriggerMap build_trigger_map(const std::vector<Session>& corpus, const TriggerOptions& options = {});

// Re-derives decisions from counts (used after merging or on reload).
void decide_triggers(TriggerMap& map, const TriggerOptions& options);

struct SubstituteStats {
  std::size_t substituted = 0;
  std::size_t removed_unfinished = 0;
  std::size_t removed_ambiguous = 0;
};

Session substitute_high_level(const Session& session, const TriggerMap& trigger_map, const Denylist& removal = {},
                              std::size_t lookahead = 10, SubstituteStats* stats = nullptr);

// Drops records matching the removal list.
Session drop_ambiguous(const Session& session, const Denylist& removal, std::size_t* removed = nullptr);

// ---------------------------------------------------------------------------
// Clean sequences and splitting

struct CleanItem {
  std::string name;
  Category category = Category::Undo;
  std::int64_t loc_id = 0;
  double dt_seconds = 0.0;
  TimestampMs timestamp = 0;

  bool operator==(const CleanItem&) const = default;
};

struct CleanSequence {
  std::string session_id;
  std::vector<CleanItem> items;

  bool operator==(const CleanSequence&) const = default;
};

// Keeps End Event and Tool/Menu records; Event openers are dropped.
CleanSequence to_clean_sequence(const Session& session);

struct SplitOptions {
  std::size_t min_len = 5;
  std::size_t max_len = 100;
  double train_frac = 0.8;
  std::uint64_t seed = 0;
};

struct SplitDataset {
  std::vector<CleanSequence> train;
  std::vector<CleanSequence> validation;
  std::uint64_t split_seed = 0;
};

// Cuts one sequence into consecutive pieces with lengths in [min_len, max_len].
std::vector<CleanSequence> cut_sequence(const CleanSequence& seq, const SplitOptions& options, std::mt19937_64& rng);

SplitDataset sessionize_and_split(const std::vector<CleanSequence>& sequences, const SplitOptions& options);

struct StatsReport {
  std::size_t sessions = 0;
  std::size_t command_classes = 0;
  std::size_t records[kNumCategories] = {0, 0, 0};

  bool operator==(const StatsReport&) const = default;
  std::string to_table() const;
};

StatsReport dataset_stats(const std::vector<CleanSequence>& sequences);

// Tab-separated rows: session_id, position, name, category, loc_id,
// dt_seconds, timestamp. A row with position 0 starts a new sequence, so
// pieces cut from one session stay apart.
std::string sequences_to_text(const std::vector<CleanSequence>& sequences);
std::vector<CleanSequence> sequences_from_text(const std::string& text);
void save_sequences(const std::filesystem::path& path, const std::vector<CleanSequence>& sequences);
std::vector<CleanSequence> load_sequences(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Whole pipeline

struct PipelineConfig {
  Denylist denylist = Denylist::defaults();
  Denylist removal;
  TranslationLexicon lexicon;
  TriggerOptions trigger;
};

struct PipelineReport {
  FilterStats filter;
  UndoStats undo;
  AlignStats align;
  SubstituteStats substitute;
};

// Filter, undo/redo, align, drop ambiguous. The output is what the trigger
// map is estimated from.
std::vector<Session> resolve_sessions(const std::vector<Session>& sessions, const PipelineConfig& config,
                                      PipelineReport* report = nullptr);

struct PipelineResult {
  std::vector<CleanSequence> sequences;  // sessions that end up empty are omitted
  TriggerMap trigger_map;
  PipelineReport report;
};

// Runs every stage. When `reviewed_map` is given it is used as-is instead of
// estimating one from the corpus.
PipelineResult run_pipeline(const std::vector<Session>& sessions, const PipelineConfig& config,
                            const TriggerMap* reviewed_map = nullptr);

// Single-session pipeline with a fixed trigger map.
CleanSequence preprocess_session(const Session& session, const PipelineConfig& config, const TriggerMap& trigger_map,
                                 PipelineReport* report = nullptr);

}  // namespace cmdrec
