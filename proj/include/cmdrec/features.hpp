#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "cmdrec/preprocess.hpp"

namespace cmdrec {

inline constexpr int kPadId = 0;
inline constexpr int kMaskId = 1;
inline constexpr int kUnkId = 2;
inline constexpr int kNumReserved = 3;
inline constexpr int kIgnore = -1;
// Type code used at PAD and MASK positions, after the three categories.
inline constexpr int kSpecialType = kNumCategories;
inline constexpr int kNumTypeCodes = kNumCategories + 1;

struct VocabEntry {
  std::string name;
  Category category = Category::Undo;
  std::int64_t loc_id = 0;
};

class Vocabulary {
 public:
  // One id per distinct (name, loc_id), first-occurrence order.
  static Vocabulary build(const std::vector<CleanSequence>& train);

  int id_of(const std::string& name, std::int64_t loc_id) const;  // kUnkId when absent
  // First id carrying this name, for requests that only know names.
  std::optional<int> id_by_name(const std::string& name) const;
  const VocabEntry& entry(int id) const;  // id >= kNumReserved
  std::size_t size() const { return kNumReserved + entries_.size(); }
  std::size_t command_count() const { return entries_.size(); }
  const std::vector<VocabEntry>& entries() const { return entries_; }
  bool is_reserved(int id) const { return id < kNumReserved; }

  std::string to_text() const;  // id, name, category, loc_id
  static Vocabulary from_text(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);
  std::uint64_t hash() const;

  bool operator==(const Vocabulary& o) const { return to_text() == o.to_text(); }

 private:
  void add(VocabEntry e);
  std::vector<VocabEntry> entries_;
  std::map<std::pair<std::string, std::int64_t>, int> index_;
  std::map<std::string, int> by_name_;
};

// Hashed character trigrams of the lowercase name, +-1 signs, unit norm.
std::vector<double> hash_text_embedding(const std::string& name, std::size_t d_text);

class TextEmbedder {
 public:
  explicit TextEmbedder(std::size_t d_text = 16) : d_text_(d_text) {}
  // Rows "name<TAB>v1 v2 ...". Unknown names fall back to hashing.
  static TextEmbedder from_file(const std::filesystem::path& path);

  std::vector<double> embed(const std::string& name) const;
  std::size_t dim() const { return d_text_; }
  std::size_t fallbacks() const { return fallbacks_.load(); }

  TextEmbedder(const TextEmbedder& o) : d_text_(o.d_text_), table_(o.table_), fallbacks_(o.fallbacks_.load()) {}
  TextEmbedder& operator=(const TextEmbedder& o) {
    d_text_ = o.d_text_;
    table_ = o.table_;
    fallbacks_ = o.fallbacks_.load();
    return *this;
  }

 private:
  std::size_t d_text_;
  std::map<std::string, std::vector<double>> table_;
  mutable std::atomic<std::size_t> fallbacks_{0};
};

struct TimeNormStats {
  double mean = 0.0;
  double std = 1.0;
  double clamp = 5.0;

  static TimeNormStats fit(const std::vector<CleanSequence>& train, double clamp = 5.0);
  double normalize(double delta_seconds) const;
};

std::vector<double> normalize_dt(const std::vector<double>& deltas, const TimeNormStats& stats);

struct EncodedSequence {
  std::vector<int> ids;
  std::vector<int> types;
  std::vector<double> dt;
  std::vector<double> text;  // length() x d_text, row-major
  std::size_t d_text = 0;

  std::size_t length() const { return ids.size(); }
};

struct FeatureEncoder {
  Vocabulary vocab;
  TextEmbedder embedder;
  TimeNormStats time;

  EncodedSequence encode(const CleanSequence& seq, std::size_t* unknown = nullptr) const;
};

enum class Scheme : std::uint8_t { CLM, MLM };
enum class Mode : std::uint8_t { Train, Infer };

std::string_view to_string(Scheme s);
Scheme parse_scheme(const std::string& s);

// Padded batch, all arrays row-major over (sequence, position).
struct MaskedBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::size_t d_text = 0;
  std::vector<int> ids;
  std::vector<int> types;
  std::vector<double> dt;
  std::vector<double> text;
  std::vector<int> labels;       // kIgnore where unsupervised
  std::vector<std::uint8_t> valid;
  // Position whose scores answer "what comes next" for each sequence.
  std::vector<int> target_pos;
  Scheme scheme = Scheme::CLM;
  Mode mode = Mode::Train;

  std::size_t supervised() const;
};

// Train: CLM shifts by one, MLM masks each position with p_mask (at least
// one per sequence). Infer: the last item is the hidden target.
MaskedBatch mask_sequences(const std::vector<EncodedSequence>& seqs, Scheme scheme, Mode mode, std::mt19937_64& rng,
                           double p_mask = 0.15);
MaskedBatch mask_sequences(const std::vector<EncodedSequence>& seqs, Scheme scheme, Mode mode, std::uint64_t seed,
                           double p_mask = 0.15);

// Serving query: the whole prefix is context and the next item is unknown.
MaskedBatch query_batch(const std::vector<EncodedSequence>& prefixes, Scheme scheme);

}  // namespace cmdrec
