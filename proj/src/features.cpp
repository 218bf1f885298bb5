#include "cmdrec/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cmdrec/random.hpp"

namespace cmdrec {

namespace {

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

void Vocabulary::add(VocabEntry e) {
  int id = static_cast<int>(size());
  index_.emplace(std::make_pair(e.name, e.loc_id), id);
  by_name_.emplace(e.name, id);
  entries_.push_back(std::move(e));
}

Vocabulary Vocabulary::build(const std::vector<CleanSequence>& train) {
  Vocabulary v;
  for (const auto& seq : train)
    for (const auto& it : seq.items)
      if (!v.index_.count({it.name, it.loc_id})) v.add({it.name, it.category, it.loc_id});
  if (v.entries_.empty()) throw Error(ErrorCode::EmptyCorpus, "no commands in the training split");
  return v;
}

int Vocabulary::id_of(const std::string& name, std::int64_t loc_id) const {
  auto it = index_.find({name, loc_id});
  return it == index_.end() ? kUnkId : it->second;
}

std::optional<int> Vocabulary::id_by_name(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) return std::nullopt;
  return it->second;
}

const VocabEntry& Vocabulary::entry(int id) const {
  if (id < kNumReserved || static_cast<std::size_t>(id) >= size())
    throw Error(ErrorCode::DimensionMismatch, "no command with id " + std::to_string(id));
  return entries_[static_cast<std::size_t>(id - kNumReserved)];
}

std::string Vocabulary::to_text() const {
  std::ostringstream os;
  os << "id\tname\tcategory\tloc_id\n";
  for (std::size_t i = 0; i < entries_.size(); ++i)
    os << i + kNumReserved << '\t' << entries_[i].name << '\t' << to_string(entries_[i].category) << '\t'
       << entries_[i].loc_id << '\n';
  return os.str();
}

Vocabulary Vocabulary::from_text(const std::string& text) {
  Vocabulary v;
  std::istringstream in(text);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.rfind("id\t", 0) == 0) continue;
    }
    auto f = split_tabs(line);
    if (f.size() != 4) throw Error(ErrorCode::FormatError, "vocabulary row needs 4 columns: " + line);
    VocabEntry e;
    e.name = f[1];
    if (!parse_category(f[2], e.category)) throw Error(ErrorCode::FormatError, "bad category " + f[2]);
    try {
      if (std::stoi(f[0]) != static_cast<int>(v.size()))
        throw Error(ErrorCode::FormatError, "vocabulary ids must be dense: " + line);
      e.loc_id = std::stoll(f[3]);
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::FormatError, "bad vocabulary row: " + line);
    }
    v.add(std::move(e));
  }
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << to_text();
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) { return from_text(read_file(path)); }

std::uint64_t Vocabulary::hash() const { return fnv1a(to_text()); }

// ---------------------------------------------------------------------------

std::vector<double> hash_text_embedding(const std::string& name, std::size_t d_text) {
  std::string s = " ";
  for (unsigned char c : name) s += static_cast<char>(std::tolower(c));
  s += ' ';
  std::vector<double> v(d_text, 0.0);
  for (std::size_t i = 0; i + 3 <= s.size(); ++i) {
    auto h = fnv1a(std::string_view(s).substr(i, 3));
    v[h % d_text] += ((h >> 40) & 1) ? 1.0 : -1.0;
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm == 0.0) {
    // Every bucket cancelled out.
    v[fnv1a(s) % d_text] = 1.0;
    return v;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

TextEmbedder TextEmbedder::from_file(const std::filesystem::path& path) {
  auto text = read_file(path);
  std::istringstream in(text);
  std::string line;
  TextEmbedder e(0);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw Error(ErrorCode::FormatError, "embedding row needs a tab: " + line);
    std::istringstream vals(line.substr(tab + 1));
    std::vector<double> v;
    double x;
    while (vals >> x) v.push_back(x);
    if (e.d_text_ == 0) e.d_text_ = v.size();
    if (v.size() != e.d_text_ || v.empty())
      throw Error(ErrorCode::DimensionMismatch, "embedding rows must share one dimension");
    e.table_[line.substr(0, tab)] = std::move(v);
  }
  if (e.d_text_ == 0) throw Error(ErrorCode::FormatError, "empty embedding file");
  return e;
}

std::vector<double> TextEmbedder::embed(const std::string& name) const {
  if (!table_.empty()) {
    auto it = table_.find(name);
    if (it != table_.end()) return it->second;
    ++fallbacks_;
  }
  return hash_text_embedding(name, d_text_);
}

// ---------------------------------------------------------------------------

TimeNormStats TimeNormStats::fit(const std::vector<CleanSequence>& train, double clamp) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& s : train)
    for (const auto& it : s.items) {
      double v = std::log1p(std::max(0.0, it.dt_seconds));
      sum += v;
      sq += v * v;
      ++n;
    }
  TimeNormStats st;
  st.clamp = clamp;
  if (n == 0) return st;
  st.mean = sum / static_cast<double>(n);
  double var = sq / static_cast<double>(n) - st.mean * st.mean;
  st.std = var > 1e-12 ? std::sqrt(var) : 1.0;
  return st;
}

double TimeNormStats::normalize(double delta) const {
  double v = (std::log1p(std::max(0.0, delta)) - mean) / std;
  return std::clamp(v, -clamp, clamp);
}

std::vector<double> normalize_dt(const std::vector<double>& deltas, const TimeNormStats& stats) {
  std::vector<double> out;
  out.reserve(deltas.size());
  for (double d : deltas) out.push_back(stats.normalize(d));
  return out;
}

EncodedSequence FeatureEncoder::encode(const CleanSequence& seq, std::size_t* unknown) const {
  EncodedSequence e;
  e.d_text = embedder.dim();
  for (std::size_t i = 0; i < seq.items.size(); ++i) {
    const auto& it = seq.items[i];
    int id = vocab.id_of(it.name, it.loc_id);
    if (id == kUnkId && unknown) ++*unknown;
    e.ids.push_back(id);
    e.types.push_back(static_cast<int>(it.category));
    e.dt.push_back(time.normalize(i == 0 ? 0.0 : it.dt_seconds));
    auto t = embedder.embed(it.name);
    e.text.insert(e.text.end(), t.begin(), t.end());
  }
  return e;
}

// ---------------------------------------------------------------------------

std::string_view to_string(Scheme s) { return s == Scheme::CLM ? "clm" : "mlm"; }

Scheme parse_scheme(const std::string& s) {
  if (s == "clm" || s == "CLM") return Scheme::CLM;
  if (s == "mlm" || s == "MLM") return Scheme::MLM;
  throw Error(ErrorCode::InvalidConfig, "unknown scheme " + s);
}

std::size_t MaskedBatch::supervised() const {
  return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](int l) { return l != kIgnore; }));
}

namespace {

// Lays out sequences (already cut to their input span) into a padded batch.
MaskedBatch layout(const std::vector<const EncodedSequence*>& seqs, const std::vector<std::size_t>& lens,
                   std::size_t d_text) {
  MaskedBatch b;
  b.batch = seqs.size();
  b.length = *std::max_element(lens.begin(), lens.end());
  b.d_text = d_text;
  const auto n = b.batch * b.length;
  b.ids.assign(n, kPadId);
  b.types.assign(n, kSpecialType);
  b.dt.assign(n, 0.0);
  b.text.assign(n * d_text, 0.0);
  b.labels.assign(n, kIgnore);
  b.valid.assign(n, 0);
  b.target_pos.assign(b.batch, 0);
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const auto& e = *seqs[s];
    for (std::size_t i = 0; i < lens[s] && i < e.length(); ++i) {
      auto r = s * b.length + i;
      b.ids[r] = e.ids[i];
      b.types[r] = e.types[i];
      b.dt[r] = e.dt[i];
      std::copy_n(e.text.begin() + static_cast<std::ptrdiff_t>(i * d_text), d_text,
                  b.text.begin() + static_cast<std::ptrdiff_t>(r * d_text));
      b.valid[r] = 1;
    }
  }
  return b;
}

void hide(MaskedBatch& b, std::size_t r) {
  b.ids[r] = kMaskId;
  b.types[r] = kSpecialType;
  b.dt[r] = 0.0;
  std::fill_n(b.text.begin() + static_cast<std::ptrdiff_t>(r * b.d_text), b.d_text, 0.0);
}

}  // namespace

MaskedBatch mask_sequences(const std::vector<EncodedSequence>& seqs, Scheme scheme, Mode mode, std::mt19937_64& rng,
                           double p_mask) {
  if (seqs.empty()) throw Error(ErrorCode::EmptyCorpus, "empty batch");
  std::vector<const EncodedSequence*> ptrs;
  std::vector<std::size_t> lens;
  const auto d_text = seqs.front().d_text;
  for (const auto& s : seqs) {
    if (s.length() < 2) throw Error(ErrorCode::SequenceTooShort, "masking needs at least 2 items");
    if (s.d_text != d_text) throw Error(ErrorCode::DimensionMismatch, "text dimensions differ within a batch");
    ptrs.push_back(&s);
    lens.push_back(scheme == Scheme::CLM ? s.length() - 1 : s.length());
  }
  auto b = layout(ptrs, lens, d_text);
  b.scheme = scheme;
  b.mode = mode;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const auto& e = seqs[s];
    const auto base = s * b.length;
    const auto last = lens[s] - 1;
    b.target_pos[s] = static_cast<int>(last);
    if (scheme == Scheme::CLM) {
      if (mode == Mode::Train) {
        for (std::size_t i = 0; i < lens[s]; ++i) b.labels[base + i] = e.ids[i + 1];
      } else {
        b.labels[base + last] = e.ids[last + 1];
      }
      continue;
    }
    if (mode == Mode::Infer) {
      b.labels[base + last] = e.ids[last];
      hide(b, base + last);
      continue;
    }
    std::size_t masked = 0;
    for (std::size_t i = 0; i < lens[s]; ++i) {
      if (!bernoulli(rng, p_mask)) continue;
      b.labels[base + i] = e.ids[i];
      hide(b, base + i);
      ++masked;
    }
    if (masked == 0) {
      auto i = uniform_index(rng, lens[s]);
      b.labels[base + i] = e.ids[i];
      hide(b, base + i);
    }
  }
  return b;
}

MaskedBatch mask_sequences(const std::vector<EncodedSequence>& seqs, Scheme scheme, Mode mode, std::uint64_t seed,
                           double p_mask) {
  std::mt19937_64 rng(seed);
  return mask_sequences(seqs, scheme, mode, rng, p_mask);
}

MaskedBatch query_batch(const std::vector<EncodedSequence>& prefixes, Scheme scheme) {
  if (prefixes.empty()) throw Error(ErrorCode::EmptyPrefix, "no prefixes");
  std::vector<const EncodedSequence*> ptrs;
  std::vector<std::size_t> lens;
  const auto d_text = prefixes.front().d_text;
  for (const auto& p : prefixes) {
    if (p.length() == 0) throw Error(ErrorCode::EmptyPrefix, "empty prefix");
    if (p.d_text != d_text) throw Error(ErrorCode::DimensionMismatch, "text dimensions differ within a batch");
    ptrs.push_back(&p);
    lens.push_back(scheme == Scheme::CLM ? p.length() : p.length() + 1);
  }
  auto b = layout(ptrs, lens, d_text);
  b.scheme = scheme;
  b.mode = Mode::Infer;
  for (std::size_t s = 0; s < prefixes.size(); ++s) {
    auto last = lens[s] - 1;
    b.target_pos[s] = static_cast<int>(last);
    if (scheme == Scheme::MLM) {
      auto r = s * b.length + last;
      b.valid[r] = 1;
      hide(b, r);
    }
  }
  return b;
}

}  // namespace cmdrec
