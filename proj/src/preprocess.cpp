#include "cmdrec/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "cmdrec/random.hpp"
#include "json.hpp"

namespace cmdrec {

namespace {

using nlohmann::json;

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::string trim_cr(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.pop_back();
  return s;
}

bool is_completed(const TimedEvent& ev) {
  return ev.category == Category::Undo && ev.event.action == ActionKind::EndEvent;
}

bool is_high_level(const TimedEvent& ev) { return ev.category != Category::Undo; }

std::optional<ActionKind> parse_action(const std::string& s) {
  for (auto a : {ActionKind::Event, ActionKind::EndEvent, ActionKind::UndoEvent, ActionKind::RedoEvent,
                 ActionKind::ToolInvoke, ActionKind::MenuInvoke}) {
    if (to_string(a) == s) return a;
  }
  return std::nullopt;
}

}  // namespace

// ---------------------------------------------------------------------------

bool MatchRule::matches(const TimedEvent& ev) const {
  if (!category && !action && !name && !loc_id) return false;
  if (category && *category != ev.category) return false;
  if (action && *action != ev.event.action) return false;
  if (name && *name != ev.event.name) return false;
  if (loc_id && *loc_id != ev.event.loc_id) return false;
  return true;
}

Denylist Denylist::defaults() {
  auto by_loc = [](std::string label, RuleKind kind, std::int64_t loc) {
    MatchRule r;
    r.label = std::move(label);
    r.kind = kind;
    r.category = Category::Undo;
    r.loc_id = loc;
    return r;
  };
  auto by_name = [](std::string label, RuleKind kind, std::string name) {
    MatchRule r;
    r.label = std::move(label);
    r.kind = kind;
    r.name = std::move(name);
    return r;
  };
  Denylist d;
  d.rules = {
      by_loc("zoom", RuleKind::Statistical, 242),
      by_name("zoom", RuleKind::Statistical, "Zoom"),
      by_loc("pan", RuleKind::Statistical, 243),
      by_name("pan", RuleKind::Statistical, "Pan"),
      by_loc("scroll", RuleKind::Statistical, 244),
      by_name("scroll", RuleKind::Statistical, "Scroll"),
      by_loc("selection", RuleKind::Semantic, 245),
      by_name("selection", RuleKind::Semantic, "Selection Change"),
      by_loc("internal", RuleKind::Semantic, 246),
      by_name("internal", RuleKind::Semantic, "Internal Update"),
  };
  return d;
}

Denylist Denylist::from_json_text(const std::string& text) {
  Denylist d;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("denylist: ") + e.what());
  }
  for (const auto& r : doc.at("rules")) {
    MatchRule rule;
    rule.label = r.value("label", "");
    rule.kind = r.value("kind", "semantic") == "statistical" ? RuleKind::Statistical : RuleKind::Semantic;
    if (r.contains("category")) {
      Category c;
      if (!parse_category(r["category"].get<std::string>(), c))
        throw Error(ErrorCode::FormatError, "denylist: bad category");
      rule.category = c;
    }
    if (r.contains("action")) {
      auto a = parse_action(r["action"].get<std::string>());
      if (!a) throw Error(ErrorCode::FormatError, "denylist: bad action");
      rule.action = *a;
    }
    if (r.contains("name")) rule.name = r["name"].get<std::string>();
    if (r.contains("loc_id")) rule.loc_id = r["loc_id"].get<std::int64_t>();
    d.rules.push_back(std::move(rule));
  }
  return d;
}

Denylist Denylist::load(const std::filesystem::path& path) { return from_json_text(read_file(path)); }

std::string Denylist::to_json_text() const {
  json out = json::array();
  for (const auto& r : rules) {
    json j;
    j["label"] = r.label;
    j["kind"] = r.kind == RuleKind::Statistical ? "statistical" : "semantic";
    if (r.category) j["category"] = std::string(to_string(*r.category));
    if (r.action) j["action"] = std::string(to_string(*r.action));
    if (r.name) j["name"] = *r.name;
    if (r.loc_id) j["loc_id"] = *r.loc_id;
    out.push_back(std::move(j));
  }
  return json{{"rules", out}}.dump(2);
}

const MatchRule* Denylist::match(const TimedEvent& ev) const {
  for (const auto& r : rules)
    if (r.matches(ev)) return &r;
  return nullptr;
}

// ---------------------------------------------------------------------------

void AbortFilter::push(const TimedEvent& ev, std::vector<TimedEvent>& out) {
  if (ev.category != Category::Undo) {
    if (open_)
      held_.push_back(ev);
    else
      out.push_back(ev);
    return;
  }
  auto release_held = [&] {
    for (auto& h : held_) out.push_back(std::move(h));
    held_.clear();
  };
  switch (ev.event.action) {
    case ActionKind::Event:
      if (open_) {
        ++aborted_;
        release_held();
      }
      open_ = ev;
      break;
    case ActionKind::EndEvent:
      if (open_ && open_->event.loc_id == ev.event.loc_id) {
        out.push_back(std::move(*open_));
      } else if (open_) {
        ++aborted_;
      }
      open_.reset();
      release_held();
      out.push_back(ev);
      break;
    default:
      if (open_) {
        ++aborted_;
        open_.reset();
        release_held();
      }
      out.push_back(ev);
      break;
  }
}

void AbortFilter::finish(std::vector<TimedEvent>& out) {
  if (open_) {
    ++aborted_;
    open_.reset();
  }
  for (auto& h : held_) out.push_back(std::move(h));
  held_.clear();
}

Session filter_noise(const Session& session, const Denylist& denylist, FilterStats* stats) {
  Session out{session.session_id, {}};
  AbortFilter aborts;
  for (const auto& ev : session.events) {
    if (const auto* rule = denylist.match(ev)) {
      if (stats) ++stats->removed_by_rule[rule->label];
      continue;
    }
    aborts.push(ev, out.events);
  }
  aborts.finish(out.events);
  if (stats) stats->aborted += aborts.aborted();
  return out;
}

// ---------------------------------------------------------------------------

void UndoRedoResolver::push(const TimedEvent& ev) {
  if (ev.category != Category::Undo) {
    entries_.push_back({ev, true, std::nullopt});
    return;
  }
  switch (ev.event.action) {
    case ActionKind::Event:
      last_open_ = entries_.size();
      entries_.push_back({ev, true, std::nullopt});
      break;
    case ActionKind::EndEvent: {
      std::optional<std::size_t> opener;
      if (last_open_ && entries_[*last_open_].ev.event.loc_id == ev.event.loc_id) opener = last_open_;
      last_open_.reset();
      completed_.push_back(entries_.size());
      entries_.push_back({ev, true, opener});
      redo_.clear();
      break;
    }
    case ActionKind::UndoEvent: {
      last_open_.reset();
      if (completed_.empty()) {
        ++stats_.anomalies;
        break;
      }
      auto idx = completed_.back();
      completed_.pop_back();
      entries_[idx].alive = false;
      if (auto o = entries_[idx].opener) entries_[*o].alive = false;
      redo_.push_back(idx);
      ++stats_.undone;
      break;
    }
    case ActionKind::RedoEvent: {
      last_open_.reset();
      if (redo_.empty()) {
        ++stats_.anomalies;
        break;
      }
      auto idx = redo_.back();
      redo_.pop_back();
      entries_[idx].alive = true;
      if (auto o = entries_[idx].opener) entries_[*o].alive = true;
      completed_.push_back(idx);
      ++stats_.redone;
      break;
    }
    default:
      break;
  }
}

std::vector<TimedEvent> UndoRedoResolver::output() const {
  std::vector<TimedEvent> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_)
    if (e.alive) out.push_back(e.ev);
  return out;
}

Session resolve_undo_redo(const Session& session, UndoStats* stats) {
  UndoRedoResolver resolver;
  for (const auto& ev : session.events) resolver.push(ev);
  if (stats) {
    stats->undone += resolver.stats().undone;
    stats->redone += resolver.stats().redone;
    stats->anomalies += resolver.stats().anomalies;
  }
  return Session{session.session_id, resolver.output()};
}

// ---------------------------------------------------------------------------

TranslationLexicon::TranslationLexicon(std::vector<LexiconEntry> entries) : entries_(std::move(entries)) {
  for (const auto& e : entries_) {
    exact_[{e.loc_id, e.source_name}] = e.english_name;
    auto it = by_loc_.find(e.loc_id);
    if (it == by_loc_.end()) {
      by_loc_[e.loc_id] = e.english_name;
    } else if (it->second && *it->second != e.english_name) {
      it->second.reset();
    }
  }
}

std::optional<std::string> TranslationLexicon::lookup(std::int64_t loc_id, const std::string& name) const {
  if (auto it = exact_.find({loc_id, name}); it != exact_.end()) return it->second;
  if (auto it = by_loc_.find(loc_id); it != by_loc_.end() && it->second) return it->second;
  return std::nullopt;
}

TranslationLexicon TranslationLexicon::from_text(const std::string& text) {
  std::vector<LexiconEntry> entries;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim_cr(line);
    if (line.empty() || line.rfind("loc_id", 0) == 0 || line[0] == '#') continue;
    auto cols = split(line, '\t');
    if (cols.size() != 4) throw Error(ErrorCode::FormatError, "lexicon line " + std::to_string(lineno));
    LexiconEntry e;
    try {
      e.loc_id = std::stoll(cols[0]);
    } catch (const std::exception&) {
      throw Error(ErrorCode::FormatError, "lexicon line " + std::to_string(lineno) + ": bad loc_id");
    }
    e.source_language = cols[1];
    e.source_name = cols[2];
    e.english_name = cols[3];
    entries.push_back(std::move(e));
  }
  return TranslationLexicon(std::move(entries));
}

TranslationLexicon TranslationLexicon::load(const std::filesystem::path& path) { return from_text(read_file(path)); }

std::string TranslationLexicon::to_text() const {
  std::ostringstream os;
  os << "loc_id\tsource_language\tsource_name\tenglish_name\n";
  for (const auto& e : entries_)
    os << e.loc_id << '\t' << e.source_language << '\t' << e.source_name << '\t' << e.english_name << '\n';
  return os.str();
}

Session align_languages(const Session& session, const TranslationLexicon& lexicon, AlignStats* stats) {
  Session out = session;
  for (auto& ev : out.events) {
    if (auto english = lexicon.lookup(ev.event.loc_id, ev.event.name)) {
      if (stats && *english != ev.event.name) ++stats->translated;
      ev.event.name = *english;
    } else if (stats) {
      ++stats->unmapped;
    }
  }
  return out;
}

std::vector<std::int64_t> lexicon_gaps(const std::vector<Session>& sessions, const TranslationLexicon& lexicon) {
  std::map<std::int64_t, std::set<std::string>> names;
  for (const auto& s : sessions)
    for (const auto& ev : s.events) names[ev.event.loc_id].insert(ev.event.name);
  std::vector<std::int64_t> gaps;
  for (const auto& [loc, set] : names) {
    if (set.size() < 2) continue;
    bool covered = std::all_of(set.begin(), set.end(),
                               [&](const std::string& n) { return lexicon.lookup(loc, n).has_value(); });
    if (!covered) gaps.push_back(loc);
  }
  return gaps;
}

// ---------------------------------------------------------------------------

double TriggerEntry::uniformity() const {
  double pmax = no_event_probability;
  std::size_t outcomes = no_event_probability > 0 ? 1 : 0;
  for (const auto& [loc, p] : distribution) {
    pmax = std::max(pmax, p);
    ++outcomes;
  }
  return pmax * static_cast<double>(outcomes);
}

const TriggerEntry* TriggerMap::find(std::int64_t trigger_loc) const {
  auto it = entries.find(trigger_loc);
  return it == entries.end() ? nullptr : &it->second;
}

std::optional<std::int64_t> TriggerMap::target(std::int64_t trigger_loc) const {
  const auto* e = find(trigger_loc);
  if (!e || e->decision != TriggerDecisionKind::TriggersEvent) return std::nullopt;
  return e->event_loc;
}

namespace {

constexpr const char* kNoEventToken = "-";

std::string decision_token(const TriggerEntry& e, std::optional<std::int64_t> row_event) {
  if (e.decision == TriggerDecisionKind::TriggersEvent) {
    return row_event && *row_event == e.event_loc ? "triggers" : "-";
  }
  return e.insufficient_data ? "insufficient" : "no_event";
}

}  // namespace

std::string TriggerMap::to_text() const {
  std::ostringstream os;
  os << "trigger_loc_id\ttrigger_name\tevent_loc_id\tevent_name\tprobability\tsupport\tdecision\n";
  os << std::setprecision(17);
  for (const auto& [loc, e] : entries) {
    std::string trigger_name = std::string(to_string(e.category)) + ":" + e.trigger_name;
    for (const auto& [ev_loc, p] : e.distribution) {
      auto name_it = e.event_names.find(ev_loc);
      os << loc << '\t' << trigger_name << '\t' << ev_loc << '\t'
         << (name_it == e.event_names.end() ? "" : name_it->second) << '\t' << p << '\t' << e.support << '\t'
         << decision_token(e, ev_loc) << '\n';
    }
    if (e.no_event_probability > 0 || e.distribution.empty()) {
      os << loc << '\t' << trigger_name << '\t' << kNoEventToken << '\t' << "<none>" << '\t' << e.no_event_probability
         << '\t' << e.support << '\t' << decision_token(e, std::nullopt) << '\n';
    }
  }
  return os.str();
}

TriggerMap TriggerMap::from_text(const std::string& text) {
  TriggerMap map;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim_cr(line);
    if (line.empty() || line.rfind("trigger_loc_id", 0) == 0 || line[0] == '#') continue;
    auto cols = split(line, '\t');
    if (cols.size() != 7) throw Error(ErrorCode::FormatError, "trigger map line " + std::to_string(lineno));
    try {
      auto loc = std::stoll(cols[0]);
      auto& e = map.entries[loc];
      e.trigger_loc = loc;
      auto colon = cols[1].find(':');
      Category cat = Category::Tool;
      if (colon != std::string::npos && parse_category(cols[1].substr(0, colon), cat)) {
        e.category = cat;
        e.trigger_name = cols[1].substr(colon + 1);
      } else {
        e.trigger_name = cols[1];
      }
      e.support = std::stoull(cols[5]);
      double p = std::stod(cols[4]);
      const auto& decision = cols[6];
      if (cols[2] == kNoEventToken) {
        e.no_event_probability = p;
      } else {
        auto ev_loc = std::stoll(cols[2]);
        e.distribution[ev_loc] = p;
        e.event_names[ev_loc] = cols[3];
        e.counts[ev_loc] = static_cast<std::size_t>(std::llround(p * static_cast<double>(e.support)));
        if (decision == "triggers") {
          e.decision = TriggerDecisionKind::TriggersEvent;
          e.event_loc = ev_loc;
        }
      }
      if (decision == "insufficient") e.insufficient_data = true;
    } catch (const Error&) {
      throw;
    } catch (const std::exception&) {
      throw Error(ErrorCode::FormatError, "trigger map line " + std::to_string(lineno));
    }
  }
  return map;
}

void TriggerMap::save(const std::filesystem::path& path) const { write_file(path, to_text()); }

TriggerMap TriggerMap::load(const std::filesystem::path& path) { return from_text(read_file(path)); }

void decide_triggers(TriggerMap& map, const TriggerOptions& options) {
  for (auto& [loc, e] : map.entries) {
    e.distribution.clear();
    std::size_t with_event = 0;
    for (const auto& [ev_loc, n] : e.counts) with_event += n;
    if (e.support > 0) {
      for (const auto& [ev_loc, n] : e.counts)
        e.distribution[ev_loc] = static_cast<double>(n) / static_cast<double>(e.support);
      e.no_event_probability = static_cast<double>(e.support - with_event) / static_cast<double>(e.support);
    } else {
      e.no_event_probability = 0.0;
    }
    e.insufficient_data = e.support < options.n_min;
    e.decision = TriggerDecisionKind::NoEvent;
    e.event_loc = 0;
    if (e.insufficient_data) continue;
    // Largest count wins; ties resolve to the smallest loc id.
    std::int64_t best = 0;
    std::size_t best_n = 0;
    for (const auto& [ev_loc, n] : e.counts) {
      if (n > best_n) {
        best = ev_loc;
        best_n = n;
      }
    }
    if (best_n > 0 && e.distribution[best] >= options.p_min) {
      e.decision = TriggerDecisionKind::TriggersEvent;
      e.event_loc = best;
    }
  }
}

TriggerMap build_trigger_map(const std::vector<Session>& corpus, const TriggerOptions& options) {
  TriggerMap map;
  for (const auto& s : corpus) {
    const auto& evs = s.events;
    for (std::size_t i = 0; i < evs.size(); ++i) {
      if (!is_high_level(evs[i])) continue;
      auto& e = map.entries[evs[i].event.loc_id];
      if (e.support == 0) {
        e.trigger_loc = evs[i].event.loc_id;
        e.trigger_name = evs[i].event.name;
        e.category = evs[i].category;
      }
      ++e.support;
      for (std::size_t j = i + 1; j < evs.size() && j <= i + options.lookahead; ++j) {
        if (is_high_level(evs[j])) break;
        if (is_completed(evs[j])) {
          ++e.counts[evs[j].event.loc_id];
          e.event_names.emplace(evs[j].event.loc_id, evs[j].event.name);
          break;
        }
      }
    }
  }
  decide_triggers(map, options);
  return map;
}

Session drop_ambiguous(const Session& session, const Denylist& removal, std::size_t* removed) {
  Session out{session.session_id, {}};
  out.events.reserve(session.events.size());
  for (const auto& ev : session.events) {
    if (removal.match(ev)) {
      if (removed) ++*removed;
      continue;
    }
    out.events.push_back(ev);
  }
  return out;
}

Session substitute_high_level(const Session& session, const TriggerMap& trigger_map, const Denylist& removal,
                              std::size_t lookahead, SubstituteStats* stats) {
  std::size_t ambiguous = 0;
  Session in = drop_ambiguous(session, removal, &ambiguous);
  const auto& evs = in.events;
  std::vector<bool> keep(evs.size(), true);
  std::size_t substituted = 0, unfinished = 0;
  for (std::size_t i = 0; i < evs.size(); ++i) {
    if (!is_high_level(evs[i]) || !keep[i]) continue;
    auto target = trigger_map.target(evs[i].event.loc_id);
    if (!target) continue;
    std::optional<std::size_t> hit;
    for (std::size_t j = i + 1; j < evs.size() && j <= i + lookahead; ++j) {
      if (is_high_level(evs[j])) break;
      if (is_completed(evs[j]) && keep[j]) {
        if (evs[j].event.loc_id == *target) hit = j;
        break;
      }
    }
    if (!hit) {
      keep[i] = false;
      ++unfinished;
      continue;
    }
    keep[*hit] = false;
    for (std::size_t k = *hit; k-- > i + 1;) {
      if (evs[k].category == Category::Undo && evs[k].event.action == ActionKind::Event &&
          evs[k].event.loc_id == *target) {
        keep[k] = false;
        break;
      }
    }
    ++substituted;
  }
  Session out{in.session_id, {}};
  for (std::size_t i = 0; i < evs.size(); ++i)
    if (keep[i]) out.events.push_back(evs[i]);
  if (stats) {
    stats->substituted += substituted;
    stats->removed_unfinished += unfinished;
    stats->removed_ambiguous += ambiguous;
  }
  return out;
}

// ---------------------------------------------------------------------------

CleanSequence to_clean_sequence(const Session& session) {
  CleanSequence seq;
  seq.session_id = session.session_id;
  for (const auto& ev : session.events) {
    if (!(is_completed(ev) || is_high_level(ev))) continue;
    CleanItem item;
    item.name = ev.event.name;
    item.category = ev.category;
    item.loc_id = ev.event.loc_id;
    item.timestamp = ev.timestamp;
    item.dt_seconds =
        seq.items.empty() ? 0.0 : static_cast<double>(ev.timestamp - seq.items.back().timestamp) / 1000.0;
    seq.items.push_back(std::move(item));
  }
  return seq;
}

std::vector<CleanSequence> cut_sequence(const CleanSequence& seq, const SplitOptions& options, std::mt19937_64& rng) {
  std::vector<CleanSequence> pieces;
  const auto n = seq.items.size();
  if (n < options.min_len) return pieces;
  std::size_t start = 0;
  std::size_t piece_no = 0;
  auto emit = [&](std::size_t len) {
    CleanSequence piece;
    piece.session_id = seq.session_id + "#" + std::to_string(piece_no++);
    piece.items.assign(seq.items.begin() + static_cast<std::ptrdiff_t>(start),
                       seq.items.begin() + static_cast<std::ptrdiff_t>(start + len));
    piece.items.front().dt_seconds = 0.0;
    pieces.push_back(std::move(piece));
    start += len;
  };
  while (n - start > options.max_len) {
    // Upper bound keeps the remainder at or above min_len.
    std::size_t hi = std::min(options.max_len, n - start - options.min_len);
    std::size_t len = options.min_len + uniform_index(rng, hi - options.min_len + 1);
    emit(len);
  }
  emit(n - start);
  if (pieces.size() == 1) pieces.front().session_id = seq.session_id;
  return pieces;
}

SplitDataset sessionize_and_split(const std::vector<CleanSequence>& sequences, const SplitOptions& options) {
  if (options.min_len < 1 || options.max_len + 1 < 2 * options.min_len)
    throw Error(ErrorCode::InvalidConfig, "split lengths require max_len >= 2*min_len - 1");
  if (!(options.train_frac >= 0.0 && options.train_frac <= 1.0))
    throw Error(ErrorCode::InvalidConfig, "train_frac must lie in [0, 1]");
  std::mt19937_64 rng(options.seed);
  std::vector<CleanSequence> pieces;
  for (const auto& s : sequences) {
    auto cut = cut_sequence(s, options, rng);
    for (auto& p : cut) pieces.push_back(std::move(p));
  }
  std::vector<std::size_t> order(pieces.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle_range(order.begin(), order.end(), rng);
  auto n_train = static_cast<std::size_t>(std::llround(options.train_frac * static_cast<double>(pieces.size())));
  std::vector<std::size_t> train_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> val_idx(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());
  SplitDataset ds;
  ds.split_seed = options.seed;
  for (auto i : train_idx) ds.train.push_back(std::move(pieces[i]));
  for (auto i : val_idx) ds.validation.push_back(std::move(pieces[i]));
  return ds;
}

StatsReport dataset_stats(const std::vector<CleanSequence>& sequences) {
  StatsReport r;
  std::set<std::pair<std::string, std::int64_t>> classes;
  for (const auto& s : sequences) {
    ++r.sessions;
    for (const auto& it : s.items) {
      classes.insert({it.name, it.loc_id});
      ++r.records[static_cast<int>(it.category)];
    }
  }
  r.command_classes = classes.size();
  return r;
}

std::string StatsReport::to_table() const {
  std::ostringstream os;
  os << "Session amount\tCommand classes\tCommand category\tRecord amount\n";
  os << sessions << '\t' << command_classes << '\t' << "UNDO" << '\t' << records[0] << '\n';
  os << '\t' << '\t' << "Tool" << '\t' << records[1] << '\n';
  os << '\t' << '\t' << "Menu" << '\t' << records[2] << '\n';
  return os.str();
}

std::string sequences_to_text(const std::vector<CleanSequence>& sequences) {
  std::ostringstream os;
  os << "session_id\tposition\tname\tcategory\tloc_id\tdt_seconds\ttimestamp\n" << std::setprecision(17);
  for (const auto& s : sequences)
    for (std::size_t i = 0; i < s.items.size(); ++i) {
      const auto& it = s.items[i];
      os << s.session_id << '\t' << i << '\t' << it.name << '\t' << to_string(it.category) << '\t' << it.loc_id << '\t'
         << it.dt_seconds << '\t' << format_timestamp(it.timestamp) << '\n';
    }
  return os.str();
}

std::vector<CleanSequence> sequences_from_text(const std::string& text) {
  std::vector<CleanSequence> out;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = trim_cr(line);
    if (line.empty() || (lineno == 1 && line.rfind("session_id\t", 0) == 0)) continue;
    auto f = split(line, '\t');
    auto bad = [&](const std::string& why) {
      throw Error(ErrorCode::FormatError, "sequence line " + std::to_string(lineno) + ": " + why);
    };
    if (f.size() != 7) bad("expected 7 columns");
    CleanItem it;
    it.name = f[2];
    if (!parse_category(f[3], it.category)) bad("unknown category " + f[3]);
    auto ts = parse_timestamp(f[6]);
    if (!ts) bad("bad timestamp");
    it.timestamp = *ts;
    std::size_t pos = 0;
    try {
      pos = std::stoull(f[1]);
      it.loc_id = std::stoll(f[4]);
      it.dt_seconds = std::stod(f[5]);
    } catch (const std::exception&) {
      bad("bad number");
    }
    if (pos == 0) out.push_back({f[0], {}});
    if (out.empty() || out.back().session_id != f[0] || out.back().items.size() != pos) bad("positions out of order");
    out.back().items.push_back(std::move(it));
  }
  return out;
}

void save_sequences(const std::filesystem::path& path, const std::vector<CleanSequence>& sequences) {
  write_file(path, sequences_to_text(sequences));
}

std::vector<CleanSequence> load_sequences(const std::filesystem::path& path) {
  return sequences_from_text(read_file(path));
}

// ---------------------------------------------------------------------------

std::vector<Session> resolve_sessions(const std::vector<Session>& sessions, const PipelineConfig& config,
                                      PipelineReport* report) {
  std::vector<Session> out;
  out.reserve(sessions.size());
  for (const auto& s : sessions) {
    auto filtered = filter_noise(s, config.denylist, report ? &report->filter : nullptr);
    auto resolved = resolve_undo_redo(filtered, report ? &report->undo : nullptr);
    auto aligned = align_languages(resolved, config.lexicon, report ? &report->align : nullptr);
    out.push_back(drop_ambiguous(aligned, config.removal));
  }
  return out;
}

PipelineResult run_pipeline(const std::vector<Session>& sessions, const PipelineConfig& config,
                            const TriggerMap* reviewed_map) {
  PipelineResult result;
  auto resolved = resolve_sessions(sessions, config, &result.report);
  result.trigger_map = reviewed_map ? *reviewed_map : build_trigger_map(resolved, config.trigger);
  for (const auto& s : resolved) {
    auto substituted = substitute_high_level(s, result.trigger_map, config.removal, config.trigger.lookahead,
                                             &result.report.substitute);
    auto clean = to_clean_sequence(substituted);
    if (!clean.items.empty()) result.sequences.push_back(std::move(clean));
  }
  return result;
}

CleanSequence preprocess_session(const Session& session, const PipelineConfig& config, const TriggerMap& trigger_map,
                                 PipelineReport* report) {
  auto resolved = resolve_sessions({session}, config, report);
  auto substituted = substitute_high_level(resolved.front(), trigger_map, config.removal, config.trigger.lookahead,
                                           report ? &report->substitute : nullptr);
  return to_clean_sequence(substituted);
}

}  // namespace cmdrec
