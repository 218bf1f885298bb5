#include "cmdrec/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "cmdrec/random.hpp"
#include "json.hpp"

namespace cmdrec {

namespace {

using nlohmann::json;

constexpr std::string_view kVerbs[] = {"Create", "Move",   "Rotate", "Mirror",  "Offset", "Trim",    "Split",
                                       "Join",   "Align",  "Clip",   "Extrude", "Resize", "Reshape", "Fillet",
                                       "Group",  "Attach", "Edit",   "Insert",  "Delete", "Duplicate"};
constexpr std::string_view kNouns[] = {"Wall",      "Door",   "Window",  "Slab",      "Roof",    "Column",
                                       "Beam",      "Stair",  "Space",   "Polyline",  "Surface", "Symbol",
                                       "Viewport",  "Layer",  "Class",   "Worksheet", "Text",    "Dimension",
                                       "Rectangle", "Circle", "Hatch",   "Railing",   "Ramp",    "Grid"};
constexpr std::string_view kSyllables[] = {"ka", "ver", "schie", "lo", "mur", "pan", "ne", "ti", "ro",  "fal",
                                           "bre", "dun", "gel", "sa", "mi",  "tor", "que", "pul", "vin", "da"};

struct NoiseCommand {
  std::string_view name;
  std::int64_t loc;
};
constexpr NoiseCommand kNoise[] = {
    {"Zoom", 242}, {"Pan", 243}, {"Scroll", 244}, {"Selection Change", 245}, {"Internal Update", 246}};
constexpr std::int64_t kAmbiguousLocBase = 9001;
constexpr int kAmbiguousKinds = 3;

std::string language_suffix(const std::string& lang) {
  if (lang == "de") return "en";
  if (lang == "fr") return "er";
  if (lang == "es") return "ar";
  if (lang == "it") return "are";
  if (lang == "ja") return "suru";
  if (lang == "nl") return "eren";
  return "o";
}

double gamma_sample(std::mt19937_64& rng, double shape) {
  // Marsaglia-Tsang, with the shape < 1 boost.
  if (shape < 1.0) {
    double u = uniform01(rng);
    if (u < 1e-300) u = 1e-300;
    return gamma_sample(rng, shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  while (true) {
    double x = standard_normal(rng);
    double v = 1.0 + c * x;
    if (v <= 0) continue;
    v = v * v * v;
    double u = uniform01(rng);
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(std::max(u, 1e-300)) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::size_t sample_categorical(std::mt19937_64& rng, const std::vector<double>& p) {
  double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return i;
  }
  // Rounding slack: return the last index with positive mass.
  for (std::size_t i = p.size(); i-- > 0;)
    if (p[i] > 0) return i;
  return 0;
}

void validate(const GeneratorSpec& spec) {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::InvalidSpec, what); };
  auto unit = [&](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) bad(std::string(name) + " must lie in [0, 1]");
  };
  if (spec.n_commands < 2) bad("n_commands must be >= 2");
  unit(spec.frac_tool, "frac_tool");
  unit(spec.frac_menu, "frac_menu");
  unit(spec.trigger_frac, "trigger_frac");
  unit(spec.undo_rate, "undo_rate");
  unit(spec.redo_rate, "redo_rate");
  unit(spec.noise_rate, "noise_rate");
  unit(spec.abort_rate, "abort_rate");
  unit(spec.ambiguous_rate, "ambiguous_rate");
  unit(spec.modifier_rate, "modifier_rate");
  unit(spec.foreign_category_rate, "foreign_category_rate");
  unit(spec.session_anomaly_rate, "session_anomaly_rate");
  unit(spec.uniform_floor, "uniform_floor");
  unit(spec.trigger_boost, "trigger_boost");
  if (spec.uniform_floor + spec.trigger_boost > 1.0) bad("uniform_floor + trigger_boost must be <= 1");
  if (spec.frac_tool + spec.frac_menu > 1.0) bad("frac_tool + frac_menu must be <= 1");
  if (!(spec.trigger_probability >= 0.5 && spec.trigger_probability <= 1.0))
    bad("trigger_probability must lie in [0.5, 1]");
  if (!(spec.concentration > 0)) bad("concentration must be > 0");
  if (spec.languages.empty()) bad("languages must not be empty");
  for (const auto& [lang, w] : spec.languages)
    if (!(w > 0) || lang.empty()) bad("language weights must be positive");
  if (spec.min_session_len < 1 || spec.max_session_len < spec.min_session_len) bad("bad session length bounds");
  if (spec.files < 1) bad("files must be >= 1");
  if (spec.transitions) {
    const auto& t = *spec.transitions;
    if (t.size() != spec.n_commands) bad("transition matrix must be n_commands x n_commands");
    for (const auto& row : t) {
      if (row.size() != spec.n_commands) bad("transition matrix must be square");
      double s = 0;
      for (double v : row) {
        if (!(v >= 0)) bad("transition entries must be >= 0");
        s += v;
      }
      if (std::abs(s - 1.0) > 1e-9) bad("transition rows must sum to 1");
    }
  }
}

std::string pseudo_word(std::mt19937_64& rng, const std::string& suffix) {
  std::string w;
  auto n = 2 + uniform_index(rng, 2);
  for (std::uint64_t i = 0; i < n; ++i) w += kSyllables[uniform_index(rng, std::size(kSyllables))];
  w += suffix;
  w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
  return w;
}

std::string hex_id(std::mt19937_64& rng) {
  std::ostringstream os;
  os << std::uppercase << std::hex << std::setw(8) << std::setfill('0') << (rng() & 0xffffffffULL);
  return os.str();
}

struct RawLine {
  TimestampMs ts;
  std::string category;
  std::string message;
};

}  // namespace

// ---------------------------------------------------------------------------

GeneratorSpec GeneratorSpec::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidSpec, e.what());
  }
  GeneratorSpec s;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
  };
  try {
    get("n_commands", s.n_commands);
    get("frac_tool", s.frac_tool);
    get("frac_menu", s.frac_menu);
    get("trigger_frac", s.trigger_frac);
    get("trigger_probability", s.trigger_probability);
    get("concentration", s.concentration);
    get("uniform_floor", s.uniform_floor);
    get("trigger_boost", s.trigger_boost);
    if (j.contains("transitions")) s.transitions = j["transitions"].get<std::vector<std::vector<double>>>();
    if (j.contains("languages")) {
      s.languages.clear();
      // ordered [name, weight] pairs; an object is accepted too (key order is lost)
      if (j["languages"].is_array())
        for (const auto& p : j["languages"]) s.languages.emplace_back(p.at(0).get<std::string>(), p.at(1).get<double>());
      else
        for (auto& [k, v] : j["languages"].items()) s.languages.emplace_back(k, v.get<double>());
    }
    get("undo_rate", s.undo_rate);
    get("redo_rate", s.redo_rate);
    get("noise_rate", s.noise_rate);
    get("abort_rate", s.abort_rate);
    get("ambiguous_rate", s.ambiguous_rate);
    get("modifier_rate", s.modifier_rate);
    get("foreign_category_rate", s.foreign_category_rate);
    get("session_anomaly_rate", s.session_anomaly_rate);
    get("sessions", s.sessions);
    get("length_log_mean", s.length_log_mean);
    get("length_log_sd", s.length_log_sd);
    get("min_session_len", s.min_session_len);
    get("max_session_len", s.max_session_len);
    get("gap_log_mean", s.gap_log_mean);
    get("gap_log_sd", s.gap_log_sd);
    get("files", s.files);
    get("min_trigger_support", s.min_trigger_support);
    get("seed", s.seed);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidSpec, e.what());
  }
  validate(s);
  return s;
}

std::string GeneratorSpec::to_json_text() const {
  json j;
  j["n_commands"] = n_commands;
  j["frac_tool"] = frac_tool;
  j["frac_menu"] = frac_menu;
  j["trigger_frac"] = trigger_frac;
  j["trigger_probability"] = trigger_probability;
  j["concentration"] = concentration;
  j["uniform_floor"] = uniform_floor;
  j["trigger_boost"] = trigger_boost;
  if (transitions) j["transitions"] = *transitions;
  json langs = json::array();
  for (const auto& [k, v] : languages) langs.push_back({k, v});
  j["languages"] = langs;
  j["undo_rate"] = undo_rate;
  j["redo_rate"] = redo_rate;
  j["noise_rate"] = noise_rate;
  j["abort_rate"] = abort_rate;
  j["ambiguous_rate"] = ambiguous_rate;
  j["modifier_rate"] = modifier_rate;
  j["foreign_category_rate"] = foreign_category_rate;
  j["session_anomaly_rate"] = session_anomaly_rate;
  j["sessions"] = sessions;
  j["length_log_mean"] = length_log_mean;
  j["length_log_sd"] = length_log_sd;
  j["min_session_len"] = min_session_len;
  j["max_session_len"] = max_session_len;
  j["gap_log_mean"] = gap_log_mean;
  j["gap_log_sd"] = gap_log_sd;
  j["files"] = files;
  j["min_trigger_support"] = min_trigger_support;
  j["seed"] = seed;
  return j.dump(2);
}

// ---------------------------------------------------------------------------

std::vector<double> stationary_distribution(const std::vector<std::vector<double>>& transitions) {
  const auto n = transitions.size();
  std::vector<double> pi(n, 1.0 / static_cast<double>(n)), next(n);
  // Power iteration on the lazy chain (I + P) / 2, which shares the
  // stationary distribution and is aperiodic.
  for (int iter = 0; iter < 200000; ++iter) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      next[i] += 0.5 * pi[i];
      for (std::size_t j = 0; j < n; ++j) next[j] += 0.5 * pi[i] * transitions[i][j];
    }
    double diff = 0.0, total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += next[i];
    for (std::size_t i = 0; i < n; ++i) {
      next[i] /= total;
      diff += std::abs(next[i] - pi[i]);
    }
    pi.swap(next);
    if (diff < 1e-15) break;
  }
  return pi;
}

PlantedChain planted_chain(const GeneratorSpec& spec) {
  validate(spec);
  std::mt19937_64 rng(spec.seed);
  PlantedChain chain;
  const auto n = spec.n_commands;
  auto n_tool = static_cast<std::size_t>(std::llround(spec.frac_tool * static_cast<double>(n)));
  auto n_menu = static_cast<std::size_t>(std::llround(spec.frac_menu * static_cast<double>(n)));
  if (n_tool + n_menu >= n) throw Error(ErrorCode::InvalidSpec, "at least one UNDO command is required");

  std::set<std::string> used;
  for (const auto& nc : kNoise) used.insert(std::string(nc.name));
  auto fresh_name = [&]() {
    for (int attempt = 0; attempt < 10000; ++attempt) {
      std::string name = std::string(kVerbs[uniform_index(rng, std::size(kVerbs))]) + " " +
                         std::string(kNouns[uniform_index(rng, std::size(kNouns))]);
      if (attempt > 200) name += " " + std::to_string(attempt);
      if (used.insert(name).second) return name;
    }
    throw Error(ErrorCode::InvalidSpec, "cannot generate unique names");
  };

  chain.commands.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& c = chain.commands[i];
    c.name = fresh_name();
    if (i < n - n_tool - n_menu) {
      c.category = Category::Undo;
      c.loc_id = 1000 + static_cast<std::int64_t>(i);
    } else if (i < n - n_menu) {
      c.category = Category::Tool;
      c.loc_id = -(1000 + static_cast<std::int64_t>(i));
    } else {
      c.category = Category::Menu;
      c.loc_id = -(5000 + static_cast<std::int64_t>(i));
    }
  }
  // Choose triggering Tool/Menu commands.
  std::vector<std::size_t> high;
  for (std::size_t i = 0; i < n; ++i)
    if (chain.commands[i].category != Category::Undo) high.push_back(i);
  shuffle_range(high.begin(), high.end(), rng);
  auto n_trig = static_cast<std::size_t>(std::llround(spec.trigger_frac * static_cast<double>(high.size())));
  std::vector<bool> is_trigger(n, false);
  for (std::size_t t = 0; t < n_trig; ++t) {
    auto& c = chain.commands[high[t]];
    is_trigger[high[t]] = true;
    c.event_name = fresh_name();
    c.event_loc = 3000 + static_cast<std::int64_t>(high[t]);
  }

  if (spec.transitions) {
    chain.transitions = *spec.transitions;
  } else {
    std::vector<std::size_t> all(n), high_targets, trig_targets;
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      if (chain.commands[i].category != Category::Undo) high_targets.push_back(i);
      if (is_trigger[i]) trig_targets.push_back(i);
    }
    chain.transitions.assign(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      // A Tool/Menu command without a trigger never leads straight into a
      // standalone UNDO command; otherwise that event would look triggered.
      bool restricted = chain.commands[i].category != Category::Undo && !is_trigger[i];
      const auto& targets = restricted ? high_targets : all;
      std::vector<double> g(targets.size());
      double total = 0.0;
      for (auto& v : g) total += (v = gamma_sample(rng, spec.concentration));
      double boost = trig_targets.empty() ? 0.0 : spec.trigger_boost;
      double main = 1.0 - spec.uniform_floor - boost;
      auto& row = chain.transitions[i];
      for (std::size_t t = 0; t < targets.size(); ++t) {
        row[targets[t]] += main * (total > 0 ? g[t] / total : 1.0 / static_cast<double>(targets.size()));
        row[targets[t]] += spec.uniform_floor / static_cast<double>(targets.size());
      }
      for (auto t : trig_targets) row[t] += boost / static_cast<double>(trig_targets.size());
      double s = std::accumulate(row.begin(), row.end(), 0.0);
      for (auto& v : row) v /= s;
    }
  }
  chain.stationary = stationary_distribution(chain.transitions);
  return chain;
}

double bayes_recall(const PlantedChain& chain, std::size_t k) {
  double total = 0.0;
  for (std::size_t s = 0; s < chain.transitions.size(); ++s) {
    auto row = chain.transitions[s];
    std::sort(row.begin(), row.end(), std::greater<>());
    double mass = 0.0;
    for (std::size_t j = 0; j < std::min(k, row.size()); ++j) mass += row[j];
    total += chain.stationary[s] * mass;
  }
  return total;
}

double bayes_recall(const GeneratorSpec& spec, std::size_t k) { return bayes_recall(planted_chain(spec), k); }

// ---------------------------------------------------------------------------

PipelineConfig GeneratedCorpus::pipeline_config() const {
  PipelineConfig cfg;
  cfg.lexicon = truth.lexicon;
  cfg.removal = truth.removal;
  return cfg;
}

GeneratedCorpus generate(const GeneratorSpec& spec) {
  GeneratedCorpus out;
  out.truth.chain = planted_chain(spec);
  const auto& chain = out.truth.chain;
  const auto n = chain.commands.size();
  // Separate stream so the chain does not depend on corpus settings.
  std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);

  // Languages and lexicon.
  std::vector<std::string> langs;
  std::vector<double> lang_w;
  double wsum = 0.0;
  for (const auto& [l, w] : spec.languages) {
    langs.push_back(l);
    lang_w.push_back(w);
    wsum += w;
  }
  for (auto& w : lang_w) w /= wsum;

  std::map<std::pair<std::int64_t, std::string>, std::string> translated;  // (loc, lang) -> name
  std::set<std::string> taken;
  for (const auto& c : chain.commands) {
    taken.insert(c.name);
    if (c.event_name) taken.insert(*c.event_name);
  }
  std::vector<std::pair<std::int64_t, std::string>> named;
  for (const auto& c : chain.commands) {
    named.emplace_back(c.loc_id, c.name);
    if (c.event_loc) named.emplace_back(*c.event_loc, *c.event_name);
  }
  for (const auto& nc : kNoise) named.emplace_back(nc.loc, std::string(nc.name));
  std::vector<LexiconEntry> lexicon;
  bool multilingual = langs.size() > 1 || langs.front() != "en";
  for (const auto& lang : langs) {
    for (const auto& [loc, english] : named) {
      std::string name = english;
      if (lang != "en") {
        do {
          name = pseudo_word(rng, language_suffix(lang));
        } while (!taken.insert(name).second);
      }
      translated[{loc, lang}] = name;
      if (multilingual) lexicon.push_back({loc, lang, name, english});
    }
  }
  out.truth.lexicon = TranslationLexicon(std::move(lexicon));
  for (int a = 0; a < kAmbiguousKinds; ++a) {
    MatchRule r;
    r.label = "plugin-error";
    r.loc_id = kAmbiguousLocBase + a;
    out.truth.removal.rules.push_back(r);
  }

  auto name_in = [&](std::int64_t loc, const std::string& lang) { return translated.at({loc, lang}); };

  std::vector<std::size_t> event_bearing, standalone;
  for (std::size_t i = 0; i < n; ++i) {
    if (chain.commands[i].category == Category::Undo) standalone.push_back(i);
    if (chain.commands[i].category == Category::Undo || chain.commands[i].event_loc) event_bearing.push_back(i);
  }

  struct SessionLines {
    std::string id;
    std::string mac;
    std::vector<RawLine> lines;
  };
  std::vector<SessionLines> sessions;
  std::set<std::string> ids;
  const TimestampMs day_start = *parse_timestamp("2023-04-12 00:00:00.000");
  const double abandon = (1.0 - spec.trigger_probability) / spec.trigger_probability;

  for (std::size_t s = 0; s < spec.sessions; ++s) {
    SessionLines sl;
    do {
      sl.id = hex_id(rng);
    } while (!ids.insert(sl.id).second);
    sl.mac = hex_id(rng);
    const auto& lang = langs[sample_categorical(rng, lang_w)];
    double raw_len = std::exp(spec.length_log_mean + spec.length_log_sd * standard_normal(rng));
    auto len = static_cast<std::size_t>(std::llround(raw_len));
    len = std::clamp(len, spec.min_session_len, spec.max_session_len);
    TimestampMs cursor = day_start + static_cast<TimestampMs>(uniform_index(rng, 20ULL * 3600 * 1000));
    auto step = [&]() { cursor += static_cast<TimestampMs>(uniform_index(rng, 40)); };
    auto emit = [&](const std::string& cat, std::string msg) {
      step();
      sl.lines.push_back({cursor, cat, std::move(msg)});
    };
    auto modifier = [&]() -> std::optional<std::string> {
      if (!bernoulli(rng, spec.modifier_rate)) return std::nullopt;
      return "MAX-" + std::to_string(1 + uniform_index(rng, 40));
    };
    auto undo_msg = [&](ActionKind kind, const std::string& name, std::int64_t loc, std::optional<std::string> mod = {}) {
      CommandEvent ev;
      ev.action = kind;
      ev.name = name;
      ev.loc_id = loc;
      ev.modifier = std::move(mod);
      return format_message(ev);
    };
    auto high_msg = [&](const SynthCommand& c) {
      CommandEvent ev;
      ev.action = c.category == Category::Tool ? ActionKind::ToolInvoke : ActionKind::MenuInvoke;
      ev.name = name_in(c.loc_id, lang);
      ev.loc_id = c.loc_id;
      if (c.category == Category::Menu) ev.menu_sub_id = 0;
      return format_message(ev);
    };
    // Renders the lines of one command. Returns the anchor timestamp and the
    // (loc, name) of its completed event, if any.
    auto render = [&](std::size_t idx, TimestampMs& anchor) -> std::optional<std::pair<std::int64_t, std::string>> {
      const auto& c = chain.commands[idx];
      if (c.category == Category::Undo) {
        auto nm = name_in(c.loc_id, lang);
        emit("UNDO", undo_msg(ActionKind::Event, nm, c.loc_id, modifier()));
        emit("UNDO", undo_msg(ActionKind::EndEvent, nm, c.loc_id));
        anchor = cursor;
        return std::make_pair(c.loc_id, nm);
      }
      emit(c.category == Category::Tool ? "Tool" : "Menu", high_msg(c));
      anchor = cursor;
      if (!c.event_loc) return std::nullopt;
      ++out.truth.trigger_support[c.loc_id];
      auto nm = name_in(*c.event_loc, lang);
      emit("UNDO", undo_msg(ActionKind::Event, nm, *c.event_loc, modifier()));
      emit("UNDO", undo_msg(ActionKind::EndEvent, nm, *c.event_loc));
      return std::make_pair(*c.event_loc, nm);
    };

    CleanSequence clean;
    clean.session_id = sl.id;
    if (bernoulli(rng, spec.session_anomaly_rate)) {
      const auto& c = chain.commands[standalone[uniform_index(rng, standalone.size())]];
      emit("UNDO", undo_msg(ActionKind::UndoEvent, name_in(c.loc_id, lang), c.loc_id));
    }
    std::size_t state = sample_categorical(rng, chain.stationary);
    for (std::size_t k = 0; k < len; ++k) {
      if (k > 0) {
        state = sample_categorical(rng, chain.transitions[state]);
        double gap = std::exp(spec.gap_log_mean + spec.gap_log_sd * standard_normal(rng));
        cursor += 1 + static_cast<TimestampMs>(gap * 1000.0);
      }
      const auto& cmd = chain.commands[state];
      // Lines that the pipeline must strip.
      if (cmd.event_loc && bernoulli(rng, std::min(1.0, abandon))) {
        emit(cmd.category == Category::Tool ? "Tool" : "Menu", high_msg(cmd));
        ++out.truth.trigger_support[cmd.loc_id];
      }
      if (bernoulli(rng, spec.noise_rate)) {
        const auto& nc = kNoise[uniform_index(rng, std::size(kNoise))];
        auto nm = name_in(nc.loc, lang);
        if (bernoulli(rng, 0.5)) emit("UNDO", undo_msg(ActionKind::Event, nm, nc.loc));
        emit("UNDO", undo_msg(ActionKind::EndEvent, nm, nc.loc));
      }
      if (bernoulli(rng, spec.foreign_category_rate)) emit("RENDER", "Render: Shaded (12)");
      if (bernoulli(rng, spec.abort_rate)) {
        const auto& c = chain.commands[event_bearing[uniform_index(rng, event_bearing.size())]];
        std::int64_t loc = c.event_loc ? *c.event_loc : c.loc_id;
        emit("UNDO", undo_msg(ActionKind::Event, name_in(loc, lang), loc, modifier()));
      }
      if (bernoulli(rng, spec.ambiguous_rate)) {
        auto a = static_cast<std::int64_t>(uniform_index(rng, kAmbiguousKinds));
        emit("UNDO", undo_msg(ActionKind::EndEvent, "Plugin Error " + std::to_string(a + 1), kAmbiguousLocBase + a));
      }

      TimestampMs anchor = 0;
      auto completed = render(state, anchor);
      CleanItem item;
      item.name = cmd.name;
      item.category = cmd.category;
      item.loc_id = cmd.loc_id;
      item.timestamp = anchor;
      item.dt_seconds =
          clean.items.empty() ? 0.0 : static_cast<double>(anchor - clean.items.back().timestamp) / 1000.0;
      clean.items.push_back(item);

      if (completed && bernoulli(rng, spec.redo_rate)) {
        emit("UNDO", undo_msg(ActionKind::UndoEvent, completed->second, completed->first));
        emit("UNDO", undo_msg(ActionKind::RedoEvent, completed->second, completed->first));
      }
      if (bernoulli(rng, spec.undo_rate)) {
        TimestampMs junk_anchor = 0;
        auto junk = render(event_bearing[uniform_index(rng, event_bearing.size())], junk_anchor);
        emit("UNDO", undo_msg(ActionKind::UndoEvent, junk->second, junk->first));
      }
    }
    out.truth.clean.push_back(std::move(clean));
    sessions.push_back(std::move(sl));
  }

  if (spec.min_trigger_support > 0) {
    for (const auto& [loc, support] : out.truth.trigger_support) {
      if (support < spec.min_trigger_support)
        throw Error(ErrorCode::InvalidSpec, "trigger " + std::to_string(loc) + " observed only " +
                                                std::to_string(support) + " times");
    }
  }
  for (const auto& c : chain.commands) {
    if (c.event_loc && out.truth.trigger_support.count(c.loc_id)) out.truth.triggers[c.loc_id] = *c.event_loc;
  }

  std::sort(out.truth.clean.begin(), out.truth.clean.end(),
            [](const CleanSequence& a, const CleanSequence& b) { return a.session_id < b.session_id; });
  out.truth.stats = dataset_stats(out.truth.clean);

  // Distribute sessions over files and interleave lines by time.
  out.files.assign(spec.files, {});
  for (std::size_t f = 0; f < spec.files; ++f) {
    struct Ref {
      TimestampMs ts;
      std::size_t session;
      std::size_t line;
    };
    std::vector<Ref> refs;
    for (std::size_t s = f; s < sessions.size(); s += spec.files)
      for (std::size_t l = 0; l < sessions[s].lines.size(); ++l) refs.push_back({sessions[s].lines[l].ts, s, l});
    std::stable_sort(refs.begin(), refs.end(), [](const Ref& a, const Ref& b) { return a.ts < b.ts; });
    std::ostringstream os;
    os << kNativeHeader << '\n';
    std::size_t sn = 0;
    for (const auto& r : refs) {
      const auto& sl = sessions[r.session];
      const auto& line = sl.lines[r.line];
      os << std::uppercase << std::hex << std::setw(8) << std::setfill('0') << (0x06626000 + sn++) << std::dec
         << '\t' << sl.id << '\t' << sl.mac << '\t' << format_timestamp(line.ts) << "\t5\t28.0.0(668937)\tWIN\t"
         << "WinNT 10.0.19044\tINFO\t" << line.category << '\t' << line.message << '\n';
    }
    out.files[f] = os.str();
  }
  return out;
}

void write_corpus(const GeneratedCorpus& corpus, const GeneratorSpec& spec, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "logs");
  fs::create_directories(dir / "truth");
  auto write = [](const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + p.string());
    out << text;
  };
  for (std::size_t f = 0; f < corpus.files.size(); ++f) {
    std::ostringstream name;
    name << "session_" << std::setw(3) << std::setfill('0') << f << ".log";
    write(dir / "logs" / name.str(), corpus.files[f]);
  }
  write(dir / "spec.json", spec.to_json_text());
  write(dir / "lexicon.tsv", corpus.truth.lexicon.to_text());
  write(dir / "removal.json", corpus.truth.removal.to_json_text());

  write(dir / "truth" / "clean.tsv", sequences_to_text(corpus.truth.clean));

  std::ostringstream trig;
  trig << "trigger_loc_id\tevent_loc_id\tsupport\n";
  for (const auto& [t, e] : corpus.truth.triggers) trig << t << '\t' << e << '\t' << corpus.truth.trigger_support.at(t) << '\n';
  write(dir / "truth" / "triggers.tsv", trig.str());

  std::ostringstream cmds;
  cmds << "index\tname\tcategory\tloc_id\tevent_name\tevent_loc_id\tstationary\n" << std::setprecision(17);
  const auto& chain = corpus.truth.chain;
  for (std::size_t i = 0; i < chain.commands.size(); ++i) {
    const auto& c = chain.commands[i];
    cmds << i << '\t' << c.name << '\t' << to_string(c.category) << '\t' << c.loc_id << '\t'
         << c.event_name.value_or("") << '\t' << (c.event_loc ? std::to_string(*c.event_loc) : "") << '\t'
         << chain.stationary[i] << '\n';
  }
  write(dir / "truth" / "commands.tsv", cmds.str());

  std::ostringstream tm;
  tm << std::setprecision(17);
  for (const auto& row : chain.transitions) {
    for (std::size_t j = 0; j < row.size(); ++j) tm << (j ? "\t" : "") << row[j];
    tm << '\n';
  }
  write(dir / "truth" / "transitions.tsv", tm.str());
  write(dir / "truth" / "stats.tsv", corpus.truth.stats.to_table());
}

}  // namespace cmdrec
