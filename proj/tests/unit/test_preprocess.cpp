#include <random>

#include "../oracles.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace cmdrec;
using th::done;
using th::open;
using th::tool;

namespace {

std::vector<std::string> resolved_names(const std::string& actions) {
  auto s = resolve_undo_redo(th::session(oracle::to_events(actions)));
  return th::names(to_clean_sequence(s));
}

TriggerMap planted_map(std::int64_t trigger, std::int64_t event, std::size_t support = 20) {
  TriggerMap m;
  auto& e = m.entries[trigger];
  e.trigger_loc = trigger;
  e.trigger_name = "Clipping";
  e.category = Category::Tool;
  e.support = support;
  e.counts[event] = support;
  e.event_names[event] = "Clip Surface";
  decide_triggers(m, {});
  return m;
}

}  // namespace

TEST_SUITE("preprocess") {

TEST_CASE("noise filter") {
  auto d = Denylist::defaults();
  auto s = filter_noise(th::session({done("Zoom", 242)}), d);
  CHECK(s.events.empty());

  s = filter_noise(th::session({open("Wall", 1), done("Wall", 1)}), d);
  CHECK(th::names(s) == std::vector<std::string>{"Wall", "Wall"});

  FilterStats st;
  s = filter_noise(th::session({open("Wall", 1), open("Door", 2), done("Door", 2)}), d, &st);
  REQUIRE(s.events.size() == 2);
  CHECK(s.events[0].event.action == ActionKind::Event);
  CHECK(s.events[0].event.name == "Door");
  CHECK(s.events[1].event.action == ActionKind::EndEvent);
  CHECK(st.aborted == 1);
}

TEST_CASE("abort filter holds tools behind an open event") {
  AbortFilter f;
  std::vector<TimedEvent> out;
  f.push(open("Wall", 1), out);
  f.push(tool("Door", -2), out);
  CHECK(out.empty());
  CHECK(f.tentative_tail().size() == 1);
  f.push(open("Slab", 3), out);  // Wall aborted, tool released
  REQUIRE(out.size() == 1);
  CHECK(out[0].event.name == "Door");
  f.finish(out);
  CHECK(out.size() == 1);
  CHECK(f.aborted() == 2);
}

TEST_CASE("denylist json round trip and custom rules") {
  auto d = Denylist::defaults();
  auto back = Denylist::from_json_text(d.to_json_text());
  CHECK(back.rules.size() == d.rules.size());
  CHECK(back.to_json_text() == d.to_json_text());
  MatchRule empty;
  CHECK_FALSE(empty.matches(done("Zoom", 242)));
}

TEST_CASE("undo/redo worked examples") {
  CHECK(th::names(resolve_undo_redo(th::session({done("E1", 1), th::undo()}))).empty());
  CHECK(th::names(resolve_undo_redo(th::session({done("E1", 1), done("E2", 2), th::undo(), th::redo()}))) ==
        std::vector<std::string>{"E1", "E2"});
  CHECK(th::names(resolve_undo_redo(th::session({done("E1", 1), th::undo(), done("E2", 2), th::redo()}))) ==
        std::vector<std::string>{"E2"});
  UndoStats st;
  resolve_undo_redo(th::session({th::undo(), th::redo()}), &st);
  CHECK(st.anomalies == 2);
}

TEST_CASE("undo/redo matches the replay oracle exhaustively up to length 8") {
  const std::string alphabet = "eur";
  std::size_t checked = 0, mismatches = 0;
  for (std::size_t len = 0; len <= 8; ++len) {
    std::size_t total = 1;
    for (std::size_t i = 0; i < len; ++i) total *= 3;
    for (std::size_t code = 0; code < total; ++code) {
      std::string s;
      for (std::size_t i = 0, c = code; i < len; ++i, c /= 3) s += alphabet[c % 3];
      mismatches += resolved_names(s) != oracle::expected_names(s);
      ++checked;
    }
  }
  CHECK(checked == 9841);
  CHECK(mismatches == 0);
}

TEST_CASE("undo/redo with interleaved tools, random strings") {
  std::mt19937_64 rng(7);
  std::size_t mismatches = 0;
  for (int n = 0; n < 300; ++n) {
    std::string s(rng() % 31, 'e');
    for (auto& c : s) c = "eeurt"[rng() % 5];
    mismatches += resolved_names(s) != oracle::expected_names(s);
  }
  CHECK(mismatches == 0);
}

TEST_CASE("language alignment") {
  TranslationLexicon lex({{12, "de", "Verschieben", "Move"}, {13, "de", "Drehen", "Rotate"}});
  AlignStats st;
  auto s = align_languages(th::session({done("Verschieben", 12), done("Move", 12), done("Foo", 99)}), lex, &st);
  CHECK(th::names(s) == std::vector<std::string>{"Move", "Move", "Foo"});
  CHECK(st.translated == 1);
  CHECK(st.unmapped == 1);
  auto back = TranslationLexicon::from_text(lex.to_text());
  CHECK(back.lookup(12, "Verschieben") == std::optional<std::string>("Move"));
  CHECK(back.lookup(13, "Whatever") == std::optional<std::string>("Rotate"));
}

TEST_CASE("lexicon gaps") {
  std::vector<Session> c = {th::session({done("A", 5), done("B", 5), done("C", 6)})};
  CHECK(lexicon_gaps(c, {}) == std::vector<std::int64_t>{5});
}

TEST_CASE("trigger map decisions") {
  std::vector<Session> corpus;
  // Clipping (-226) followed by Clip Surface (169) 20 times out of 20.
  for (int i = 0; i < 20; ++i)
    corpus.push_back(th::session({tool("Clipping", -226), open("Clip Surface", 169), done("Clip Surface", 169)}));
  // Tool X: 5 distinct events, 4 times each.
  for (int e = 0; e < 5; ++e)
    for (int i = 0; i < 4; ++i) corpus.push_back(th::session({tool("X", -7), done("Ev" + std::to_string(e), 300 + e)}));
  // Rare tool: 3 observations.
  for (int i = 0; i < 3; ++i) corpus.push_back(th::session({tool("Rare", -8), done("R", 400)}));

  auto m = build_trigger_map(corpus);
  const auto* clip = m.find(-226);
  REQUIRE(clip);
  CHECK(clip->decision == TriggerDecisionKind::TriggersEvent);
  CHECK(clip->event_loc == 169);
  CHECK(clip->distribution.at(169) == doctest::Approx(1.0));
  const auto* x = m.find(-7);
  REQUIRE(x);
  CHECK(x->decision == TriggerDecisionKind::NoEvent);
  CHECK(x->distribution.at(300) == doctest::Approx(0.2));
  CHECK(x->uniformity() == doctest::Approx(1.0));
  const auto* rare = m.find(-8);
  REQUIRE(rare);
  CHECK(rare->insufficient_data);
  CHECK(rare->decision == TriggerDecisionKind::NoEvent);

  for (const auto& [k, e] : m.entries) {
    double sum = e.no_event_probability;
    for (const auto& [l, p] : e.distribution) sum += p;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }

  auto back = TriggerMap::from_text(m.to_text());
  decide_triggers(back, {});
  CHECK(back.target(-226) == std::optional<std::int64_t>(169));
  CHECK_FALSE(back.target(-7));
  CHECK(back.to_text() == m.to_text());
}

TEST_CASE("substitution") {
  auto m = planted_map(-226, 169);
  auto s = substitute_high_level(th::session({tool("Clipping", -226), open("Clip Surface", 169), done("Clip Surface", 169)}), m);
  CHECK(th::names(to_clean_sequence(s)) == std::vector<std::string>{"Clipping"});

  s = substitute_high_level(th::session({done("Wall", 1)}), m);
  CHECK(th::names(s) == std::vector<std::string>{"Wall"});

  SubstituteStats st;
  s = substitute_high_level(th::session({tool("Clipping", -226)}), m, {}, 10, &st);
  CHECK(s.events.empty());
  CHECK(st.removed_unfinished == 1);
}

TEST_CASE("cutting and splitting") {
  SplitOptions o;
  std::mt19937_64 rng(1);
  auto mk = [](std::size_t n) {
    CleanSequence s{"s", {}};
    for (std::size_t i = 0; i < n; ++i) s.items.push_back({"C" + std::to_string(i), Category::Tool, -1, 1.0, 0});
    return s;
  };
  CHECK(cut_sequence(mk(4), o, rng).empty());
  auto one = cut_sequence(mk(100), o, rng);
  REQUIRE(one.size() == 1);
  CHECK(one[0].items.size() == 100);
  for (std::size_t n : {101u, 150u, 333u, 1000u}) {
    auto pieces = cut_sequence(mk(n), o, rng);
    std::size_t total = 0;
    for (const auto& p : pieces) {
      CHECK(p.items.size() >= o.min_len);
      CHECK(p.items.size() <= o.max_len);
      total += p.items.size();
    }
    CHECK(total == n);
  }

  std::vector<CleanSequence> many;
  for (int i = 0; i < 1000; ++i) {
    auto s = mk(10);
    s.session_id = "s" + std::to_string(i);
    many.push_back(s);
  }
  auto ds = sessionize_and_split(many, o);
  CHECK(ds.train.size() == 800);
  CHECK(ds.validation.size() == 200);
  auto again = sessionize_and_split(many, o);
  CHECK(again.train == ds.train);
}

TEST_CASE("stats") {
  CHECK(dataset_stats({}) == StatsReport{});
  std::vector<CleanSequence> seqs = {{"a", {{"W", Category::Tool, -1, 0, 0}, {"W", Category::Tool, -1, 0, 0}}},
                                     {"b", {{"D", Category::Undo, 5, 0, 0}, {"S", Category::Menu, -5, 0, 0}}}};
  auto r = dataset_stats(seqs);
  CHECK(r.sessions == 2);
  CHECK(r.command_classes == 3);
  CHECK(r.records[0] == 1);
  CHECK(r.records[1] == 2);
  CHECK(r.records[2] == 1);
}

TEST_CASE("sequence files round trip") {
  std::vector<CleanSequence> seqs = {{"a", {{"Move by Points", Category::Tool, -1, 0, 1000}, {"W", Category::Undo, 4, 0.25, 1250}}},
                                     {"a", {{"S", Category::Menu, -5, 0, 5000}}}};
  CHECK(sequences_from_text(sequences_to_text(seqs)) == seqs);
  CHECK_THROWS_AS(sequences_from_text("x\t1\tW\tTool\t-1\t0\t2023-01-01 00:00:00.000\n"), Error);
}

}
