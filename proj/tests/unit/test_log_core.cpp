#include <fstream>

#include "doctest.h"
#include "helpers.hpp"

using namespace cmdrec;

TEST_SUITE("log_core") {

TEST_CASE("timestamps round trip") {
  auto ts = parse_timestamp("2023-04-05 13:07:09.042");
  REQUIRE(ts);
  CHECK(format_timestamp(*ts) == "2023-04-05 13:07:09.042");
  CHECK_FALSE(parse_timestamp("2023-04-05 13:07:09"));
  CHECK_FALSE(parse_timestamp("2023-13-05 13:07:09.042"));
  CHECK_FALSE(parse_timestamp("not a time"));
  // leap day and ordering
  auto a = parse_timestamp("2024-02-29 23:59:59.999"), b = parse_timestamp("2024-03-01 00:00:00.000");
  REQUIRE((a && b));
  CHECK(*b - *a == 1);
}

TEST_CASE("zoom and save rows") {
  auto r = parse_log_line(th::line("s1", "2023-01-01 10:00:00.000", "UNDO", "End Event: Zoom (242)"));
  auto* rec = std::get_if<LogRecord>(&r);
  REQUIRE(rec);
  CHECK(rec->category == Category::Undo);
  CHECK(rec->message == "End Event: Zoom (242)");
  CHECK(rec->session_id == "s1");

  r = parse_log_line(th::line("s1", "2023-01-01 10:00:00.000", "Menu", "Menu: Save - (-5) (0)"));
  rec = std::get_if<LogRecord>(&r);
  REQUIRE(rec);
  CHECK(rec->category == Category::Menu);
  CHECK(rec->message == "Menu: Save - (-5) (0)");
}

TEST_CASE("line classification") {
  auto r = parse_log_line("");
  REQUIRE(std::holds_alternative<Skip>(r));
  CHECK(std::get<Skip>(r).reason == SkipReason::EmptyLine);
  r = parse_log_line(std::string(kNativeHeader));
  CHECK(std::get<Skip>(r).reason == SkipReason::Header);
  r = parse_log_line(th::line("s", "2023-01-01 10:00:00.000", "RENDER", "frame"));
  CHECK(std::get<Skip>(r).reason == SkipReason::OtherCategory);
  CHECK_THROWS_AS(parse_log_line(th::line("s", "yesterday", "Tool", "Tool: X (-1)")), Error);
  CHECK_THROWS_AS(parse_log_line("a\tb\tc"), Error);
}

TEST_CASE("message grammar") {
  auto ev = parse_message(Category::Undo, "Event: (MAX-20) Reshape (279)");
  CHECK(ev.action == ActionKind::Event);
  CHECK(ev.modifier == std::optional<std::string>("MAX-20"));
  CHECK(ev.name == "Reshape");
  CHECK(ev.loc_id == 279);

  ev = parse_message(Category::Tool, "Tool: Reshape (-214)");
  CHECK(ev.action == ActionKind::ToolInvoke);
  CHECK(ev.name == "Reshape");
  CHECK(ev.loc_id == -214);

  ev = parse_message(Category::Menu, "Menu: Save - (-5) (0)");
  CHECK(ev.action == ActionKind::MenuInvoke);
  CHECK(ev.name == "Save");
  CHECK(ev.loc_id == -5);
  CHECK(ev.menu_sub_id == std::optional<std::int64_t>(0));

  ev = parse_message(Category::Undo, "End Event: Move by Points (12)");
  CHECK(ev.action == ActionKind::EndEvent);
  CHECK(ev.name == "Move by Points");

  CHECK_THROWS_AS(parse_message(Category::Undo, "Begin: Wall (1)"), Error);
  CHECK_THROWS_AS(parse_message(Category::Tool, "Tool: Wall"), Error);
  CHECK_THROWS_AS(parse_message(Category::Tool, "Tool:  (-3)"), Error);
}

TEST_CASE("format_message is the inverse of parse_message") {
  std::vector<std::pair<Category, std::string>> msgs = {
      {Category::Undo, "Event: (MAX-20) Reshape (279)"}, {Category::Undo, "End Event: Zoom (242)"},
      {Category::Undo, "Undo Event: Undo (0)"},          {Category::Tool, "Tool: Reshape (-214)"},
      {Category::Menu, "Menu: Save - (-5) (0)"},
  };
  for (const auto& [c, m] : msgs) CHECK(format_message(parse_message(c, m)) == m);
}

TEST_CASE("sessions are grouped and time ordered") {
  std::string text = std::string(kNativeHeader) + "\n" +
                     th::line("b", "2023-01-01 10:00:02.000", "Tool", "Tool: Door (-2)") + "\n" +
                     th::line("a", "2023-01-01 10:00:01.000", "Tool", "Tool: Wall (-1)") + "\n" +
                     th::line("b", "2023-01-01 10:00:01.000", "Tool", "Tool: Slab (-3)") + "\n" +
                     th::line("a", "2023-01-01 10:00:00.000", "Tool", "Tool: Roof (-4)") + "\n";
  auto r = load_sessions_from_text({text});
  REQUIRE(r.sessions.size() == 2);
  CHECK(r.sessions[0].session_id == "a");
  CHECK(th::names(r.sessions[0]) == std::vector<std::string>{"Roof", "Wall"});
  CHECK(th::names(r.sessions[1]) == std::vector<std::string>{"Slab", "Door"});
}

TEST_CASE("parse report counts") {
  std::string text;
  for (int i = 0; i < 5; ++i) text += th::line("s", "2023-01-01 10:00:0" + std::to_string(i) + ".000", "Tool", "Tool: W (-1)") + "\n";
  text += th::line("s", "garbage", "Tool", "Tool: W (-1)") + "\n";
  text += "only\tthree\tcolumns\n";
  auto r = load_sessions_from_text({text});
  CHECK(r.report.parsed == 5);
  CHECK(r.report.skipped == 2);
  CHECK(r.report.by_reason[SkipReason::MalformedTimestamp] == 1);
  CHECK(r.report.by_reason[SkipReason::ColumnCountMismatch] == 1);
  CHECK(r.report.summary().find("parsed") != std::string::npos);
}

TEST_CASE("equal timestamps keep file order") {
  std::string text;
  for (const char* n : {"C", "A", "B"}) text += th::line("s", "2023-01-01 10:00:00.000", "Tool", std::string("Tool: ") + n + " (-1)") + "\n";
  auto r = load_sessions_from_text({text});
  REQUIRE(r.sessions.size() == 1);
  CHECK(th::names(r.sessions[0]) == std::vector<std::string>{"C", "A", "B"});
}

TEST_CASE("unreadable file is reported, others still load") {
  auto tmp = std::filesystem::temp_directory_path() / "cmdrec_logcore_ok.log";
  {
    std::ofstream(tmp) << th::line("s", "2023-01-01 10:00:00.000", "Tool", "Tool: W (-1)") << "\n";
  }
  auto r = load_sessions({"/nonexistent/dir/x.log", tmp});
  CHECK(r.sessions.size() == 1);
  CHECK(r.report.io_errors.size() == 1);
  std::filesystem::remove(tmp);
}

TEST_CASE("schema from a reordered header") {
  auto s = LogSchema::from_header("message\tcategory\tsession_anonymized\ttimestamp");
  REQUIRE(s);
  CHECK(s->column_count == 4);
  CHECK(s->message_col == 0);
  CHECK(s->category_col == 1);
  CHECK_FALSE(LogSchema::from_header("a\tb\tc"));
}

}
