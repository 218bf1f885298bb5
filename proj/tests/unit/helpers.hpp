#pragma once

#include <string>
#include <vector>

#include "cmdrec/log_core.hpp"
#include "cmdrec/preprocess.hpp"

namespace th {

using namespace cmdrec;

inline TimedEvent undo_rec(ActionKind a, const std::string& name, std::int64_t loc, TimestampMs ts = 0) {
  TimedEvent e;
  e.timestamp = ts;
  e.category = Category::Undo;
  e.event.action = a;
  e.event.name = name;
  e.event.loc_id = loc;
  return e;
}
inline TimedEvent open(const std::string& n, std::int64_t loc, TimestampMs ts = 0) {
  return undo_rec(ActionKind::Event, n, loc, ts);
}
inline TimedEvent done(const std::string& n, std::int64_t loc, TimestampMs ts = 0) {
  return undo_rec(ActionKind::EndEvent, n, loc, ts);
}
inline TimedEvent undo(TimestampMs ts = 0) { return undo_rec(ActionKind::UndoEvent, "Undo", 0, ts); }
inline TimedEvent redo(TimestampMs ts = 0) { return undo_rec(ActionKind::RedoEvent, "Redo", 0, ts); }
inline TimedEvent tool(const std::string& n, std::int64_t loc, TimestampMs ts = 0) {
  TimedEvent e;
  e.timestamp = ts;
  e.category = Category::Tool;
  e.event.action = ActionKind::ToolInvoke;
  e.event.name = n;
  e.event.loc_id = loc;
  return e;
}
inline TimedEvent menu(const std::string& n, std::int64_t loc, TimestampMs ts = 0) {
  TimedEvent e = tool(n, loc, ts);
  e.category = Category::Menu;
  e.event.action = ActionKind::MenuInvoke;
  e.event.menu_sub_id = 0;
  return e;
}

inline Session session(std::vector<TimedEvent> evs, std::string id = "s") { return Session{std::move(id), std::move(evs)}; }

inline std::vector<std::string> names(const Session& s) {
  std::vector<std::string> out;
  for (const auto& e : s.events) out.push_back(e.event.name);
  return out;
}
inline std::vector<std::string> names(const CleanSequence& s) {
  std::vector<std::string> out;
  for (const auto& e : s.items) out.push_back(e.name);
  return out;
}

// One native log line.
inline std::string line(const std::string& sid, const std::string& ts, const std::string& cat, const std::string& msg,
                        int sn = 0) {
  return std::to_string(sn) + "\t" + sid + "\tmac\t" + ts + "\tINFO\t2024\tWin\t10\tevt\t" + cat + "\t" + msg;
}

}  // namespace th
