#pragma once
// Brute-force reference implementations shared by unit and acceptance tests.
// Deliberately naive: explicit state, full sorts, no shared code with src/.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "cmdrec/log_core.hpp"

namespace oracle {

// Action strings over 'e' (completed event), 'u' (undo), 'r' (redo) and 't'
// (tool invocation, never undoable). Returns the surviving action indices in
// original order, computed on an explicit document + redo stack.
inline std::vector<int> replay(const std::string& actions) {
  std::vector<int> doc, redo_stack, tools;
  for (int i = 0; i < static_cast<int>(actions.size()); ++i) {
    switch (actions[i]) {
      case 'e':
        doc.push_back(i);
        redo_stack.clear();
        break;
      case 'u':
        if (!doc.empty()) {
          redo_stack.push_back(doc.back());
          doc.pop_back();
        }
        break;
      case 'r':
        if (!redo_stack.empty()) {
          doc.push_back(redo_stack.back());
          redo_stack.pop_back();
        }
        break;
      case 't':
        tools.push_back(i);
        break;
    }
  }
  std::vector<int> out = doc;
  out.insert(out.end(), tools.begin(), tools.end());
  std::sort(out.begin(), out.end());
  return out;
}

// The same string as log records: 'e' becomes an Event/End Event pair named
// "E<index>", 't' a Tool record "T<index>".
inline std::vector<cmdrec::TimedEvent> to_events(const std::string& actions) {
  using namespace cmdrec;
  std::vector<TimedEvent> out;
  TimestampMs ts = 0;
  auto rec = [&](Category c, ActionKind a, std::string name, std::int64_t loc) {
    TimedEvent e;
    e.timestamp = ts += 10;
    e.category = c;
    e.event.action = a;
    e.event.name = std::move(name);
    e.event.loc_id = loc;
    out.push_back(e);
  };
  for (int i = 0; i < static_cast<int>(actions.size()); ++i) {
    auto n = std::to_string(i);
    switch (actions[i]) {
      case 'e':
        rec(Category::Undo, ActionKind::Event, "E" + n, 100 + i);
        rec(Category::Undo, ActionKind::EndEvent, "E" + n, 100 + i);
        break;
      case 'u': rec(Category::Undo, ActionKind::UndoEvent, "Undo", 0); break;
      case 'r': rec(Category::Undo, ActionKind::RedoEvent, "Redo", 0); break;
      case 't': rec(Category::Tool, ActionKind::ToolInvoke, "T" + n, -(100 + i)); break;
    }
  }
  return out;
}

inline std::vector<std::string> expected_names(const std::string& actions) {
  std::vector<std::string> out;
  for (int i : replay(actions)) out.push_back((actions[i] == 't' ? "T" : "E") + std::to_string(i));
  return out;
}

// 1-based rank of `truth` among non-reserved ids (>= first_id): count of ids
// scoring strictly higher, plus equal scores at a smaller id, plus one.
inline std::size_t rank_by_count(const std::vector<double>& scores, int truth, int first_id) {
  std::size_t r = 1;
  for (int i = first_id; i < static_cast<int>(scores.size()); ++i) {
    if (i == truth) continue;
    if (scores[i] > scores[truth] || (scores[i] == scores[truth] && i < truth)) ++r;
  }
  return r;
}

// Top-k by a full stable sort, ties by ascending id.
inline std::vector<int> topk_by_sort(const std::vector<double>& scores, std::size_t k, int first_id) {
  std::vector<int> ids;
  for (int i = first_id; i < static_cast<int>(scores.size()); ++i) ids.push_back(i);
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  ids.resize(std::min(k, ids.size()));
  return ids;
}

inline double recall_exhaustive(const std::vector<std::vector<double>>& scores, const std::vector<int>& truth,
                                std::size_t k, int first_id) {
  double hits = 0;
  for (std::size_t n = 0; n < scores.size(); ++n) {
    auto top = topk_by_sort(scores[n], k, first_id);
    hits += std::find(top.begin(), top.end(), truth[n]) != top.end();
  }
  return hits / static_cast<double>(scores.size());
}

inline double ndcg_exhaustive(const std::vector<std::vector<double>>& scores, const std::vector<int>& truth,
                              std::size_t k, int first_id) {
  double total = 0;
  for (std::size_t n = 0; n < scores.size(); ++n) {
    auto top = topk_by_sort(scores[n], k, first_id);
    for (std::size_t p = 0; p < top.size(); ++p)
      if (top[p] == truth[n]) total += 1.0 / std::log2(static_cast<double>(p) + 2.0);
  }
  return total / static_cast<double>(scores.size());
}

}  // namespace oracle
