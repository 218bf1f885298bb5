#include "cmdrec/log_core.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace cmdrec {

namespace {

bool parse_fixed_int(std::string_view s, std::size_t pos, std::size_t len, int& out) {
  if (pos + len > s.size()) return false;
  int v = 0;
  for (std::size_t i = pos; i < pos + len; ++i) {
    char c = s[i];
    if (c < '0' || c > '9') return false;
    v = v * 10 + (c - '0');
  }
  out = v;
  return true;
}

bool parse_signed(std::string_view s, std::int64_t& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc{} && ptr == last;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> cols;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      cols.push_back(line.substr(start));
      break;
    }
    cols.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return cols;
}

std::string_view rstrip(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == '\n' || s.back() == ' ')) s.remove_suffix(1);
  return s;
}

std::string_view strip(std::string_view s) {
  s = rstrip(s);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  return s;
}

// Splits "<head> (<int>)" at the final parenthesized signed integer.
bool split_trailing_id(std::string_view text, std::string_view& head, std::int64_t& id) {
  text = rstrip(text);
  if (text.empty() || text.back() != ')') return false;
  auto open = text.rfind('(');
  if (open == std::string_view::npos) return false;
  if (!parse_signed(text.substr(open + 1, text.size() - open - 2), id)) return false;
  head = rstrip(text.substr(0, open));
  return true;
}

struct UndoPrefix {
  std::string_view text;
  ActionKind kind;
};

constexpr UndoPrefix kUndoPrefixes[] = {
    {"End Event:", ActionKind::EndEvent},
    {"Undo Event:", ActionKind::UndoEvent},
    {"Redo Event:", ActionKind::RedoEvent},
    {"Event:", ActionKind::Event},
};

}  // namespace

std::optional<TimestampMs> parse_timestamp(std::string_view text) {
  text = strip(text);
  // YYYY-MM-DD HH:MM:SS.mmm
  if (text.size() != 23 || text[4] != '-' || text[7] != '-' || text[10] != ' ' || text[13] != ':' ||
      text[16] != ':' || text[19] != '.')
    return std::nullopt;
  int y, mo, d, h, mi, s, ms;
  if (!parse_fixed_int(text, 0, 4, y) || !parse_fixed_int(text, 5, 2, mo) || !parse_fixed_int(text, 8, 2, d) ||
      !parse_fixed_int(text, 11, 2, h) || !parse_fixed_int(text, 14, 2, mi) || !parse_fixed_int(text, 17, 2, s) ||
      !parse_fixed_int(text, 20, 3, ms))
    return std::nullopt;
  using namespace std::chrono;
  year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 59) return std::nullopt;
  auto days = sys_days{ymd}.time_since_epoch().count();
  return ((static_cast<std::int64_t>(days) * 24 + h) * 60 + mi) * 60'000LL + s * 1000LL + ms;
}

std::string format_timestamp(TimestampMs ts) {
  using namespace std::chrono;
  std::int64_t ms_of_day = ts % 86'400'000LL;
  std::int64_t days = ts / 86'400'000LL;
  if (ms_of_day < 0) {
    ms_of_day += 86'400'000LL;
    --days;
  }
  year_month_day ymd{sys_days{std::chrono::days{days}}};
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u %02d:%02d:%02d.%03d", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(ms_of_day / 3'600'000), static_cast<int>(ms_of_day / 60'000 % 60),
                static_cast<int>(ms_of_day / 1000 % 60), static_cast<int>(ms_of_day % 1000));
  return buf;
}

std::string_view to_string(ActionKind a) {
  switch (a) {
    case ActionKind::Event: return "Event";
    case ActionKind::EndEvent: return "End Event";
    case ActionKind::UndoEvent: return "Undo Event";
    case ActionKind::RedoEvent: return "Redo Event";
    case ActionKind::ToolInvoke: return "Tool";
    case ActionKind::MenuInvoke: return "Menu";
  }
  return "?";
}

std::string_view to_string(SkipReason r) {
  switch (r) {
    case SkipReason::EmptyLine: return "EmptyLine";
    case SkipReason::Header: return "Header";
    case SkipReason::OtherCategory: return "OtherCategory";
    case SkipReason::MalformedTimestamp: return "MalformedTimestamp";
    case SkipReason::ColumnCountMismatch: return "ColumnCountMismatch";
    case SkipReason::UnknownActionPrefix: return "UnknownActionPrefix";
    case SkipReason::MissingLocId: return "MissingLocId";
    case SkipReason::EmptyName: return "EmptyName";
  }
  return "?";
}

std::string format_message(const CommandEvent& ev) {
  std::string out;
  switch (ev.action) {
    case ActionKind::ToolInvoke:
      return "Tool: " + ev.name + " (" + std::to_string(ev.loc_id) + ")";
    case ActionKind::MenuInvoke:
      return "Menu: " + ev.name + " - (" + std::to_string(ev.loc_id) + ") (" +
             std::to_string(ev.menu_sub_id.value_or(0)) + ")";
    default:
      out = std::string(to_string(ev.action)) + ": ";
      if (ev.modifier) out += "(" + *ev.modifier + ") ";
      out += ev.name + " (" + std::to_string(ev.loc_id) + ")";
      return out;
  }
}

CommandEvent parse_message(Category category, std::string_view message) {
  message = strip(message);
  CommandEvent ev;
  std::string_view body;
  switch (category) {
    case Category::Undo: {
      bool found = false;
      for (const auto& p : kUndoPrefixes) {
        if (message.substr(0, p.text.size()) == p.text) {
          ev.action = p.kind;
          body = strip(message.substr(p.text.size()));
          found = true;
          break;
        }
      }
      if (!found) throw Error(ErrorCode::UnknownActionPrefix, std::string(message));
      std::string_view head;
      if (!split_trailing_id(body, head, ev.loc_id)) throw Error(ErrorCode::MissingLocId, std::string(message));
      // A leading "(...)" is a modifier only when a name follows it.
      if (!head.empty() && head.front() == '(') {
        auto close = head.find(')');
        if (close != std::string_view::npos && close + 1 < head.size() && head[close + 1] == ' ') {
          ev.modifier = std::string(head.substr(1, close - 1));
          head = strip(head.substr(close + 1));
        }
      }
      ev.name = std::string(head);
      break;
    }
    case Category::Tool: {
      constexpr std::string_view prefix = "Tool:";
      if (message.substr(0, prefix.size()) != prefix) throw Error(ErrorCode::UnknownActionPrefix, std::string(message));
      ev.action = ActionKind::ToolInvoke;
      std::string_view head;
      if (!split_trailing_id(strip(message.substr(prefix.size())), head, ev.loc_id))
        throw Error(ErrorCode::MissingLocId, std::string(message));
      ev.name = std::string(head);
      break;
    }
    case Category::Menu: {
      constexpr std::string_view prefix = "Menu:";
      if (message.substr(0, prefix.size()) != prefix) throw Error(ErrorCode::UnknownActionPrefix, std::string(message));
      ev.action = ActionKind::MenuInvoke;
      std::string_view rest = strip(message.substr(prefix.size()));
      std::string_view head;
      std::int64_t sub = 0;
      if (!split_trailing_id(rest, head, sub)) throw Error(ErrorCode::MissingLocId, std::string(message));
      std::string_view name_part;
      if (split_trailing_id(head, name_part, ev.loc_id)) {
        ev.menu_sub_id = sub;
      } else {
        // Tolerate "Menu: <name> (<loc>)" without a sub id.
        ev.loc_id = sub;
        name_part = head;
      }
      name_part = rstrip(name_part);
      if (name_part.size() >= 2 && name_part.substr(name_part.size() - 2) == " -") name_part.remove_suffix(2);
      else if (name_part == "-") name_part = {};
      ev.name = std::string(rstrip(name_part));
      break;
    }
  }
  if (ev.name.empty()) throw Error(ErrorCode::FormatError, "empty command name: " + std::string(message));
  return ev;
}

std::optional<LogSchema> LogSchema::from_header(std::string_view header_line) {
  auto cols = split_tabs(rstrip(header_line));
  LogSchema s;
  s.column_count = cols.size();
  bool has_session = false, has_ts = false, has_cat = false, has_msg = false;
  for (std::size_t i = 0; i < cols.size(); ++i) {
    auto c = strip(cols[i]);
    if (c == "session_anonymized") {
      s.session_col = i;
      has_session = true;
    } else if (c == "timestamp") {
      s.timestamp_col = i;
      has_ts = true;
    } else if (c == "category") {
      s.category_col = i;
      has_cat = true;
    } else if (c == "message") {
      s.message_col = i;
      has_msg = true;
    }
  }
  if (!(has_session && has_ts && has_cat && has_msg)) return std::nullopt;
  return s;
}

LineResult parse_log_line(std::string_view line, const LogSchema& schema) {
  line = rstrip(line);
  if (strip(line).empty()) return Skip{SkipReason::EmptyLine};
  if (line.substr(0, 13) == "sn_anonymized") return Skip{SkipReason::Header};
  auto cols = split_tabs(line);
  if (cols.size() != schema.column_count)
    throw Error(ErrorCode::ColumnCountMismatch,
                "expected " + std::to_string(schema.column_count) + " columns, got " + std::to_string(cols.size()));
  LogRecord rec;
  Category cat;
  if (!parse_category(strip(cols[schema.category_col]), cat)) return Skip{SkipReason::OtherCategory};
  auto ts = parse_timestamp(cols[schema.timestamp_col]);
  if (!ts) throw Error(ErrorCode::MalformedTimestamp, std::string(cols[schema.timestamp_col]));
  rec.session_id = std::string(strip(cols[schema.session_col]));
  rec.timestamp = *ts;
  rec.category = cat;
  rec.message = std::string(strip(cols[schema.message_col]));
  return rec;
}

void ParseReport::merge(const ParseReport& other) {
  lines += other.lines;
  parsed += other.parsed;
  skipped += other.skipped;
  for (const auto& [k, v] : other.by_reason) by_reason[k] += v;
  for (const auto& [k, v] : other.io_errors) io_errors[k] = v;
}

std::string ParseReport::summary() const {
  std::ostringstream os;
  os << "lines: " << lines << "\nparsed: " << parsed << "\nskipped: " << skipped << "\n";
  for (const auto& [reason, n] : by_reason) os << "  " << to_string(reason) << ": " << n << "\n";
  for (const auto& [file, msg] : io_errors) os << "io_error: " << file << ": " << msg << "\n";
  return os.str();
}

std::optional<std::pair<std::string, TimedEvent>> LineDecoder::decode(std::string_view line) {
  auto skip = [&](SkipReason r) {
    ++report_.lines;
    ++report_.skipped;
    ++report_.by_reason[r];
    return std::nullopt;
  };
  LineResult result;
  try {
    result = parse_log_line(line, schema_);
  } catch (const Error& e) {
    return skip(e.code() == ErrorCode::MalformedTimestamp ? SkipReason::MalformedTimestamp
                                                          : SkipReason::ColumnCountMismatch);
  }
  if (auto* s = std::get_if<Skip>(&result)) {
    if (s->reason == SkipReason::Header) {
      if (auto schema = LogSchema::from_header(line)) schema_ = *schema;
      return std::nullopt;
    }
    return skip(s->reason);
  }
  auto& rec = std::get<LogRecord>(result);
  TimedEvent te;
  te.timestamp = rec.timestamp;
  te.category = rec.category;
  te.language = language_;
  try {
    te.event = parse_message(rec.category, rec.message);
  } catch (const Error& e) {
    switch (e.code()) {
      case ErrorCode::UnknownActionPrefix: return skip(SkipReason::UnknownActionPrefix);
      case ErrorCode::MissingLocId: return skip(SkipReason::MissingLocId);
      default: return skip(SkipReason::EmptyName);
    }
  }
  ++report_.lines;
  ++report_.parsed;
  return std::make_pair(std::move(rec.session_id), std::move(te));
}

namespace {

struct Keyed {
  TimedEvent event;
  std::size_t order;
};

void decode_stream(std::istream& in, LineDecoder& decoder, std::unordered_map<std::string, std::vector<Keyed>>& groups,
                   std::size_t& order) {
  std::string line;
  while (std::getline(in, line)) {
    if (auto decoded = decoder.decode(line)) {
      groups[decoded->first].push_back({std::move(decoded->second), order++});
    }
  }
}

LoadResult finish(std::unordered_map<std::string, std::vector<Keyed>>& groups, ParseReport report) {
  LoadResult out;
  out.report = std::move(report);
  out.sessions.reserve(groups.size());
  for (auto& [id, items] : groups) {
    std::stable_sort(items.begin(), items.end(),
                     [](const Keyed& a, const Keyed& b) { return a.event.timestamp < b.event.timestamp; });
    Session s;
    s.session_id = id;
    s.events.reserve(items.size());
    for (auto& k : items) s.events.push_back(std::move(k.event));
    out.sessions.push_back(std::move(s));
  }
  std::sort(out.sessions.begin(), out.sessions.end(),
            [](const Session& a, const Session& b) { return a.session_id < b.session_id; });
  return out;
}

}  // namespace

LoadResult load_sessions(const std::vector<std::filesystem::path>& files, std::optional<std::string> language) {
  std::unordered_map<std::string, std::vector<Keyed>> groups;
  ParseReport report;
  std::size_t order = 0;
  for (const auto& path : files) {
    std::ifstream in(path);
    if (!in) {
      report.io_errors[path.string()] = "cannot open file";
      continue;
    }
    LineDecoder decoder(LogSchema::native(), language);
    decode_stream(in, decoder, groups, order);
    if (in.bad()) report.io_errors[path.string()] = "read error";
    report.merge(decoder.report());
  }
  return finish(groups, std::move(report));
}

LoadResult load_sessions_from_text(const std::vector<std::string>& texts, std::optional<std::string> language) {
  std::unordered_map<std::string, std::vector<Keyed>> groups;
  ParseReport report;
  std::size_t order = 0;
  for (const auto& text : texts) {
    std::istringstream in(text);
    LineDecoder decoder(LogSchema::native(), language);
    decode_stream(in, decoder, groups, order);
    report.merge(decoder.report());
  }
  return finish(groups, std::move(report));
}

}  // namespace cmdrec
