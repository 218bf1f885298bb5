#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cmdrec/common.hpp"

namespace cmdrec {

// Milliseconds since 1970-01-01 00:00:00.000 in the log's implicit timezone.
using TimestampMs = std::int64_t;

// Parses "YYYY-MM-DD HH:MM:SS.mmm". Returns nullopt on any deviation.
std::optional<TimestampMs> parse_timestamp(std::string_view text);
std::string format_timestamp(TimestampMs ts);

struct LogRecord {
  std::string session_id;
  TimestampMs timestamp = 0;
  Category category = Category::Undo;
  std::string message;
  std::optional<std::string> language;
};

enum class ActionKind : std::uint8_t { Event, EndEvent, UndoEvent, RedoEvent, ToolInvoke, MenuInvoke };

std::string_view to_string(ActionKind a);

struct CommandEvent {
  ActionKind action = ActionKind::Event;
  std::string name;
  std::int64_t loc_id = 0;
  std::optional<std::string> modifier;
  std::optional<std::int64_t> menu_sub_id;

  bool operator==(const CommandEvent&) const = default;
};

// Renders the event back into the native message grammar.
std::string format_message(const CommandEvent& ev);

// Decodes a message of the given category. Throws Error(UnknownActionPrefix),
// Error(MissingLocId) or Error(FormatError) for an empty command name.
CommandEvent parse_message(Category category, std::string_view message);

// Column layout of the tab-separated log. Defaults to the native order:
// sn, session, mac, timestamp, log_level, version, platform, os_version,
// type, category, message.
struct LogSchema {
  std::size_t column_count = 11;
  std::size_t session_col = 1;
  std::size_t timestamp_col = 3;
  std::size_t category_col = 9;
  std::size_t message_col = 10;

  static LogSchema native() { return {}; }
  // Builds a schema from a header row; nullopt if required columns are missing.
  static std::optional<LogSchema> from_header(std::string_view header_line);
};

inline constexpr std::string_view kNativeHeader =
    "sn_anonymized\tsession_anonymized\tmac_id_anonymized\ttimestamp\tlog_level\tversion\t"
    "platform\tos_version\ttype\tcategory\tmessage";

enum class SkipReason : std::uint8_t {
  EmptyLine,
  Header,
  OtherCategory,
  MalformedTimestamp,
  ColumnCountMismatch,
  UnknownActionPrefix,
  MissingLocId,
  EmptyName,
};

std::string_view to_string(SkipReason r);

struct Skip {
  SkipReason reason;
};

using LineResult = std::variant<LogRecord, Skip>;

// Parses one physical line. Header, empty and foreign-category rows yield a
// Skip. Malformed rows throw Error(MalformedTimestamp | ColumnCountMismatch).
LineResult parse_log_line(std::string_view line, const LogSchema& schema = LogSchema::native());

struct TimedEvent {
  TimestampMs timestamp = 0;
  Category category = Category::Undo;
  CommandEvent event;
  std::optional<std::string> language;

  bool operator==(const TimedEvent&) const = default;
};

struct Session {
  std::string session_id;
  std::vector<TimedEvent> events;
};

struct ParseReport {
  std::size_t lines = 0;  // data lines, header excluded
  std::size_t parsed = 0;
  std::size_t skipped = 0;
  std::map<SkipReason, std::size_t> by_reason;
  std::map<std::string, std::string> io_errors;  // file -> message

  void merge(const ParseReport& other);
  std::string summary() const;
};

// Counting line parser that turns text into decoded events. Used by batch
// loading and by the live tailer.
class LineDecoder {
 public:
  explicit LineDecoder(LogSchema schema = LogSchema::native(), std::optional<std::string> language = {})
      : schema_(schema), language_(std::move(language)) {}

  // Returns (session_id, event) for a usable line; counts everything else.
  std::optional<std::pair<std::string, TimedEvent>> decode(std::string_view line);

  const ParseReport& report() const { return report_; }
  ParseReport& report() { return report_; }

 private:
  LogSchema schema_;
  std::optional<std::string> language_;
  ParseReport report_;
};

struct LoadResult {
  std::vector<Session> sessions;  // sorted by session id
  ParseReport report;
};

// Reads every file, groups records by session and orders each session by
// (timestamp, input order). A file that cannot be read is recorded in the
// report and skipped.
LoadResult load_sessions(const std::vector<std::filesystem::path>& files,
                         std::optional<std::string> language = {});

// Same as load_sessions but over in-memory text blobs, one per "file".
LoadResult load_sessions_from_text(const std::vector<std::string>& texts, std::optional<std::string> language = {});

}  // namespace cmdrec
