#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cmdrec {

enum class ErrorCode {
  MalformedTimestamp,
  ColumnCountMismatch,
  UnknownActionPrefix,
  MissingLocId,
  IoError,
  InvalidConfig,
  EmptyCorpus,
  SequenceTooShort,
  DimensionMismatch,
  NoSupervisedPositions,
  NonFiniteLoss,
  RankTooLarge,
  EmptyEvalSet,
  InvalidSpec,
  UnknownSession,
  EmptyPrefix,
  ModelNotLoaded,
  VocabularyMismatch,
  FormatError,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

// Command categories retained from the native log. Any other category is
// dropped at parse time.
enum class Category : std::uint8_t { Undo = 0, Tool = 1, Menu = 2 };

inline constexpr int kNumCategories = 3;

std::string_view to_string(Category c);
// Accepts the log spelling ("UNDO", "Tool", "Menu").
bool parse_category(std::string_view text, Category& out);

}  // namespace cmdrec
