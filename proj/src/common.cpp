#include "cmdrec/common.hpp"

namespace cmdrec {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedTimestamp: return "MalformedTimestamp";
    case ErrorCode::ColumnCountMismatch: return "ColumnCountMismatch";
    case ErrorCode::UnknownActionPrefix: return "UnknownActionPrefix";
    case ErrorCode::MissingLocId: return "MissingLocId";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::SequenceTooShort: return "SequenceTooShort";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NoSupervisedPositions: return "NoSupervisedPositions";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::RankTooLarge: return "RankTooLarge";
    case ErrorCode::EmptyEvalSet: return "EmptyEvalSet";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::UnknownSession: return "UnknownSession";
    case ErrorCode::EmptyPrefix: return "EmptyPrefix";
    case ErrorCode::ModelNotLoaded: return "ModelNotLoaded";
    case ErrorCode::VocabularyMismatch: return "VocabularyMismatch";
    case ErrorCode::FormatError: return "FormatError";
  }
  return "Unknown";
}

std::string_view to_string(Category c) {
  switch (c) {
    case Category::Undo: return "UNDO";
    case Category::Tool: return "Tool";
    case Category::Menu: return "Menu";
  }
  return "?";
}

bool parse_category(std::string_view text, Category& out) {
  if (text == "UNDO") {
    out = Category::Undo;
  } else if (text == "Tool") {
    out = Category::Tool;
  } else if (text == "Menu") {
    out = Category::Menu;
  } else {
    return false;
  }
  return true;
}

}  // namespace cmdrec
