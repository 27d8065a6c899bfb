#include "cfcrs/error.hpp"

namespace cfcrs {

ErrorCategory category_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNonScalarLoss:
    case ErrorCode::kNonFinite:
    case ErrorCode::kNonFiniteGradient:
    case ErrorCode::kNonFiniteUpdate:
      return ErrorCategory::kNumeric;
    case ErrorCode::kConfigError:
      return ErrorCategory::kConfig;
    default:
      return ErrorCategory::kData;
  }
}

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMissingType: return "MissingType";
    case ErrorCode::kMalformedRecord: return "MalformedRecord";
    case ErrorCode::kUnknownEntity: return "UnknownEntity";
    case ErrorCode::kEmptyInteractionList: return "EmptyInteractionList";
    case ErrorCode::kUnknownType: return "UnknownType";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kSpanOutOfBounds: return "SpanOutOfBounds";
    case ErrorCode::kEmptyEntitySet: return "EmptyEntitySet";
    case ErrorCode::kEmptyCatalog: return "EmptyCatalog";
    case ErrorCode::kIndexOutOfCatalog: return "IndexOutOfCatalog";
    case ErrorCode::kAllSchemasUnreachable: return "AllSchemasUnreachable";
    case ErrorCode::kTypeMismatch: return "TypeMismatch";
    case ErrorCode::kConstraintViolation: return "ConstraintViolation";
    case ErrorCode::kVocabMiss: return "VocabMiss";
    case ErrorCode::kEmptyTypeClass: return "EmptyTypeClass";
    case ErrorCode::kNoCoveringSegmentation: return "NoCoveringSegmentation";
    case ErrorCode::kLabelNotItem: return "LabelNotItem";
    case ErrorCode::kEmptyTestSet: return "EmptyTestSet";
    case ErrorCode::kPositionOutOfRange: return "PositionOutOfRange";
    case ErrorCode::kMissingArtifact: return "MissingArtifact";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNonScalarLoss: return "NonScalarLoss";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kNonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::kNonFiniteUpdate: return "NonFiniteUpdate";
    case ErrorCode::kConfigError: return "ConfigError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail),
      code_(code) {}

}  // namespace cfcrs
