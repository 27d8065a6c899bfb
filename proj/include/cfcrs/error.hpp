#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cfcrs {

// Every failure the library reports carries one of these codes. The category
// decides the CLI exit status.
enum class ErrorCode {
  // data
  kMissingType,
  kMalformedRecord,
  kUnknownEntity,
  kEmptyInteractionList,
  kUnknownType,
  kParseError,
  kSpanOutOfBounds,
  kEmptyEntitySet,
  kEmptyCatalog,
  kIndexOutOfCatalog,
  kAllSchemasUnreachable,
  kTypeMismatch,
  kConstraintViolation,
  kVocabMiss,
  kEmptyTypeClass,
  kNoCoveringSegmentation,
  kLabelNotItem,
  kEmptyTestSet,
  kPositionOutOfRange,
  kMissingArtifact,
  kShapeMismatch,
  // numeric
  kNonScalarLoss,
  kNonFinite,
  kNonFiniteGradient,
  kNonFiniteUpdate,
  // config
  kConfigError,
};

enum class ErrorCategory { kData, kNumeric, kConfig };

ErrorCategory category_of(ErrorCode code);
std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail);

  ErrorCode code() const { return code_; }
  ErrorCategory category() const { return category_of(code_); }

 private:
  ErrorCode code_;
};

}  // namespace cfcrs
