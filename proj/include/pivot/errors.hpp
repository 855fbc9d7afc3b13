#pragma once

#include <stdexcept>
#include <string>

namespace pivot {

// Base of every error the library throws. `kind()` is a stable identifier
// used in CLI output and HTTP error payloads.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define PIVOT_DEFINE_ERROR(Name)                                   \
  class Name : public Error {                                      \
   public:                                                         \
    explicit Name(const std::string& what) : Error(#Name, what) {} \
  }

// core-model
PIVOT_DEFINE_ERROR(InvalidValue);
PIVOT_DEFINE_ERROR(IndexError);
PIVOT_DEFINE_ERROR(ProtocolError);
PIVOT_DEFINE_ERROR(PreconditionError);

// prompt-registry
PIVOT_DEFINE_ERROR(MissingPlaceholder);
PIVOT_DEFINE_ERROR(UnknownTemplate);
PIVOT_DEFINE_ERROR(GoldenMismatch);

// llm-gateway
PIVOT_DEFINE_ERROR(BudgetExhausted);
PIVOT_DEFINE_ERROR(TransportError);
PIVOT_DEFINE_ERROR(ScriptUnderrun);
PIVOT_DEFINE_ERROR(ScriptError);
PIVOT_DEFINE_ERROR(UnparsableVerdict);
PIVOT_DEFINE_ERROR(EmptyGeneration);
PIVOT_DEFINE_ERROR(ConfigError);

// judge
PIVOT_DEFINE_ERROR(InvalidThreshold);
PIVOT_DEFINE_ERROR(DuplicateType);
PIVOT_DEFINE_ERROR(ArityError);

// dialogue-engine
PIVOT_DEFINE_ERROR(UnparsableProtoOutput);
PIVOT_DEFINE_ERROR(TurnFailed);
PIVOT_DEFINE_ERROR(NoCandidates);
PIVOT_DEFINE_ERROR(LineBudgetExhausted);

// corpus
PIVOT_DEFINE_ERROR(NegationUnsupported);
PIVOT_DEFINE_ERROR(ConversionUnsupported);
PIVOT_DEFINE_ERROR(InsufficientPool);
PIVOT_DEFINE_ERROR(AllConversionsFailed);
PIVOT_DEFINE_ERROR(ParseError);
PIVOT_DEFINE_ERROR(SplitConstraintViolation);

// evaluation
PIVOT_DEFINE_ERROR(IncompleteAnnotation);
PIVOT_DEFINE_ERROR(InvalidCounts);
PIVOT_DEFINE_ERROR(SchemaViolation);

// service
PIVOT_DEFINE_ERROR(NotFound);
PIVOT_DEFINE_ERROR(TurnOrderError);
PIVOT_DEFINE_ERROR(SessionClosed);
PIVOT_DEFINE_ERROR(DuplicateAnnotation);
PIVOT_DEFINE_ERROR(Unauthorized);

#undef PIVOT_DEFINE_ERROR

}  // namespace pivot
