#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace moa {

enum class Errc {
  UnknownEndpointName,
  EmptyCode,
  IndexOutOfRange,
  InvalidArgument,
  EndpointError,
  Timeout,
  MalformedResponse,
  EmptyResponses,
  LayerFailed,
  ContextBudgetExceeded,
  EmptyList,
  NotPSD,
  EigenFailure,
  MixedPromptIds,
  EmptyDataset,
  MissingReference,
  InvalidRange,
  DegenerateInput,
  SingularDesign,
  InsufficientData,
  PortInUse,
  ConfigError,
  ParseError,
  IoError,
};

std::string_view errc_name(Errc code) noexcept;

// Single exception type for the library; `code()` discriminates the failure.
// `status()` carries the HTTP status for EndpointError (0 for transport
// failures) and the 1-based line number for ParseError/ConfigError when known.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message, int status = 0)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message),
        code_(code),
        status_(status) {}

  Errc code() const noexcept { return code_; }
  int status() const noexcept { return status_; }

 private:
  Errc code_;
  int status_;
};

}  // namespace moa
