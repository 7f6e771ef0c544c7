#ifndef EMO_ERRORS_HPP
#define EMO_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace emo {

// Error taxonomy. The CLI maps categories to exit codes
// (config -> 2, data -> 3, numeric -> 4).
enum class ErrorCode {
  Config,
  MissingTrigger,
  DuplicateTrigger,
  UnknownLabel,
  BadRecord,
  NoTrigger,
  EmptyInput,
  EmptyCorpus,
  MissingLabel,
  BadReplacement,
  NonFinite,
  NonFiniteGrad,
  NotDistribution,
  NoForwardState,
  ShapeMismatch,
  MissingBlock,
  SchemaMismatch,
  WidthMismatch,
  DuplicateId,
  UnknownId,
  EmptyEnsemble,
  LeakDetected,
  Connect,
  Protocol,
  Io,
  Format,
};

const char* error_code_name(ErrorCode c);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string msg)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + msg),
        code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

inline bool is_config_error(ErrorCode c) { return c == ErrorCode::Config; }

inline bool is_numeric_error(ErrorCode c) {
  return c == ErrorCode::NonFinite || c == ErrorCode::NonFiniteGrad ||
         c == ErrorCode::NotDistribution;
}

}  // namespace emo

#endif
