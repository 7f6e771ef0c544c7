#include "emo/errors.hpp"

namespace emo {

const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::Config: return "Config";
    case ErrorCode::MissingTrigger: return "MissingTrigger";
    case ErrorCode::DuplicateTrigger: return "DuplicateTrigger";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::BadRecord: return "BadRecord";
    case ErrorCode::NoTrigger: return "NoTrigger";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::MissingLabel: return "MissingLabel";
    case ErrorCode::BadReplacement: return "BadReplacement";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::NonFiniteGrad: return "NonFiniteGrad";
    case ErrorCode::NotDistribution: return "NotDistribution";
    case ErrorCode::NoForwardState: return "NoForwardState";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::MissingBlock: return "MissingBlock";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::WidthMismatch: return "WidthMismatch";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::UnknownId: return "UnknownId";
    case ErrorCode::EmptyEnsemble: return "EmptyEnsemble";
    case ErrorCode::LeakDetected: return "LeakDetected";
    case ErrorCode::Connect: return "Connect";
    case ErrorCode::Protocol: return "Protocol";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Format: return "Format";
  }
  return "Unknown";
}

}  // namespace emo
