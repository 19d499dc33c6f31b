#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace speechdx {

enum class ErrorKind {
    MalformedTierLine,
    CorpusEmpty,
    IdOutOfRange,
    SchemaViolation,
    ClassMissing,
    ShapeMismatch,
    NonFiniteValue,
    StepOutOfRange,
    NoDescentDetected,
    VocabMissingMask,
    SequenceTooLong,
    UnknownColumn,
    MissingIdColumn,
    DimensionMismatch,
    MissingAudioForParticipant,
    SubmodelMutated,
    LengthMismatch,
    EmptyRange,
    AllTrialsFailed,
    VersionMismatch,
    InvalidArgument,
    Io,
};

inline std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::MalformedTierLine: return "MalformedTierLine";
    case ErrorKind::CorpusEmpty: return "CorpusEmpty";
    case ErrorKind::IdOutOfRange: return "IdOutOfRange";
    case ErrorKind::SchemaViolation: return "SchemaViolation";
    case ErrorKind::ClassMissing: return "ClassMissing";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFiniteValue: return "NonFiniteValue";
    case ErrorKind::StepOutOfRange: return "StepOutOfRange";
    case ErrorKind::NoDescentDetected: return "NoDescentDetected";
    case ErrorKind::VocabMissingMask: return "VocabMissingMask";
    case ErrorKind::SequenceTooLong: return "SequenceTooLong";
    case ErrorKind::UnknownColumn: return "UnknownColumn";
    case ErrorKind::MissingIdColumn: return "MissingIdColumn";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::MissingAudioForParticipant: return "MissingAudioForParticipant";
    case ErrorKind::SubmodelMutated: return "SubmodelMutated";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::EmptyRange: return "EmptyRange";
    case ErrorKind::AllTrialsFailed: return "AllTrialsFailed";
    case ErrorKind::VersionMismatch: return "VersionMismatch";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Io: return "Io";
    }
    return "Unknown";
}

/// Every failure raised by the library carries a machine-checkable kind.
/// `line` is the 1-based line/record number for input-validation errors, 0 otherwise.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message, std::size_t line = 0)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), line_(line) {}

    ErrorKind kind() const noexcept { return kind_; }
    std::size_t line() const noexcept { return line_; }

private:
    ErrorKind kind_;
    std::size_t line_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message, std::size_t line = 0) {
    throw Error(kind, message, line);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
    if (!condition) {
        throw Error(kind, message);
    }
}

}  // namespace speechdx
