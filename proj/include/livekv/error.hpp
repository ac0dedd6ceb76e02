// Copyright (C) 2026 The livekv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace livekv {

enum class ErrorCode {
    NonFiniteInput,
    ShapeMismatch,
    OddHeadDim,
    InvalidShape,
    PositionOrderViolation,
    IndexOutOfRange,
    WindowTooLarge,
    ConfigInconsistent,
    InvalidConfig,
    EmptyCache,
    StaleIndex,
    InvalidSpec,
    NotATrace,
    CorruptTrace,
    UnsupportedVersion,
    KTooLarge,
    EmptyAnswerSet,
    KZero,
    IoError,
};

constexpr std::string_view code_name(ErrorCode code) {
    switch (code) {
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::OddHeadDim: return "OddHeadDim";
    case ErrorCode::InvalidShape: return "InvalidShape";
    case ErrorCode::PositionOrderViolation: return "PositionOrderViolation";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::WindowTooLarge: return "WindowTooLarge";
    case ErrorCode::ConfigInconsistent: return "ConfigInconsistent";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::EmptyCache: return "EmptyCache";
    case ErrorCode::StaleIndex: return "StaleIndex";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::NotATrace: return "NotATrace";
    case ErrorCode::CorruptTrace: return "CorruptTrace";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::EmptyAnswerSet: return "EmptyAnswerSet";
    case ErrorCode::KZero: return "KZero";
    case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

/// Exception carrying a stable error code; what() is "<CodeName>: <detail>".
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& detail)
        : std::runtime_error(std::string(code_name(code)) + ": " + detail), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& detail) { throw Error(code, detail); }

inline void require(bool condition, ErrorCode code, const std::string& detail) {
    if (!condition) {
        fail(code, detail);
    }
}

} // namespace livekv
