/* Copyright 2026 The FATQ Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "fatq/error.hpp"

namespace fatq {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kUnsupportedKind: return "UnsupportedKind";
    case ErrorCode::kEmptyTensor: return "EmptyTensor";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kBlobSizeMismatch: return "BlobSizeMismatch";
    case ErrorCode::kDanglingRef: return "DanglingRef";
    case ErrorCode::kCyclicGraph: return "CyclicGraph";
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kTruncated: return "Truncated";
    case ErrorCode::kKTooLarge: return "KTooLarge";
    case ErrorCode::kIo: return "Io";
    case ErrorCode::kOrphanBatchNorm: return "OrphanBatchNorm";
    case ErrorCode::kNoPatternFound: return "NoPatternFound";
    case ErrorCode::kNonPositiveScale: return "NonPositiveScale";
    case ErrorCode::kEmptyCalibration: return "EmptyCalibration";
    case ErrorCode::kNonFiniteInput: return "NonFiniteInput";
    case ErrorCode::kNonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::kMissingSiteParams: return "MissingSiteParams";
    case ErrorCode::kAccumulatorOverflow: return "AccumulatorOverflow";
    case ErrorCode::kBadVersion: return "BadVersion";
    case ErrorCode::kCorrupt: return "Corrupt";
    case ErrorCode::kMissingPrerequisite: return "MissingPrerequisite";
    case ErrorCode::kFlagConflict: return "FlagConflict";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace fatq
