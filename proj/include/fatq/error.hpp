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

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fatq {

enum class ErrorCode {
  kShapeMismatch,
  kUnsupportedKind,
  kEmptyTensor,
  kInvalidArgument,
  kParseError,
  kBlobSizeMismatch,
  kDanglingRef,
  kCyclicGraph,
  kBadMagic,
  kTruncated,
  kKTooLarge,
  kIo,
  kOrphanBatchNorm,
  kNoPatternFound,
  kNonPositiveScale,
  kEmptyCalibration,
  kNonFiniteInput,
  kNonFiniteGradient,
  kMissingSiteParams,
  kAccumulatorOverflow,
  kBadVersion,
  kCorrupt,
  kMissingPrerequisite,
  kFlagConflict,
};

std::string_view error_code_name(ErrorCode code);

// All library failures are reported through this exception type; `code()`
// identifies the failure class so callers and tests can branch on it.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace fatq
