// Copyright 2026 The speechface authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace speechface {

// Base class for everything thrown by this library. The CLI maps subclasses
// onto its exit-code contract, so new error sites should pick the subclass
// that matches how a caller has to react.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor/layer dimension disagreements.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, degenerate softmax rows, bad numeric arguments.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents (bad magic, inconsistent header).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Filesystem-level failures: missing files, truncated payloads, write errors.
class IoError : public Error {
 public:
  using Error::Error;
};

// Missing or inconsistent mesh metadata (lip vertex lists, pairings).
class MetadataError : public Error {
 public:
  using Error::Error;
};

// Checkpoint/topology incompatibilities between otherwise valid artifacts.
class CompatError : public Error {
 public:
  using Error::Error;
};

// Invalid run configuration (unknown keys, missing required inputs).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Training produced NaN/Inf loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace speechface
