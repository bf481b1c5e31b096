// pse/error.hpp
//
// Copyright 2026  The pse-toolkit authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef PSE_ERROR_HPP_
#define PSE_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace pse {

// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string &msg) : std::runtime_error(msg) {}
};

// Bad argument or violated precondition.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Unreadable, unwritable or corrupt files.
class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed manifest line; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(const std::string &msg, int line)
      : Error(msg + " (line " + std::to_string(line) + ")"), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

// Manifest invariant violations (duplicate ids, missing files, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A source signal too silent (or absent) to mix or measure.
class DegenerateSourceError : public Error {
 public:
  using Error::Error;
};

// External adapter / synthesis backend failure; message carries diagnostics.
class BackendError : public Error {
 public:
  using Error::Error;
};

// Checkpoint version or config mismatch.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf or other numeric breakdown.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace pse

#endif  // PSE_ERROR_HPP_
