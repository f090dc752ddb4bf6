// Copyright 2026 The casat Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace casat {

// Base for every error the library raises. The CLI maps subclasses onto
// stable exit codes (data 2, usage 64, backend 70).
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Malformed input data; carries the 1-based line number when known (0 otherwise).
class ParseError : public Error {
  public:
    ParseError(const std::string &what, std::size_t line = 0)
        : Error(line ? what + " at line " + std::to_string(line) : what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

  private:
    std::size_t line_;
};

class EmptyCorpusError : public ParseError {
  public:
    EmptyCorpusError() : ParseError("empty corpus") {}
};

// Precondition violations on caller-supplied values.
class InputError : public Error {
  public:
    using Error::Error;
};

class IoError : public Error {
  public:
    using Error::Error;
};

class CorruptFileError : public Error {
  public:
    using Error::Error;
};

class VersionMismatchError : public CorruptFileError {
  public:
    using CorruptFileError::CorruptFileError;
};

class ConfigError : public Error {
  public:
    using Error::Error;
};

class TemplateError : public Error {
  public:
    TemplateError(const std::string &what, std::string placeholder)
        : Error(what), placeholder_(std::move(placeholder)) {}

    const std::string &placeholder() const noexcept { return placeholder_; }

  private:
    std::string placeholder_;
};

// Remote backend failure. status is the HTTP status, or 0 for connection-level failures.
class TransportError : public Error {
  public:
    TransportError(const std::string &what, int status = 0) : Error(what), status_(status) {}

    int status() const noexcept { return status_; }

  private:
    int status_;
};

class TimeoutError : public TransportError {
  public:
    explicit TimeoutError(const std::string &what) : TransportError(what, 0) {}
};

} // namespace casat
