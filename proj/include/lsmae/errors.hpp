// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lsmae {

// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shape/dimension mismatch.
struct ShapeError : Error {
  using Error::Error;
};

// Image/patch/mask geometry violation (divisibility, grid mismatch).
struct GeometryError : Error {
  using Error::Error;
};

// Out-of-range or duplicate index.
struct IndexError : Error {
  using Error::Error;
};

// Invalid model or training configuration.
struct ConfigError : Error {
  using Error::Error;
};

// Violated operation contract (e.g. backward on a non-scalar loss).
struct ContractError : Error {
  using Error::Error;
};

// Non-finite values where finite ones are required (e.g. NaN loss).
struct NumericError : Error {
  using Error::Error;
};

// File system / stream failure.
struct IoError : Error {
  using Error::Error;
};

// Malformed serialized data; carries the byte offset of the defect.
struct ParseError : Error {
  std::size_t offset;

  ParseError(const std::string& msg, std::size_t byte_offset)
      : Error(msg + " (at byte offset " + std::to_string(byte_offset) + ")"),
        offset(byte_offset) {}
};

}  // namespace lsmae
