#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace psidrr {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

// File contents are malformed or inconsistent with their header/sidecar.
class FormatError : public Error {
 public:
  using Error::Error;
};

// An argument violates a type invariant (negative spacing, non-binary mask, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// The anterior pelvic plane cannot be constructed from the landmarks.
class DegenerateLandmarks : public Error {
 public:
  using Error::Error;
};

// A job inside a batch failed; carries the job's position in the input list.
class BatchError : public Error {
 public:
  BatchError(std::size_t job_index, const std::string& what)
      : Error("job " + std::to_string(job_index) + ": " + what), job_index_(job_index) {}

  std::size_t job_index() const noexcept { return job_index_; }

 private:
  std::size_t job_index_;
};

}  // namespace psidrr
