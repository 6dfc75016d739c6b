#pragma once

#include <stdexcept>
#include <string>

namespace regionedit {

// Base for every error the library raises. Callers at the process boundary
// (CLI, HTTP service) map the concrete subclasses onto exit codes / statuses.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A parameter lies outside its documented range (also used for bad prompts).
class InvalidArgument : public Error {
 public:
  InvalidArgument(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

// Cosine similarity against a zero-norm embedding is undefined.
class DegenerateEmbedding : public Error {
 public:
  using Error::Error;
};

// The guided reverse process produced a non-finite latent or gradient.
class GuidanceDivergence : public Error {
 public:
  GuidanceDivergence(int step, const std::string& message)
      : Error("guidance diverged at step " + std::to_string(step) + ": " + message), step_(step) {}

  int step() const noexcept { return step_; }

 private:
  int step_;
};

// Missing, corrupt or geometrically inconsistent model weights.
class ModelLoadError : public Error {
 public:
  using Error::Error;
};

// Training loss became non-finite.
class TrainingDivergence : public Error {
 public:
  using Error::Error;
};

}  // namespace regionedit
