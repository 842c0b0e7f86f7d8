#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace agvlab {

// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class BoundsError : public Error {
 public:
  using Error::Error;
};

class DegeneracyError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ExtractionError : public Error {
 public:
  explicit ExtractionError(int components)
      : Error("expected exactly one drop-area component, found " +
              std::to_string(components)),
        components_(components) {}
  int components() const noexcept { return components_; }

 private:
  int components_;
};

class AssignmentError : public Error {
 public:
  AssignmentError(const std::string& what, int markers_detected)
      : Error(what), markers_detected_(markers_detected) {}
  int markers_detected() const noexcept { return markers_detected_; }

 private:
  int markers_detected_;
};

class IsolationError : public Error {
 public:
  using Error::Error;
};

class NoJobError : public Error {
 public:
  using Error::Error;
};

class AmbiguityError : public Error {
 public:
  explicit AmbiguityError(std::vector<int> destinations)
      : Error(describe(destinations)), destinations_(std::move(destinations)) {}
  const std::vector<int>& destinations() const noexcept { return destinations_; }

 private:
  static std::string describe(const std::vector<int>& d) {
    std::string s = "drop areas found in several destinations:";
    for (int k : d) s += " " + std::to_string(k);
    return s;
  }
  std::vector<int> destinations_;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

}  // namespace agvlab
