#pragma once

#include <stdexcept>
#include <string>

namespace hs {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Pair collision requested for a pair that is not approaching.
class InvalidCollision : public Error {
 public:
  using Error::Error;
};

// Grazing contact, near-simultaneous events or an event-cap overrun.
class SingularSample : public Error {
 public:
  using Error::Error;
};

class EnumerationTooLarge : public Error {
 public:
  using Error::Error;
};

class NotTrivialLine : public Error {
 public:
  using Error::Error;
};

class InvalidAttachment : public Error {
 public:
  using Error::Error;
};

class InvalidTree : public Error {
 public:
  using Error::Error;
};

class PackingTooTight : public Error {
 public:
  using Error::Error;
};

class PartnerConstructionFailed : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace hs
