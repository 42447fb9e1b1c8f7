#pragma once

#include <stdexcept>
#include <string>

namespace relex {

// Shape disagreement between tensor operands.
class DimensionError : public std::runtime_error {
public:
    explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

// Mathematically invalid input (log of a non-positive value, ...).
class DomainError : public std::runtime_error {
public:
    explicit DomainError(const std::string& what) : std::runtime_error(what) {}
};

// Caller broke an API precondition.
class ContractError : public std::runtime_error {
public:
    explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

// Token id outside the vocabulary.
class VocabError : public std::runtime_error {
public:
    explicit VocabError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed corpus content; message lists the offending samples.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Unreadable/corrupt checkpoint or config file.
class SerializationError : public std::runtime_error {
public:
    explicit SerializationError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace relex
