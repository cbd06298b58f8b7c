#pragma once

#include <stdexcept>
#include <string>

namespace escalate {

// Invalid argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Input data violates a modelling precondition (monotonicity, improper prior, ...).
class DataError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// DataError tied to one input field, for field-level client messages.
class FieldError : public DataError {
public:
    FieldError(std::string field, const std::string& what) : DataError(field + ": " + what), field_(std::move(field)) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

// Quadrature, root finding or optimisation did not converge.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Operation not allowed in the current trial status.
class StateError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Entered cohort does not match the protocol (dose, cohort size).
class ProtocolError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Persisted document has an unknown schema version or is malformed.
class MigrationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace escalate
