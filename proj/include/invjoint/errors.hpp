#pragma once

#include <stdexcept>
#include <string>

namespace invjoint {

// Violated precondition on arguments (arity, ranges, configuration).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Operand shapes do not conform.
class DimensionError : public ContractError {
public:
    using ContractError::ContractError;
};

// A computation produced (or would produce) NaN/Inf.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A contrastive batch that cannot define a loss (no positives / no negatives).
class DegenerateBatchError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A mixture fit that cannot separate components (e.g. identical inputs).
class DegeneracyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed, truncated or mismatched persisted file.
class LoadError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace invjoint
