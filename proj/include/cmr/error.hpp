#pragma once

#include <stdexcept>
#include <string>

namespace cmr {

// Input that violates a documented precondition (bad CSV, wrong coding,
// missing role, empty stratum). Maps to exit code 2 in the CLI.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A solver or estimator could not produce a finite answer
// (separation, non-finite loss, all candidates failed). Exit code 3.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace cmr
