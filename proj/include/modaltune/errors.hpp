#pragma once

#include <stdexcept>
#include <string>

namespace modaltune {

/// Input failed schema or model validation (bad mesh file, dangling index,
/// inverted element, inconsistent target, ...). CLI exit code 1.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// Degenerate or impossible geometry passed to a generator.
class GeometryError : public ValidationError {
public:
    explicit GeometryError(const std::string& what) : ValidationError(what) {}
};

/// Cyclic or contradictory constraint relations.
class ConstraintError : public ValidationError {
public:
    explicit ConstraintError(const std::string& what) : ValidationError(what) {}
};

/// Parameter vector outside the admissible box, or a binding that does not
/// match the model.
class DomainError : public ValidationError {
public:
    explicit DomainError(const std::string& what) : ValidationError(what) {}
};

/// Numerical failure (factorization breakdown, indefinite pencil, ...).
/// CLI exit code 3.
class SolverError : public std::runtime_error {
public:
    explicit SolverError(const std::string& what) : std::runtime_error(what) {}
};

/// Iteration budget exhausted before reaching the requested accuracy.
class ConvergenceError : public SolverError {
public:
    explicit ConvergenceError(const std::string& what) : SolverError(what) {}
};

} // namespace modaltune
