#pragma once

#include <exception>
#include <string>
#include <utility>

namespace coninfer {

/// Root of every error thrown by the engine.
class Error : public std::exception {
public:
    explicit Error(std::string message) : message_(std::move(message)) {}

    const char* what() const noexcept override { return message_.c_str(); }

    /// Short type name, printed by the CLI.
    virtual const char* kind() const noexcept { return "Error"; }

    /// Prefixes the message with where it happened (tile, batch, file).
    void add_context(const std::string& where) { message_ = where + ": " + message_; }

private:
    std::string message_;
};

#define CONINFER_ERROR_TYPE(Name, Base)                                   \
    class Name : public Base {                                            \
    public:                                                               \
        using Base::Base;                                                 \
        const char* kind() const noexcept override { return #Name; }      \
    }

/// Bad or inconsistent input. CLI exit status 1.
CONINFER_ERROR_TYPE(InputError, Error);
/// Numerics broke down on otherwise valid input. CLI exit status 2.
CONINFER_ERROR_TYPE(NumericalError, Error);

CONINFER_ERROR_TYPE(IoError, InputError);
CONINFER_ERROR_TYPE(FormatError, InputError);
CONINFER_ERROR_TYPE(UnsupportedError, InputError);
CONINFER_ERROR_TYPE(ShapeError, InputError);
CONINFER_ERROR_TYPE(LabelRangeError, InputError);
CONINFER_ERROR_TYPE(DegenerateInputError, NumericalError);
CONINFER_ERROR_TYPE(SingularCovarianceError, NumericalError);

#undef CONINFER_ERROR_TYPE

/// Names the offending manifest field by its JSON path.
class ManifestError : public InputError {
public:
    ManifestError(std::string field, const std::string& what)
        : InputError(field + ": " + what), field_(std::move(field)) {}

    const char* kind() const noexcept override { return "ManifestError"; }
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

class SimplexError : public InputError {
public:
    SimplexError(std::size_t row, const std::string& what)
        : InputError("row " + std::to_string(row) + ": " + what), row_(row) {}

    const char* kind() const noexcept override { return "SimplexError"; }
    std::size_t row() const noexcept { return row_; }

private:
    std::size_t row_;
};

} // namespace coninfer
