#pragma once

#include <stdexcept>
#include <string>

namespace salient {

/// Broad failure class; the CLI maps each kind to a process exit code.
enum class ErrorKind {
    Io,
    Format,
    Parameter,
    Data,
    Contract,
    Training,
    Divergence,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct IoError : Error {
    explicit IoError(const std::string& w) : Error(ErrorKind::Io, w) {}
};
struct FormatError : Error {
    explicit FormatError(const std::string& w) : Error(ErrorKind::Format, w) {}
};
/// Invalid parameters or configuration.
struct ParameterError : Error {
    explicit ParameterError(const std::string& w) : Error(ErrorKind::Parameter, w) {}
};
struct DataError : Error {
    explicit DataError(const std::string& w) : Error(ErrorKind::Data, w) {}
};
/// A caller broke a documented precondition (dimension mismatch and the like).
struct ContractError : Error {
    explicit ContractError(const std::string& w) : Error(ErrorKind::Contract, w) {}
};
struct TrainingError : Error {
    explicit TrainingError(const std::string& w) : Error(ErrorKind::Training, w) {}
};
struct DivergenceError : Error {
    DivergenceError(const std::string& w, int epoch) : Error(ErrorKind::Divergence, w), epoch(epoch) {}
    int epoch;
};

/// Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric divergence, 1 anything else.
inline int exit_code_for(ErrorKind kind) noexcept
{
    switch (kind) {
    case ErrorKind::Parameter:
        return 2;
    case ErrorKind::Io:
    case ErrorKind::Format:
    case ErrorKind::Data:
        return 3;
    case ErrorKind::Divergence:
        return 4;
    default:
        return 1;
    }
}

} // namespace salient
