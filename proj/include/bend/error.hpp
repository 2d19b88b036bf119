#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace bend {

enum class ErrorKind {
    InvalidConfig,
    InvalidLayer,
    Shape,
    Size,
    Io,
    Parse,
    Version,
    UnknownAdapter,
    DegenerateEmbedding,
    TrainingDiverged,
};

const char* to_string(ErrorKind kind);

/// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class TrainingDiverged : public Error {
public:
    TrainingDiverged(std::int64_t iteration, double loss);

    std::int64_t iteration() const noexcept { return iteration_; }
    double loss() const noexcept { return loss_; }

private:
    std::int64_t iteration_;
    double loss_;
};

}  // namespace bend
