#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace iamnn {

class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

class RankError : public std::runtime_error {
public:
    explicit RankError(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class ContractError : public std::runtime_error {
public:
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite value detected during a block iteration.
class NumericError : public std::runtime_error {
public:
    NumericError(const std::string& msg, int iteration)
        : std::runtime_error(msg + " (iteration " + std::to_string(iteration) + ")"),
          iteration_(iteration) {}
    int iteration() const { return iteration_; }

private:
    int iteration_;
};

// Degenerate batch for batchnorm statistics (fewer than 2 values per channel).
class DegenerateBatchError : public std::runtime_error {
public:
    explicit DegenerateBatchError(const std::string& msg) : std::runtime_error(msg) {}
};

class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& msg, int64_t step)
        : std::runtime_error(msg + " (step " + std::to_string(step) + ")"), step_(step) {}
    int64_t step() const { return step_; }

private:
    int64_t step_;
};

class DataFormatError : public std::runtime_error {
public:
    DataFormatError(const std::string& msg, uint64_t byte_offset)
        : std::runtime_error(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
          byte_offset_(byte_offset) {}
    uint64_t byte_offset() const { return byte_offset_; }

private:
    uint64_t byte_offset_;
};

// Checkpoint parsing failures keep their kind so callers can distinguish them.
class CheckpointError : public std::runtime_error {
public:
    enum class Kind { BadMagic, BadVersion, BadDType, Truncated, ShapeMismatch, MissingTensor, ConfigMismatch };

    CheckpointError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

}  // namespace iamnn
