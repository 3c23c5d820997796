#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace ctlrp {

struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InputError : std::runtime_error {
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

struct StructuralError : std::runtime_error {
    explicit StructuralError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dataset ingestion failure carrying the offending line number (1-based, 0 if n/a).
struct IngestError : std::runtime_error {
    long line;
    IngestError(const std::string& msg, long line_no)
        : std::runtime_error(line_no > 0 ? "line " + std::to_string(line_no) + ": " + msg : msg),
          line(line_no) {}
};

// Stabilizer for epsilon-LRP denominators.
struct Epsilon {
    double value = 1e-6;

    explicit Epsilon(double v = 1e-6) : value(v) {
        if (!(v > 0.0)) throw ConfigError("epsilon must be > 0");
    }

    // z + eps carrying the sign of z, so small-magnitude denominators are
    // pushed away from zero instead of across it.
    double stabilize(double z) const {
        return z + (z >= 0.0 ? value : -value);
    }
};

}  // namespace ctlrp
