#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace mvlift {

// All failures surface as typed exceptions so callers (and the CLI) can
// distinguish bad input from numerical trouble.

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed arguments, shape mismatches, out-of-range indices.
struct ArgumentError : Error {
    explicit ArgumentError(const std::string& msg) : Error(msg) {}
};

// Geometric configuration with no well-defined answer (identical camera
// centers, near-parallel rays, point too close to an epipole).
struct DegenerateGeometryError : Error {
    explicit DegenerateGeometryError(const std::string& msg) : Error(msg) {}
};

// A 3D point with non-positive depth in the target camera.
struct BehindCameraError : Error {
    explicit BehindCameraError(const std::string& msg) : Error(msg) {}
};

struct InsufficientViewsError : Error {
    explicit InsufficientViewsError(const std::string& msg) : Error(msg) {}
};

// Carries the loss trace so a caller can inspect where things blew up.
struct OptimizationDivergedError : Error {
    std::vector<double> loss_trace;
    OptimizationDivergedError(const std::string& msg, std::vector<double> trace)
        : Error(msg), loss_trace(std::move(trace)) {}
};

// File-format problems: unreadable syntax vs structurally wrong content.
struct ParseError : Error {
    explicit ParseError(const std::string& msg) : Error(msg) {}
};

struct SchemaError : Error {
    explicit SchemaError(const std::string& msg) : Error(msg) {}
};

struct EmptyDatasetError : Error {
    explicit EmptyDatasetError(const std::string& msg) : Error(msg) {}
};

// A pipeline stage was invoked before the artifact it depends on exists.
struct MissingArtifactError : Error {
    explicit MissingArtifactError(const std::string& msg) : Error(msg) {}
};

struct CheckpointError : Error {
    explicit CheckpointError(const std::string& msg) : Error(msg) {}
};

}  // namespace mvlift
