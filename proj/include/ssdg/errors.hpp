#pragma once

#include <stdexcept>
#include <string>

namespace ssdg {

// Base for every error raised by the library. Subclasses name the stage that
// failed so callers (the CLI, the experiment runner) can report them per cell.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("config error: " + what) {}
};

class IngestionError : public Error {
public:
    explicit IngestionError(const std::string& what) : Error("ingestion error: " + what) {}
};

class SplitError : public Error {
public:
    explicit SplitError(const std::string& what) : Error("split error: " + what) {}
};

class StreamError : public Error {
public:
    explicit StreamError(const std::string& what) : Error("stream error: " + what) {}
};

class TransformError : public Error {
public:
    explicit TransformError(const std::string& what) : Error("transform error: " + what) {}
};

class ModelError : public Error {
public:
    explicit ModelError(const std::string& what) : Error("model error: " + what) {}
};

class TrainerError : public Error {
public:
    explicit TrainerError(const std::string& what) : Error("trainer error: " + what) {}
};

class MetricsError : public Error {
public:
    explicit MetricsError(const std::string& what) : Error("metrics error: " + what) {}
};

class AggregationError : public Error {
public:
    explicit AggregationError(const std::string& what) : Error("aggregation error: " + what) {}
};

class ReportError : public Error {
public:
    explicit ReportError(const std::string& what) : Error("report error: " + what) {}
};

class CheckpointError : public Error {
public:
    explicit CheckpointError(const std::string& what) : Error("checkpoint error: " + what) {}
};

} // namespace ssdg
