#pragma once

#include <stdexcept>
#include <string>

namespace extravar {

// Invalid or inconsistent configuration (CLI exit code 2).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// A required input artifact (e.g. a reference entropy store) is absent
// (CLI exit code 3).
struct MissingArtifactError : std::runtime_error {
    explicit MissingArtifactError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace extravar
