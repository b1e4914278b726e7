#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace agynlite {

enum class Errc {
    VersionConflict,
    StorageFailure,
    NotFound,
    InvalidArgument,
    ValidationError,
    UnresolvedSecret,
    SpawnFailed,
    UnknownInstance,
    WrongState,
    RunnerUnavailable,
    VolumeBusy,
    UnknownBehavior,
    UnknownWorkload,
    UnknownContainer,
    CrossWorkload,
    DuplicateIdentity,
    LeaseGone,
    BadToken,
    SchemaViolation,
    DepthExceeded,
    ParseError,
    UnknownModule,
    SchemaError,
    StalePlan,
    Unauthenticated,
    Forbidden,
};

std::string_view errc_name(Errc code);

// Every failure surfaced by the platform carries one of the codes above.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) {
    throw Error(code, message);
}

} // namespace agynlite
