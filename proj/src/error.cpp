#include "agynlite/error.hpp"

namespace agynlite {

std::string_view errc_name(Errc code) {
    switch (code) {
    case Errc::VersionConflict: return "VersionConflict";
    case Errc::StorageFailure: return "StorageFailure";
    case Errc::NotFound: return "NotFound";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::ValidationError: return "ValidationError";
    case Errc::UnresolvedSecret: return "UnresolvedSecret";
    case Errc::SpawnFailed: return "SpawnFailed";
    case Errc::UnknownInstance: return "UnknownInstance";
    case Errc::WrongState: return "WrongState";
    case Errc::RunnerUnavailable: return "RunnerUnavailable";
    case Errc::VolumeBusy: return "VolumeBusy";
    case Errc::UnknownBehavior: return "UnknownBehavior";
    case Errc::UnknownWorkload: return "UnknownWorkload";
    case Errc::UnknownContainer: return "UnknownContainer";
    case Errc::CrossWorkload: return "CrossWorkload";
    case Errc::DuplicateIdentity: return "DuplicateIdentity";
    case Errc::LeaseGone: return "LeaseGone";
    case Errc::BadToken: return "BadToken";
    case Errc::SchemaViolation: return "SchemaViolation";
    case Errc::DepthExceeded: return "DepthExceeded";
    case Errc::ParseError: return "ParseError";
    case Errc::UnknownModule: return "UnknownModule";
    case Errc::SchemaError: return "SchemaError";
    case Errc::StalePlan: return "StalePlan";
    case Errc::Unauthenticated: return "Unauthenticated";
    case Errc::Forbidden: return "Forbidden";
    }
    return "Unknown";
}

} // namespace agynlite
