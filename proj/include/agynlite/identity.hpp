#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "agynlite/clock.hpp"
#include "agynlite/crypto.hpp"
#include "agynlite/events.hpp"
#include "agynlite/store.hpp"

namespace agynlite::identity {

enum class IdentityClass {
    // Per agent instance: minted at spawn, deleted on stop.
    EphemeralWorkload,
    // Per service pod: self-enrolled, kept alive by renewing a lease.
    EphemeralService,
    // Runner/app/device: provisioned with the platform service token.
    Persistent,
};

std::string_view to_string(IdentityClass c);
std::optional<IdentityClass> class_from_string(std::string_view s);

using Attributes = std::map<std::string, std::string>;

struct Identity {
    std::string identity_id;
    IdentityClass identity_class = IdentityClass::EphemeralWorkload;
    std::string subject;
    Attributes attributes;
    std::string credential;
    Millis created_ts{0};
    // Set iff identity_class == EphemeralService.
    std::string lease_id;
};

struct Lease {
    std::string lease_id;
    std::string identity_id;
    Millis expires_ts{0};
    std::int64_t ttl_s = 0;
};

inline constexpr std::int64_t kDefaultServiceTtlS = 30;

// Overlay identity provider. Credentials are signed tokens:
//   base64url(canonical body) "." base64url(ed25519 signature)
// where the body is the sorted-key JSON of id, class, subject, attrs and
// created_ts. A credential verifies only while its identity exists and is
// not on the revocation list.
class IdentityProvider {
public:
    IdentityProvider(store::Store& store, events::Bus& bus, const Clock& clock,
                     const crypto::Key& signing_seed, std::string provisioning_token);

    // Errors: DuplicateIdentity while the instance still holds one.
    Identity mint_workload_identity(std::string_view instance_id, std::string_view agent_id,
                                    std::string_view thread_id);
    // Errors: NotFound.
    void delete_identity(std::string_view identity_id);

    std::pair<Identity, Lease> enroll_service_identity(std::string_view service_name,
                                                       std::int64_t ttl_s, Millis now);
    // Never moves expiry backwards. Errors: LeaseGone once collected.
    Millis renew_lease(std::string_view lease_id, Millis now);
    // Deletes service identities whose lease expired strictly before now.
    std::vector<std::string> gc_sweep(Millis now);

    // Idempotent per name. Errors: BadToken.
    Identity provision_persistent(std::string_view name, std::string_view service_token);

    std::optional<Identity> verify(std::string_view credential) const;
    std::optional<Identity> find(std::string_view identity_id) const;
    std::optional<Identity> find_by_subject(IdentityClass c, std::string_view subject) const;
    std::optional<Lease> find_lease(std::string_view lease_id) const;
    std::vector<Identity> list() const;
    bool revoked(std::string_view identity_id) const;

private:
    Identity issue(IdentityClass c, std::string_view subject, Attributes attrs, Millis created,
                   std::string lease_id);
    void save(const Identity& id);

    store::Store& store_;
    events::Bus& bus_;
    const Clock& clock_;
    crypto::Signer signer_;
    std::string provisioning_token_;
};

} // namespace agynlite::identity
