#include "agynlite/identity.hpp"

#include <nlohmann/json.hpp>

#include "agynlite/error.hpp"

namespace agynlite::identity {

using nlohmann::json;

namespace {

std::string identity_key(std::string_view id) { return "identity/" + std::string(id); }
std::string revoked_key(std::string_view id) { return "revoked/" + std::string(id); }
std::string lease_key(std::string_view id) { return "lease/" + std::string(id); }

std::string subject_key(IdentityClass c, std::string_view subject) {
    return "idsubj/" + std::string(to_string(c)) + "/" + std::string(subject);
}

json identity_json(const Identity& id) {
    return json{{"identity_id", id.identity_id},
                {"class", to_string(id.identity_class)},
                {"subject", id.subject},
                {"attributes", id.attributes},
                {"credential", id.credential},
                {"created_ts", id.created_ts.count()},
                {"lease_id", id.lease_id}};
}

Identity identity_from_json(const json& doc) {
    Identity id;
    id.identity_id = doc.at("identity_id").get<std::string>();
    id.identity_class = *class_from_string(doc.at("class").get<std::string>());
    id.subject = doc.at("subject").get<std::string>();
    id.attributes = doc.at("attributes").get<Attributes>();
    id.credential = doc.at("credential").get<std::string>();
    id.created_ts = Millis{doc.at("created_ts").get<std::int64_t>()};
    id.lease_id = doc.at("lease_id").get<std::string>();
    return id;
}

json lease_json(const Lease& l) {
    return json{{"lease_id", l.lease_id},
                {"identity_id", l.identity_id},
                {"expires_ts", l.expires_ts.count()},
                {"ttl_s", l.ttl_s}};
}

Lease lease_from_json(const json& doc) {
    return Lease{doc.at("lease_id").get<std::string>(), doc.at("identity_id").get<std::string>(),
                 Millis{doc.at("expires_ts").get<std::int64_t>()},
                 doc.at("ttl_s").get<std::int64_t>()};
}

} // namespace

std::string_view to_string(IdentityClass c) {
    switch (c) {
    case IdentityClass::EphemeralWorkload: return "EphemeralWorkload";
    case IdentityClass::EphemeralService: return "EphemeralService";
    case IdentityClass::Persistent: return "Persistent";
    }
    return "";
}

std::optional<IdentityClass> class_from_string(std::string_view s) {
    for (auto c : {IdentityClass::EphemeralWorkload, IdentityClass::EphemeralService,
                   IdentityClass::Persistent}) {
        if (to_string(c) == s) {
            return c;
        }
    }
    return std::nullopt;
}

IdentityProvider::IdentityProvider(store::Store& store, events::Bus& bus, const Clock& clock,
                                   const crypto::Key& signing_seed,
                                   std::string provisioning_token)
    : store_(store),
      bus_(bus),
      clock_(clock),
      signer_(signing_seed),
      provisioning_token_(std::move(provisioning_token)) {}

Identity IdentityProvider::issue(IdentityClass c, std::string_view subject, Attributes attrs,
                                 Millis created, std::string lease_id) {
    Identity id;
    id.identity_id = crypto::random_id("id");
    id.identity_class = c;
    id.subject = std::string(subject);
    id.attributes = std::move(attrs);
    id.created_ts = created;
    id.lease_id = std::move(lease_id);
    json body{{"id", id.identity_id},
              {"class", to_string(c)},
              {"subject", id.subject},
              {"attrs", id.attributes},
              {"created_ts", created.count()}};
    auto canonical = body.dump();
    id.credential = crypto::base64url_encode(canonical) + "." +
                    crypto::base64url_encode(signer_.sign(canonical));
    return id;
}

void IdentityProvider::save(const Identity& id) {
    store_.put(identity_key(id.identity_id), identity_json(id).dump(), 0);
    bus_.publish(events::kIdentityChange, json{{"identity_id", id.identity_id},
                                               {"class", to_string(id.identity_class)},
                                               {"subject", id.subject},
                                               {"change", "created"}});
}

Identity IdentityProvider::mint_workload_identity(std::string_view instance_id,
                                                  std::string_view agent_id,
                                                  std::string_view thread_id) {
    auto id = issue(IdentityClass::EphemeralWorkload, instance_id,
                    Attributes{{"agent_id", std::string(agent_id)},
                               {"thread_id", std::string(thread_id)}},
                    clock_.now(), {});
    try {
        store_.put(subject_key(id.identity_class, instance_id), id.identity_id, 0);
    } catch (const Error& e) {
        if (e.code() == Errc::VersionConflict) {
            fail(Errc::DuplicateIdentity,
                 "instance '" + std::string(instance_id) + "' already has an identity");
        }
        throw;
    }
    save(id);
    return id;
}

void IdentityProvider::delete_identity(std::string_view identity_id) {
    auto rec = store_.get(identity_key(identity_id));
    if (!rec) {
        fail(Errc::NotFound, "identity '" + std::string(identity_id) + "' not found");
    }
    auto id = identity_from_json(json::parse(rec->value));
    // Revoke first so the credential is dead before the record disappears.
    store_.put(revoked_key(identity_id), "");
    try {
        store_.remove(rec->key, rec->version);
    } catch (const Error& e) {
        if (e.code() == Errc::NotFound) {
            fail(Errc::NotFound, "identity '" + std::string(identity_id) + "' not found");
        }
        throw;
    }
    if (auto idx = store_.get(subject_key(id.identity_class, id.subject));
        idx && idx->value == id.identity_id) {
        try {
            store_.remove(idx->key, idx->version);
        } catch (const Error&) {
        }
    }
    if (!id.lease_id.empty()) {
        if (auto lease = store_.get(lease_key(id.lease_id))) {
            try {
                store_.remove(lease->key, lease->version);
            } catch (const Error&) {
            }
        }
    }
    bus_.publish(events::kIdentityChange, json{{"identity_id", id.identity_id},
                                               {"class", to_string(id.identity_class)},
                                               {"subject", id.subject},
                                               {"change", "deleted"}});
}

std::pair<Identity, Lease> IdentityProvider::enroll_service_identity(std::string_view service_name,
                                                                     std::int64_t ttl_s,
                                                                     Millis now) {
    if (ttl_s <= 0) {
        fail(Errc::InvalidArgument, "lease ttl must be positive");
    }
    Lease lease{crypto::random_id("lease"), {}, now + std::chrono::seconds(ttl_s), ttl_s};
    auto id = issue(IdentityClass::EphemeralService, service_name,
                    Attributes{{"service", std::string(service_name)}}, now, lease.lease_id);
    lease.identity_id = id.identity_id;
    store_.put(lease_key(lease.lease_id), lease_json(lease).dump(), 0);
    save(id);
    return {id, lease};
}

Millis IdentityProvider::renew_lease(std::string_view lease_id, Millis now) {
    for (;;) {
        auto rec = store_.get(lease_key(lease_id));
        if (!rec) {
            fail(Errc::LeaseGone, "lease '" + std::string(lease_id) + "' was collected");
        }
        auto lease = lease_from_json(json::parse(rec->value));
        lease.expires_ts = std::max(lease.expires_ts, now + std::chrono::seconds(lease.ttl_s));
        try {
            store_.put(rec->key, lease_json(lease).dump(), rec->version);
            return lease.expires_ts;
        } catch (const Error& e) {
            // Lost a race with a renewal or a collection; look again.
            if (e.code() != Errc::VersionConflict) {
                throw;
            }
        }
    }
}

std::vector<std::string> IdentityProvider::gc_sweep(Millis now) {
    std::vector<std::string> collected;
    for (const auto& rec : store_.scan("lease/")) {
        auto lease = lease_from_json(json::parse(rec.value));
        if (lease.expires_ts >= now) {
            continue;
        }
        try {
            store_.remove(rec.key, rec.version);
        } catch (const Error&) {
            // Renewed (or removed) since the scan: the renewal wins.
            continue;
        }
        try {
            delete_identity(lease.identity_id);
            collected.push_back(lease.identity_id);
        } catch (const Error& e) {
            if (e.code() != Errc::NotFound) {
                throw;
            }
        }
    }
    return collected;
}

Identity IdentityProvider::provision_persistent(std::string_view name,
                                                std::string_view service_token) {
    if (provisioning_token_.empty() ||
        !crypto::equal_constant_time(service_token, provisioning_token_)) {
        fail(Errc::BadToken, "provisioning token rejected");
    }
    if (auto existing = find_by_subject(IdentityClass::Persistent, name)) {
        return *existing;
    }
    auto id = issue(IdentityClass::Persistent, name, Attributes{{"name", std::string(name)}},
                    clock_.now(), {});
    try {
        store_.put(subject_key(id.identity_class, name), id.identity_id, 0);
    } catch (const Error& e) {
        if (e.code() == Errc::VersionConflict) {
            if (auto existing = find_by_subject(IdentityClass::Persistent, name)) {
                return *existing;
            }
        }
        throw;
    }
    save(id);
    return id;
}

std::optional<Identity> IdentityProvider::verify(std::string_view credential) const {
    auto dot = credential.find('.');
    if (dot == std::string_view::npos || credential.find('.', dot + 1) != std::string_view::npos) {
        return std::nullopt;
    }
    auto body = crypto::base64url_decode(credential.substr(0, dot));
    auto sig = crypto::base64url_decode(credential.substr(dot + 1));
    if (!body || !sig || !signer_.verify(*body, *sig)) {
        return std::nullopt;
    }
    auto doc = json::parse(*body, nullptr, false);
    if (!doc.is_object() || !doc.contains("id") || !doc["id"].is_string()) {
        return std::nullopt;
    }
    auto id_str = doc["id"].get<std::string>();
    if (revoked(id_str)) {
        return std::nullopt;
    }
    auto id = find(id_str);
    if (!id || !crypto::equal_constant_time(id->credential, credential)) {
        return std::nullopt;
    }
    return id;
}

std::optional<Identity> IdentityProvider::find(std::string_view identity_id) const {
    auto rec = store_.get(identity_key(identity_id));
    if (!rec) {
        return std::nullopt;
    }
    return identity_from_json(json::parse(rec->value));
}

std::optional<Identity> IdentityProvider::find_by_subject(IdentityClass c,
                                                          std::string_view subject) const {
    auto idx = store_.get(subject_key(c, subject));
    if (!idx) {
        return std::nullopt;
    }
    return find(idx->value);
}

std::optional<Lease> IdentityProvider::find_lease(std::string_view lease_id) const {
    auto rec = store_.get(lease_key(lease_id));
    if (!rec) {
        return std::nullopt;
    }
    return lease_from_json(json::parse(rec->value));
}

std::vector<Identity> IdentityProvider::list() const {
    std::vector<Identity> out;
    for (const auto& rec : store_.scan("identity/")) {
        out.push_back(identity_from_json(json::parse(rec.value)));
    }
    return out;
}

bool IdentityProvider::revoked(std::string_view identity_id) const {
    return store_.get(revoked_key(identity_id)).has_value();
}

} // namespace agynlite::identity
