#include "agynlite/authz.hpp"

#include <mutex>

#include <nlohmann/json.hpp>

#include "agynlite/crypto.hpp"
#include "agynlite/error.hpp"

namespace agynlite::authz {

using nlohmann::json;

namespace {

[[noreturn]] void violation(const std::string& msg) { fail(Errc::SchemaViolation, msg); }

struct Userset {
    std::string object;
    std::string relation;
};

std::optional<Userset> as_userset(std::string_view subject) {
    auto hash = subject.find('#');
    if (hash == std::string_view::npos) {
        return std::nullopt;
    }
    return Userset{std::string(subject.substr(0, hash)), std::string(subject.substr(hash + 1))};
}

bool well_formed_object(std::string_view object) {
    auto colon = object.find(':');
    return colon != std::string_view::npos && colon > 0 && colon + 1 < object.size() &&
           object.find('#') == std::string_view::npos && object.find('@') == std::string_view::npos;
}

std::string policy_key(std::string_view id) { return "policy/" + std::string(id); }

json policy_json(const DialPolicy& p) {
    return json{{"policy_id", p.policy_id}, {"selector", p.selector}, {"services", p.services}};
}

DialPolicy policy_from_json(const json& doc) {
    DialPolicy p;
    p.policy_id = doc.at("policy_id").get<std::string>();
    p.selector = doc.at("selector").get<std::map<std::string, std::string>>();
    p.services = doc.at("services").get<std::set<std::string>>();
    return p;
}

} // namespace

std::string RelationTuple::to_string() const { return object + "#" + relation + "@" + subject; }

RelationTuple RelationTuple::parse(std::string_view text) {
    auto hash = text.find('#');
    auto at = hash == std::string_view::npos ? std::string_view::npos : text.find('@', hash);
    if (hash == std::string_view::npos || at == std::string_view::npos || hash == 0 ||
        at == hash + 1 || at + 1 == text.size()) {
        violation("malformed tuple '" + std::string(text) + "', want object#relation@subject");
    }
    RelationTuple t{std::string(text.substr(0, hash)),
                    std::string(text.substr(hash + 1, at - hash - 1)),
                    std::string(text.substr(at + 1))};
    validate_tuple(t);
    return t;
}

namespace schema {

bool has_type(std::string_view type) { return type == "agent" || type == "thread"; }

bool has_relation(std::string_view type, std::string_view relation) {
    if (type == "agent") {
        return relation == "owner" || relation == "maintainer" || relation == "participant";
    }
    if (type == "thread") {
        return relation == "participant";
    }
    return false;
}

std::optional<std::string> resolve(std::string_view type, std::string_view permission) {
    if (has_relation(type, permission)) {
        return std::string(permission);
    }
    if (type == "agent") {
        if (permission == "configure") return "maintainer";
        if (permission == "delete") return "owner";
        if (permission == "create_thread") return "participant";
    } else if (type == "thread") {
        if (permission == "read" || permission == "post") return "participant";
    }
    return std::nullopt;
}

std::vector<std::string> implied_by(std::string_view type, std::string_view relation) {
    if (type == "agent") {
        if (relation == "maintainer") return {"owner"};
        if (relation == "participant") return {"maintainer"};
    }
    return {};
}

} // namespace schema

std::string_view type_of(std::string_view object) {
    auto colon = object.find(':');
    return colon == std::string_view::npos ? std::string_view{} : object.substr(0, colon);
}

void validate_tuple(const RelationTuple& t) {
    if (!well_formed_object(t.object) || !schema::has_type(type_of(t.object))) {
        violation("unknown object '" + t.object + "'");
    }
    if (!schema::has_relation(type_of(t.object), t.relation)) {
        violation("relation '" + t.relation + "' is not declared for type '" +
                  std::string(type_of(t.object)) + "'");
    }
    if (auto us = as_userset(t.subject)) {
        if (!well_formed_object(us->object) ||
            !schema::has_relation(type_of(us->object), us->relation)) {
            violation("invalid userset subject '" + t.subject + "'");
        }
        return;
    }
    auto type = type_of(t.subject);
    if (!well_formed_object(t.subject) || (type != "user" && type != "agent")) {
        violation("invalid subject '" + t.subject + "'");
    }
}

bool TupleSet::add(const RelationTuple& t) {
    bool inserted = index_[{t.object, t.relation}].insert(t.subject).second;
    size_ += inserted ? 1 : 0;
    return inserted;
}

bool TupleSet::erase(const RelationTuple& t) {
    auto it = index_.find({t.object, t.relation});
    if (it == index_.end() || it->second.erase(t.subject) == 0) {
        return false;
    }
    if (it->second.empty()) {
        index_.erase(it);
    }
    --size_;
    return true;
}

bool TupleSet::contains(const RelationTuple& t) const {
    auto* s = subjects(t.object, t.relation);
    return s != nullptr && s->count(t.subject) != 0;
}

std::vector<RelationTuple> TupleSet::all() const {
    std::vector<RelationTuple> out;
    for (const auto& [node, subs] : index_) {
        for (const auto& s : subs) {
            out.push_back(RelationTuple{node.first, node.second, s});
        }
    }
    return out;
}

const std::set<std::string>* TupleSet::subjects(const std::string& object,
                                                const std::string& relation) const {
    auto it = index_.find({object, relation});
    return it == index_.end() ? nullptr : &it->second;
}

bool check(const TupleSet& tuples, std::string_view object, std::string_view permission,
           std::string_view subject, int depth_limit) {
    auto type = type_of(object);
    if (!well_formed_object(object) || !schema::has_type(type)) {
        violation("unknown object '" + std::string(object) + "'");
    }
    auto relation = schema::resolve(type, permission);
    if (!relation) {
        violation("'" + std::string(permission) + "' is neither a relation nor a permission on '" +
                  std::string(type) + "'");
    }

    using Node = std::pair<std::string, std::string>;
    std::set<Node> visited;
    std::vector<Node> frontier{{std::string(object), *relation}};

    for (int depth = 0; !frontier.empty(); ++depth) {
        std::vector<Node> level;
        for (auto& n : frontier) {
            if (visited.count(n) == 0) {
                level.push_back(std::move(n));
            }
        }
        if (level.empty()) {
            break;
        }
        if (depth > depth_limit) {
            fail(Errc::DepthExceeded, "userset expansion deeper than " +
                                          std::to_string(depth_limit) + " checking " +
                                          std::string(object) + "#" + *relation);
        }
        std::vector<Node> next;
        // Computed relations stay at the current depth.
        while (!level.empty()) {
            auto node = std::move(level.back());
            level.pop_back();
            if (!visited.insert(node).second) {
                continue;
            }
            for (auto& implied : schema::implied_by(type_of(node.first), node.second)) {
                level.emplace_back(node.first, std::move(implied));
            }
            const auto* subs = tuples.subjects(node.first, node.second);
            if (subs == nullptr) {
                continue;
            }
            for (const auto& s : *subs) {
                if (s == subject) {
                    return true;
                }
                if (auto us = as_userset(s)) {
                    next.emplace_back(std::move(us->object), std::move(us->relation));
                }
            }
        }
        frontier = std::move(next);
    }
    return false;
}

bool selector_matches(const DialPolicy& p, const identity::Attributes& attrs) {
    for (const auto& [k, v] : p.selector) {
        auto it = attrs.find(k);
        if (it == attrs.end() || it->second != v) {
            return false;
        }
    }
    return true;
}

// glibc's rwlock favours readers, so a steady stream of checks could starve
// tuple writes. Writers hold the turnstile while they wait, which holds back
// new readers until the write is through.
std::shared_lock<std::shared_mutex> Authz::read_lock() const {
    { std::lock_guard gate(turnstile_); }
    return std::shared_lock(mutex_);
}

std::unique_lock<std::shared_mutex> Authz::write_lock() const {
    std::lock_guard gate(turnstile_);
    return std::unique_lock(mutex_);
}

Authz::Authz(store::Store& store) : store_(store) {
    for (const auto& rec : store_.scan("tuple/")) {
        tuples_.add(RelationTuple::parse(std::string_view(rec.key).substr(6)));
    }
    for (const auto& rec : store_.scan("policy/")) {
        auto p = policy_from_json(json::parse(rec.value));
        policies_[p.policy_id] = std::move(p);
    }
}

void Authz::write_tuple(const RelationTuple& t) {
    validate_tuple(t);
    auto lock = write_lock();
    store_.put("tuple/" + t.to_string(), "");
    tuples_.add(t);
}

void Authz::delete_tuple(const RelationTuple& t) {
    validate_tuple(t);
    auto lock = write_lock();
    auto key = "tuple/" + t.to_string();
    if (auto rec = store_.get(key)) {
        store_.remove(key, rec->version);
    }
    tuples_.erase(t);
}

bool Authz::check(std::string_view object, std::string_view permission, std::string_view subject,
                  int depth_limit) const {
    auto lock = read_lock();
    return authz::check(tuples_, object, permission, subject, depth_limit);
}

std::vector<RelationTuple> Authz::tuples() const {
    auto lock = read_lock();
    return tuples_.all();
}

std::vector<RelationTuple> Authz::grant_defaults_on_thread_create(std::string_view thread_id,
                                                                  std::string_view creator,
                                                                  std::string_view agent_id) {
    std::string object = "thread:" + std::string(thread_id);
    std::vector<RelationTuple> granted{
        {object, "participant", std::string(creator)},
        {object, "participant", "agent:" + std::string(agent_id)},
    };
    for (const auto& t : granted) {
        write_tuple(t);
    }
    return granted;
}

std::string Authz::put_policy(DialPolicy policy) {
    if (policy.selector.empty()) {
        fail(Errc::ValidationError, "dial policy selector needs at least one attribute term");
    }
    if (policy.services.empty()) {
        fail(Errc::ValidationError, "dial policy must name at least one service");
    }
    if (policy.policy_id.empty()) {
        policy.policy_id = crypto::random_id("pol");
    }
    auto lock = write_lock();
    store_.put(policy_key(policy.policy_id), policy_json(policy).dump());
    auto id = policy.policy_id;
    policies_[id] = std::move(policy);
    return id;
}

void Authz::delete_policy(std::string_view policy_id) {
    auto lock = write_lock();
    auto rec = store_.get(policy_key(policy_id));
    if (!rec) {
        fail(Errc::NotFound, "policy '" + std::string(policy_id) + "' not found");
    }
    store_.remove(rec->key, rec->version);
    policies_.erase(std::string(policy_id));
}

std::vector<DialPolicy> Authz::policies() const {
    auto lock = read_lock();
    std::vector<DialPolicy> out;
    for (const auto& [_, p] : policies_) {
        out.push_back(p);
    }
    return out;
}

bool Authz::dial_allowed(const identity::Identity& identity, std::string_view service) const {
    auto lock = read_lock();
    for (const auto& [_, p] : policies_) {
        if (p.services.count(std::string(service)) != 0 &&
            selector_matches(p, identity.attributes)) {
            return true;
        }
    }
    return false;
}

} // namespace agynlite::authz
