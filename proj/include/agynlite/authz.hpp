#pragma once

#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "agynlite/identity.hpp"
#include "agynlite/store.hpp"

namespace agynlite::authz {

inline constexpr int kDefaultDepthLimit = 16;

// object#relation@subject, e.g. agent:a#owner@user:alice or
// thread:t1#participant@agent:a#maintainer (userset subject).
struct RelationTuple {
    std::string object;
    std::string relation;
    std::string subject;

    std::string to_string() const;
    // Errors: SchemaViolation on malformed text.
    static RelationTuple parse(std::string_view text);

    friend auto operator<=>(const RelationTuple&, const RelationTuple&) = default;
};

// The built-in relation schema:
//   agent:  owner, maintainer := direct | owner, participant := direct | maintainer
//   thread: participant := direct
//   permissions: agent.configure -> maintainer, agent.delete -> owner,
//                agent.create_thread -> participant,
//                thread.read -> participant, thread.post -> participant
namespace schema {
bool has_type(std::string_view type);
bool has_relation(std::string_view type, std::string_view relation);
// Relation a permission (or a relation name itself) resolves to.
std::optional<std::string> resolve(std::string_view type, std::string_view permission);
// Relations whose members are implicitly members of `relation`.
std::vector<std::string> implied_by(std::string_view type, std::string_view relation);
} // namespace schema

std::string_view type_of(std::string_view object);
// Errors: SchemaViolation.
void validate_tuple(const RelationTuple& t);

// In-memory tuple graph, indexed by (object, relation).
class TupleSet {
public:
    bool add(const RelationTuple& t);
    bool erase(const RelationTuple& t);
    bool contains(const RelationTuple& t) const;
    std::size_t size() const { return size_; }
    std::vector<RelationTuple> all() const;
    const std::set<std::string>* subjects(const std::string& object,
                                          const std::string& relation) const;

private:
    std::map<std::pair<std::string, std::string>, std::set<std::string>> index_;
    std::size_t size_ = 0;
};

// Graph-traversal check. Breadth-first over (object, relation) nodes:
// computed relations expand in place, userset subjects add one level of
// depth. Visited nodes are never expanded twice, so cycles terminate.
// Errors: SchemaViolation; DepthExceeded when unexplored nodes remain past
// depth_limit.
bool check(const TupleSet& tuples, std::string_view object, std::string_view permission,
           std::string_view subject, int depth_limit = kDefaultDepthLimit);

struct DialPolicy {
    std::string policy_id;
    // Conjunction of attribute == value terms.
    std::map<std::string, std::string> selector;
    std::set<std::string> services;
};

bool selector_matches(const DialPolicy& p, const identity::Attributes& attrs);

// Persisted authorization state: tuples under "tuple/<text>", dial policies
// under "policy/<id>". Reads work on an in-memory copy kept in step with
// every write, so a check sees one consistent tuple set.
class Authz {
public:
    explicit Authz(store::Store& store);

    void write_tuple(const RelationTuple& t);
    void delete_tuple(const RelationTuple& t);
    bool check(std::string_view object, std::string_view permission, std::string_view subject,
               int depth_limit = kDefaultDepthLimit) const;
    std::vector<RelationTuple> tuples() const;

    std::vector<RelationTuple> grant_defaults_on_thread_create(std::string_view thread_id,
                                                               std::string_view creator,
                                                               std::string_view agent_id);

    // Empty policy_id picks one. Returns the id.
    std::string put_policy(DialPolicy policy);
    void delete_policy(std::string_view policy_id);
    std::vector<DialPolicy> policies() const;
    bool dial_allowed(const identity::Identity& identity, std::string_view service) const;

private:
    std::shared_lock<std::shared_mutex> read_lock() const;
    std::unique_lock<std::shared_mutex> write_lock() const;

    store::Store& store_;
    mutable std::mutex turnstile_;
    mutable std::shared_mutex mutex_;
    TupleSet tuples_;
    std::map<std::string, DialPolicy> policies_;
};

} // namespace agynlite::authz
