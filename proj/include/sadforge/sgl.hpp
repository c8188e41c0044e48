#pragma once

// Scene Graph Language: the textual encoding of a scene graph.
//
//   obj-<label>-<id>:[<attr>,<attr>,...];
//   rel-<id>:(<label>-<id>,<predicate>,<label>-<id>);
//
// Objects and relations live in independent id spaces. Tokens (labels,
// attributes, predicates) are lowercase and contain no whitespace and none
// of the reserved characters `: ; , [ ] ( )`.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "sadforge/error.hpp"

namespace sadforge::sgl {

using ObjectId = std::uint64_t;
using RelationId = std::uint64_t;

struct ObjectNode {
  std::string label;
  ObjectId id = 0;
  std::vector<std::string> attributes;

  /// `<label>-<id>`, the form used for relation endpoints.
  std::string ref() const;

  friend bool operator==(const ObjectNode&, const ObjectNode&) = default;
};

struct Relation {
  RelationId id = 0;
  std::string subject_label;
  ObjectId subject_id = 0;
  std::string predicate;
  std::string object_label;
  ObjectId object_id = 0;

  friend bool operator==(const Relation&, const Relation&) = default;
};

/// In-memory scene graph. Values produced by `parse_sgl`, `build_graph` and
/// `prune` are valid and keep both vectors sorted by id. A hand-assembled
/// graph may violate invariants; `validate` reports them.
struct SceneGraph {
  std::vector<ObjectNode> objects;
  std::vector<Relation> relations;

  bool empty() const { return objects.empty() && relations.empty(); }
  const ObjectNode* find_object(ObjectId id) const;
  std::vector<ObjectId> object_ids() const;
  /// Number of relations in which the object is subject or object.
  std::size_t degree(ObjectId id) const;

  /// Set equality on objects and relations, independent of vector order.
  friend bool operator==(const SceneGraph& lhs, const SceneGraph& rhs);
};

enum class ErrorKind {
  Syntax,
  DanglingReference,
  DuplicateId,
  SelfRelation,
  MalformedToken,
  UnknownObjectId,
};

std::string_view to_string(ErrorKind kind);

class SglError : public Error {
 public:
  SglError(ErrorKind kind, std::string message, std::optional<std::size_t> position = std::nullopt,
           std::string fragment = {});

  ErrorKind kind() const noexcept { return kind_; }
  /// Byte offset into the parsed text, when the error came from the parser.
  std::optional<std::size_t> position() const noexcept { return position_; }
  const std::string& fragment() const noexcept { return fragment_; }

 private:
  ErrorKind kind_;
  std::optional<std::size_t> position_;
  std::string fragment_;
};

/// Lowercases, trims, and replaces each run of whitespace or reserved
/// characters with a single underscore ("Trash Can" -> "trash_can").
std::string normalize_token(std::string_view raw);

/// True when `token` is non-empty, lowercase, and free of whitespace and
/// reserved characters.
bool is_valid_token(std::string_view token);

/// Assembles a valid graph: normalizes tokens, drops repeated attributes
/// (first kept), sorts by id and checks every invariant. Throws SglError
/// with the first violation found.
SceneGraph build_graph(std::vector<ObjectNode> objects, std::vector<Relation> relations);

/// Parses SGL text. Statement order does not affect the result.
SceneGraph parse_sgl(std::string_view text);

/// Canonical text: objects by id, then relations by id, one space between
/// statements.
std::string serialize_sgl(const SceneGraph& graph);

/// Keeps exactly the objects in `keep_ids` and the relations whose two
/// endpoints are both kept. Unknown ids throw ErrorKind::UnknownObjectId.
SceneGraph prune(const SceneGraph& graph, const std::set<ObjectId>& keep_ids);

enum class ViolationKind {
  DanglingReference,
  DuplicateId,
  SelfRelation,
  MalformedToken,
  DuplicateAttribute,
};

std::string_view to_string(ViolationKind kind);

struct Violation {
  ViolationKind kind;
  std::optional<std::uint64_t> id;
  std::string detail;
};

/// Every invariant violation in `graph`; empty means valid.
std::vector<Violation> validate(const SceneGraph& graph);

}  // namespace sadforge::sgl
