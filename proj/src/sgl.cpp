#include "sadforge/sgl.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <map>
#include <unordered_set>
#include <utility>

namespace sadforge::sgl {
namespace {

constexpr std::string_view kReserved = ":;,[]()";
constexpr std::size_t kFragmentWidth = 24;

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

bool is_reserved(char c) { return kReserved.find(c) != std::string_view::npos; }

bool is_token_char(char c) { return !is_space(c) && !is_reserved(c); }

char ascii_lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), ascii_lower);
  return out;
}

std::vector<std::string> dedupe(std::vector<std::string> items) {
  std::vector<std::string> out;
  out.reserve(items.size());
  std::unordered_set<std::string> seen;
  for (auto& item : items) {
    if (seen.insert(item).second) out.push_back(std::move(item));
  }
  return out;
}

void sort_canonical(SceneGraph& graph) {
  std::stable_sort(graph.objects.begin(), graph.objects.end(),
                   [](const ObjectNode& a, const ObjectNode& b) { return a.id < b.id; });
  std::stable_sort(graph.relations.begin(), graph.relations.end(),
                   [](const Relation& a, const Relation& b) { return a.id < b.id; });
}

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  struct ObjStmt {
    ObjectNode node;
    std::size_t pos;
  };
  struct RelStmt {
    Relation rel;
    std::size_t pos;
  };

  SceneGraph run() {
    skip_ws();
    while (!eof()) {
      std::size_t start = pos_;
      if (text_.substr(pos_).starts_with("obj-")) {
        pos_ += 4;
        objects_.push_back({parse_object(), start});
      } else if (text_.substr(pos_).starts_with("rel-")) {
        pos_ += 4;
        relations_.push_back({parse_relation(), start});
      } else {
        fail("expected 'obj-' or 'rel-'");
      }
      skip_ws();
    }
    return resolve();
  }

 private:
  bool eof() const { return pos_ >= text_.size(); }

  void skip_ws() {
    while (!eof() && is_space(text_[pos_])) ++pos_;
  }

  [[noreturn]] void fail(std::string_view what, std::optional<std::size_t> at = std::nullopt) const {
    std::size_t where = at.value_or(pos_);
    std::string fragment(text_.substr(std::min(where, text_.size()), kFragmentWidth));
    throw SglError(ErrorKind::Syntax, fmt::format("{} at offset {}", what, where), where,
                   std::move(fragment));
  }

  void expect(std::string_view literal) {
    if (!text_.substr(pos_).starts_with(literal)) fail(fmt::format("expected '{}'", literal));
    pos_ += literal.size();
  }

  std::string_view token_run() {
    std::size_t start = pos_;
    while (!eof() && is_token_char(text_[pos_])) ++pos_;
    return text_.substr(start, pos_ - start);
  }

  std::uint64_t to_int(std::string_view digits, std::size_t at) const {
    if (digits.empty() || !std::all_of(digits.begin(), digits.end(),
                                       [](char c) { return c >= '0' && c <= '9'; })) {
      fail("expected decimal id", at);
    }
    std::uint64_t value = 0;
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
    if (ec != std::errc{} || ptr != digits.data() + digits.size()) fail("id out of range", at);
    return value;
  }

  // `<label>-<int>`; the label may itself contain '-', the id follows the last one.
  std::pair<std::string, std::uint64_t> labelled_id() {
    std::size_t start = pos_;
    std::string_view run = token_run();
    std::size_t dash = run.rfind('-');
    if (run.empty() || dash == std::string_view::npos || dash == 0) {
      fail("expected '<label>-<id>'", start);
    }
    return {lowercase(run.substr(0, dash)), to_int(run.substr(dash + 1), start + dash + 1)};
  }

  std::string token(std::string_view what) {
    std::size_t start = pos_;
    std::string_view run = token_run();
    if (run.empty()) fail(fmt::format("expected {}", what), start);
    return lowercase(run);
  }

  ObjectNode parse_object() {
    ObjectNode node;
    std::tie(node.label, node.id) = labelled_id();
    expect(":[");
    std::vector<std::string> attrs;
    if (!eof() && text_[pos_] == ']') {
      ++pos_;
    } else {
      while (true) {
        attrs.push_back(token("attribute"));
        if (!eof() && text_[pos_] == ',') {
          ++pos_;
          continue;
        }
        expect("]");
        break;
      }
    }
    expect(";");
    node.attributes = dedupe(std::move(attrs));
    return node;
  }

  Relation parse_relation() {
    Relation rel;
    std::size_t id_start = pos_;
    std::string_view digits = token_run();
    rel.id = to_int(digits, id_start);
    expect(":(");
    std::tie(rel.subject_label, rel.subject_id) = labelled_id();
    expect(",");
    rel.predicate = token("predicate");
    expect(",");
    std::tie(rel.object_label, rel.object_id) = labelled_id();
    expect(");");
    return rel;
  }

  SceneGraph resolve() {
    std::map<ObjectId, const ObjStmt*> by_id;
    for (const auto& stmt : objects_) {
      if (!by_id.emplace(stmt.node.id, &stmt).second) {
        throw SglError(ErrorKind::DuplicateId, fmt::format("object id {} reused", stmt.node.id),
                       stmt.pos, std::string(text_.substr(stmt.pos, kFragmentWidth)));
      }
    }
    std::unordered_set<RelationId> rel_ids;
    for (const auto& stmt : relations_) {
      const Relation& rel = stmt.rel;
      auto fragment = std::string(text_.substr(stmt.pos, kFragmentWidth));
      if (!rel_ids.insert(rel.id).second) {
        throw SglError(ErrorKind::DuplicateId, fmt::format("relation id {} reused", rel.id), stmt.pos,
                       fragment);
      }
      for (auto [label, id] : {std::pair{&rel.subject_label, rel.subject_id},
                               std::pair{&rel.object_label, rel.object_id}}) {
        auto it = by_id.find(id);
        if (it == by_id.end() || it->second->node.label != *label) {
          throw SglError(ErrorKind::DanglingReference,
                         fmt::format("relation {} references unknown object {}-{}", rel.id, *label, id),
                         stmt.pos, fragment);
        }
      }
      if (rel.subject_id == rel.object_id) {
        throw SglError(ErrorKind::SelfRelation,
                       fmt::format("relation {} relates object {} to itself", rel.id, rel.subject_id),
                       stmt.pos, fragment);
      }
    }
    SceneGraph graph;
    graph.objects.reserve(objects_.size());
    for (auto& stmt : objects_) graph.objects.push_back(std::move(stmt.node));
    graph.relations.reserve(relations_.size());
    for (auto& stmt : relations_) graph.relations.push_back(std::move(stmt.rel));
    sort_canonical(graph);
    return graph;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  std::vector<ObjStmt> objects_;
  std::vector<RelStmt> relations_;
};

}  // namespace

std::string ObjectNode::ref() const { return fmt::format("{}-{}", label, id); }

const ObjectNode* SceneGraph::find_object(ObjectId id) const {
  auto it = std::find_if(objects.begin(), objects.end(), [id](const ObjectNode& o) { return o.id == id; });
  return it == objects.end() ? nullptr : &*it;
}

std::vector<ObjectId> SceneGraph::object_ids() const {
  std::vector<ObjectId> ids;
  ids.reserve(objects.size());
  for (const auto& o : objects) ids.push_back(o.id);
  return ids;
}

std::size_t SceneGraph::degree(ObjectId id) const {
  return static_cast<std::size_t>(std::count_if(relations.begin(), relations.end(), [id](const Relation& r) {
    return r.subject_id == id || r.object_id == id;
  }));
}

bool operator==(const SceneGraph& lhs, const SceneGraph& rhs) {
  if (lhs.objects.size() != rhs.objects.size() || lhs.relations.size() != rhs.relations.size()) {
    return false;
  }
  SceneGraph a = lhs;
  SceneGraph b = rhs;
  sort_canonical(a);
  sort_canonical(b);
  return a.objects == b.objects && a.relations == b.relations;
}

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Syntax: return "SyntaxError";
    case ErrorKind::DanglingReference: return "DanglingReference";
    case ErrorKind::DuplicateId: return "DuplicateId";
    case ErrorKind::SelfRelation: return "SelfRelation";
    case ErrorKind::MalformedToken: return "MalformedToken";
    case ErrorKind::UnknownObjectId: return "UnknownObjectId";
  }
  return "Unknown";
}

SglError::SglError(ErrorKind kind, std::string message, std::optional<std::size_t> position,
                   std::string fragment)
    : Error(fmt::format("{}: {}", to_string(kind), message)),
      kind_(kind),
      position_(position),
      fragment_(std::move(fragment)) {}

std::string normalize_token(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  bool pending_sep = false;
  for (char c : raw) {
    if (is_space(c) || is_reserved(c)) {
      pending_sep = !out.empty();
      continue;
    }
    if (pending_sep) out.push_back('_');
    pending_sep = false;
    out.push_back(ascii_lower(c));
  }
  return out;
}

bool is_valid_token(std::string_view token) {
  return !token.empty() && std::all_of(token.begin(), token.end(), [](char c) {
    return is_token_char(c) && !(c >= 'A' && c <= 'Z');
  });
}

SceneGraph build_graph(std::vector<ObjectNode> objects, std::vector<Relation> relations) {
  SceneGraph graph;
  graph.objects = std::move(objects);
  graph.relations = std::move(relations);
  for (auto& obj : graph.objects) {
    obj.label = normalize_token(obj.label);
    for (auto& attr : obj.attributes) attr = normalize_token(attr);
    obj.attributes = dedupe(std::move(obj.attributes));
  }
  for (auto& rel : graph.relations) {
    rel.subject_label = normalize_token(rel.subject_label);
    rel.object_label = normalize_token(rel.object_label);
    rel.predicate = normalize_token(rel.predicate);
  }
  sort_canonical(graph);
  auto violations = validate(graph);
  if (!violations.empty()) {
    const auto& v = violations.front();
    ErrorKind kind = ErrorKind::MalformedToken;
    switch (v.kind) {
      case ViolationKind::DanglingReference: kind = ErrorKind::DanglingReference; break;
      case ViolationKind::DuplicateId: kind = ErrorKind::DuplicateId; break;
      case ViolationKind::SelfRelation: kind = ErrorKind::SelfRelation; break;
      case ViolationKind::MalformedToken:
      case ViolationKind::DuplicateAttribute: kind = ErrorKind::MalformedToken; break;
    }
    throw SglError(kind, v.detail);
  }
  return graph;
}

SceneGraph parse_sgl(std::string_view text) { return Parser(text).run(); }

std::string serialize_sgl(const SceneGraph& graph) {
  SceneGraph sorted = graph;
  sort_canonical(sorted);
  std::string out;
  auto sep = [&out] {
    if (!out.empty()) out.push_back(' ');
  };
  for (const auto& obj : sorted.objects) {
    sep();
    out += fmt::format("obj-{}-{}:[{}];", obj.label, obj.id, fmt::join(obj.attributes, ","));
  }
  for (const auto& rel : sorted.relations) {
    sep();
    out += fmt::format("rel-{}:({}-{},{},{}-{});", rel.id, rel.subject_label, rel.subject_id, rel.predicate,
                       rel.object_label, rel.object_id);
  }
  return out;
}

SceneGraph prune(const SceneGraph& graph, const std::set<ObjectId>& keep_ids) {
  for (ObjectId id : keep_ids) {
    if (graph.find_object(id) == nullptr) {
      throw SglError(ErrorKind::UnknownObjectId, fmt::format("object id {} is not in the graph", id));
    }
  }
  SceneGraph out;
  std::copy_if(graph.objects.begin(), graph.objects.end(), std::back_inserter(out.objects),
               [&](const ObjectNode& o) { return keep_ids.contains(o.id); });
  std::copy_if(graph.relations.begin(), graph.relations.end(), std::back_inserter(out.relations),
               [&](const Relation& r) { return keep_ids.contains(r.subject_id) && keep_ids.contains(r.object_id); });
  sort_canonical(out);
  return out;
}

std::string_view to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::DanglingReference: return "DanglingReference";
    case ViolationKind::DuplicateId: return "DuplicateId";
    case ViolationKind::SelfRelation: return "SelfRelation";
    case ViolationKind::MalformedToken: return "MalformedToken";
    case ViolationKind::DuplicateAttribute: return "DuplicateAttribute";
  }
  return "Unknown";
}

std::vector<Violation> validate(const SceneGraph& graph) {
  std::vector<Violation> out;
  std::map<ObjectId, std::string> labels;
  for (const auto& obj : graph.objects) {
    if (!labels.emplace(obj.id, obj.label).second) {
      out.push_back({ViolationKind::DuplicateId, obj.id, fmt::format("object id {} appears more than once", obj.id)});
    }
    if (!is_valid_token(obj.label)) {
      out.push_back({ViolationKind::MalformedToken, obj.id, fmt::format("object {} has malformed label '{}'", obj.id, obj.label)});
    }
    std::unordered_set<std::string_view> seen;
    for (const auto& attr : obj.attributes) {
      if (!is_valid_token(attr)) {
        out.push_back({ViolationKind::MalformedToken, obj.id, fmt::format("object {} has malformed attribute '{}'", obj.id, attr)});
      }
      if (!seen.insert(attr).second) {
        out.push_back({ViolationKind::DuplicateAttribute, obj.id, fmt::format("object {} repeats attribute '{}'", obj.id, attr)});
      }
    }
  }
  std::unordered_set<RelationId> rel_ids;
  for (const auto& rel : graph.relations) {
    if (!rel_ids.insert(rel.id).second) {
      out.push_back({ViolationKind::DuplicateId, rel.id, fmt::format("relation id {} appears more than once", rel.id)});
    }
    if (!is_valid_token(rel.predicate)) {
      out.push_back({ViolationKind::MalformedToken, rel.id, fmt::format("relation {} has malformed predicate '{}'", rel.id, rel.predicate)});
    }
    for (auto [label, id] : {std::pair{&rel.subject_label, rel.subject_id}, std::pair{&rel.object_label, rel.object_id}}) {
      auto it = labels.find(id);
      if (it == labels.end() || it->second != *label) {
        out.push_back({ViolationKind::DanglingReference, rel.id,
                       fmt::format("relation {} references unknown object {}-{}", rel.id, *label, id)});
      }
    }
    if (rel.subject_id == rel.object_id) {
      out.push_back({ViolationKind::SelfRelation, rel.id, fmt::format("relation {} relates object {} to itself", rel.id, rel.subject_id)});
    }
  }
  return out;
}

}  // namespace sadforge::sgl
