#pragma once

// Loads source scan catalogs into scene graphs, one per scan.
//
// Neutral catalog schema:
//   objects:   {"scans":[{"scan":"<id>","objects":[{"id":1,"label":"chair","attributes":["wooden"]}]}]}
//   relations: {"scans":[{"scan":"<id>","relationships":[[<subj_id>,<obj_id>,<rel_id>,"<predicate>"]]}]}
//
// `adapt_3dssg` converts the 3DSSG objects.json / relationships.json layout
// into the neutral one.

#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sadforge/error.hpp"
#include "sadforge/sgl.hpp"

namespace sadforge::ingest {

enum class ErrorKind { Schema, DuplicateScanId, DuplicateObjectId };

class IngestError : public Error {
 public:
  IngestError(ErrorKind kind, std::string message);
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ScanRecord {
  std::string scan_id;
  sgl::SceneGraph graph;
  /// relations_in_source, relations_kept, relations_dropped, object_count, ...
  nlohmann::json source_meta = nlohmann::json::object();
};

struct CatalogStats {
  std::size_t scan_count = 0;
  std::size_t distinct_object_classes = 0;
  std::size_t distinct_attributes = 0;
  std::size_t distinct_relation_predicates = 0;
  std::size_t object_occurrences = 0;
  std::size_t attribute_occurrences = 0;
  std::size_t relation_occurrences = 0;
};

/// One record per scan, sorted by scan id. Relations whose endpoints are
/// missing from their scan, or that relate an object to itself, are dropped
/// with a warning and counted in `source_meta`.
std::vector<ScanRecord> load_catalog(const nlohmann::json& objects_source,
                                     const nlohmann::json& relations_source);

CatalogStats catalog_stats(const std::vector<ScanRecord>& records);

nlohmann::json to_json(const CatalogStats& stats);

struct NeutralCatalog {
  nlohmann::json objects;
  nlohmann::json relations;
};

/// 3DSSG stores object ids as strings and attributes as a map of category to
/// value list; the adapter flattens attributes in category order.
NeutralCatalog adapt_3dssg(const nlohmann::json& objects_3dssg, const nlohmann::json& relationships_3dssg);

}  // namespace sadforge::ingest
