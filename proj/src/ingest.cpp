#include "sadforge/ingest.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <map>
#include <set>

namespace sadforge::ingest {
namespace {

using nlohmann::json;

[[noreturn]] void schema_error(const std::string& what) { throw IngestError(ErrorKind::Schema, what); }

const json& field(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object()) schema_error(fmt::format("{}: expected an object", where));
  auto it = obj.find(key);
  if (it == obj.end()) schema_error(fmt::format("{}: missing field '{}'", where, key));
  return *it;
}

const json& array_field(const json& obj, const char* key, const std::string& where) {
  const json& value = field(obj, key, where);
  if (!value.is_array()) schema_error(fmt::format("{}: field '{}' must be an array", where, key));
  return value;
}

std::string string_field(const json& obj, const char* key, const std::string& where) {
  const json& value = field(obj, key, where);
  if (!value.is_string()) schema_error(fmt::format("{}: field '{}' must be a string", where, key));
  return value.get<std::string>();
}

sgl::ObjectId id_value(const json& value, const std::string& where) {
  if (!value.is_number_integer() || value.get<std::int64_t>() < 0) {
    schema_error(fmt::format("{}: id must be a non-negative integer", where));
  }
  return value.get<sgl::ObjectId>();
}

std::string normalized_or_throw(const std::string& raw, const std::string& where) {
  std::string token = sgl::normalize_token(raw);
  if (token.empty()) schema_error(fmt::format("{}: token '{}' is empty after normalization", where, raw));
  return token;
}

struct PendingScan {
  std::vector<sgl::ObjectNode> objects;
  const json* relationships = nullptr;
};

}  // namespace

IngestError::IngestError(ErrorKind kind, std::string message) : Error(std::move(message)), kind_(kind) {}

std::vector<ScanRecord> load_catalog(const json& objects_source, const json& relations_source) {
  std::map<std::string, PendingScan> scans;

  const json& object_scans = array_field(objects_source, "scans", "objects_source");
  for (std::size_t i = 0; i < object_scans.size(); ++i) {
    const json& entry = object_scans[i];
    std::string where = fmt::format("objects_source.scans[{}]", i);
    std::string scan_id = string_field(entry, "scan", where);
    if (scan_id.empty()) schema_error(where + ": scan id is empty");
    auto [it, inserted] = scans.try_emplace(scan_id);
    if (!inserted) throw IngestError(ErrorKind::DuplicateScanId, fmt::format("duplicate scan id '{}'", scan_id));

    std::set<sgl::ObjectId> ids;
    const json& objects = array_field(entry, "objects", where);
    for (std::size_t j = 0; j < objects.size(); ++j) {
      std::string owhere = fmt::format("{}.objects[{}]", where, j);
      sgl::ObjectNode node;
      node.id = id_value(field(objects[j], "id", owhere), owhere);
      node.label = normalized_or_throw(string_field(objects[j], "label", owhere), owhere);
      for (const json& attr : array_field(objects[j], "attributes", owhere)) {
        if (!attr.is_string()) schema_error(owhere + ": attributes must be strings");
        node.attributes.push_back(normalized_or_throw(attr.get<std::string>(), owhere));
      }
      if (!ids.insert(node.id).second) {
        throw IngestError(ErrorKind::DuplicateObjectId,
                          fmt::format("scan '{}' reuses object id {}", scan_id, node.id));
      }
      it->second.objects.push_back(std::move(node));
    }
  }

  const json& relation_scans = array_field(relations_source, "scans", "relations_source");
  std::set<std::string> seen_relation_scans;
  for (std::size_t i = 0; i < relation_scans.size(); ++i) {
    std::string where = fmt::format("relations_source.scans[{}]", i);
    std::string scan_id = string_field(relation_scans[i], "scan", where);
    auto it = scans.find(scan_id);
    if (it == scans.end()) schema_error(fmt::format("{}: scan '{}' is not in objects_source", where, scan_id));
    if (!seen_relation_scans.insert(scan_id).second) {
      throw IngestError(ErrorKind::DuplicateScanId, fmt::format("duplicate scan id '{}' in relations_source", scan_id));
    }
    it->second.relationships = &array_field(relation_scans[i], "relationships", where);
  }

  std::vector<ScanRecord> records;
  records.reserve(scans.size());
  for (auto& [scan_id, pending] : scans) {
    std::map<sgl::ObjectId, std::string> labels;
    for (const auto& obj : pending.objects) labels.emplace(obj.id, obj.label);

    std::vector<sgl::Relation> relations;
    std::size_t in_source = 0;
    std::size_t dropped = 0;
    if (pending.relationships != nullptr) {
      for (std::size_t j = 0; j < pending.relationships->size(); ++j) {
        const json& row = (*pending.relationships)[j];
        std::string rwhere = fmt::format("relations for scan '{}'[{}]", scan_id, j);
        if (!row.is_array() || row.size() != 4 || !row[3].is_string()) {
          schema_error(rwhere + ": expected [subject_id, object_id, rel_id, predicate]");
        }
        ++in_source;
        sgl::ObjectId subject = id_value(row[0], rwhere);
        sgl::ObjectId object = id_value(row[1], rwhere);
        std::string predicate = normalized_or_throw(row[3].get<std::string>(), rwhere);
        auto s = labels.find(subject);
        auto o = labels.find(object);
        if (s == labels.end() || o == labels.end() || subject == object) {
          spdlog::warn("scan '{}': dropping relation {} ({} -> {}, '{}')", scan_id, j, subject, object, predicate);
          ++dropped;
          continue;
        }
        relations.push_back({relations.size() + 1, s->second, subject, predicate, o->second, object});
      }
    }

    ScanRecord record;
    record.scan_id = scan_id;
    record.source_meta = {
        {"object_count", pending.objects.size()},
        {"relations_in_source", in_source},
        {"relations_kept", relations.size()},
        {"relations_dropped", dropped},
    };
    record.graph = sgl::build_graph(std::move(pending.objects), std::move(relations));
    records.push_back(std::move(record));
  }
  return records;
}

CatalogStats catalog_stats(const std::vector<ScanRecord>& records) {
  CatalogStats stats;
  std::set<std::string> classes;
  std::set<std::string> attributes;
  std::set<std::string> predicates;
  stats.scan_count = records.size();
  for (const auto& record : records) {
    for (const auto& obj : record.graph.objects) {
      classes.insert(obj.label);
      ++stats.object_occurrences;
      for (const auto& attr : obj.attributes) {
        attributes.insert(attr);
        ++stats.attribute_occurrences;
      }
    }
    for (const auto& rel : record.graph.relations) {
      predicates.insert(rel.predicate);
      ++stats.relation_occurrences;
    }
  }
  stats.distinct_object_classes = classes.size();
  stats.distinct_attributes = attributes.size();
  stats.distinct_relation_predicates = predicates.size();
  return stats;
}

json to_json(const CatalogStats& stats) {
  return {
      {"scan_count", stats.scan_count},
      {"distinct_object_classes", stats.distinct_object_classes},
      {"distinct_attributes", stats.distinct_attributes},
      {"distinct_relation_predicates", stats.distinct_relation_predicates},
      {"object_occurrences", stats.object_occurrences},
      {"attribute_occurrences", stats.attribute_occurrences},
      {"relation_occurrences", stats.relation_occurrences},
  };
}

NeutralCatalog adapt_3dssg(const json& objects_3dssg, const json& relationships_3dssg) {
  NeutralCatalog out{{{"scans", json::array()}}, {{"scans", json::array()}}};
  for (const json& scan : array_field(objects_3dssg, "scans", "3dssg objects")) {
    json objects = json::array();
    for (const json& obj : array_field(scan, "objects", "3dssg scan")) {
      const json& raw_id = field(obj, "id", "3dssg object");
      json id = raw_id;
      if (raw_id.is_string()) {
        try {
          id = std::stoull(raw_id.get<std::string>());
        } catch (const std::exception&) {
          schema_error(fmt::format("3dssg object id '{}' is not numeric", raw_id.get<std::string>()));
        }
      }
      json attrs = json::array();
      if (auto it = obj.find("attributes"); it != obj.end()) {
        if (it->is_object()) {
          for (const auto& [category, values] : it->items()) {
            for (const json& v : values) attrs.push_back(v);
          }
        } else if (it->is_array()) {
          attrs = *it;
        }
      }
      objects.push_back({{"id", id}, {"label", field(obj, "label", "3dssg object")}, {"attributes", attrs}});
    }
    out.objects["scans"].push_back({{"scan", field(scan, "scan", "3dssg scan")}, {"objects", objects}});
  }
  for (const json& scan : array_field(relationships_3dssg, "scans", "3dssg relationships")) {
    out.relations["scans"].push_back(
        {{"scan", field(scan, "scan", "3dssg scan")}, {"relationships", array_field(scan, "relationships", "3dssg scan")}});
  }
  return out;
}

}  // namespace sadforge::ingest
