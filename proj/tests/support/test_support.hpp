#pragma once

// Shared helpers for the unit and acceptance tests: fixture paths, random
// scene graph generation and brute-force reference implementations.

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "sadforge/gateway.hpp"
#include "sadforge/mock_provider.hpp"
#include "sadforge/scenario.hpp"
#include "sadforge/sgl.hpp"
#include "sadforge/util.hpp"

namespace sadforge::testing {

inline std::filesystem::path fixture(const std::string& rel) {
  return std::filesystem::path(SADFORGE_FIXTURE_DIR) / rel;
}

inline std::filesystem::path source(const std::string& rel) {
  return std::filesystem::path(SADFORGE_SOURCE_DIR) / rel;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    auto base = std::filesystem::temp_directory_path();
    for (;;) {
      path_ = base / ("sadforge-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
      if (std::filesystem::create_directories(path_)) break;
    }
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string random_token(util::SplitMix64& rng) {
  static const std::string alphabet = "abcdefghijklmnopqrstuvwxyz0123456789_";
  std::string out;
  std::size_t len = 1 + rng.below(8);
  for (std::size_t i = 0; i < len; ++i) out.push_back(alphabet[rng.below(alphabet.size())]);
  // Hyphens and non-ASCII bytes are legal token characters too.
  if (rng.below(6) == 0) out += "-" + std::string(1, alphabet[rng.below(26)]);
  if (rng.below(20) == 0) out += "\xc3\xa9";
  return out;
}

/// Valid graph with up to `max_objects` objects and `max_relations`
/// relations. Ids are sparse and drawn from a small range so that relation
/// and object ids overlap.
inline sgl::SceneGraph random_graph(util::SplitMix64& rng, std::size_t max_objects = 50,
                                    std::size_t max_relations = 100) {
  std::size_t n_objects = rng.below(max_objects + 1);
  std::set<sgl::ObjectId> ids;
  while (ids.size() < n_objects) ids.insert(rng.below(4 * max_objects + 1));
  std::vector<sgl::ObjectNode> objects;
  for (auto id : ids) {
    sgl::ObjectNode obj{random_token(rng), id, {}};
    std::set<std::string> seen;
    for (std::size_t a = rng.below(4); a > 0; --a) {
      auto token = random_token(rng);
      if (seen.insert(token).second) obj.attributes.push_back(token);
    }
    objects.push_back(std::move(obj));
  }
  std::vector<sgl::Relation> relations;
  if (objects.size() >= 2) {
    std::size_t n_rel = rng.below(max_relations + 1);
    std::set<sgl::RelationId> rel_ids;
    while (rel_ids.size() < n_rel) rel_ids.insert(rng.below(3 * max_relations + 1));
    for (auto rid : rel_ids) {
      const auto& s = objects[rng.below(objects.size())];
      const sgl::ObjectNode* o = &s;
      while (o->id == s.id) o = &objects[rng.below(objects.size())];
      relations.push_back({rid, s.label, s.id, random_token(rng), o->label, o->id});
    }
  }
  return sgl::build_graph(std::move(objects), std::move(relations));
}

inline std::set<sgl::ObjectId> random_subset(util::SplitMix64& rng, const sgl::SceneGraph& g) {
  std::set<sgl::ObjectId> keep;
  for (const auto& obj : g.objects) {
    if (rng.below(2) == 0) keep.insert(obj.id);
  }
  return keep;
}

/// Reference prune: scans every object and relation independently.
inline sgl::SceneGraph brute_force_prune(const sgl::SceneGraph& g, const std::set<sgl::ObjectId>& keep) {
  sgl::SceneGraph out;
  for (const auto& obj : g.objects) {
    if (keep.count(obj.id) == 1) out.objects.push_back(obj);
  }
  for (const auto& rel : g.relations) {
    if (keep.count(rel.subject_id) == 1 && keep.count(rel.object_id) == 1) out.relations.push_back(rel);
  }
  return out;
}

/// Reference diversity selection: every k-subset as a bitmask, cosine from
/// scratch, lowest sum wins, lexicographically smallest index list on ties.
inline std::vector<std::size_t> brute_force_diverse(const std::vector<std::vector<double>>& v, std::size_t k) {
  const std::size_t n = v.size();
  auto cosine = [](const std::vector<double>& a, const std::vector<double>& b) {
    long double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      dot += static_cast<long double>(a[i]) * b[i];
      na += static_cast<long double>(a[i]) * a[i];
      nb += static_cast<long double>(b[i]) * b[i];
    }
    return static_cast<double>(dot / (std::sqrt(na) * std::sqrt(nb)));
  };
  struct Candidate {
    double score;
    std::vector<std::size_t> indices;
  };
  std::vector<Candidate> all;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != k) continue;
    Candidate c{0.0, {}};
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (1u << i)) c.indices.push_back(i);
    }
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = a + 1; b < k; ++b) c.score += cosine(v[c.indices[a]], v[c.indices[b]]);
    }
    all.push_back(std::move(c));
  }
  double best = all.front().score;
  for (const auto& c : all) best = std::min(best, c.score);
  std::vector<std::size_t> winner;
  for (const auto& c : all) {
    if (c.score <= best + 1e-12 && (winner.empty() || c.indices < winner)) winner = c.indices;
  }
  return winner;
}

/// Gateway over a cassette with instant retries and byte-stable transcripts.
struct MockRig {
  std::shared_ptr<llm::MockProvider> provider;
  std::shared_ptr<llm::Gateway> gateway;
};

inline MockRig mock_rig(const nlohmann::json& cassette, llm::EndpointProfile profile = {}) {
  MockRig rig;
  rig.provider = std::make_shared<llm::MockProvider>(cassette);
  llm::GatewayOptions options;
  options.profile = profile;
  options.record_latency = false;
  options.sleep = [](std::chrono::milliseconds) {};
  rig.gateway = std::make_shared<llm::Gateway>(rig.provider, std::make_shared<llm::HashedEmbeddingProvider>(), options);
  return rig;
}

inline nlohmann::json load_json(const std::filesystem::path& path) { return nlohmann::json::parse(util::read_file(path)); }

}  // namespace sadforge::testing
