#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace sadforge::util {

std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 14695981039346656037ULL);

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

std::string read_file(const std::filesystem::path& path);

/// Writes through a sibling temp file and renames it into place, so readers
/// see either the old content or the new content, never a partial file.
void atomic_write(const std::filesystem::path& path, std::string_view content);

std::vector<std::string_view> split_lines(std::string_view text);
std::string_view trim(std::string_view s);

/// Exclusive advisory lock (flock) on `path`, held for the object's lifetime.
class FileLock {
 public:
  explicit FileLock(const std::filesystem::path& path);
  ~FileLock();
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_ = -1;
};

/// SplitMix64: small, fully specified generator used wherever sample
/// selection must be reproducible bit for bit.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next();
  /// Uniform in [0, bound), bound > 0, by rejection sampling. Unlike
  /// std::uniform_int_distribution the result does not depend on the
  /// standard library.
  std::uint64_t below(std::uint64_t bound);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace sadforge::util
