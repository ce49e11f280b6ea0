#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "semtok/log.hpp"
#include "semtok/rng.hpp"
#include "semtok/types.hpp"

namespace semtok::testing {

// Collects warnings for the lifetime of the object.
class WarningCapture {
 public:
  WarningCapture() {
    previous_ = set_warning_sink([this](const std::string& m) { messages.push_back(m); });
  }
  ~WarningCapture() { set_warning_sink(std::move(previous_)); }
  std::vector<std::string> messages;

 private:
  WarningSink previous_;
};

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("semtok_" + name)) {
    std::filesystem::remove_all(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }
  std::string str() const { return path_.string(); }

 private:
  std::filesystem::path path_;
};

inline std::vector<TokenColumn> random_columns(std::size_t n, int n_q, int c, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<TokenColumn> out(n);
  for (std::size_t f = 0; f < n; ++f) {
    out[f].frame_index = static_cast<std::uint32_t>(f);
    for (int d = 0; d < n_q; ++d) out[f].tokens.push_back(static_cast<Token>(rng.below(c)));
  }
  return out;
}

}  // namespace semtok::testing
