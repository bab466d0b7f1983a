#pragma once

#include "tissuegraph/artifacts.hpp"

#include <filesystem>
#include <map>
#include <random>
#include <string>

namespace run_fixtures {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = fs::temp_directory_path() / ("tissuegraph-" + tag + "-" + std::to_string(rd()));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

/// Relative path -> SHA-256 of every regular file below `root`.
inline std::map<std::string, std::string> tree_digest(const fs::path& root) {
    std::map<std::string, std::string> out;
    if (!fs::exists(root)) return out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file())
            out[fs::relative(e.path(), root).generic_string()] = tissuegraph::artifacts::file_digest(e.path());
    return out;
}

/// Files of `tree` whose relative path starts with `prefix`.
inline std::map<std::string, std::string> subtree(const std::map<std::string, std::string>& tree, const std::string& prefix) {
    std::map<std::string, std::string> out;
    for (const auto& [k, v] : tree)
        if (k.rfind(prefix, 0) == 0) out[k] = v;
    return out;
}

} // namespace run_fixtures
