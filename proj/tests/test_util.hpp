#ifndef CHUNKGEN_TEST_UTIL_HPP
#define CHUNKGEN_TEST_UTIL_HPP

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <string>

namespace testutil {

// Scratch directory removed on destruction.
struct TempDir {
    std::filesystem::path path;

    TempDir() {
        auto base = std::filesystem::temp_directory_path();
        for (int i = 0; i < 10000; ++i) {
            auto p = base / ("chunkgen_test_" + std::to_string(::getpid()) + "_" +
                             std::to_string(counter()++));
            std::error_code ec;
            if (std::filesystem::create_directory(p, ec)) {
                path = p;
                return;
            }
        }
        throw std::runtime_error("could not create temp dir");
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path / name).string(); }

private:
    static int& counter() {
        static int c = 0;
        return c;
    }
};

inline void write_text(const std::string& path, const std::string& content) {
    std::ofstream os(path);
    os << content;
}

}  // namespace testutil

#endif
