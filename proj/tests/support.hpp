#pragma once

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "desco/volume.hpp"

namespace desco::test {

/// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag)
    {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("desco_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline Dims random_dims(std::mt19937_64& rng, int lo, int hi)
{
    std::uniform_int_distribution<int> e(lo, hi);
    return {e(rng), e(rng), e(rng)};
}

/// Random binary mask; `density` is the foreground probability per voxel.
inline LabelGrid random_mask(std::mt19937_64& rng, const Dims& dims, double density)
{
    std::bernoulli_distribution fg(density);
    LabelGrid g(dims);
    for (std::size_t i = 0; i < g.size(); ++i)
        g[i] = fg(rng) ? 1 : 0;
    return g;
}

/// Axis-aligned box [lo, hi) filled with ones.
inline LabelGrid box_mask(const Dims& dims, Index3 lo, Index3 hi)
{
    LabelGrid g(dims);
    for (int z = lo.z; z < hi.z; ++z)
        for (int y = lo.y; y < hi.y; ++y)
            for (int x = lo.x; x < hi.x; ++x)
                g(x, y, z) = 1;
    return g;
}

inline Grid3<float> random_field(std::mt19937_64& rng, const Dims& dims)
{
    std::normal_distribution<float> n(0.0f, 1.0f);
    Grid3<float> g(dims);
    for (std::size_t i = 0; i < g.size(); ++i)
        g[i] = n(rng);
    return g;
}

inline bool regen_golden()
{
    const char* v = std::getenv("DESCO_REGEN_GOLDEN");
    return v && std::string(v) == "1";
}

inline std::filesystem::path golden_dir()
{
    return DESCO_GOLDEN_DIR;
}

} // namespace desco::test
