#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "desco/synthetic.hpp"
#include "desco/volume_io.hpp"

namespace desco {

/// A synthetic dataset: n_train training volumes (the first n_annotated carry
/// orthogonal annotations) and n_test held-out volumes, all from one phantom
/// template with per-volume seeds derived from `seed`.
struct SynthConfig {
    PhantomSpec phantom;
    int n_train = 20;
    int n_annotated = 3;
    int n_test = 4;
    std::uint64_t seed = 7;
    PlaneAxes axes;

    void validate() const;
    nlohmann::json to_json() const;
    static SynthConfig from_json(const nlohmann::json& j);
    /// Seed of volume `index` (training volumes first, then test volumes).
    std::uint64_t volume_seed(int index) const;
};

/// Writes volumes, labels and manifest.json into `dir`; returns the manifest.
io::Manifest write_synthetic_dataset(const SynthConfig& cfg, const std::filesystem::path& dir);

/// Command-line entry point. Returns the process exit code; errors print one
/// line "desco: error kind=<kind> message=<text>" to stderr.
int run_cli(int argc, char** argv);

} // namespace desco
