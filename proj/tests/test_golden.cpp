#include <doctest.h>

#include "desco/commands.hpp"
#include "desco/evaluation.hpp"
#include "desco/registration.hpp"
#include "desco/synthetic.hpp"
#include "desco/trainer.hpp"
#include "support.hpp"

using namespace desco;
using nlohmann::json;

// Frozen outputs. Regenerate with DESCO_REGEN_GOLDEN=1 after an intended change.

namespace {

void compare_or_write(const json& got, const std::string& name)
{
    const auto path = test::golden_dir() / name;
    if (test::regen_golden() || !std::filesystem::exists(path)) {
        std::filesystem::create_directories(path.parent_path());
        io::write_text(got.dump(2) + "\n", path);
        MESSAGE("wrote " << path.string());
        return;
    }
    const json want = io::read_json(path);
    REQUIRE(want.size() == got.size());
    for (auto it = want.begin(); it != want.end(); ++it) {
        INFO(name << ": " << it.key());
        const json& g = got.at(it.key());
        if (it->is_number_float())
            CHECK(g.get<double>() == doctest::Approx(it->get<double>()).epsilon(1e-4));
        else
            CHECK(g == *it);
    }
}

PhantomSpec benchmark_phantom()
{
    PhantomSpec s;
    s.n_distractors = 3;
    s.distractor_intensity = 0.6;
    s.noise_sigma = 0.1;
    return s;
}

} // namespace

TEST_CASE("golden phantom and pseudo labels")
{
    const Phantom ph = generate_phantom(benchmark_phantom());
    const auto [m, n] = select_annotation_slices(ph.label);
    const auto ann = make_orthogonal_annotation(ph.label, m, n);
    const auto [pa, pb] = propagate_orthogonal(ph.volume, ann, RegistrationConfig{});
    std::size_t fg = 0;
    for (auto v : ph.label.grid().values())
        fg += v;
    double intensity = 0;
    for (float v : ph.volume.grid().values())
        intensity += v;
    const json got = {{"m", m},
                      {"n", n},
                      {"foreground_voxels", fg},
                      {"annotated_voxels", ann.annotated_voxel_count()},
                      {"intensity_sum", intensity},
                      {"pseudo_dice_a", dice(pa.data, ph.label.grid())},
                      {"pseudo_dice_b", dice(pb.data, ph.label.grid())}};
    compare_or_write(got, "phantom_seed7.json");
}

TEST_CASE("golden short training history")
{
    test::TempDir dir("golden_train");
    SynthConfig s;
    s.phantom = benchmark_phantom();
    s.phantom.dims = {32, 32, 32};
    s.n_train = 4;
    s.n_annotated = 2;
    s.n_test = 1;
    const io::Manifest man = write_synthetic_dataset(s, dir.path());
    TrainConfig c;
    c.schedule.total_iters = 8;
    c.schedule.alpha_update_every = 4;
    c.patch = {16, 16, 16};
    c.mc_samples = 2;
    c.eval_every = 4;
    const TrainResult r = train_desco(man, c);
    json got;
    for (const auto& row : r.history) {
        const std::string k = "iter" + std::to_string(row.iter) + "_";
        got[k + "alpha"] = row.alpha;
        got[k + "lambda"] = row.lambda;
        got[k + "loss_sup_a"] = row.loss_sup_a;
        got[k + "loss_sup_b"] = row.loss_sup_b;
        got[k + "loss_cross_a"] = row.loss_cross_a;
        if (row.val_dice_ens)
            got[k + "val_dice_ens"] = *row.val_dice_ens;
    }
    compare_or_write(got, "history_short.json");
}
