#include <doctest.h>

#include <cmath>

#include "desco/commands.hpp"
#include "desco/objectives.hpp"
#include "desco/trainer.hpp"
#include "support.hpp"

using namespace desco;

namespace {

TrainConfig small_config()
{
    TrainConfig c;
    c.schedule.total_iters = 12;
    c.schedule.alpha_update_every = 4;
    c.patch = {16, 16, 16};
    c.mc_samples = 2;
    c.eval_every = 6;
    return c;
}

const io::Manifest& small_dataset()
{
    static test::TempDir dir("trainer_data");
    static io::Manifest m = [] {
        SynthConfig s;
        s.phantom.dims = {32, 32, 32};
        s.n_train = 4;
        s.n_annotated = 2;
        s.n_test = 1;
        s.seed = 3;
        return write_synthetic_dataset(s, dir.path());
    }();
    return m;
}

StepBatch random_batch(std::uint64_t seed, const Dims& d, double weight)
{
    std::mt19937_64 rng(seed);
    StepBatch b{Volume3D(test::random_field(rng, d), Spacing{}, "l"),
                test::random_mask(rng, d, 0.3),
                test::random_mask(rng, d, 0.3),
                Grid3<double>(d, weight),
                Grid3<double>(d, weight),
                Volume3D(test::random_field(rng, d), Spacing{}, "u"),
                "l",
                "u"};
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < d.count(); ++i) {
        b.weight_a[i] *= u(rng);
        b.weight_b[i] *= u(rng);
    }
    return b;
}

std::vector<float> flat(const SegModel& m)
{
    std::vector<float> out;
    for (const auto* p : m.params())
        out.insert(out.end(), p->value.begin(), p->value.end());
    return out;
}

} // namespace

TEST_CASE("window origins cover the extent")
{
    CHECK(window_origins(48, 24, 24) == std::vector<int>{0, 24});
    CHECK(window_origins(48, 24, 12) == std::vector<int>{0, 12, 24});
    CHECK(window_origins(50, 24, 24) == std::vector<int>{0, 24, 26});
    CHECK(window_origins(24, 24, 5) == std::vector<int>{0});
    CHECK_THROWS_AS(window_origins(16, 24, 8), ShapeError);
    std::mt19937_64 rng(1);
    for (int t = 0; t < 50; ++t) {
        const int extent = std::uniform_int_distribution<int>(8, 60)(rng);
        const int patch = std::uniform_int_distribution<int>(1, extent)(rng);
        const int stride = std::uniform_int_distribution<int>(1, patch)(rng);
        std::vector<int> cover(std::size_t(extent), 0);
        for (int o : window_origins(extent, patch, stride))
            for (int k = o; k < o + patch; ++k)
                ++cover[std::size_t(k)];
        for (int c : cover)
            CHECK(c >= 1);
    }
}

TEST_CASE("sliding window with stub predictors")
{
    std::mt19937_64 rng(2);
    const Dims d{20, 18, 16};
    const Volume3D v(test::random_field(rng, d), Spacing{}, "v");
    const Dims patch{8, 8, 8};

    Predictor constant = [](const Volume3D& p) { return ProbVolume(p.dims(), 0.3f); };
    const ProbVolume flat_prob = sliding_window_predict({constant}, v, patch, patch);
    for (float x : flat_prob.values())
        CHECK(x == doctest::Approx(0.3f));

    // each window predicts its own mean intensity everywhere; oracle averages per voxel by brute force
    Predictor mean_stub = [](const Volume3D& p) {
        double s = 0;
        for (float x : p.grid().values())
            s += x;
        return ProbVolume(p.dims(), float(s / double(p.grid().size())));
    };
    const Dims stride{5, 4, 3};
    const ProbVolume got = sliding_window_predict({mean_stub}, v, patch, stride);
    Grid3<double> sum(d, 0.0), count(d, 0.0);
    for (int oz : window_origins(d.d, patch.d, stride.d))
        for (int oy : window_origins(d.w, patch.w, stride.w))
            for (int ox : window_origins(d.h, patch.h, stride.h)) {
                double s = 0;
                for (int z = 0; z < 8; ++z)
                    for (int y = 0; y < 8; ++y)
                        for (int x = 0; x < 8; ++x)
                            s += v.grid()(ox + x, oy + y, oz + z);
                for (int z = 0; z < 8; ++z)
                    for (int y = 0; y < 8; ++y)
                        for (int x = 0; x < 8; ++x) {
                            sum(ox + x, oy + y, oz + z) += float(s / 512.0);
                            count(ox + x, oy + y, oz + z) += 1;
                        }
            }
    for (std::size_t i = 0; i < got.size(); ++i)
        CHECK(std::abs(got[i] - sum[i] / count[i]) < 1e-5);

    // several predictors are averaged
    Predictor other = [](const Volume3D& p) { return ProbVolume(p.dims(), 0.7f); };
    const ProbVolume averaged = sliding_window_predict({constant, other}, v, patch, patch);
    for (float x : averaged.values())
        CHECK(x == doctest::Approx(0.5f));
}

TEST_CASE("history csv round trip")
{
    test::TempDir dir("history");
    HistoryRow a;
    a.iter = 0;
    a.alpha = 0.95;
    a.lambda = 0.0054;
    a.lr = 0.01;
    a.loss_sup_a = 0.7;
    HistoryRow b = a;
    b.iter = 1;
    b.val_dice_a = 0.5;
    b.val_dice_b = 0.25;
    b.val_dice_ens = 0.375;
    write_history({a, b}, dir / "h.csv");
    const auto rows = read_history(dir / "h.csv");
    REQUIRE(rows.size() == 2);
    CHECK_FALSE(rows[0].val_dice_ens.has_value());
    CHECK(*rows[1].val_dice_ens == 0.375);
    CHECK(rows[0].lambda == 0.0054);
    CHECK(history_line(rows[1]) == history_line(b));
    io::write_text("iter,alpha\n0,1\n", dir / "bad.csv");
    CHECK_THROWS_AS(read_history(dir / "bad.csv"), FormatError);
}

TEST_CASE("train config json round trip and validation")
{
    TrainConfig c = small_config();
    c.force_lambda = 0.25;
    c.plane_a = Plane::B;
    c.plane_b = Plane::A;
    const TrainConfig r = TrainConfig::from_json(c.to_json());
    CHECK(r.to_json() == c.to_json());
    nlohmann::json j = c.to_json();
    j["learning_rate"] = 0.1;
    CHECK_THROWS_AS(TrainConfig::from_json(j), ConfigError);
    TrainConfig bad = small_config();
    bad.patch = {12, 16, 16};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = small_config();
    bad.plane_b = Plane::A;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK_THROWS_AS(parse_mode("dense"), ConfigError);
}

TEST_CASE("mode schedules")
{
    TrainConfig c = small_config();
    c.mode = TrainMode::sparse_only;
    CHECK(c.alpha(0) == 0.0);
    CHECK(c.lambda(11) == lambda_at(11, c.schedule));
    c.mode = TrainMode::static_dense;
    CHECK(c.alpha(11) == c.schedule.alpha0);
    CHECK(c.lambda(11) == 0.0);
    c.mode = TrainMode::desco;
    CHECK(c.alpha(0) == 0.95);
    CHECK(c.alpha(11) == 0.0);
    c.force_alpha = 0.5;
    CHECK(c.alpha(11) == 0.5);
}

TEST_CASE("lambda zero step equals a supervised-only step")
{
    TrainConfig c = small_config();
    c.force_lambda = 0.0;
    const StepBatch b = random_batch(3, c.patch, 1.0);

    TrainState s(c);
    SegModel ref_a = s.model_a, ref_b = s.model_b;
    train_step(s, b, c);

    const double lr = c.lr(0);
    auto supervised_step = [&](SegModel& m, const LabelGrid& y, const Grid3<double>& w) {
        Sgd opt(c.momentum, c.weight_decay);
        m.zero_grad();
        auto t = m.trunk(b.labeled);
        m.head(t, true);
        std::vector<double> p(t.prob.values().begin(), t.prob.values().end());
        m.backward(t, loss_gradients(p, y.values(), w.values(), LossKind::supervised));
        opt.step(m, lr);
    };
    supervised_step(ref_a, b.target_a, b.weight_a);
    supervised_step(ref_b, b.target_b, b.weight_b);
    CHECK(flat(s.model_a) == flat(ref_a));
    CHECK(flat(s.model_b) == flat(ref_b));

    // and the unlabeled patch has no influence
    StepBatch other = b;
    other.unlabeled = random_batch(4, c.patch, 1.0).unlabeled;
    TrainState s2(c);
    train_step(s2, other, c);
    CHECK(flat(s2.model_a) == flat(s.model_a));
}

TEST_CASE("zero weights give a zero supervised gradient")
{
    TrainConfig c = small_config();
    c.force_lambda = 0.0;
    c.weight_decay = 0.0;
    TrainState s(c);
    const auto before = flat(s.model_a);
    const HistoryRow row = train_step(s, random_batch(5, c.patch, 0.0), c);
    CHECK(row.loss_sup_a == 0.0);
    CHECK(flat(s.model_a) == before);
}

TEST_CASE("swapping seeds and planes mirrors the history")
{
    TrainConfig c = small_config();
    TrainConfig m = c;
    std::swap(m.seed_a, m.seed_b);
    m.plane_a = Plane::B;
    m.plane_b = Plane::A;
    TrainState s(c), t(m);
    for (int i = 0; i < 3; ++i) {
        StepBatch b = random_batch(10 + std::uint64_t(i), c.patch, 1.0);
        StepBatch mb = b;
        std::swap(mb.target_a, mb.target_b);
        std::swap(mb.weight_a, mb.weight_b);
        const HistoryRow r = train_step(s, b, c);
        const HistoryRow q = train_step(t, mb, m);
        CHECK(r.loss_sup_a == q.loss_sup_b);
        CHECK(r.loss_sup_b == q.loss_sup_a);
        CHECK(r.loss_cross_a == q.loss_cross_b);
        CHECK(r.loss_cross_b == q.loss_cross_a);
        CHECK(r.mask_frac == q.mask_frac);
    }
    CHECK(flat(s.model_a) == flat(t.model_b));
}

TEST_CASE("dense-to-sparse weight mass")
{
    const io::Manifest& man = small_dataset();
    const auto e = man.labeled().front();
    const LabelVolume lab = io::load_label(man.resolve(*e.label_path));
    const Volume3D vol = io::load_volume(man.resolve(e.volume_path));
    const auto ann = make_orthogonal_annotation(lab, *e.m, *e.n);
    TrainConfig c = small_config();
    const PreparedVolume pv = prepare_labeled_volume(vol, ann, c);
    double prev = std::numeric_limits<double>::infinity();
    for (int it = 0; it < c.schedule.total_iters; ++it) {
        const double mass = pv.weights(Plane::A, c.alpha(it)).sum() + pv.weights(Plane::B, c.alpha(it)).sum();
        CHECK(mass <= prev);
        prev = mass;
    }
    CHECK(prev == 2.0 * double(ann.annotated_voxel_count()));
    CHECK(extract_slice(pv.mixed_a.data, Plane::A, ann.m) == ann.label_a);
    CHECK(extract_slice(pv.mixed_b.data, Plane::A, ann.m) == ann.label_a);
}

TEST_CASE("end-to-end training is deterministic and writes its outputs")
{
    const io::Manifest& man = small_dataset();
    const TrainConfig c = small_config();
    test::TempDir d1("train1"), d2("train2");
    const TrainResult r1 = train_desco(man, c, {d1.path(), {}, {}});
    const TrainResult r2 = train_desco(man, c, {d2.path(), {}, {}});
    REQUIRE(r1.history.size() == 12);
    CHECK(io::read_text(d1 / "history.csv") == io::read_text(d2 / "history.csv"));
    CHECK(r1.history[5].val_dice_ens.has_value());
    CHECK_FALSE(r1.history[6].val_dice_ens.has_value());
    CHECK(r1.history[11].val_dice_ens.has_value());
    CHECK(r1.history[11].alpha == 0.0);
    CHECK(r1.history[11].lambda == doctest::Approx(c.schedule.lambda_oc * gaussian_rampup(11.0 / 12.0)));
    CHECK(std::filesystem::exists(d1 / "checkpoints" / "model_a_iter000006.bin"));
    CHECK(std::filesystem::exists(d1 / "checkpoints" / "model_b_iter000012.json"));
    CHECK(std::filesystem::exists(d1 / "model_a.bin"));
    CHECK(flat(load_checkpoint(d1 / "model_b.bin")) == flat(r1.model_b));

    // mirrored configuration at the whole-pipeline level
    TrainConfig m = c;
    std::swap(m.seed_a, m.seed_b);
    m.plane_a = Plane::B;
    m.plane_b = Plane::A;
    const TrainResult r3 = train_desco(man, m);
    for (std::size_t i = 0; i < r1.history.size(); ++i) {
        CHECK(r1.history[i].loss_sup_a == r3.history[i].loss_sup_b);
        CHECK(r1.history[i].val_dice_a == r3.history[i].val_dice_b);
        CHECK(r1.history[i].val_dice_ens == r3.history[i].val_dice_ens);
    }
}

TEST_CASE("normalize intensity")
{
    std::mt19937_64 rng(6);
    Grid3<float> g = test::random_field(rng, {8, 8, 8});
    for (auto& v : g.values())
        v = 3.0f * v + 5.0f;
    const Volume3D n = normalize_intensity(Volume3D(g, Spacing{}, "n"));
    double s = 0, s2 = 0;
    for (float v : n.grid().values()) {
        s += v;
        s2 += double(v) * v;
    }
    CHECK(std::abs(s / 512) < 1e-5);
    CHECK(std::abs(s2 / 512 - 1.0) < 1e-4);
}
