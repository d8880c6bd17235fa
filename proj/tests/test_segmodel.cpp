#include <doctest.h>

#include <cmath>

#include "desco/objectives.hpp"
#include "desco/segmodel.hpp"
#include "desco/volume_io.hpp"
#include "support.hpp"

using namespace desco;

namespace {

Volume3D random_patch(std::uint64_t seed, Dims d)
{
    std::mt19937_64 rng(seed);
    return Volume3D(test::random_field(rng, d), Spacing{}, "patch");
}

std::vector<float> flat_params(const SegModel& m)
{
    std::vector<float> out;
    for (const auto* p : m.params())
        out.insert(out.end(), p->value.begin(), p->value.end());
    return out;
}

double weighted_sum(const ProbVolume& p, const std::vector<double>& c)
{
    double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
        s += c[i] * double(p[i]);
    return s;
}

} // namespace

TEST_CASE("model shape, size and determinism")
{
    SegModel m(ModelConfig{});
    CHECK(m.parameter_count() == 26889);
    const Volume3D patch = random_patch(1, {32, 32, 16});
    const ProbVolume a = m.forward(patch, false), b = m.forward(patch, false);
    CHECK(a.dims() == patch.dims());
    CHECK(a == b);
    for (float v : a.values()) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }
    CHECK_THROWS_AS(m.forward(random_patch(1, {12, 16, 16}), false), ShapeError);
}

TEST_CASE("zero head outputs one half")
{
    ModelConfig cfg;
    cfg.zero_head = true;
    SegModel m(cfg);
    const auto prob = m.forward(random_patch(2, {16, 16, 16}), true);
    for (float v : prob.values())
        CHECK(std::abs(v - 0.5f) < 1e-6);
}

TEST_CASE("different seeds give different parameters")
{
    ModelConfig a, b;
    b.seed = 2;
    CHECK(flat_params(SegModel(a)) != flat_params(SegModel(b)));
    CHECK(flat_params(SegModel(a)) == flat_params(SegModel(a)));
}

TEST_CASE("backward matches a directional finite difference")
{
    ModelConfig cfg;
    cfg.dropout = 0.0;
    SegModel m(cfg);
    const Volume3D patch = random_patch(3, {16, 16, 8});
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n;
    std::vector<double> c(patch.grid().size());
    for (double& v : c)
        v = n(rng) / double(c.size());

    m.zero_grad();
    auto trace = m.trunk(patch);
    m.head(trace, false);
    m.backward(trace, c);

    // random unit direction over all parameters
    std::vector<std::vector<double>> dir;
    double norm = 0;
    for (const auto* p : m.params()) {
        std::vector<double> d(p->size());
        for (double& v : d) {
            v = n(rng);
            norm += v * v;
        }
        dir.push_back(std::move(d));
    }
    norm = std::sqrt(norm);
    double analytic = 0;
    {
        std::size_t k = 0;
        for (const auto* p : m.params()) {
            for (std::size_t i = 0; i < p->size(); ++i)
                analytic += dir[k][i] / norm * double(p->grad[i]);
            ++k;
        }
    }
    auto eval_at = [&](double h) {
        SegModel moved = m;
        std::size_t k = 0;
        for (auto* p : moved.params()) {
            for (std::size_t i = 0; i < p->size(); ++i)
                p->value[i] += float(h * dir[k][i] / norm);
            ++k;
        }
        return weighted_sum(moved.forward(patch, false), c);
    };
    const double h = 1e-2;
    const double numeric = (eval_at(h) - eval_at(-h)) / (2 * h);
    CHECK(numeric == doctest::Approx(analytic).epsilon(2e-2));
}

TEST_CASE("head bias gradient equals the summed logit gradient")
{
    ModelConfig cfg;
    cfg.dropout = 0.0;
    SegModel m(cfg);
    const Volume3D patch = random_patch(5, {8, 8, 8});
    std::vector<double> c(patch.grid().size(), 1.0 / 512.0);
    m.zero_grad();
    auto trace = m.trunk(patch);
    m.head(trace, false);
    m.backward(trace, c);
    double expect = 0;
    for (std::size_t i = 0; i < trace.logits.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-double(trace.logits[i])));
        expect += c[i] * s * (1 - s);
    }
    const nn::Param* bias = m.params().back();
    REQUIRE(bias->size() == 1);
    CHECK(double(bias->grad[0]) == doctest::Approx(expect).epsilon(1e-4));
}

TEST_CASE("a few SGD steps reduce the supervised loss on a fixed batch")
{
    ModelConfig cfg;
    cfg.dropout = 0.0;
    SegModel m(cfg);
    Sgd opt(0.0, 0.0);
    const Dims d{16, 16, 16};
    std::mt19937_64 rng(6);
    Grid3<float> img(d);
    std::vector<std::uint8_t> y(d.count());
    std::normal_distribution<float> noise(0.0f, 0.3f);
    for (int z = 0; z < 16; ++z)
        for (int yy = 0; yy < 16; ++yy)
            for (int x = 0; x < 16; ++x) {
                const bool fg = (x - 8) * (x - 8) + (yy - 8) * (yy - 8) + (z - 8) * (z - 8) < 25;
                img(x, yy, z) = (fg ? 1.0f : -1.0f) + noise(rng);
                y[img.index(x, yy, z)] = fg;
            }
    const Volume3D patch(img, Spacing{}, "p");
    const std::vector<double> w(d.count(), 1.0);
    std::vector<double> losses;
    for (int step = 0; step < 50; ++step) {
        m.zero_grad();
        auto t = m.trunk(patch);
        m.head(t, false);
        std::vector<double> p(t.prob.values().begin(), t.prob.values().end());
        losses.push_back(supervised_loss(p, y, w));
        m.backward(t, loss_gradients(p, y, w, LossKind::supervised));
        opt.step(m, 0.01);
    }
    int inversions = 0;
    for (std::size_t i = 1; i < losses.size(); ++i)
        inversions += losses[i] > losses[i - 1];
    CHECK(inversions <= 5);
    CHECK(losses.back() < 0.5 * losses.front());
}

TEST_CASE("sgd matches the momentum update rule")
{
    ModelConfig cfg;
    SegModel m(cfg);
    auto params = m.params();
    const std::vector<float> w0 = params[0]->value;
    for (auto* p : params)
        std::fill(p->grad.begin(), p->grad.end(), 0.5f);
    Sgd opt(0.9, 0.01);
    opt.step(m, 0.1);
    opt.step(m, 0.1);
    // v1 = g + wd w0; w1 = w0 - lr v1; v2 = mu v1 + g + wd w1; w2 = w1 - lr v2
    for (std::size_t i = 0; i < 20; ++i) {
        const float g = 0.5f, wd = 0.01f, lr = 0.1f, mu = 0.9f;
        const float v1 = g + wd * w0[i];
        const float w1 = w0[i] - lr * v1;
        const float v2 = mu * v1 + (g + wd * w1);
        const float w2 = w1 - lr * v2;
        CHECK(params[0]->value[i] == doctest::Approx(w2).epsilon(1e-6));
    }
}

TEST_CASE("uncertainty estimates")
{
    ModelConfig cfg;
    cfg.dropout = 0.0;
    SegModel det(cfg);
    const Volume3D patch = random_patch(7, {16, 16, 8});
    const ProbVolume single = det.forward(patch, false);
    const UncertaintyResult r = uncertainty(det, patch, 4);
    for (std::size_t i = 0; i < single.size(); ++i) {
        CHECK(r.mean[i] == double(single[i]));
        CHECK(r.entropy[i] == binary_entropy(double(single[i])));
    }
    CHECK(binary_entropy(0.5) == doctest::Approx(std::log(2.0)));
    CHECK(binary_entropy(0.0) < 1e-5);
    CHECK(binary_entropy(1.0) < 1e-5);
    CHECK_THROWS_AS(uncertainty(det, patch, 1), ConfigError);

    SegModel drop(ModelConfig{});
    const UncertaintyResult s = uncertainty(drop, patch, 8);
    bool varied = false;
    const ProbVolume p0 = drop.forward(patch, false);
    for (std::size_t i = 0; i < p0.size(); ++i)
        varied |= std::abs(s.mean[i] - double(p0[i])) > 1e-7;
    CHECK(varied);
}

TEST_CASE("checkpoint round trip is bit exact")
{
    test::TempDir dir("ckpt");
    ModelConfig cfg;
    cfg.seed = 9;
    cfg.dropout = 0.2;
    SegModel m(cfg);
    save_checkpoint(m, dir / "m.bin", {{"iter", 12}});
    const SegModel r = load_checkpoint(dir / "m.bin");
    CHECK(flat_params(r) == flat_params(m));
    CHECK(r.config().dropout == 0.2);
    const auto side = io::read_json(dir / "m.json");
    CHECK(side["iter"] == 12);
    CHECK(side["format"] == "desco-checkpoint");

    io::write_raw_f32(dir / "m.bin", std::vector<float>(10, 0.0f));
    CHECK_THROWS_AS(load_checkpoint(dir / "m.bin"), FormatError);
}
