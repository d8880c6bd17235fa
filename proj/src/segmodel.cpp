#include "desco/segmodel.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "desco/objectives.hpp"
#include "desco/volume_io.hpp"

namespace desco {

void ModelConfig::validate() const
{
    for (int c : channels)
        if (c < 1)
            throw ConfigError("model channel widths must be >= 1");
    if (!(dropout >= 0 && dropout < 1))
        throw ConfigError("model dropout must lie in [0, 1)");
}

nlohmann::json ModelConfig::to_json() const
{
    return {{"channels", channels}, {"dropout", dropout}, {"seed", seed}, {"zero_head", zero_head}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j)
{
    ModelConfig c;
    try {
        if (j.contains("channels"))
            c.channels = j.at("channels").get<std::array<int, 3>>();
        c.dropout = j.value("dropout", c.dropout);
        c.seed = j.value("seed", c.seed);
        c.zero_head = j.value("zero_head", c.zero_head);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

SegModel::SegModel(const ModelConfig& cfg)
    : cfg_(cfg), enc0_("enc0", 1, cfg.channels[0], 3), enc1_("enc1", cfg.channels[0], cfg.channels[1], 3),
      enc2_("enc2", cfg.channels[1], cfg.channels[2], 3), up1_("up1", cfg.channels[2], cfg.channels[1], 1),
      dec1_("dec1", cfg.channels[1], cfg.channels[1], 3), up0_("up0", cfg.channels[1], cfg.channels[0], 1),
      dec0_("dec0", cfg.channels[0], cfg.channels[0], 3), head_("head", cfg.channels[0], 1, 1),
      dropout_rng_(cfg.seed ^ 0x9e3779b97f4a7c15ULL)
{
    cfg_.validate();
    std::mt19937_64 init_rng(cfg.seed);
    for (nn::Conv3d* c : {&enc0_, &enc1_, &enc2_, &up1_, &dec1_, &up0_, &dec0_, &head_})
        c->init(init_rng);
    if (cfg.zero_head)
        std::fill(head_.weight().value.begin(), head_.weight().value.end(), 0.0f);
}

std::vector<nn::Param*> SegModel::params()
{
    std::vector<nn::Param*> out;
    for (nn::Conv3d* c : {&enc0_, &enc1_, &enc2_, &up1_, &dec1_, &up0_, &dec0_, &head_}) {
        out.push_back(&c->weight());
        out.push_back(&c->bias());
    }
    return out;
}

std::vector<const nn::Param*> SegModel::params() const
{
    std::vector<const nn::Param*> out;
    for (const nn::Conv3d* c : {&enc0_, &enc1_, &enc2_, &up1_, &dec1_, &up0_, &dec0_, &head_}) {
        out.push_back(&c->weight());
        out.push_back(&c->bias());
    }
    return out;
}

std::size_t SegModel::parameter_count() const
{
    std::size_t n = 0;
    for (const auto* p : params())
        n += p->size();
    return n;
}

void SegModel::zero_grad()
{
    for (auto* p : params())
        std::fill(p->grad.begin(), p->grad.end(), 0.0f);
}

void SegModel::check_patch(const Dims& d) const
{
    if (d.h < kDivisor || d.w < kDivisor || d.d < kDivisor || d.h % kDivisor || d.w % kDivisor || d.d % kDivisor)
        throw ShapeError("patch " + to_string(d) + " incompatible with the model: every extent must be a positive multiple of " +
                         std::to_string(kDivisor));
}

SegModel::Trace SegModel::trunk(const Volume3D& patch) const
{
    check_patch(patch.dims());
    Trace t;
    t.input = nn::Tensor(1, patch.dims());
    std::copy(patch.grid().values().begin(), patch.grid().values().end(), t.input.data.begin());

    t.e0 = enc0_.forward(t.input, t.s_enc0);
    nn::relu_inplace(t.e0);
    t.p0 = nn::avg_pool2(t.e0);
    t.e1 = enc1_.forward(t.p0, t.s_enc1);
    nn::relu_inplace(t.e1);
    t.p1 = nn::avg_pool2(t.e1);
    t.e2 = enc2_.forward(t.p1, t.s_enc2);
    nn::relu_inplace(t.e2);

    t.l1 = up1_.forward(t.e2, t.s_up1);
    t.s1 = nn::upsample2(t.l1);
    nn::add_inplace(t.s1, t.e1);
    t.d1 = dec1_.forward(t.s1, t.s_dec1);
    nn::relu_inplace(t.d1);

    t.l0 = up0_.forward(t.d1, t.s_up0);
    t.s0 = nn::upsample2(t.l0);
    nn::add_inplace(t.s0, t.e0);
    t.d0 = dec0_.forward(t.s0, t.s_dec0);
    nn::relu_inplace(t.d0);
    return t;
}

std::vector<float> SegModel::draw_keep(std::size_t n)
{
    std::vector<float> keep(n);
    const double rate = cfg_.dropout;
    const float scale = float(1.0 / (1.0 - rate));
    for (auto& k : keep) {
        const double u = double(dropout_rng_() >> 11) * 0x1.0p-53;
        k = u < rate ? 0.0f : scale;
    }
    return keep;
}

void SegModel::run_head(const nn::Tensor& d0, const std::vector<float>& keep, nn::Tensor& f,
                        std::vector<float>& logits, ProbVolume& prob) const
{
    f = d0;
    if (!keep.empty())
        for (std::size_t k = 0; k < f.data.size(); ++k)
            f.data[k] *= keep[k];
    std::vector<float> unused;
    nn::Tensor z = head_.forward(f, unused);
    logits = std::move(z.data);
    prob = ProbVolume(d0.dims);
    for (std::size_t k = 0; k < logits.size(); ++k)
        prob[k] = float(1.0 / (1.0 + std::exp(-double(logits[k]))));
}

void SegModel::head(Trace& t, bool stochastic)
{
    t.keep = (stochastic && cfg_.dropout > 0) ? draw_keep(t.d0.data.size()) : std::vector<float>{};
    run_head(t.d0, t.keep, t.f, t.logits, t.prob);
}

ProbVolume SegModel::head_sample(const Trace& t, bool stochastic)
{
    const auto keep = (stochastic && cfg_.dropout > 0) ? draw_keep(t.d0.data.size()) : std::vector<float>{};
    nn::Tensor f;
    std::vector<float> logits;
    ProbVolume prob;
    run_head(t.d0, keep, f, logits, prob);
    return prob;
}

ProbVolume SegModel::forward(const Volume3D& patch, bool stochastic)
{
    Trace t = trunk(patch);
    head(t, stochastic);
    return std::move(t.prob);
}

void SegModel::backward(const Trace& t, std::span<const double> grad_prob)
{
    if (grad_prob.size() != t.logits.size())
        throw ShapeError("backward: gradient size does not match the forward pass");
    nn::Tensor dz(1, t.d0.dims);
    for (std::size_t k = 0; k < dz.data.size(); ++k) {
        const double z = t.logits[k];
        const double s = 1.0 / (1.0 + std::exp(-z));
        dz.data[k] = float(grad_prob[k] * s * (1.0 - s));
    }
    nn::Tensor g = head_.backward(t.f, t.s_head, dz, true);
    if (!t.keep.empty())
        for (std::size_t k = 0; k < g.data.size(); ++k)
            g.data[k] *= t.keep[k];

    nn::relu_backward(t.d0, g);
    nn::Tensor g_s0 = dec0_.backward(t.s0, t.s_dec0, g, true);
    nn::Tensor g_l0 = nn::upsample2_backward(g_s0, t.l0.dims);
    nn::Tensor g_d1 = up0_.backward(t.d1, t.s_up0, g_l0, true);

    nn::relu_backward(t.d1, g_d1);
    nn::Tensor g_s1 = dec1_.backward(t.s1, t.s_dec1, g_d1, true);
    nn::Tensor g_l1 = nn::upsample2_backward(g_s1, t.l1.dims);
    nn::Tensor g_e2 = up1_.backward(t.e2, t.s_up1, g_l1, true);

    nn::relu_backward(t.e2, g_e2);
    nn::Tensor g_p1 = enc2_.backward(t.p1, t.s_enc2, g_e2, true);
    nn::Tensor g_e1 = nn::avg_pool2_backward(g_p1, t.e1.dims);
    nn::add_inplace(g_e1, g_s1);

    nn::relu_backward(t.e1, g_e1);
    nn::Tensor g_p0 = enc1_.backward(t.p0, t.s_enc1, g_e1, true);
    nn::Tensor g_e0 = nn::avg_pool2_backward(g_p0, t.e0.dims);
    nn::add_inplace(g_e0, g_s0);

    nn::relu_backward(t.e0, g_e0);
    enc0_.backward(t.input, t.s_enc0, g_e0, false);
}

double binary_entropy(double p)
{
    const double q = clamp_prob(p);
    return -(q * std::log(q) + (1.0 - q) * std::log(1.0 - q));
}

UncertaintyResult uncertainty(SegModel& model, const SegModel::Trace& trace, int T)
{
    if (T < 2)
        throw ConfigError("uncertainty needs T >= 2 stochastic passes, got " + std::to_string(T));
    const Dims& d = trace.d0.dims;
    UncertaintyResult r{Grid3<double>(d, 0.0), Grid3<double>(d, 0.0)};
    // T equal floats sum exactly in double, so with dropout off the mean
    // reproduces the single-pass value bit for bit
    for (int t = 0; t < T; ++t) {
        const ProbVolume p = model.head_sample(trace, true);
        for (std::size_t k = 0; k < p.size(); ++k)
            r.mean[k] += double(p[k]);
    }
    for (std::size_t k = 0; k < r.mean.size(); ++k) {
        r.mean[k] /= double(T);
        r.entropy[k] = binary_entropy(r.mean[k]);
    }
    return r;
}

UncertaintyResult uncertainty(SegModel& model, const Volume3D& patch, int T)
{
    return uncertainty(model, model.trunk(patch), T);
}

double uncertainty_threshold(int iter, const ScheduleConfig& cfg)
{
    return std::numbers::ln2 * (0.75 + 0.25 * gaussian_rampup(double(iter) / double(cfg.total_iters)));
}

UncertaintyMask uncertainty_mask(const Grid3<double>& entropy, int iter, const ScheduleConfig& cfg)
{
    const double thr = uncertainty_threshold(iter, cfg);
    UncertaintyMask m(entropy.dims());
    for (std::size_t k = 0; k < entropy.size(); ++k)
        m[k] = entropy[k] < thr ? 1 : 0;
    return m;
}

void Sgd::step(SegModel& model, double lr)
{
    auto ps = model.params();
    if (velocity_.empty())
        for (auto* p : ps)
            velocity_.emplace_back(p->size(), 0.0f);
    const float mu = float(momentum_), wd = float(weight_decay_), eta = float(lr);
    for (std::size_t i = 0; i < ps.size(); ++i) {
        auto& v = velocity_[i];
        auto& w = ps[i]->value;
        const auto& g = ps[i]->grad;
        for (std::size_t k = 0; k < w.size(); ++k) {
            v[k] = mu * v[k] + (g[k] + wd * w[k]);
            w[k] -= eta * v[k];
        }
    }
}

void save_checkpoint(const SegModel& model, const std::filesystem::path& bin_path, const nlohmann::json& extra)
{
    std::vector<float> blob;
    nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
    for (const auto* p : model.params()) {
        tensors.push_back({{"name", p->name}, {"shape", p->shape}, {"offset", blob.size()}, {"count", p->size()}});
        blob.insert(blob.end(), p->value.begin(), p->value.end());
    }
    io::write_raw_f32(bin_path, blob);
    nlohmann::ordered_json j;
    j["format"] = "desco-checkpoint";
    j["version"] = kCheckpointVersion;
    j["config"] = model.config().to_json();
    j["tensors"] = tensors;
    for (auto it = extra.begin(); it != extra.end(); ++it)
        j[it.key()] = it.value();
    auto side = bin_path;
    side.replace_extension(".json");
    io::write_text(j.dump(2) + "\n", side);
}

SegModel load_checkpoint(const std::filesystem::path& bin_path)
{
    auto side = bin_path;
    side.replace_extension(".json");
    const auto j = io::read_json(side);
    if (j.value("format", "") != "desco-checkpoint")
        throw FormatError(side.string() + ": not a checkpoint (field 'format')");
    if (j.value("version", -1) != kCheckpointVersion)
        throw FormatError(side.string() + ": unsupported checkpoint version (field 'version')");
    SegModel model(ModelConfig::from_json(j.at("config")));
    auto ps = model.params();
    const auto& tensors = j.at("tensors");
    if (tensors.size() != ps.size())
        throw FormatError(side.string() + ": tensor count does not match the architecture (field 'tensors')");
    std::size_t total = 0;
    for (const auto* p : ps)
        total += p->size();
    const auto blob = io::read_raw_f32(bin_path, total);
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const auto& t = tensors[i];
        if (t.at("name").get<std::string>() != ps[i]->name || t.at("count").get<std::size_t>() != ps[i]->size())
            throw FormatError(side.string() + ": tensor " + std::to_string(i) + " mismatch (field 'tensors')");
        const std::size_t off = t.at("offset").get<std::size_t>();
        if (off + ps[i]->size() > blob.size())
            throw FormatError(side.string() + ": tensor offset out of range (field 'tensors')");
        std::copy_n(blob.begin() + std::ptrdiff_t(off), ps[i]->size(), ps[i]->value.begin());
    }
    return model;
}

} // namespace desco
