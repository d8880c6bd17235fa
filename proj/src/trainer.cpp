#include "desco/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "desco/evaluation.hpp"
#include "desco/objectives.hpp"
#include "desco/synthetic.hpp"

namespace desco {

using nlohmann::json;

const char* to_string(TrainMode m)
{
    switch (m) {
    case TrainMode::desco: return "desco";
    case TrainMode::sparse_only: return "sparse_only";
    case TrainMode::static_dense: return "static_dense";
    }
    return "?";
}

TrainMode parse_mode(const std::string& name)
{
    if (name == "desco") return TrainMode::desco;
    if (name == "sparse_only") return TrainMode::sparse_only;
    if (name == "static_dense") return TrainMode::static_dense;
    throw ConfigError("unknown training mode '" + name + "'");
}

namespace {

Plane parse_plane(const std::string& s)
{
    if (s == "A") return Plane::A;
    if (s == "B") return Plane::B;
    throw ConfigError("plane must be \"A\" or \"B\", got '" + s + "'");
}

json dims_json(const Dims& d)
{
    return json::array({d.h, d.w, d.d});
}

Dims dims_from(const json& j, const char* field)
{
    if (!j.is_array() || j.size() != 3)
        throw ConfigError(std::string(field) + " must be an array of three integers");
    return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where)
{
    if (!j.is_object())
        throw ConfigError(where + " must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw ConfigError("unknown field '" + it.key() + "' in " + where);
}

} // namespace

json to_json(const RegistrationConfig& c)
{
    return {{"backend", to_string(c.backend)}, {"iterations", c.iterations}, {"sigma", c.sigma},
            {"fluid_sigma", c.fluid_sigma},    {"levels", c.levels},         {"field_cap", c.field_cap},
            {"external_command", c.external_command}};
}

RegistrationConfig registration_from_json(const json& j)
{
    reject_unknown(j, {"backend", "iterations", "sigma", "fluid_sigma", "levels", "field_cap", "external_command"},
                   "registration config");
    RegistrationConfig c;
    try {
        if (j.contains("backend"))
            c.backend = parse_backend(j["backend"].get<std::string>());
        c.iterations = j.value("iterations", c.iterations);
        c.sigma = j.value("sigma", c.sigma);
        c.fluid_sigma = j.value("fluid_sigma", c.fluid_sigma);
        c.levels = j.value("levels", c.levels);
        c.field_cap = j.value("field_cap", c.field_cap);
        c.external_command = j.value("external_command", c.external_command);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("registration config: ") + e.what());
    }
    c.validate();
    return c;
}

void TrainConfig::validate() const
{
    schedule.validate();
    model.validate();
    registration.validate();
    axes.validate();
    const Dims& p = patch;
    if (p.h < SegModel::kDivisor || p.w < SegModel::kDivisor || p.d < SegModel::kDivisor ||
        p.h % SegModel::kDivisor || p.w % SegModel::kDivisor || p.d % SegModel::kDivisor)
        throw ConfigError("patch " + to_string(p) + " must have extents that are positive multiples of " +
                          std::to_string(SegModel::kDivisor));
    const Dims s = stride();
    if (s.h < 1 || s.w < 1 || s.d < 1)
        throw ConfigError("eval_stride must be positive");
    if (mc_samples < 2)
        throw ConfigError("mc_samples must be >= 2");
    if (eval_every < 1)
        throw ConfigError("eval_every must be >= 1");
    if (!(momentum >= 0 && momentum < 1) || !(weight_decay >= 0))
        throw ConfigError("optimizer needs 0 <= momentum < 1 and weight_decay >= 0");
    if (!(annotated_patch_prob >= 0 && annotated_patch_prob <= 1))
        throw ConfigError("annotated_patch_prob must lie in [0, 1]");
    if (plane_a == plane_b)
        throw ConfigError("plane_a and plane_b must differ");
    if (force_alpha && !(*force_alpha >= 0 && *force_alpha < 1))
        throw ConfigError("force_alpha must lie in [0, 1)");
    if (force_lambda && !(*force_lambda >= 0 && *force_lambda <= 1))
        throw ConfigError("force_lambda must lie in [0, 1]");
}

json TrainConfig::to_json() const
{
    json j;
    j["schedule"] = {{"total_iters", schedule.total_iters}, {"alpha0", schedule.alpha0},
                     {"alpha_update_every", schedule.alpha_update_every}, {"lambda_oc", schedule.lambda_oc},
                     {"lr0", schedule.lr0}, {"lr_min", schedule.lr_min}};
    j["mode"] = to_string(mode);
    j["patch"] = dims_json(patch);
    j["momentum"] = momentum;
    j["weight_decay"] = weight_decay;
    j["seed"] = seed;
    j["seed_a"] = seed_a;
    j["seed_b"] = seed_b;
    json m = model.to_json();
    m.erase("seed");
    j["model"] = m;
    j["mc_samples"] = mc_samples;
    j["eval_every"] = eval_every;
    j["eval_stride"] = dims_json(stride());
    j["labeled_limit"] = labeled_limit;
    j["unlabeled_limit"] = unlabeled_limit;
    j["annotated_patch_prob"] = annotated_patch_prob;
    j["normalize_intensity"] = normalize_intensity;
    j["ensemble"] = ensemble;
    j["plane_a"] = to_string(plane_a);
    j["plane_b"] = to_string(plane_b);
    j["axes"] = {axes.a, axes.b};
    j["registration"] = desco::to_json(registration);
    j["force_alpha"] = force_alpha ? json(*force_alpha) : json(nullptr);
    j["force_lambda"] = force_lambda ? json(*force_lambda) : json(nullptr);
    return j;
}

TrainConfig TrainConfig::from_json(const json& j)
{
    reject_unknown(j,
                   {"schedule", "mode", "patch", "momentum", "weight_decay", "seed", "seed_a", "seed_b", "model",
                    "mc_samples", "eval_every", "eval_stride", "labeled_limit", "unlabeled_limit",
                    "annotated_patch_prob", "normalize_intensity", "ensemble", "plane_a", "plane_b", "axes",
                    "registration", "force_alpha", "force_lambda"},
                   "train config");
    TrainConfig c;
    try {
        if (j.contains("schedule")) {
            const json& s = j["schedule"];
            reject_unknown(s, {"total_iters", "alpha0", "alpha_update_every", "lambda_oc", "lr0", "lr_min"},
                           "schedule config");
            c.schedule.total_iters = s.value("total_iters", c.schedule.total_iters);
            c.schedule.alpha0 = s.value("alpha0", c.schedule.alpha0);
            c.schedule.alpha_update_every = s.value("alpha_update_every", c.schedule.alpha_update_every);
            c.schedule.lambda_oc = s.value("lambda_oc", c.schedule.lambda_oc);
            c.schedule.lr0 = s.value("lr0", c.schedule.lr0);
            c.schedule.lr_min = s.value("lr_min", c.schedule.lr_min);
        }
        if (j.contains("mode"))
            c.mode = parse_mode(j["mode"].get<std::string>());
        if (j.contains("patch"))
            c.patch = dims_from(j["patch"], "patch");
        c.momentum = j.value("momentum", c.momentum);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.seed = j.value("seed", c.seed);
        c.seed_a = j.value("seed_a", c.seed_a);
        c.seed_b = j.value("seed_b", c.seed_b);
        if (j.contains("model")) {
            reject_unknown(j["model"], {"channels", "dropout", "zero_head"}, "model config");
            c.model = ModelConfig::from_json(j["model"]);
        }
        c.mc_samples = j.value("mc_samples", c.mc_samples);
        c.eval_every = j.value("eval_every", c.eval_every);
        if (j.contains("eval_stride") && !j["eval_stride"].is_null())
            c.eval_stride = dims_from(j["eval_stride"], "eval_stride");
        c.labeled_limit = j.value("labeled_limit", c.labeled_limit);
        c.unlabeled_limit = j.value("unlabeled_limit", c.unlabeled_limit);
        c.annotated_patch_prob = j.value("annotated_patch_prob", c.annotated_patch_prob);
        c.normalize_intensity = j.value("normalize_intensity", c.normalize_intensity);
        c.ensemble = j.value("ensemble", c.ensemble);
        if (j.contains("plane_a"))
            c.plane_a = parse_plane(j["plane_a"].get<std::string>());
        if (j.contains("plane_b"))
            c.plane_b = parse_plane(j["plane_b"].get<std::string>());
        if (j.contains("axes")) {
            const auto& a = j["axes"];
            if (!a.is_array() || a.size() != 2)
                throw ConfigError("axes must be [axis_a, axis_b]");
            c.axes = {a[0].get<int>(), a[1].get<int>()};
        }
        if (j.contains("registration"))
            c.registration = registration_from_json(j["registration"]);
        if (j.contains("force_alpha") && !j["force_alpha"].is_null())
            c.force_alpha = j["force_alpha"].get<double>();
        if (j.contains("force_lambda") && !j["force_lambda"].is_null())
            c.force_lambda = j["force_lambda"].get<double>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

double TrainConfig::alpha(int iter) const
{
    if (force_alpha)
        return *force_alpha;
    switch (mode) {
    case TrainMode::sparse_only: return 0.0;
    case TrainMode::static_dense: return schedule.alpha0;
    case TrainMode::desco: break;
    }
    return alpha_at(iter, schedule);
}

double TrainConfig::lambda(int iter) const
{
    if (force_lambda)
        return *force_lambda;
    if (mode == TrainMode::static_dense)
        return 0.0;
    return lambda_at(iter, schedule);
}

// ---------------------------------------------------------------- history

std::string history_header()
{
    return "iter,alpha,lambda,lr,loss_sup_a,loss_sup_b,loss_cross_a,loss_cross_b,mask_frac,val_dice_a,val_dice_b,val_dice_ens";
}

namespace {

std::string fmt(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string fmt(const std::optional<double>& v)
{
    return v ? fmt(*v) : std::string();
}

} // namespace

std::string history_line(const HistoryRow& r)
{
    std::string s = std::to_string(r.iter);
    for (double v : {r.alpha, r.lambda, r.lr, r.loss_sup_a, r.loss_sup_b, r.loss_cross_a, r.loss_cross_b, r.mask_frac})
        s += "," + fmt(v);
    s += "," + fmt(r.val_dice_a) + "," + fmt(r.val_dice_b) + "," + fmt(r.val_dice_ens);
    return s;
}

void write_history(const std::vector<HistoryRow>& rows, const std::filesystem::path& path)
{
    std::string text = history_header() + "\n";
    for (const auto& r : rows)
        text += history_line(r) + "\n";
    io::write_text(text, path);
}

std::vector<HistoryRow> read_history(const std::filesystem::path& path)
{
    std::istringstream in(io::read_text(path));
    std::string line;
    if (!std::getline(in, line) || line != history_header())
        throw FormatError(path.string() + ": unexpected history header");
    std::vector<HistoryRow> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty())
            continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ','))
            cells.push_back(cell);
        if (!line.empty() && line.back() == ',')
            cells.emplace_back();
        if (cells.size() != 12)
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 12 columns");
        auto num = [&](std::size_t i) {
            try {
                return std::stod(cells[i]);
            } catch (const std::exception&) {
                throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad number in column " +
                                  std::to_string(i + 1));
            }
        };
        auto opt = [&](std::size_t i) { return cells[i].empty() ? std::optional<double>() : std::optional<double>(num(i)); };
        HistoryRow r;
        r.iter = int(num(0));
        r.alpha = num(1);
        r.lambda = num(2);
        r.lr = num(3);
        r.loss_sup_a = num(4);
        r.loss_sup_b = num(5);
        r.loss_cross_a = num(6);
        r.loss_cross_b = num(7);
        r.mask_frac = num(8);
        r.val_dice_a = opt(9);
        r.val_dice_b = opt(10);
        r.val_dice_ens = opt(11);
        rows.push_back(r);
    }
    return rows;
}

// ------------------------------------------------------------ preparation

Volume3D normalize_intensity(const Volume3D& v)
{
    double mean = 0;
    for (float x : v.grid().values())
        mean += x;
    mean /= double(v.grid().size());
    double var = 0;
    for (float x : v.grid().values())
        var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / double(v.grid().size()));
    Grid3<float> g(v.dims());
    for (std::size_t k = 0; k < g.size(); ++k)
        g[k] = float(sd > 1e-12 ? (v.grid()[k] - mean) / sd : v.grid()[k] - mean);
    return Volume3D(std::move(g), v.spacing(), v.id());
}

WeightMap PreparedVolume::weights(Plane p, double alpha) const
{
    return build_weight_map(annotation, p, source_index(p), alpha, volume.dims());
}

PreparedVolume prepare_labeled_volume(const Volume3D& volume, const OrthogonalAnnotation& annotation,
                                      const TrainConfig& cfg,
                                      const std::optional<std::pair<LabelGrid, LabelGrid>>& pseudo)
{
    PseudoLabelVolume pa, pb;
    if (pseudo) {
        if (!(pseudo->first.dims() == volume.dims()) || !(pseudo->second.dims() == volume.dims()))
            throw ShapeError("precomputed pseudo labels do not match volume " + volume.id());
        pa = {pseudo->first, Plane::A, annotation.m, {}};
        pb = {pseudo->second, Plane::B, annotation.n, {}};
    } else if (cfg.mode == TrainMode::sparse_only && !cfg.force_alpha) {
        // pseudo voxels carry zero weight in this mode; skip propagation
        pa = {LabelGrid(volume.dims()), Plane::A, annotation.m, {}};
        pb = {LabelGrid(volume.dims()), Plane::B, annotation.n, {}};
    } else {
        std::tie(pa, pb) = propagate_orthogonal(volume, annotation, cfg.registration);
    }
    return {volume.id(), volume, annotation, label_mix(pa, annotation), label_mix(pb, annotation)};
}

TrainState::TrainState(const TrainConfig& cfg)
    : model_a([&] {
          ModelConfig m = cfg.model;
          m.seed = cfg.seed_a;
          return m;
      }()),
      model_b([&] {
          ModelConfig m = cfg.model;
          m.seed = cfg.seed_b;
          return m;
      }()),
      opt_a(cfg.momentum, cfg.weight_decay), opt_b(cfg.momentum, cfg.weight_decay)
{
}

// ------------------------------------------------------------------- step

namespace {

std::vector<double> as_double(const ProbVolume& p)
{
    return std::vector<double>(p.values().begin(), p.values().end());
}

struct Partner {
    LabelGrid target;
    UncertaintyMask mask;
    double mask_frac = 0;
};

struct ModelPasses {
    SegModel::Trace labeled;
    SegModel::Trace unlabeled;
};

double loss_sup(const std::vector<double>& p, const LabelGrid& y, const Grid3<double>& w, std::vector<double>* grad)
{
    try {
        const double v = supervised_loss(p, y.values(), w.values());
        if (grad)
            *grad = loss_gradients(p, y.values(), w.values(), LossKind::supervised);
        return v;
    } catch (const DegenerateWeightError&) {
        // patch holds no weighted voxel: no supervised signal this step
        if (grad)
            grad->assign(p.size(), 0.0);
        return 0.0;
    }
}

} // namespace

HistoryRow train_step(TrainState& state, const StepBatch& batch, const TrainConfig& cfg)
{
    const int it = state.iter;
    HistoryRow row;
    row.iter = it;
    row.alpha = cfg.alpha(it);
    row.lambda = cfg.lambda(it);
    row.lr = cfg.lr(it);

    SegModel* models[2] = {&state.model_a, &state.model_b};
    const LabelGrid* targets[2] = {&batch.target_a, &batch.target_b};
    const Grid3<double>* weights[2] = {&batch.weight_a, &batch.weight_b};

    // forward passes and partner targets, all from parameters at step start
    ModelPasses passes[2];
    Partner partner[2];
    for (int m = 0; m < 2; ++m) {
        SegModel& net = *models[m];
        passes[m].labeled = net.trunk(batch.labeled);
        net.head(passes[m].labeled, true);
        passes[m].unlabeled = net.trunk(batch.unlabeled);
        net.head(passes[m].unlabeled, true);
        const UncertaintyResult u = uncertainty(net, passes[m].unlabeled, cfg.mc_samples);
        Partner& pt = partner[m];
        pt.target = LabelGrid(u.mean.dims());
        for (std::size_t k = 0; k < u.mean.size(); ++k)
            pt.target[k] = u.mean[k] >= 0.5 ? 1 : 0;
        pt.mask = uncertainty_mask(u.entropy, it, cfg.schedule);
        std::size_t on = 0;
        for (auto v : pt.mask.values())
            on += v;
        pt.mask_frac = double(on) / double(pt.mask.size());
    }

    double sup[2], cross[2];
    std::vector<double> g_sup[2], g_cross[2];
    for (int m = 0; m < 2; ++m) {
        const Partner& other = partner[1 - m];
        const auto p_lab = as_double(passes[m].labeled.prob);
        const auto p_unl = as_double(passes[m].unlabeled.prob);
        sup[m] = loss_sup(p_lab, *targets[m], *weights[m], &g_sup[m]);
        cross[m] = cross_supervision_loss(p_unl, other.target.values(), other.mask.values()).value;
        g_cross[m] = cross_supervision_gradient(p_unl, other.target.values(), other.mask.values());
    }

    row.loss_sup_a = sup[0];
    row.loss_sup_b = sup[1];
    row.loss_cross_a = cross[0];
    row.loss_cross_b = cross[1];
    row.mask_frac = 0.5 * (partner[0].mask_frac + partner[1].mask_frac);

    for (double v : {sup[0], sup[1], cross[0], cross[1]})
        if (!std::isfinite(v)) {
            char buf[512];
            std::snprintf(buf, sizeof buf,
                          "non-finite loss at iter %d (alpha=%.6g lambda=%.6g lr=%.6g labeled=%s unlabeled=%s "
                          "sup_a=%g sup_b=%g cross_a=%g cross_b=%g)",
                          it, row.alpha, row.lambda, row.lr, batch.labeled_id.c_str(), batch.unlabeled_id.c_str(),
                          sup[0], sup[1], cross[0], cross[1]);
            throw TrainingAbort(buf);
        }

    const double lam = row.lambda;
    for (int m = 0; m < 2; ++m) {
        SegModel& net = *models[m];
        net.zero_grad();
        for (auto& g : g_sup[m])
            g *= 1.0 - lam;
        net.backward(passes[m].labeled, g_sup[m]);
        if (lam > 0) {
            for (auto& g : g_cross[m])
                g *= lam;
            net.backward(passes[m].unlabeled, g_cross[m]);
        }
    }
    state.opt_a.step(state.model_a, row.lr);
    state.opt_b.step(state.model_b, row.lr);

    state.history.push_back(row);
    ++state.iter;
    return row;
}

// -------------------------------------------------------- sliding window

std::vector<int> window_origins(int extent, int patch, int stride)
{
    if (patch > extent)
        throw ShapeError("patch extent " + std::to_string(patch) + " exceeds volume extent " + std::to_string(extent));
    if (stride < 1)
        throw ConfigError("stride must be >= 1");
    std::vector<int> out;
    for (int o = 0; o + patch <= extent; o += stride)
        out.push_back(o);
    if (out.back() + patch < extent)
        out.push_back(extent - patch);
    return out;
}

ProbVolume sliding_window_predict(const std::vector<Predictor>& predictors, const Volume3D& volume, const Dims& patch,
                                  const Dims& stride)
{
    if (predictors.empty())
        throw ConfigError("sliding_window_predict needs at least one model");
    const Dims& d = volume.dims();
    const auto ox = window_origins(d.h, patch.h, stride.h);
    const auto oy = window_origins(d.w, patch.w, stride.w);
    const auto oz = window_origins(d.d, patch.d, stride.d);
    Grid3<double> sum(d, 0.0);
    Grid3<int> hits(d, 0);
    for (int z0 : oz)
        for (int y0 : oy)
            for (int x0 : ox) {
                const Volume3D window = crop_patch(volume, {x0, y0, z0}, patch);
                Grid3<double> avg(patch, 0.0);
                for (const auto& pred : predictors) {
                    const ProbVolume p = pred(window);
                    if (!(p.dims() == patch))
                        throw ShapeError("predictor returned " + to_string(p.dims()) + " for patch " + to_string(patch));
                    for (std::size_t k = 0; k < p.size(); ++k)
                        avg[k] += double(p[k]);
                }
                for (int z = 0; z < patch.d; ++z)
                    for (int y = 0; y < patch.w; ++y)
                        for (int x = 0; x < patch.h; ++x) {
                            sum(x0 + x, y0 + y, z0 + z) += avg(x, y, z) / double(predictors.size());
                            hits(x0 + x, y0 + y, z0 + z) += 1;
                        }
            }
    ProbVolume out(d);
    for (std::size_t k = 0; k < out.size(); ++k)
        out[k] = float(sum[k] / double(hits[k]));
    return out;
}

ProbVolume sliding_window_predict(const std::vector<SegModel*>& models, const Volume3D& volume, const Dims& patch,
                                  const Dims& stride)
{
    std::vector<Predictor> preds;
    for (SegModel* m : models)
        preds.push_back([m](const Volume3D& p) { return m->forward(p, false); });
    return sliding_window_predict(preds, volume, patch, stride);
}

LabelGrid threshold(const ProbVolume& prob, float level)
{
    LabelGrid out(prob.dims());
    for (std::size_t k = 0; k < prob.size(); ++k)
        out[k] = prob[k] >= level ? 1 : 0;
    return out;
}

// ---------------------------------------------------------------- driver

namespace {

struct TestVolume {
    std::string id;
    Volume3D volume;
    LabelGrid label;
};

OrthogonalAnnotation annotation_for(const io::ManifestEntry& e, const LabelVolume& label, const PlaneAxes& axes)
{
    int m, n;
    if (e.m && e.n) {
        m = *e.m;
        n = *e.n;
    } else {
        std::tie(m, n) = select_annotation_slices(label, axes);
    }
    return make_orthogonal_annotation(label, m, n, axes);
}

std::optional<std::pair<LabelGrid, LabelGrid>> find_pseudo(const std::filesystem::path& dir, const std::string& id)
{
    if (dir.empty())
        return std::nullopt;
    const auto a = dir / (id + "_pseudo_a.raw"), b = dir / (id + "_pseudo_b.raw");
    if (!std::filesystem::exists(a) || !std::filesystem::exists(b))
        return std::nullopt;
    return std::make_pair(io::load_label(a).grid(), io::load_label(b).grid());
}

int uniform_int(std::mt19937_64& rng, int lo, int hi)
{
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

Index3 random_origin(std::mt19937_64& rng, const Dims& d, const Dims& p)
{
    const int x = uniform_int(rng, 0, d.h - p.h);
    const int y = uniform_int(rng, 0, d.w - p.w);
    const int z = uniform_int(rng, 0, d.d - p.d);
    return {x, y, z};
}

// Origin whose patch contains slice `index` along `axis`.
Index3 origin_through(std::mt19937_64& rng, const Dims& d, const Dims& p, int axis, int index)
{
    Index3 o = random_origin(rng, d, p);
    const int P = p.extent(axis), E = d.extent(axis);
    const int c = uniform_int(rng, std::max(0, index - P + 1), std::min(index, E - P));
    (axis == 0 ? o.x : axis == 1 ? o.y : o.z) = c;
    return o;
}

} // namespace

TrainResult train_desco(const io::Manifest& manifest, const TrainConfig& cfg, const TrainOutputs& out)
{
    cfg.validate();
    const auto labeled_entries = manifest.labeled(cfg.labeled_limit);
    const auto unlabeled_entries = manifest.unlabeled(cfg.unlabeled_limit);
    if (labeled_entries.empty())
        throw ConfigError("manifest has no annotated training entries");
    if (unlabeled_entries.empty())
        throw ConfigError("manifest has no unlabeled training entries");

    auto prep = [&](const Volume3D& v) { return cfg.normalize_intensity ? normalize_intensity(v) : v; };

    std::vector<PreparedVolume> labeled;
    for (const auto& e : labeled_entries) {
        if (!e.label_path)
            throw ConfigError("annotated entry '" + e.id + "' has no label_path");
        const Volume3D vol = io::load_volume(manifest.resolve(e.volume_path));
        const LabelVolume lab = io::load_label(manifest.resolve(*e.label_path));
        const auto ann = annotation_for(e, lab, cfg.axes);
        PreparedVolume pv = prepare_labeled_volume(vol, ann, cfg, find_pseudo(out.pseudo_dir, e.id));
        pv.volume = prep(pv.volume);
        labeled.push_back(std::move(pv));
    }
    std::vector<Volume3D> unlabeled;
    std::vector<std::string> unlabeled_ids;
    for (const auto& e : unlabeled_entries) {
        unlabeled.push_back(prep(io::load_volume(manifest.resolve(e.volume_path))));
        unlabeled_ids.push_back(e.id);
    }
    std::vector<TestVolume> tests;
    for (const auto& e : manifest.test()) {
        if (!e.label_path)
            continue;
        tests.push_back({e.id, prep(io::load_volume(manifest.resolve(e.volume_path))),
                         io::load_label(manifest.resolve(*e.label_path)).grid()});
    }

    if (!out.dir.empty()) {
        std::filesystem::create_directories(out.dir / "checkpoints");
        io::write_json(cfg.to_json(), out.dir / "run_config.json");
    }

    TrainState state(cfg);
    std::mt19937_64 rng(cfg.seed);
    const int total = cfg.schedule.total_iters;
    double current_alpha = -1;
    std::vector<std::pair<WeightMap, WeightMap>> wmaps;

    for (int it = 0; it < total; ++it) {
        const double a = cfg.alpha(it);
        if (a != current_alpha) {
            wmaps.clear();
            for (const auto& pv : labeled)
                wmaps.emplace_back(pv.weights(cfg.plane_a, a), pv.weights(cfg.plane_b, a));
            current_alpha = a;
        }

        const int li = uniform_int(rng, 0, int(labeled.size()) - 1);
        const PreparedVolume& pv = labeled[std::size_t(li)];
        const Dims& d = pv.volume.dims();
        Index3 lo;
        if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.annotated_patch_prob) {
            const Plane p = uniform_int(rng, 0, 1) == 0 ? Plane::A : Plane::B;
            lo = origin_through(rng, d, cfg.patch, cfg.axes.axis(p), pv.source_index(p));
        } else {
            lo = random_origin(rng, d, cfg.patch);
        }
        const int ui = uniform_int(rng, 0, int(unlabeled.size()) - 1);
        const Index3 uo = random_origin(rng, unlabeled[std::size_t(ui)].dims(), cfg.patch);

        StepBatch batch{crop_patch(pv.volume, lo, cfg.patch),
                        crop_grid(pv.mixed(cfg.plane_a).data, lo, cfg.patch),
                        crop_grid(pv.mixed(cfg.plane_b).data, lo, cfg.patch),
                        crop_grid(wmaps[std::size_t(li)].first.data, lo, cfg.patch),
                        crop_grid(wmaps[std::size_t(li)].second.data, lo, cfg.patch),
                        crop_patch(unlabeled[std::size_t(ui)], uo, cfg.patch),
                        pv.id,
                        unlabeled_ids[std::size_t(ui)]};
        train_step(state, batch, cfg);
        HistoryRow& row = state.history.back();

        const bool eval_now = (it + 1) % cfg.eval_every == 0 || it + 1 == total;
        if (eval_now && !tests.empty()) {
            double da = 0, db = 0, de = 0;
            for (const auto& tv : tests) {
                const ProbVolume pa = sliding_window_predict({&state.model_a}, tv.volume, cfg.patch, cfg.stride());
                const ProbVolume pb = sliding_window_predict({&state.model_b}, tv.volume, cfg.patch, cfg.stride());
                ProbVolume pe(pa.dims());
                for (std::size_t k = 0; k < pe.size(); ++k)
                    pe[k] = float(0.5 * (double(pa[k]) + double(pb[k])));
                da += dice(threshold(pa), tv.label);
                db += dice(threshold(pb), tv.label);
                de += dice(threshold(pe), tv.label);
            }
            const double n = double(tests.size());
            row.val_dice_a = da / n;
            row.val_dice_b = db / n;
            row.val_dice_ens = de / n;
        }
        if (eval_now && !out.dir.empty()) {
            char name[64];
            std::snprintf(name, sizeof name, "iter%06d", it + 1);
            const json extra = {{"iter", it + 1}};
            save_checkpoint(state.model_a, out.dir / "checkpoints" / (std::string("model_a_") + name + ".bin"), extra);
            save_checkpoint(state.model_b, out.dir / "checkpoints" / (std::string("model_b_") + name + ".bin"), extra);
            write_history(state.history, out.dir / "history.csv");
        }
        if (out.on_row)
            out.on_row(row);
    }

    if (!out.dir.empty()) {
        const json extra = {{"iter", total}, {"run_config", cfg.to_json()}};
        save_checkpoint(state.model_a, out.dir / "model_a.bin", extra);
        save_checkpoint(state.model_b, out.dir / "model_b.bin", extra);
        write_history(state.history, out.dir / "history.csv");
    }
    return {std::move(state.model_a), std::move(state.model_b), std::move(state.history)};
}

} // namespace desco
