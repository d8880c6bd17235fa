#include "desco/report.hpp"

#include <cmath>
#include <cstdio>

#include "desco/trainer.hpp"

namespace desco {

Dims EvalConfig::effective_stride() const
{
    if (stride)
        return *stride;
    return {std::max(1, patch.h / 2), std::max(1, patch.w / 2), std::max(1, patch.d / 2)};
}

RunReport evaluate_run(const std::vector<SegModel*>& models, const io::Manifest& manifest, const EvalConfig& cfg)
{
    RunReport r;
    for (const auto& e : manifest.test()) {
        if (!e.label_path)
            throw ConfigError("test entry '" + e.id + "' has no label_path");
        Volume3D vol = io::load_volume(manifest.resolve(e.volume_path));
        const LabelVolume gt = io::load_label(manifest.resolve(*e.label_path));
        if (cfg.normalize_intensity)
            vol = normalize_intensity(vol);
        const ProbVolume p = sliding_window_predict(models, vol, cfg.patch, cfg.effective_stride());
        const Spacing sp = cfg.use_spacing ? vol.spacing() : Spacing{};
        r.volumes.push_back(compute_metrics(e.id, threshold(p), gt.grid(), sp));
        r.undefined_surface += r.volumes.back().undefined_surface;
    }
    if (r.volumes.empty())
        throw ConfigError("manifest has no test entries to evaluate");
    std::vector<double> d, j, h, a;
    for (const auto& v : r.volumes) {
        d.push_back(v.dice);
        j.push_back(v.jaccard);
        h.push_back(v.hd95);
        a.push_back(v.asd);
    }
    r.aggregate = {{"dice", aggregate(d)}, {"jaccard", aggregate(j)}, {"hd95", aggregate(h)}, {"asd", aggregate(a)}};
    return r;
}

namespace {

nlohmann::json number_or_null(double v)
{
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

std::string cell(double v)
{
    if (!std::isfinite(v))
        return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

} // namespace

nlohmann::json report_to_json(const RunReport& r)
{
    nlohmann::ordered_json j;
    j["volumes"] = nlohmann::ordered_json::array();
    for (const auto& v : r.volumes)
        j["volumes"].push_back({{"id", v.id},
                                {"dice", v.dice},
                                {"jaccard", v.jaccard},
                                {"hd95", number_or_null(v.hd95)},
                                {"asd", number_or_null(v.asd)},
                                {"surface_undefined", v.undefined_surface}});
    for (const auto& [name, a] : r.aggregate)
        j["aggregate"][name] = {{"mean", number_or_null(a.mean)}, {"std", number_or_null(a.std)}, {"n", a.count}};
    j["undefined_surface_volumes"] = r.undefined_surface;
    return j;
}

std::string report_to_csv(const RunReport& r)
{
    std::string s = "id,dice,jaccard,hd95,asd\n";
    for (const auto& v : r.volumes)
        s += v.id + "," + cell(v.dice) + "," + cell(v.jaccard) + "," + cell(v.hd95) + "," + cell(v.asd) + "\n";
    auto agg = [&](const char* name, auto field) {
        s += std::string(name);
        for (const char* m : {"dice", "jaccard", "hd95", "asd"})
            s += "," + cell(field(r.aggregate.at(m)));
        s += "\n";
    };
    agg("mean", [](const Aggregate& a) { return a.mean; });
    agg("std", [](const Aggregate& a) { return a.std; });
    return s;
}

} // namespace desco
