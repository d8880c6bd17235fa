#include "desco/commands.hpp"

#include <cstdio>
#include <iostream>
#include <set>

#include <CLI11.hpp>

#include "desco/evaluation.hpp"
#include "desco/plot.hpp"
#include "desco/provenance.hpp"
#include "desco/registration.hpp"
#include "desco/report.hpp"
#include "desco/trainer.hpp"

namespace desco {

namespace fs = std::filesystem;
using nlohmann::json;

// ------------------------------------------------------------- synth

void SynthConfig::validate() const
{
    phantom.validate();
    axes.validate();
    if (n_train < 2)
        throw ConfigError("n_train must be >= 2");
    if (n_annotated < 1 || n_annotated >= n_train)
        throw ConfigError("n_annotated must lie in [1, n_train)");
    if (n_test < 0)
        throw ConfigError("n_test must be >= 0");
}

json SynthConfig::to_json() const
{
    const PhantomSpec& p = phantom;
    return {{"dims", {p.dims.h, p.dims.w, p.dims.d}},
            {"n_blobs", p.n_blobs},
            {"drift", p.drift},
            {"noise_sigma", p.noise_sigma},
            {"n_distractors", p.n_distractors},
            {"background_intensity", p.background_intensity},
            {"foreground_intensity", p.foreground_intensity},
            {"distractor_intensity", p.distractor_intensity},
            {"spacing", {p.spacing.sx, p.spacing.sy, p.spacing.sz}},
            {"n_train", n_train},
            {"n_annotated", n_annotated},
            {"n_test", n_test},
            {"seed", seed},
            {"axes", {axes.a, axes.b}}};
}

SynthConfig SynthConfig::from_json(const json& j)
{
    static const std::set<std::string> known = {"dims", "n_blobs", "drift", "noise_sigma", "n_distractors",
                                                "background_intensity", "foreground_intensity",
                                                "distractor_intensity", "spacing", "n_train", "n_annotated",
                                                "n_test", "seed", "axes"};
    if (!j.is_object())
        throw ConfigError("synth config must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw ConfigError("unknown field '" + it.key() + "' in synth config");
    SynthConfig c;
    try {
        PhantomSpec& p = c.phantom;
        if (j.contains("dims")) {
            const auto& d = j["dims"];
            p.dims = {d.at(0).get<int>(), d.at(1).get<int>(), d.at(2).get<int>()};
        }
        p.n_blobs = j.value("n_blobs", p.n_blobs);
        p.drift = j.value("drift", p.drift);
        p.noise_sigma = j.value("noise_sigma", p.noise_sigma);
        p.n_distractors = j.value("n_distractors", p.n_distractors);
        p.background_intensity = j.value("background_intensity", p.background_intensity);
        p.foreground_intensity = j.value("foreground_intensity", p.foreground_intensity);
        p.distractor_intensity = j.value("distractor_intensity", p.distractor_intensity);
        if (j.contains("spacing")) {
            const auto& s = j["spacing"];
            p.spacing = {s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>()};
        }
        c.n_train = j.value("n_train", c.n_train);
        c.n_annotated = j.value("n_annotated", c.n_annotated);
        c.n_test = j.value("n_test", c.n_test);
        c.seed = j.value("seed", c.seed);
        if (j.contains("axes"))
            c.axes = {j["axes"].at(0).get<int>(), j["axes"].at(1).get<int>()};
    } catch (const json::exception& e) {
        throw ConfigError(std::string("synth config: ") + e.what());
    }
    c.validate();
    return c;
}

std::uint64_t SynthConfig::volume_seed(int index) const
{
    // splitmix64 step keeps neighbouring seeds decorrelated
    std::uint64_t z = seed * 0x9e3779b97f4a7c15ULL + std::uint64_t(index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

io::Manifest write_synthetic_dataset(const SynthConfig& cfg, const fs::path& dir)
{
    cfg.validate();
    fs::create_directories(dir / "volumes");
    io::Manifest m;
    m.base_dir = dir;
    m.provenance = provenance_block(cfg.to_json(), cfg.seed);
    const int total = cfg.n_train + cfg.n_test;
    for (int i = 0; i < total; ++i) {
        const bool is_test = i >= cfg.n_train;
        char name[32];
        std::snprintf(name, sizeof name, is_test ? "test_%03d" : "train_%03d", is_test ? i - cfg.n_train : i);
        PhantomSpec spec = cfg.phantom;
        spec.seed = cfg.volume_seed(i);
        const Phantom ph = generate_phantom(spec, name);
        const std::string vol_rel = std::string("volumes/") + name + ".raw";
        const std::string lab_rel = std::string("volumes/") + name + "_label.raw";
        io::save_volume(ph.volume, dir / vol_rel);
        io::save_label(ph.label, dir / lab_rel, std::string(name) + "_label");

        io::ManifestEntry e;
        e.id = name;
        e.volume_path = vol_rel;
        e.label_path = lab_rel;
        e.split = is_test ? "test" : "train";
        e.annotated = !is_test && i < cfg.n_annotated;
        if (e.annotated) {
            const auto [mi, ni] = select_annotation_slices(ph.label, cfg.axes);
            e.m = mi;
            e.n = ni;
        }
        m.entries.push_back(e);
    }
    io::save_manifest(m, dir / "manifest.json");
    return m;
}

// --------------------------------------------------------------- CLI

namespace {

void write_provenance(const fs::path& dir, const json& config, std::uint64_t seed)
{
    io::write_json(provenance_block(config, seed), dir / "provenance.json");
}

json load_config_file(const std::string& path)
{
    if (path.empty())
        return json::object();
    return io::read_json(path);
}

struct Common {
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* cmd, Common& c, bool out_required = true)
{
    cmd->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
    c.seed_opt = cmd->add_option("--seed", c.seed, "random seed (overrides the config)");
    auto* o = cmd->add_option("--out", c.out, "output directory");
    if (out_required)
        o->required();
}

template <class T>
void override_if(CLI::Option* opt, T& target, const T& value)
{
    if (opt && opt->count() > 0)
        target = value;
}

RegistrationConfig apply_registration_flags(RegistrationConfig r, CLI::App* cmd, const std::string& backend, int iters,
                                            double sigma, int levels, const std::string& ext)
{
    if (cmd->get_option("--backend")->count())
        r.backend = parse_backend(backend);
    override_if(cmd->get_option("--reg-iterations"), r.iterations, iters);
    override_if(cmd->get_option("--reg-sigma"), r.sigma, sigma);
    override_if(cmd->get_option("--reg-levels"), r.levels, levels);
    override_if(cmd->get_option("--external-command"), r.external_command, ext);
    r.validate();
    return r;
}

struct RegFlags {
    std::string backend;
    int iterations = 0;
    double sigma = 0;
    int levels = 0;
    std::string external;
};

void add_registration_flags(CLI::App* cmd, RegFlags& f)
{
    cmd->add_option("--backend", f.backend, "builtin_demons | translation_only | external_command");
    cmd->add_option("--reg-iterations", f.iterations, "registration iterations per pyramid level");
    cmd->add_option("--reg-sigma", f.sigma, "Gaussian smoothing of the deformation field");
    cmd->add_option("--reg-levels", f.levels, "registration pyramid levels");
    cmd->add_option("--external-command", f.external, "command template with {moving} {fixed} {out}");
}

void write_quality_csv(const PseudoLabelVolume& p, const fs::path& path)
{
    std::string s = "slice,d,fg_area\n";
    for (const auto& q : p.report)
        s += std::to_string(q.slice) + "," + std::to_string(q.distance) + "," + std::to_string(q.fg_area) + "\n";
    io::write_text(s, path);
}

} // namespace

int run_cli(int argc, char** argv)
{
    CLI::App app{"desco: orthogonal-annotation co-training for 3D segmentation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(code_version()));

    // synth
    Common synth_c;
    SynthConfig synth_flags;
    int synth_size = 0;
    auto* synth = app.add_subcommand("synth", "generate a synthetic phantom dataset");
    add_common(synth, synth_c);
    synth->add_option("--n-train", synth_flags.n_train, "training volumes");
    synth->add_option("--n-annotated", synth_flags.n_annotated, "annotated training volumes");
    synth->add_option("--n-test", synth_flags.n_test, "test volumes");
    synth->add_option("--size", synth_size, "cubic volume extent");
    synth->add_option("--drift", synth_flags.phantom.drift, "max per-slice centre drift (voxels)");
    synth->add_option("--noise", synth_flags.phantom.noise_sigma, "intensity noise sigma");
    synth->add_option("--blobs", synth_flags.phantom.n_blobs, "foreground blobs per volume");
    synth->add_option("--distractors", synth_flags.phantom.n_distractors, "unlabeled distractor blobs per volume");

    // propagate
    Common prop_c;
    std::string prop_manifest;
    RegFlags prop_reg;
    auto* prop = app.add_subcommand("propagate", "propagate annotated slices into pseudo-label volumes");
    add_common(prop, prop_c);
    prop->add_option("--manifest", prop_manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
    add_registration_flags(prop, prop_reg);

    // train
    Common train_c;
    std::string train_manifest, train_mode, train_pseudo;
    int train_iters = 0, train_eval_every = 0, train_update_every = 0;
    double train_lambda_oc = 0;
    auto* train = app.add_subcommand("train", "co-train two segmentation models");
    add_common(train, train_c);
    train->add_option("--manifest", train_manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
    train->add_option("--mode", train_mode, "desco | sparse_only | static_dense");
    train->add_option("--iters", train_iters, "total iterations");
    train->add_option("--alpha-update-every", train_update_every, "iterations per alpha block");
    train->add_option("--eval-every", train_eval_every, "validation/checkpoint interval");
    train->add_option("--lambda-oc", train_lambda_oc, "final cross-supervision weight");
    train->add_option("--pseudo-dir", train_pseudo, "directory with precomputed pseudo labels from `propagate`");

    // eval
    Common eval_c;
    std::string eval_manifest, eval_a, eval_b, eval_run;
    bool eval_single = false, eval_mm = false;
    std::vector<int> eval_stride;
    auto* evalc = app.add_subcommand("eval", "evaluate checkpoints on the test split");
    add_common(evalc, eval_c);
    evalc->add_option("--manifest", eval_manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
    evalc->add_option("--run", eval_run, "training output directory (uses model_a.bin / model_b.bin)");
    evalc->add_option("--checkpoint-a", eval_a, "checkpoint of model a");
    evalc->add_option("--checkpoint-b", eval_b, "checkpoint of model b");
    evalc->add_flag("--single", eval_single, "use model a only instead of the ensemble");
    evalc->add_flag("--mm", eval_mm, "report surface distances in mm");
    evalc->add_option("--stride", eval_stride, "sliding-window stride (3 integers)")->expected(3);

    // analyze
    Common an_c;
    std::string an_manifest;
    int an_pairs = 50;
    auto* analyze = app.add_subcommand("analyze", "HSIC of parallel vs orthogonal slice pairs");
    add_common(analyze, an_c);
    analyze->add_option("--manifest", an_manifest, "dataset manifest (default: phantoms from the config)");
    analyze->add_option("--pairs", an_pairs, "pairs of each kind");

    // plot
    Common plot_c;
    std::string plot_history_path, plot_report_path;
    auto* plotc = app.add_subcommand("plot", "render training curves and metric bars as SVG");
    add_common(plotc, plot_c);
    plotc->add_option("--history", plot_history_path, "history.csv")->check(CLI::ExistingFile);
    plotc->add_option("--report", plot_report_path, "report.json")->check(CLI::ExistingFile);

    // register
    Common reg_c;
    std::string reg_moving, reg_fixed;
    RegFlags reg_flags;
    auto* reg = app.add_subcommand("register", "register two 2D slices and write the field");
    add_common(reg, reg_c, false);
    reg->add_option("--moving", reg_moving, "moving slice (simple format)")->required()->check(CLI::ExistingFile);
    reg->add_option("--fixed", reg_fixed, "fixed slice (simple format)")->required()->check(CLI::ExistingFile);
    reg->add_option("--field", reg_c.out, "output field path (.raw)")->required();
    add_registration_flags(reg, reg_flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "desco: error kind=usage message=" << e.what() << "\n";
        return 64;
    }

    try {
        if (synth->parsed()) {
            const json file = load_config_file(synth_c.config);
            SynthConfig cfg = SynthConfig::from_json(file);
            override_if(synth->get_option("--n-train"), cfg.n_train, synth_flags.n_train);
            override_if(synth->get_option("--n-annotated"), cfg.n_annotated, synth_flags.n_annotated);
            override_if(synth->get_option("--n-test"), cfg.n_test, synth_flags.n_test);
            override_if(synth->get_option("--size"), cfg.phantom.dims, Dims{synth_size, synth_size, synth_size});
            override_if(synth->get_option("--drift"), cfg.phantom.drift, synth_flags.phantom.drift);
            override_if(synth->get_option("--noise"), cfg.phantom.noise_sigma, synth_flags.phantom.noise_sigma);
            override_if(synth->get_option("--blobs"), cfg.phantom.n_blobs, synth_flags.phantom.n_blobs);
            override_if(synth->get_option("--distractors"), cfg.phantom.n_distractors, synth_flags.phantom.n_distractors);
            override_if(synth_c.seed_opt, cfg.seed, synth_c.seed);
            cfg.validate();
            const fs::path out = synth_c.out;
            fs::create_directories(out);
            io::write_json(cfg.to_json(), out / "effective_config.json");
            write_synthetic_dataset(cfg, out);
            write_provenance(out, cfg.to_json(), cfg.seed);
            std::cout << "wrote " << cfg.n_train + cfg.n_test << " volumes and " << (out / "manifest.json").string() << "\n";
            return 0;
        }

        if (prop->parsed()) {
            const json file = load_config_file(prop_c.config);
            RegistrationConfig rc = file.contains("registration") ? registration_from_json(file["registration"])
                                                                  : RegistrationConfig{};
            rc = apply_registration_flags(rc, prop, prop_reg.backend, prop_reg.iterations, prop_reg.sigma,
                                          prop_reg.levels, prop_reg.external);
            PlaneAxes axes;
            if (file.contains("axes"))
                axes = {file["axes"].at(0).get<int>(), file["axes"].at(1).get<int>()};
            axes.validate();
            const json eff = {{"registration", to_json(rc)}, {"axes", {axes.a, axes.b}}};
            const fs::path out = prop_c.out;
            fs::create_directories(out);
            io::write_json(eff, out / "effective_config.json");
            const io::Manifest man = io::load_manifest(prop_manifest);
            int count = 0;
            for (const auto& e : man.labeled()) {
                const Volume3D vol = io::load_volume(man.resolve(e.volume_path));
                const LabelVolume lab = io::load_label(man.resolve(*e.label_path));
                const auto ann = make_orthogonal_annotation(lab, *e.m, *e.n, axes);
                const auto [pa, pb] = propagate_orthogonal(vol, ann, rc);
                io::save_label(LabelVolume(pa.data, vol.spacing()), out / (e.id + "_pseudo_a.raw"), e.id + "_pseudo_a");
                io::save_label(LabelVolume(pb.data, vol.spacing()), out / (e.id + "_pseudo_b.raw"), e.id + "_pseudo_b");
                write_quality_csv(pa, out / (e.id + "_quality_a.csv"));
                write_quality_csv(pb, out / (e.id + "_quality_b.csv"));
                ++count;
            }
            write_provenance(out, eff, prop_c.seed_opt->count() ? prop_c.seed : 0);
            std::cout << "propagated " << count << " annotated volumes into " << out.string() << "\n";
            return 0;
        }

        if (train->parsed()) {
            const json file = load_config_file(train_c.config);
            TrainConfig cfg = TrainConfig::from_json(file);
            if (train->get_option("--mode")->count())
                cfg.mode = parse_mode(train_mode);
            override_if(train->get_option("--iters"), cfg.schedule.total_iters, train_iters);
            override_if(train->get_option("--alpha-update-every"), cfg.schedule.alpha_update_every, train_update_every);
            override_if(train->get_option("--eval-every"), cfg.eval_every, train_eval_every);
            override_if(train->get_option("--lambda-oc"), cfg.schedule.lambda_oc, train_lambda_oc);
            override_if(train_c.seed_opt, cfg.seed, train_c.seed);
            cfg.validate();
            const fs::path out = train_c.out;
            fs::create_directories(out);
            io::write_json(cfg.to_json(), out / "effective_config.json");
            write_provenance(out, cfg.to_json(), cfg.seed);
            const io::Manifest man = io::load_manifest(train_manifest);
            TrainOutputs outputs{out, train_pseudo, {}};
            const auto result = train_desco(man, cfg, outputs);
            const auto& last = result.history.back();
            std::cout << "trained " << result.history.size() << " iterations";
            if (last.val_dice_ens)
                std::cout << ", final val_dice_ens=" << *last.val_dice_ens;
            std::cout << "\n";
            return 0;
        }

        if (evalc->parsed()) {
            const json file = load_config_file(eval_c.config);
            fs::path pa = eval_a, pb = eval_b;
            if (!eval_run.empty()) {
                if (pa.empty())
                    pa = fs::path(eval_run) / "model_a.bin";
                if (pb.empty())
                    pb = fs::path(eval_run) / "model_b.bin";
            }
            if (pa.empty())
                throw ConfigError("eval needs --run or --checkpoint-a");
            EvalConfig ec;
            if (file.contains("patch"))
                ec.patch = {file["patch"].at(0).get<int>(), file["patch"].at(1).get<int>(), file["patch"].at(2).get<int>()};
            else if (!eval_run.empty() && fs::exists(fs::path(eval_run) / "effective_config.json"))
                ec.patch = TrainConfig::from_json(io::read_json(fs::path(eval_run) / "effective_config.json")).patch;
            if (file.contains("stride"))
                ec.stride = Dims{file["stride"].at(0).get<int>(), file["stride"].at(1).get<int>(),
                                 file["stride"].at(2).get<int>()};
            if (!eval_stride.empty())
                ec.stride = Dims{eval_stride[0], eval_stride[1], eval_stride[2]};
            ec.normalize_intensity = file.value("normalize_intensity", ec.normalize_intensity);
            ec.use_spacing = eval_mm || file.value("use_spacing", false);
            const bool single = eval_single || file.value("single", false);

            SegModel ma = load_checkpoint(pa);
            std::vector<SegModel> extra;
            std::vector<SegModel*> models{&ma};
            if (!single) {
                if (pb.empty())
                    throw ConfigError("ensemble evaluation needs model b (--checkpoint-b or --run), or pass --single");
                extra.push_back(load_checkpoint(pb));
                models.push_back(&extra.back());
            }
            const json eff = {{"patch", {ec.patch.h, ec.patch.w, ec.patch.d}},
                              {"stride", {ec.effective_stride().h, ec.effective_stride().w, ec.effective_stride().d}},
                              {"normalize_intensity", ec.normalize_intensity},
                              {"use_spacing", ec.use_spacing},
                              {"single", single},
                              {"checkpoint_a", pa.string()},
                              {"checkpoint_b", single ? std::string() : pb.string()}};
            const fs::path out = eval_c.out;
            fs::create_directories(out);
            io::write_json(eff, out / "effective_config.json");
            const io::Manifest man = io::load_manifest(eval_manifest);
            const RunReport rep = evaluate_run(models, man, ec);
            json j = report_to_json(rep);
            j["provenance"] = provenance_block(eff, eval_c.seed_opt->count() ? eval_c.seed : 0);
            j["units"] = ec.use_spacing ? "mm" : "voxel";
            io::write_json(j, out / "report.json");
            io::write_text(report_to_csv(rep), out / "report.csv");
            write_provenance(out, eff, eval_c.seed_opt->count() ? eval_c.seed : 0);
            const auto& dice_agg = rep.aggregate.at("dice");
            std::printf("dice %.4f +- %.4f over %zu volumes\n", dice_agg.mean, dice_agg.std, rep.volumes.size());
            return 0;
        }

        if (analyze->parsed()) {
            const json file = load_config_file(an_c.config);
            std::uint64_t seed = file.value("seed", std::uint64_t(7));
            override_if(an_c.seed_opt, seed, an_c.seed);
            const int pairs = analyze->get_option("--pairs")->count() ? an_pairs : file.value("pairs", an_pairs);
            std::vector<Volume3D> vols;
            json eff = {{"seed", seed}, {"pairs", pairs}};
            if (!an_manifest.empty()) {
                const io::Manifest man = io::load_manifest(an_manifest);
                for (const auto& e : man.entries)
                    vols.push_back(io::load_volume(man.resolve(e.volume_path)));
                eff["manifest"] = an_manifest;
            } else {
                SynthConfig sc = SynthConfig::from_json(file.value("synth", json::object()));
                sc.seed = seed;
                for (int i = 0; i < sc.n_train; ++i) {
                    PhantomSpec ps = sc.phantom;
                    ps.seed = sc.volume_seed(i);
                    vols.push_back(generate_phantom(ps, "phantom_" + std::to_string(i)).volume);
                }
                eff["synth"] = sc.to_json();
            }
            const auto rows = compare_slice_pairs(vols, pairs, seed);
            const fs::path out = an_c.out;
            fs::create_directories(out);
            io::write_json(eff, out / "effective_config.json");
            std::string detail = "volume,pair_type,index_1,index_2,hsic_linear,hsic_rbf\n";
            double sums[2][2] = {{0, 0}, {0, 0}};
            int counts[2] = {0, 0};
            for (const auto& r : rows) {
                char buf[160];
                std::snprintf(buf, sizeof buf, "%s,%s,%d,%d,%.10g,%.10g\n", r.volume_id.c_str(),
                              r.orthogonal ? "orthogonal" : "parallel", r.index_1, r.index_2, r.linear, r.rbf);
                detail += buf;
                sums[r.orthogonal][0] += r.linear;
                sums[r.orthogonal][1] += r.rbf;
                ++counts[r.orthogonal];
            }
            std::string summary = "kernel,pair_type,mean_hsic,pairs\n";
            for (int k = 0; k < 2; ++k)
                for (int o = 0; o < 2; ++o) {
                    char buf[128];
                    std::snprintf(buf, sizeof buf, "%s,%s,%.10g,%d\n", k == 0 ? "linear" : "rbf",
                                  o ? "orthogonal" : "parallel", sums[o][k] / counts[o], counts[o]);
                    summary += buf;
                }
            io::write_text(detail, out / "hsic_pairs.csv");
            io::write_text(summary, out / "hsic.csv");
            write_provenance(out, eff, seed);
            std::cout << summary;
            return 0;
        }

        if (plotc->parsed()) {
            if (plot_history_path.empty() && plot_report_path.empty())
                throw ConfigError("plot needs --history and/or --report");
            const fs::path out = plot_c.out;
            fs::create_directories(out);
            std::vector<fs::path> written;
            if (!plot_history_path.empty()) {
                const auto w = plot::plot_history(read_history(plot_history_path), out);
                written.insert(written.end(), w.begin(), w.end());
            }
            if (!plot_report_path.empty()) {
                const json rep = io::read_json(plot_report_path);
                if (!rep.contains("aggregate"))
                    throw FormatError(plot_report_path + ": missing field 'aggregate'");
                auto bar = [&](const char* m) {
                    const auto& a = rep["aggregate"].at(m);
                    const double mean = a.at("mean").is_null() ? NAN : a.at("mean").get<double>();
                    const double sd = a.at("std").is_null() ? 0.0 : a.at("std").get<double>();
                    return plot::Bar{m, mean, sd};
                };
                written.push_back(out / "report_overlap.svg");
                io::write_text(plot::bar_chart("Overlap metrics (mean +- std)", {bar("dice"), bar("jaccard")}), written.back());
                written.push_back(out / "report_distance.svg");
                io::write_text(plot::bar_chart("Surface distances (mean +- std)", {bar("hd95"), bar("asd")}), written.back());
            }
            write_provenance(out, {{"history", plot_history_path}, {"report", plot_report_path}}, 0);
            for (const auto& p : written)
                std::cout << "wrote " << p.string() << "\n";
            return 0;
        }

        if (reg->parsed()) {
            const json file = load_config_file(reg_c.config);
            RegistrationConfig rc = file.contains("registration") ? registration_from_json(file["registration"])
                                                                  : RegistrationConfig{};
            rc = apply_registration_flags(rc, reg, reg_flags.backend, reg_flags.iterations, reg_flags.sigma,
                                          reg_flags.levels, reg_flags.external);
            const ImageSlice moving = load_slice(reg_moving), fixed = load_slice(reg_fixed);
            const DeformationField2D f = register_slices(moving, fixed, rc);
            save_field(f, reg_c.out);
            std::printf("mse %.6g -> %.6g\n", mean_squared_error(moving, fixed), mean_squared_error(warp_image(moving, f), fixed));
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "desco: error kind=" << e.kind() << " message=" << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "desco: error kind=internal message=" << e.what() << "\n";
        return 3;
    }
    return 0;
}

} // namespace desco
