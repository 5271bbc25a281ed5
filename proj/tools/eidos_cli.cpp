// eidos: command-line front end for data synthesis, training, forecasting,
// evaluation, noise benchmarking, probing and steering.

#include <fcntl.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "eidos/config.hpp"
#include "eidos/datagen.hpp"
#include "eidos/errors.hpp"
#include "eidos/forecast_eval.hpp"
#include "eidos/represent.hpp"
#include "eidos/trainer.hpp"

namespace fs = std::filesystem;
using namespace eidos;

namespace {

// Holds <run dir>/.lock for the lifetime of one command.
class RunDir {
   public:
    explicit RunDir(const std::string& dir) : dir_(dir) {
        std::error_code ec;
        fs::create_directories(dir_, ec);
        if (ec) throw IoError("cannot create run directory " + dir_.string() + ": " + ec.message());
        lock_ = dir_ / ".lock";
        int fd = ::open(lock_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd < 0) throw IoError("run directory " + dir_.string() + " is locked by another command (" + lock_.string() + ")");
        std::string pid = std::to_string(::getpid()) + "\n";
        [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
        ::close(fd);
    }
    ~RunDir() {
        std::error_code ec;
        fs::remove(lock_, ec);
    }
    RunDir(const RunDir&) = delete;
    RunDir& operator=(const RunDir&) = delete;

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    void write_resolved(const json& j) const {
        std::string p = path("resolved_config.json");
        std::ofstream f(p);
        if (!f) throw IoError("cannot write " + p);
        f << j.dump(2) << "\n";
    }

   private:
    fs::path dir_, lock_;
};

json read_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config " + path);
    try {
        return json::parse(f);
    } catch (const json::parse_error& e) {
        throw ParseError(path + ": " + e.what());
    }
}

// Run config file: a training config plus optional "preset" ("default" | "toy")
// and "out" keys.
struct RunConfig {
    TrainConfig train;
    std::optional<std::string> out;
    bool from_file = false;
};

RunConfig load_run_config(const std::string& path) {
    RunConfig rc;
    rc.train = toy_train_config();
    if (path.empty()) return rc;
    json j = read_json_file(path);
    if (!j.is_object()) throw ConfigError(path + ": config must be a JSON object");
    if (j.contains("preset")) {
        std::string p = j.at("preset").get<std::string>();
        if (p == "toy")
            rc.train = toy_train_config();
        else if (p == "default")
            rc.train = TrainConfig{};
        else
            throw ConfigError("unknown run preset '" + p + "' (expected toy or default)");
        j.erase("preset");
    }
    if (j.contains("out")) {
        rc.out = j.at("out").get<std::string>();
        j.erase("out");
    }
    rc.train = train_from_json(j, rc.train);
    rc.from_file = true;
    return rc;
}

std::string resolve_out(const std::string& flag, const RunConfig& rc, const std::string& fallback) {
    if (!flag.empty()) return flag;
    if (rc.out) return *rc.out;
    return fallback;
}

struct LoadedModel {
    ModelConfig cfg;
    ModelParams params;
    std::string hash;
    std::string source;
};

// The checkpoint's architecture wins; a config given alongside it must agree.
LoadedModel load_model(const std::string& checkpoint, const RunConfig& rc, std::uint64_t seed) {
    LoadedModel m;
    if (checkpoint.empty()) {
        m.cfg = rc.train.model;
        m.params = ModelParams::init(m.cfg, seed);
        m.source = "random-init";
    } else {
        Checkpoint c = read_checkpoint(checkpoint);
        if (rc.from_file && model_hash(rc.train.model) != c.config_hash)
            throw HashMismatchError("config model hash " + model_hash(rc.train.model) + " != checkpoint hash " +
                                    c.config_hash);
        m.cfg = c.config.model;
        m.params = std::move(c.params);
        m.source = checkpoint;
    }
    m.hash = model_hash(m.cfg);
    return m;
}

std::vector<SeriesRecord> load_records(const std::string& path) {
    if (path.empty()) throw InputError("--data is required");
    auto recs = read_series(path);
    if (recs.empty()) throw InputError(path + " contains no series");
    return recs;
}

std::size_t threads_flag(std::size_t t) { return t == 0 ? worker_threads() : t; }

// ---- synth ------------------------------------------------------------------------

struct SynthArgs {
    std::string config, out = "runs/synth", file = "series.jsonl";
    std::optional<std::string> kind;
    std::optional<std::size_t> count, length;
    std::optional<double> sigma;
    std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a) {
    GeneratorSpec g;
    if (!a.config.empty()) g = generator_spec_from_json(read_json_file(a.config));
    if (a.kind) g.kind = *a.kind;
    if (a.count) g.count = *a.count;
    if (a.length) g.length = *a.length;
    if (a.sigma) g.sigma = *a.sigma;
    g.validate();
    RunDir run(a.out);
    auto recs = generate_corpus(g, a.seed);
    std::string path = run.path(a.file);
    write_series(path, recs);
    run.write_resolved({{"command", "synth"}, {"seed", a.seed}, {"generator", to_json(g)}, {"output", path}});
    std::size_t points = 0;
    for (const auto& r : recs) points += r.target.size();
    std::cout << "synth: " << recs.size() << " series, " << points << " points -> " << path << "\n";
    return 0;
}

// ---- train ------------------------------------------------------------------------

struct TrainArgs {
    std::string config, out, resume;
    std::vector<std::string> data;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> steps, checkpoint_every, batch;
    std::optional<double> lambda_gnd, lambda_latent, lr;
    std::size_t threads = 0;
    bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
    RunConfig rc = load_run_config(a.config);
    std::optional<Trainer> trainer;
    if (!a.resume.empty()) {
        Checkpoint c = read_checkpoint(a.resume);
        if (rc.from_file && model_hash(rc.train.model) != c.config_hash)
            throw HashMismatchError("config model hash " + model_hash(rc.train.model) + " != checkpoint hash " +
                                    c.config_hash);
        rc.train = c.config;
        trainer.emplace(Trainer::resume(a.resume, load_sources(rc.train)));
    } else {
        TrainConfig& t = rc.train;
        if (a.seed) t.seed = *a.seed;
        if (a.steps) {
            t.optim.total_steps = *a.steps;
            t.optim.warmup_steps = std::max<std::size_t>(1, *a.steps / 10);
        }
        if (a.batch) t.batch_size = *a.batch;
        if (a.lambda_gnd) t.weights.lambda_gnd = *a.lambda_gnd;
        if (a.lambda_latent) t.weights.lambda_latent = *a.lambda_latent;
        if (a.lr) t.optim.lr_peak = *a.lr;
        if (a.checkpoint_every) t.checkpoint_every = *a.checkpoint_every;
        if (!a.data.empty()) {
            t.data.clear();
            for (const auto& p : a.data) t.data.push_back(DataSource{p, std::nullopt, 1.0});
        }
        t.validate();
        trainer.emplace(t, load_sources(t));
    }
    const TrainConfig& t = trainer->config();
    RunDir run(resolve_out(a.out, rc, "runs/train"));
    run.write_resolved({{"command", "train"}, {"train", to_json(t)}, {"model_hash", model_hash(t.model)}});
    trainer->set_threads(threads_flag(a.threads));

    MetricLog log(run.path("metrics.csv"), !a.resume.empty());
    std::size_t every = t.checkpoint_every;
    trainer->run(0, [&](const StepLog& s) {
        log.write(s);
        if (!a.quiet)
            std::cout << "step " << s.step << " lr " << s.lr << " loss " << s.total << " pred " << s.pred
                      << " latent " << s.latent << " gnd " << s.gnd << "\n";
        if (every > 0 && s.step % every == 0 && s.step < t.optim.total_steps)
            trainer->save(run.path("checkpoint_" + std::to_string(s.step) + ".eidos"));
    });
    std::string final_path = run.path("checkpoint.eidos");
    trainer->save(final_path);
    std::cout << "train: " << trainer->current_step() << " steps, model " << model_hash(t.model) << " -> "
              << final_path << "\n";
    return 0;
}

// ---- forecast -----------------------------------------------------------------------

struct ForecastArgs {
    std::string config, out, checkpoint, data;
    std::optional<std::size_t> horizon, index;
    std::size_t block = 0;
    std::uint64_t seed = 0;
    bool no_cache = false, sort = false;
};

int cmd_forecast(const ForecastArgs& a) {
    RunConfig rc = load_run_config(a.config);
    LoadedModel m = load_model(a.checkpoint, rc, a.seed);
    auto recs = load_records(a.data);
    std::size_t H = a.horizon.value_or(m.cfg.horizon);
    ForecastOptions fo;
    fo.block_l = a.block;
    fo.use_cache = !a.no_cache;
    fo.sort_quantiles = a.sort;

    std::size_t lo = 0, hi = recs.size();
    if (a.index) {
        if (*a.index >= recs.size())
            throw InputError("--index " + std::to_string(*a.index) + " out of range (" +
                             std::to_string(recs.size()) + " series)");
        lo = *a.index;
        hi = lo + 1;
    }
    RunDir run(resolve_out(a.out, rc, "runs/forecast"));
    run.write_resolved({{"command", "forecast"},
                        {"model", to_json(m.cfg)},
                        {"model_hash", m.hash},
                        {"checkpoint", m.source},
                        {"data", a.data},
                        {"horizon", H},
                        {"block", a.block == 0 ? m.cfg.horizon : a.block},
                        {"use_cache", fo.use_cache},
                        {"sort_quantiles", fo.sort_quantiles},
                        {"seed", a.seed}});
    for (std::size_t i = lo; i < hi; ++i) {
        auto r = forecast(recs[i].target, H, m.cfg, m.params, fo);
        std::string p = run.path("forecast_" + std::to_string(i) + ".csv");
        write_forecast_csv(p, r);
        std::cout << "forecast: series " << i << " (" << recs[i].id << "), " << r.horizon << " x "
                  << r.levels.size() << " quantiles, " << r.forward_passes << " passes -> " << p << "\n";
    }
    return 0;
}

// ---- eval ---------------------------------------------------------------------------

struct EvalArgs {
    std::string config, out, checkpoint, data;
    std::optional<std::size_t> horizon;
    std::size_t block = 0, threads = 0;
    std::uint64_t seed = 0;
};

int cmd_eval(const EvalArgs& a) {
    RunConfig rc = load_run_config(a.config);
    LoadedModel m = load_model(a.checkpoint, rc, a.seed);
    std::size_t H = a.horizon.value_or(m.cfg.horizon);
    auto tasks = make_tasks(load_records(a.data), H);
    EvalOptions eo;
    eo.forecast.block_l = a.block;
    eo.threads = threads_flag(a.threads);
    RunDir run(resolve_out(a.out, rc, "runs/eval"));
    run.write_resolved({{"command", "eval"},
                        {"model", to_json(m.cfg)},
                        {"model_hash", m.hash},
                        {"checkpoint", m.source},
                        {"data", a.data},
                        {"horizon", H},
                        {"block", a.block == 0 ? m.cfg.horizon : a.block},
                        {"seed", a.seed}});
    EvalReport rep = evaluate(tasks, m.cfg, m.params, eo);
    rep.model_hash = m.hash;
    rep.seed = a.seed;
    rep.write_csv(run.path("report.csv"));
    rep.write_json(run.path("report.json"));
    std::cout << "eval: " << tasks.size() << " tasks, MASE ratio " << rep.mase_ratio.geomean << " ("
              << rep.mase_ratio.used << " used, " << rep.mase_ratio.excluded << " excluded), CRPS ratio "
              << rep.crps_ratio.geomean << " -> " << run.path("report.json") << "\n";
    return 0;
}

// ---- noise --------------------------------------------------------------------------

struct NoiseArgs {
    std::string config, out, checkpoint, data, kind = "gaussian";
    std::vector<double> levels;
    std::optional<std::size_t> horizon;
    std::size_t threads = 0;
    std::uint64_t seed = 42;
};

int cmd_noise(const NoiseArgs& a) {
    RunConfig rc = load_run_config(a.config);
    NoiseKind kind = parse_noise_kind(a.kind);
    LoadedModel m = load_model(a.checkpoint, rc, a.seed);
    std::size_t H = a.horizon.value_or(m.cfg.horizon);
    auto tasks = make_tasks(load_records(a.data), H);
    std::vector<double> levels = a.levels.empty() ? default_noise_levels(kind) : a.levels;
    RunDir run(resolve_out(a.out, rc, "runs/noise"));
    run.write_resolved({{"command", "noise"},
                        {"model", to_json(m.cfg)},
                        {"model_hash", m.hash},
                        {"checkpoint", m.source},
                        {"data", a.data},
                        {"kind", to_string(kind)},
                        {"levels", levels},
                        {"horizon", H},
                        {"seed", a.seed}});
    auto rows = noise_bench(tasks, m.cfg, m.params, kind, levels, a.seed, threads_flag(a.threads));
    std::string p = run.path("noise_" + to_string(kind) + ".csv");
    write_noise_csv(p, kind, rows);
    for (const auto& r : rows)
        std::cout << "noise: " << to_string(kind) << " " << r.level << " crps " << r.crps << " relative "
                  << r.relative_crps << "\n";
    std::cout << "noise: " << rows.size() << " levels -> " << p << "\n";
    return 0;
}

// ---- probe --------------------------------------------------------------------------

struct ProbeArgs {
    std::string config, out, checkpoint, concept_name = "trend";
    std::size_t count = 1000, length = 512, threads = 0;
    double sigma = 0.1;
    std::uint64_t seed = 0;
};

int cmd_probe(const ProbeArgs& a) {
    RunConfig rc = load_run_config(a.config);
    ConceptKind kind = parse_concept_kind(a.concept_name);
    LoadedModel m = load_model(a.checkpoint, rc, a.seed);
    ProbeOptions po{a.count, a.length, a.sigma, a.seed};
    RunDir run(resolve_out(a.out, rc, "runs/probe"));
    run.write_resolved({{"command", "probe"},
                        {"model", to_json(m.cfg)},
                        {"model_hash", m.hash},
                        {"checkpoint", m.source},
                        {"concept", to_string(kind)},
                        {"count", a.count},
                        {"length", a.length},
                        {"sigma", a.sigma},
                        {"seed", a.seed}});
    auto data = make_probe_dataset(kind, po);
    auto curve = probe_sweep(m.cfg, m.params, data, threads_flag(a.threads));
    write_probe_csv(run.path("probe.csv"), curve);
    PlotSeries s{to_string(kind), {}, curve};
    for (std::size_t l = 0; l < curve.size(); ++l) s.x.push_back(static_cast<double>(l));
    write_line_svg(run.path("probe.svg"), "LDR by layer (" + to_string(kind) + ")", "layer", "LDR", {s});
    for (std::size_t l = 0; l < curve.size(); ++l) std::cout << "probe: layer " << l << " ldr " << curve[l] << "\n";
    return 0;
}

// ---- steer --------------------------------------------------------------------------

struct SteerArgs {
    std::string config, out, checkpoint, data, concept_name = "trend";
    std::vector<double> alphas{-0.5, -0.2, 0.0, 0.2, 0.5};
    std::optional<std::size_t> layer, horizon, index;
    std::size_t count = 1000, length = 512, block = 0, threads = 0;
    std::uint64_t seed = 0;
    bool last_only = false;
};

int cmd_steer(const SteerArgs& a) {
    RunConfig rc = load_run_config(a.config);
    ConceptKind kind = parse_concept_kind(a.concept_name);
    LoadedModel m = load_model(a.checkpoint, rc, a.seed);
    std::size_t layer = a.layer.value_or(m.cfg.backbone.n_layers);
    std::size_t H = a.horizon.value_or(m.cfg.horizon);
    ProbeOptions po{a.count, a.length, 0.1, a.seed};
    auto data = make_steering_dataset(kind, po);

    std::vector<double> context;
    if (!a.data.empty()) {
        auto recs = load_records(a.data);
        std::size_t i = a.index.value_or(0);
        if (i >= recs.size()) throw InputError("--index out of range");
        context = recs[i].target;
    } else {
        context = data.class0.front();
    }

    RunDir run(resolve_out(a.out, rc, "runs/steer"));
    run.write_resolved({{"command", "steer"},
                        {"model", to_json(m.cfg)},
                        {"model_hash", m.hash},
                        {"checkpoint", m.source},
                        {"concept", to_string(kind)},
                        {"layer", layer},
                        {"alphas", a.alphas},
                        {"horizon", H},
                        {"block", a.block == 0 ? m.cfg.horizon : a.block},
                        {"last_position_only", a.last_only},
                        {"count", a.count},
                        {"length", a.length},
                        {"data", a.data.empty() ? json("steering-class0[0]") : json(a.data)},
                        {"seed", a.seed}});

    ConceptDirection dir = extract_direction(m.cfg, m.params, data, layer, threads_flag(a.threads));
    SteerOptions so{a.block, a.last_only};

    std::ofstream csv(run.path("steer.csv"));
    if (!csv) throw IoError("cannot write " + run.path("steer.csv"));
    csv << "alpha,step,median\n" << std::setprecision(17);
    std::vector<PlotSeries> plot;
    std::vector<double> slopes;
    for (double alpha : a.alphas) {
        auto [base, steered] = steer_forecast(m.cfg, m.params, context, H, dir, alpha, so);
        auto med = steered.median();
        PlotSeries s;
        std::ostringstream name;
        name << "alpha=" << alpha;
        s.name = name.str();
        for (std::size_t t = 0; t < med.size(); ++t) {
            csv << alpha << "," << t << "," << med[t] << "\n";
            s.x.push_back(static_cast<double>(t));
            s.y.push_back(med[t]);
        }
        plot.push_back(std::move(s));
        slopes.push_back(fitted_slope(med));
        std::cout << "steer: alpha " << alpha << " slope " << slopes.back() << "\n";
    }
    write_line_svg(run.path("steer.svg"), "Steered median (" + to_string(kind) + ", layer " + std::to_string(layer) + ")",
                   "step", "value", plot);
    if (a.alphas.size() >= 2)
        std::cout << "steer: spearman(alpha, slope) " << spearman(a.alphas, slopes) << ", energy " << dir.energy
                  << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"eidos: latent predictive forecasting toolkit"};
    app.require_subcommand(1);

    SynthArgs sy;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic JSONL dataset");
    synth->add_option("--config", sy.config, "Generator spec JSON");
    synth->add_option("--out", sy.out, "Run directory");
    synth->add_option("--file", sy.file, "Output file name inside the run directory");
    synth->add_option("--kind", sy.kind, "sine | trend | sine+trend | noise | cauker | tsmixup");
    synth->add_option("--count", sy.count, "Number of series");
    synth->add_option("--length", sy.length, "Series length");
    synth->add_option("--sigma", sy.sigma, "Additive noise std");
    synth->add_option("--seed", sy.seed, "Seed");

    TrainArgs tr;
    auto* train = app.add_subcommand("train", "Train a model");
    train->add_option("--config", tr.config, "Run config JSON");
    train->add_option("--out", tr.out, "Run directory");
    train->add_option("--seed", tr.seed, "Seed");
    train->add_option("--data", tr.data, "JSONL dataset(s), equal weights; replaces configured sources");
    train->add_option("--steps", tr.steps, "Total steps (warmup = steps / 10)");
    train->add_option("--batch", tr.batch, "Batch size");
    train->add_option("--lr", tr.lr, "Peak learning rate");
    train->add_option("--lambda-gnd", tr.lambda_gnd, "Grounding loss weight");
    train->add_option("--lambda-latent", tr.lambda_latent, "Latent loss weight");
    train->add_option("--checkpoint-every", tr.checkpoint_every, "Intermediate checkpoint period");
    train->add_option("--resume", tr.resume, "Resume from a checkpoint");
    train->add_option("--threads", tr.threads, "Worker threads (0: EIDOSLAB_THREADS or 1)");
    train->add_flag("--quiet", tr.quiet, "Only print the final line");

    ForecastArgs fc;
    auto* fcmd = app.add_subcommand("forecast", "Quantile forecasts for JSONL series");
    fcmd->add_option("--config", fc.config, "Run config JSON (model must match the checkpoint)");
    fcmd->add_option("--out", fc.out, "Run directory");
    fcmd->add_option("--checkpoint", fc.checkpoint, "Model checkpoint (omit for a random-init model)");
    fcmd->add_option("--data", fc.data, "JSONL series; each full series is a context")->required();
    fcmd->add_option("--horizon", fc.horizon, "Forecast horizon");
    fcmd->add_option("--block", fc.block, "Generation block length");
    fcmd->add_option("--index", fc.index, "Only this series");
    fcmd->add_option("--seed", fc.seed, "Seed for a random-init model");
    fcmd->add_flag("--no-cache", fc.no_cache, "Recompute the full context every block");
    fcmd->add_flag("--sort", fc.sort, "Sort each row of quantiles");

    EvalArgs ev;
    auto* ecmd = app.add_subcommand("eval", "Evaluate against seasonal naive");
    ecmd->add_option("--config", ev.config, "Run config JSON (model must match the checkpoint)");
    ecmd->add_option("--out", ev.out, "Run directory");
    ecmd->add_option("--checkpoint", ev.checkpoint, "Model checkpoint");
    ecmd->add_option("--data", ev.data, "JSONL series; the last horizon points are the truth")->required();
    ecmd->add_option("--horizon", ev.horizon, "Forecast horizon");
    ecmd->add_option("--block", ev.block, "Generation block length");
    ecmd->add_option("--threads", ev.threads, "Worker threads");
    ecmd->add_option("--seed", ev.seed, "Seed for a random-init model");

    NoiseArgs nz;
    auto* ncmd = app.add_subcommand("noise", "Noise robustness bench");
    ncmd->add_option("--config", nz.config, "Run config JSON");
    ncmd->add_option("--out", nz.out, "Run directory");
    ncmd->add_option("--checkpoint", nz.checkpoint, "Model checkpoint");
    ncmd->add_option("--data", nz.data, "JSONL series")->required();
    ncmd->add_option("--kind", nz.kind, "gaussian | impulse");
    ncmd->add_option("--levels", nz.levels, "Noise levels (must include 0)");
    ncmd->add_option("--horizon", nz.horizon, "Forecast horizon");
    ncmd->add_option("--threads", nz.threads, "Worker threads");
    ncmd->add_option("--seed", nz.seed, "Noise seed");

    ProbeArgs pr;
    auto* pcmd = app.add_subcommand("probe", "Layer-wise LDR probe");
    pcmd->add_option("--config", pr.config, "Run config JSON");
    pcmd->add_option("--out", pr.out, "Run directory");
    pcmd->add_option("--checkpoint", pr.checkpoint, "Model checkpoint (omit for a random-init model)");
    pcmd->add_option("--concept", pr.concept_name, "trend | periodicity");
    pcmd->add_option("--count", pr.count, "Series per class");
    pcmd->add_option("--length", pr.length, "Series length");
    pcmd->add_option("--sigma", pr.sigma, "Noise std");
    pcmd->add_option("--threads", pr.threads, "Worker threads");
    pcmd->add_option("--seed", pr.seed, "Seed");

    SteerArgs st;
    auto* scmd = app.add_subcommand("steer", "Steer forecasts along a concept direction");
    scmd->add_option("--config", st.config, "Run config JSON");
    scmd->add_option("--out", st.out, "Run directory");
    scmd->add_option("--checkpoint", st.checkpoint, "Model checkpoint");
    scmd->add_option("--concept", st.concept_name, "trend | periodicity");
    scmd->add_option("--layer", st.layer, "Injection layer (default: last)");
    scmd->add_option("--alpha", st.alphas, "Injection ratios");
    scmd->add_option("--horizon", st.horizon, "Forecast horizon");
    scmd->add_option("--block", st.block, "Generation block length");
    scmd->add_option("--data", st.data, "JSONL series to steer (default: a flat steering series)");
    scmd->add_option("--index", st.index, "Series index in --data");
    scmd->add_option("--count", st.count, "Series per class for the direction");
    scmd->add_option("--length", st.length, "Series length for the direction");
    scmd->add_flag("--last-only", st.last_only, "Inject at the last position only");
    scmd->add_option("--threads", st.threads, "Worker threads");
    scmd->add_option("--seed", st.seed, "Seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: usage: " << e.what() << "\n";
        return 2;
    }

    try {
        if (*synth) return cmd_synth(sy);
        if (*train) return cmd_train(tr);
        if (*fcmd) return cmd_forecast(fc);
        if (*ecmd) return cmd_eval(ev);
        if (*ncmd) return cmd_noise(nz);
        if (*pcmd) return cmd_probe(pr);
        if (*scmd) return cmd_steer(st);
    } catch (const Error& e) {
        std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
        return 1;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
