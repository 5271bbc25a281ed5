// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "eidos/backbone.hpp"
#include "eidos/config.hpp"
#include "eidos/datagen.hpp"
#include "eidos/forecast_eval.hpp"
#include "eidos/model.hpp"
#include "eidos/objectives.hpp"
#include "eidos/represent.hpp"
#include "eidos/trainer.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace eidos;
using eidos::testing::grad_check;
using eidos::testing::randn;
using eidos::testing::weighted_sum;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int prec = 4) {
    std::ostringstream os;
    os << std::setprecision(prec) << v;
    return os.str();
}

oracle::Mat to_rows(const Tensor& t) {
    oracle::Mat m(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
    return m;
}

std::vector<double> flat_params(ModelParams& p) {
    std::vector<double> out;
    p.visit_trainable([&](const std::string&, Tensor& t) { out.insert(out.end(), t.data.begin(), t.data.end()); });
    return out;
}

std::vector<double> wavy(std::uint64_t seed, std::size_t T) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> x(T);
    for (std::size_t t = 0; t < T; ++t) x[t] = std::sin(0.4 * double(t)) + 0.3 * n(rng);
    return x;
}

ModelConfig small_model() {
    ModelConfig c;
    c.backbone.n_layers = 2;
    c.backbone.d_model = 8;
    c.backbone.d_intermediate = 16;
    c.backbone.n_heads = 2;
    c.tokenizer_d_ff = 8;
    c.head_hidden = 8;
    c.horizon = 4;
    return c;
}

// ---- 1. gradients ---------------------------------------------------------------

Outcome gradient_suite() {
    const auto t0 = Clock::now();
    constexpr int kSeeds = 20;
    double worst = 0.0;
    std::string worst_name;
    std::size_t checks = 0;
    auto run = [&](const std::string& name, const std::function<std::vector<Tensor>(std::mt19937_64&)>& make,
                   const eidos::testing::LossFn& f) {
        for (int s = 0; s < kSeeds; ++s) {
            std::mt19937_64 rng(9000 + s);
            const double e = grad_check(f, make(rng)).rel_error;
            ++checks;
            if (e > worst) worst = e, worst_name = name;
        }
    };
    auto two = [](Shape a, Shape b) {
        return [a, b](std::mt19937_64& rng) { return std::vector<Tensor>{randn(a, rng), randn(b, rng)}; };
    };
    auto one = [](Shape a) { return [a](std::mt19937_64& rng) { return std::vector<Tensor>{randn(a, rng)}; }; };
    using V = std::vector<Var>;

    run("matmul", two({3, 4}, {4, 2}), [](Tape&, const V& v) { return weighted_sum(matmul(v[0], v[1]), 1); });
    run("add", two({3, 4}, {3, 4}), [](Tape&, const V& v) { return weighted_sum(add(v[0], v[1]), 2); });
    run("sub", two({3, 4}, {3, 4}), [](Tape&, const V& v) { return weighted_sum(sub(v[0], v[1]), 2); });
    run("mul", two({3, 4}, {3, 4}), [](Tape&, const V& v) { return weighted_sum(mul(v[0], v[1]), 3); });
    run("add_row", two({3, 4}, {1, 4}), [](Tape&, const V& v) { return weighted_sum(add_row(v[0], v[1]), 4); });
    run("sin", one({3, 4}), [](Tape&, const V& v) { return weighted_sum(sin(v[0]), 5); });
    run("sigmoid", one({3, 4}), [](Tape&, const V& v) { return weighted_sum(sigmoid(v[0]), 6); });
    run("silu", one({3, 4}), [](Tape&, const V& v) { return weighted_sum(silu(v[0]), 7); });
    run("tanh", one({3, 4}), [](Tape&, const V& v) { return weighted_sum(tanh(v[0]), 8); });
    run("softmax", one({3, 4}), [](Tape&, const V& v) { return weighted_sum(softmax_lastdim(v[0]), 9); });
    run("layer_norm",
        [](std::mt19937_64& rng) {
            return std::vector<Tensor>{randn({3, 4}, rng), randn({1, 4}, rng), randn({1, 4}, rng)};
        },
        [](Tape&, const V& v) { return weighted_sum(layer_norm(v[0], v[1], v[2], 1e-6), 10); });
    run("depthwise_conv1d", two({6, 4}, {3, 4}),
        [](Tape&, const V& v) { return weighted_sum(depthwise_conv1d(v[0], v[1]), 11); });
    run("l2_normalize_rows", one({3, 4}),
        [](Tape&, const V& v) { return weighted_sum(l2_normalize_rows(v[0], 1e-12), 12); });
    run("row_dot", two({3, 4}, {3, 4}), [](Tape&, const V& v) { return weighted_sum(row_dot(v[0], v[1]), 13); });
    run("mean", one({3, 4}), [](Tape&, const V& v) { return mean(mul(v[0], v[0])); });
    run("slice_concat", two({3, 4}, {2, 4}),
        [](Tape&, const V& v) { return weighted_sum(concat_rows(slice_rows(v[0], 1, 2), v[1]), 14); });
    run("rope", one({3, 8}), [](Tape&, const V& v) {
        std::vector<std::size_t> pos{2, 5, 9};
        return weighted_sum(rope_rotate(v[0], pos, 2, 10000.0), 15);
    });
    run("causal_attention",
        [](std::mt19937_64& rng) {
            return std::vector<Tensor>{randn({3, 4}, rng), randn({5, 4}, rng), randn({5, 4}, rng)};
        },
        [](Tape&, const V& v) { return weighted_sum(causal_attention(v[0], v[1], v[2], 2), 16); });

    const auto levels = default_quantile_levels();
    const std::vector<double> x{0.2, -0.4, 1.0, 0.3, -1.2, 0.8, 0.1};
    const std::vector<double> y{0.5, -0.1, 0.9};
    const std::size_t l = 3, d = 4;
    run("pinball", two({3, 9}, {3, 1}), [&](Tape&, const V& v) { return pinball_mean(v[0], v[1], levels); });
    run("quantile_loss", one({3, 9}), [&](Tape&, const V& v) { return quantile_loss(v[0], y, levels); });
    for (int s = 0; s < kSeeds; ++s) {
        std::mt19937_64 rng(9500 + s);
        Tensor target = randn({4, d}, rng);
        double e = grad_check(
                       [&](Tape& tape, const V& v) { return latent_loss(v[0], tape.constant(target)); },
                       {randn({4, d}, rng)})
                       .rel_error;
        ++checks;
        if (e > worst) worst = e, worst_name = "latent_loss";
        auto head = QuantileHeadParams::init(d, 5, l, levels.size(), rng);
        Tensor h = randn({7, d}, rng), k = randn({l, d}, rng);
        e = grad_check(
                       [&](Tape& tape, const V& v) {
                           ParamBinder binder(tape);
                           return grounding_loss(aggregate_targets(v[0], v[1], nullptr, l), x,
                                                 bind_frozen(binder, head), levels, l);
                       },
                       {h, k})
                       .rel_error;
        ++checks;
        if (e > worst) worst = e, worst_name = "grounding_loss";
        e = grad_check(
                [&](Tape&, const V& v) {
                    QuantileHeadVars hv{v[1], v[2], v[3], v[4], v[5], v[6]};
                    return forecast_loss(v[0], x, hv, levels, l);
                },
                {randn({4, d}, rng), head.w_in, randn({1, 5}, rng), head.w_res, randn({1, d}, rng), head.w_out,
                 randn({1, l * levels.size()}, rng)})
                .rel_error;
        ++checks;
        if (e > worst) worst = e, worst_name = "forecast_loss";
    }

    // Joint objective over sampled parameter entries: latent on backbone
    // params only, grounding with a frozen head.
    auto joint = [&](ModelConfig cfg, const LossWeights& w, const std::string& prefix) {
        for (std::uint64_t s = 0; s < kSeeds; ++s) {
            auto p = ModelParams::init(cfg, 700 + s);
            auto xs = wavy(800 + s, 14);
            auto value = [&]() {
                Tape tape(false);
                ParamBinder binder(tape);
                return joint_loss(bind(binder, p), cfg, xs, w).total.item();
            };
            Tape tape;
            ParamBinder binder(tape);
            tape.backward(joint_loss(bind(binder, p), cfg, xs, w).total);
            std::vector<std::string> names;
            p.visit_trainable([&](const std::string& n, Tensor&) {
                if (n.rfind(prefix, 0) == 0) names.push_back(n);
            });
            std::mt19937_64 rng(900 + s);
            double diff2 = 0, a2 = 0, n2 = 0;
            for (int k = 0; k < 40; ++k) {
                Tensor* t = p.find(names[rng() % names.size()]);
                const std::size_t idx = rng() % t->size();
                auto g = binder.grad_of(*t);
                const double a = g.empty() ? 0.0 : g[idx];
                const double orig = t->data[idx];
                t->data[idx] = orig + 1e-5;
                const double fp = value();
                t->data[idx] = orig - 1e-5;
                const double fm = value();
                t->data[idx] = orig;
                const double num = (fp - fm) / 2e-5;
                diff2 += (a - num) * (a - num);
                a2 += a * a;
                n2 += num * num;
            }
            const double e = std::sqrt(diff2) / std::max(std::sqrt(a2) + std::sqrt(n2), 1e-12);
            ++checks;
            if (e > worst) worst = e, worst_name = "joint" + (prefix.empty() ? std::string() : "/" + prefix);
        }
    };
    auto frozen = small_model();
    frozen.frozen_head_at_init = true;
    joint(frozen, {0.0, 0.7, 1.0}, "");
    joint(small_model(), {1.0, 0.0, 0.0}, "backbone.");

    const double secs = seconds_since(t0);
    return {worst < 1e-4 && secs < 60.0, std::to_string(checks) + " checks over " + std::to_string(kSeeds) +
                                             " seeds, max rel err " + fmt(worst, 3) + " (" + worst_name + "), " +
                                             fmt(secs, 3) + " s"};
}

// ---- 2. oracles -----------------------------------------------------------------

Outcome loss_oracles() {
    const auto t0 = Clock::now();
    double worst = 0.0;
    std::string worst_name;
    auto note = [&](const char* name, double got, double want) {
        const double e = std::abs(got - want);
        if (e > worst || std::isnan(e)) worst = std::isnan(e) ? INFINITY : e, worst_name = name;
    };
    const auto levels = default_quantile_levels();
    for (int s = 0; s < 100; ++s) {
        std::mt19937_64 rng(20000 + s);
        std::uniform_int_distribution<std::size_t> small(2, 6);
        std::normal_distribution<double> n(0.0, 1.0);
        const std::size_t T = small(rng) + 2, d = small(rng);
        {
            Tensor a = randn({T, d}, rng), b = randn({T, d}, rng);
            Tape tape(false);
            note("latent_loss", latent_loss(tape.constant(a), tape.constant(b)).item(),
                 oracle::latent_loss(to_rows(a), to_rows(b)));
        }
        std::vector<double> truth(T);
        for (auto& v : truth) v = n(rng);
        Tensor pq = randn({T, levels.size()}, rng);
        {
            Tape tape(false);
            note("quantile_loss", quantile_loss(tape.constant(pq), truth, levels).item(),
                 oracle::quantile_loss(to_rows(pq), truth, levels));
        }
        {
            const std::size_t l = small(rng) - 1, len = l + T;
            auto head = QuantileHeadParams::init(d, 5, l, levels.size(), rng);
            std::vector<double> x(len);
            for (auto& v : x) v = n(rng);
            Tensor h = randn({len - l, d}, rng);
            Tape tape(false);
            ParamBinder binder(tape);
            oracle::Head oh{to_rows(head.w_in), head.b_in.data, to_rows(head.w_res),
                            head.b_res.data,    to_rows(head.w_out), head.b_out.data};
            note("grounding_loss", grounding_loss(tape.constant(h), x, bind_frozen(binder, head), levels, l).item(),
                 oracle::grounding_loss(to_rows(h), x, oh, levels, l));
        }
        {
            const std::size_t m = 1 + rng() % 3, ins = m + 3 + rng() % 10;
            std::vector<double> insample(ins), fc(T);
            for (auto& v : insample) v = n(rng);
            for (auto& v : fc) v = n(rng);
            note("mase", mase(fc, truth, insample, m), oracle::mase(fc, truth, insample, m));
        }
        note("crps_quantile", crps_quantile(pq, truth, levels), oracle::crps(to_rows(pq), truth, levels));
        note("wql", wql(pq, truth, levels), oracle::wql(to_rows(pq), truth, levels));
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-12 && secs < 30.0, "6 losses x 100 instances, max |diff| " + fmt(worst, 3) +
                                               (worst_name.empty() ? "" : " (" + worst_name + ")") + ", " +
                                               fmt(secs, 3) + " s"};
}

// ---- 3. structural exactness ----------------------------------------------------

TrainConfig tiny_train() {
    TrainConfig t;
    t.model.backbone.n_layers = 1;
    t.model.backbone.d_model = 16;
    t.model.backbone.d_intermediate = 32;
    t.model.backbone.n_heads = 2;
    t.model.tokenizer_d_ff = 16;
    t.model.head_hidden = 16;
    t.model.horizon = 8;
    t.context_length = 32;
    t.batch_size = 4;
    t.seed = 3;
    t.optim.total_steps = 40;
    t.optim.warmup_steps = 4;
    GeneratorSpec g;
    g.count = 12;
    g.length = 64;
    t.data = {DataSource{"", g, 1.0}};
    return t;
}

Outcome structural(const std::string& workdir) {
    const auto t0 = Clock::now();
    std::vector<std::string> failed;

    // Causality: perturbing positions after `cut` leaves rows 0..cut bitwise unchanged.
    {
        auto cfg = toy_model_config();
        std::mt19937_64 rng(31);
        auto p = BackboneParams::init(cfg.backbone, rng);
        const std::size_t T = 96, d = cfg.backbone.d_model;
        Tensor z = randn({T, d}, rng);
        auto run = [&](const Tensor& in) {
            Tape tape(false);
            ParamBinder binder(tape);
            return backbone_forward(tape.constant(in), cfg.backbone, bind(binder, p)).value();
        };
        const Tensor base = run(z);
        bool ok = true;
        for (std::size_t cut : {0u, 37u, 70u, 95u}) {
            Tensor zz = z;
            for (std::size_t t = cut + 1; t < T; ++t)
                for (std::size_t c = 0; c < d; ++c) zz.at(t, c) += 2.0 * std::cos(double(t + 3 * c));
            const Tensor out = run(zz);
            ok = ok && std::equal(out.data.begin(), out.data.begin() + (cut + 1) * d, base.data.begin());
        }
        if (!ok) failed.push_back("causality");
    }
    // Cached multi-block forecast vs full recompute.
    double cache_diff = 0.0;
    {
        auto cfg = toy_model_config();
        auto p = ModelParams::init(cfg, 5);
        auto ctx = wavy(6, 300);
        ForecastOptions a, b;
        a.block_l = b.block_l = 32;
        b.use_cache = false;
        auto fa = forecast(ctx, 160, cfg, p, a), fb = forecast(ctx, 160, cfg, p, b);
        for (std::size_t i = 0; i < fa.quantiles.size(); ++i)
            cache_diff = std::max(cache_diff, std::abs(fa.quantiles.data[i] - fb.quantiles.data[i]));
        if (!(cache_diff <= 1e-9)) failed.push_back("kv-cache");
    }
    // Zero steering is the identity.
    {
        auto cfg = toy_model_config();
        auto p = ModelParams::init(cfg, 7);
        ProbeOptions po;
        po.count = 16;
        auto data = make_steering_dataset(ConceptKind::Trend, po);
        bool ok = true;
        for (std::size_t layer = 0; layer <= cfg.backbone.n_layers; ++layer) {
            auto dir = extract_direction(cfg, p, data, layer);
            auto [base, steered] = steer_forecast(cfg, p, data.class0[1], 128, dir, 0.0, {32, false});
            ok = ok && base.quantiles.data == steered.quantiles.data;
        }
        if (!ok) failed.push_back("zero-steering");
    }
    // Zero-level noise is the identity, both on series and through the bench.
    {
        auto x = wavy(8, 4096);
        bool ok = gaussian_noise(x, 0.0, 42) == x && impulse_noise(x, 0.0, 42).values == x &&
                  impulse_noise(x, 0.0, 42).spikes.empty();
        auto cfg = toy_model_config();
        auto p = ModelParams::init(cfg, 9);
        GeneratorSpec g;
        g.count = 4;
        g.length = 256;
        auto tasks = make_tasks(generate_corpus(g, 10), cfg.horizon);
        const std::vector<double> zero{0.0};
        for (auto kind : {NoiseKind::Gaussian, NoiseKind::Impulse}) {
            auto rows = noise_bench(tasks, cfg, p, kind, zero);
            std::vector<std::optional<double>> ncrps;
            for (std::size_t i = 0; i < tasks.size(); ++i) {
                auto f = forecast(tasks[i].context, cfg.horizon, cfg, p);
                ncrps.push_back(crps_normalized(f.quantiles, tasks[i].truth, f.levels));
            }
            ok = ok && rows[0].relative_crps == 1.0 && rows[0].crps == geometric_mean(ncrps).geomean;
        }
        if (!ok) failed.push_back("zero-noise");
    }
    // Resume from a mid-run checkpoint reproduces the straight run bitwise.
    {
        auto cfg = tiny_train();
        Trainer straight(cfg, load_sources(cfg));
        straight.run(7);
        Trainer first(cfg, load_sources(cfg));
        first.run(3);
        const std::string path = (fs::path(workdir) / "resume_probe.eidos").string();
        first.save(path);
        Trainer resumed = Trainer::resume(path, load_sources(cfg));
        resumed.run(7);
        if (flat_params(straight.params()) != flat_params(resumed.params())) failed.push_back("resume");
    }
    const double secs = seconds_since(t0);
    std::string detail = failed.empty() ? "causality, kv-cache (max diff " + fmt(cache_diff, 3) +
                                              "), zero steering, zero noise, resume all exact"
                                        : "failed:";
    for (const auto& f : failed) detail += " " + f;
    return {failed.empty() && secs < 120.0, detail + ", " + fmt(secs, 3) + " s"};
}

// ---- 4. gradient routing ---------------------------------------------------------

Outcome routing() {
    double agg_from_latent = 0.0, frozen_from_gnd = 0.0, head_from_gnd = 0.0, agg_from_gnd = 0.0;
    auto l1 = [](const ParamBinder& b, const Tensor& t) {
        double s = 0;
        for (double g : b.grad_of(t)) s += std::abs(g);
        return s;
    };
    for (std::uint64_t s = 0; s < 10; ++s) {
        auto x = wavy(40 + s, 40);
        {
            auto cfg = small_model();
            auto p = ModelParams::init(cfg, 50 + s);
            Tape tape;
            ParamBinder binder(tape);
            tape.backward(joint_loss(bind(binder, p), cfg, x, {1.0, 0.0, 0.0}).latent);
            p.aggregator.visit([&](const std::string&, Tensor& t) { agg_from_latent += l1(binder, t); });
        }
        {
            auto cfg = small_model();
            auto p = ModelParams::init(cfg, 60 + s);
            Tape tape;
            ParamBinder binder(tape);
            tape.backward(joint_loss(bind(binder, p), cfg, x, {0.0, 1.0, 0.0}).gnd);
            p.head.visit([&](const std::string&, Tensor& t) { head_from_gnd += l1(binder, t); });
            agg_from_gnd += l1(binder, p.aggregator.kernel);
        }
        {
            auto cfg = small_model();
            cfg.frozen_head_at_init = true;
            auto p = ModelParams::init(cfg, 70 + s);
            Tape tape;
            ParamBinder binder(tape);
            tape.backward(joint_loss(bind(binder, p), cfg, x, {0.0, 1.0, 0.0}).gnd);
            p.frozen_head->visit([&](const std::string&, Tensor& t) { frozen_from_gnd += l1(binder, t); });
            p.head.visit([&](const std::string&, Tensor& t) { frozen_from_gnd += l1(binder, t); });
        }
    }
    const bool ok = agg_from_latent == 0.0 && head_from_gnd == 0.0 && frozen_from_gnd == 0.0 && agg_from_gnd > 0.0;
    return {ok, "|dL_latent/d aggregator| = " + fmt(agg_from_latent) + ", |dL_gnd/d head| = " + fmt(head_from_gnd) +
                    " (view) and " + fmt(frozen_from_gnd) + " (frozen), |dL_gnd/d aggregator| = " +
                    fmt(agg_from_gnd, 3) + " over 10 seeds"};
}

// ---- training runs ------------------------------------------------------------------

struct ToyRun {
    TrainConfig cfg;
    ModelParams init_params, params;
    double latent_tail = 0.0;  // mean latent loss over the last tenth of steps
    double seconds = 0.0;
    EvalReport report;
};

ToyRun train_toy(double lambda_gnd, std::size_t steps, std::size_t threads, const std::vector<EvalTask>& heldout,
                 const std::string& workdir, const std::string& tag) {
    ToyRun r;
    r.cfg = toy_train_config();
    r.cfg.weights.lambda_gnd = lambda_gnd;
    r.cfg.optim.total_steps = steps;
    r.cfg.optim.warmup_steps = std::max<std::size_t>(1, steps / 10);
    const auto t0 = Clock::now();
    Trainer t(r.cfg, load_sources(r.cfg));
    t.set_threads(threads);
    r.init_params = t.params();
    const std::size_t tail_from = steps - steps / 10;
    double acc = 0.0;
    std::size_t n = 0;
    MetricLog log((fs::path(workdir) / (tag + "_metrics.csv")).string());
    t.run(0, [&](const StepLog& s) {
        log.write(s);
        if (s.step > tail_from) acc += s.latent, ++n;
        if (s.step % 100 == 0)
            std::cerr << "  [" << tag << "] step " << s.step << " pred " << fmt(s.pred) << " latent "
                      << fmt(s.latent) << " gnd " << fmt(s.gnd) << " (" << fmt(seconds_since(t0), 3) << " s)\n";
    });
    r.seconds = seconds_since(t0);
    r.latent_tail = acc / static_cast<double>(std::max<std::size_t>(n, 1));
    r.params = t.params();
    t.save((fs::path(workdir) / (tag + ".eidos")).string());
    EvalOptions eo;
    eo.threads = threads;
    r.report = evaluate(heldout, r.cfg.model, r.params, eo);
    r.report.model_hash = model_hash(r.cfg.model);
    r.report.write_json((fs::path(workdir) / (tag + "_report.json")).string());
    return r;
}

// ---- 9. noise harness -------------------------------------------------------------

Outcome noise_contract(const ToyRun& run, const std::vector<EvalTask>& tasks, std::size_t threads,
                       const std::string& workdir) {
    bool ok = true;
    std::string detail;
    const std::vector<double> want_g{0.0, 0.2, 0.4, 0.6, 0.8}, want_i{0.0, 0.05, 0.1, 0.15, 0.2};
    for (auto kind : {NoiseKind::Gaussian, NoiseKind::Impulse}) {
        auto levels = default_noise_levels(kind);
        const auto& want = kind == NoiseKind::Gaussian ? want_g : want_i;
        ok = ok && levels == want;
        auto rows = noise_bench(tasks, run.cfg.model, run.params, kind, levels, 42, threads);
        write_noise_csv((fs::path(workdir) / ("noise_" + to_string(kind) + ".csv")).string(), kind, rows);
        bool grid = rows.size() == want.size();
        for (std::size_t i = 0; grid && i < rows.size(); ++i) grid = rows[i].level == want[i];
        const double low = rows[1].relative_crps - 1.0, top = rows.back().relative_crps - 1.0;
        ok = ok && grid && rows[0].relative_crps == 1.0 && top > low;
        detail += (detail.empty() ? "" : "; ") + to_string(kind) + " rel CRPS";
        for (const auto& r : rows) detail += " " + fmt(r.relative_crps);
    }
    return {ok, detail};
}

// ---- 10. generators ----------------------------------------------------------------

Outcome generators() {
    std::vector<std::string> failed;
    double worst_sigma = 0.0, worst_rate = 0.0;
    std::vector<double> x(1 << 20);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = 2.0 * std::sin(0.002 * double(i)) + 0.1 * double(i % 5);
    const double sx = stats_of(x).std;
    for (double s : default_noise_levels(NoiseKind::Gaussian)) {
        if (s == 0.0) continue;
        auto y = gaussian_noise(x, s, 42);
        double m = 0, v = 0;
        for (std::size_t i = 0; i < x.size(); ++i) m += y[i] - x[i];
        m /= double(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) v += (y[i] - x[i] - m) * (y[i] - x[i] - m);
        worst_sigma = std::max(worst_sigma, std::abs(std::sqrt(v / double(x.size())) / (s * sx) - 1.0));
    }
    if (!(worst_sigma < 0.02)) failed.push_back("gaussian sigma");
    bool magnitude = true;
    for (double p : default_noise_levels(NoiseKind::Impulse)) {
        if (p == 0.0) continue;
        auto r = impulse_noise(x, p, 42);
        worst_rate = std::max(worst_rate, std::abs(double(r.spikes.size()) / double(x.size()) / p - 1.0));
        for (const auto& s : r.spikes)
            magnitude = magnitude && std::abs(s.delta) == kImpulseMagnitude * sx && r.values[s.index] == x[s.index] + s.delta;
    }
    if (!(worst_rate < 0.01)) failed.push_back("impulse rate");
    if (!magnitude) failed.push_back("impulse magnitude");

    bool simplex = true;
    std::mt19937_64 rng(5);
    for (int i = 0; i < 2000; ++i) {
        auto w = sample_dirichlet(1 + std::size_t(i % 3), 1.5, rng);
        double s = 0;
        for (double v : w) simplex = simplex && v >= 0.0, s += v;
        simplex = simplex && std::abs(s - 1.0) <= 1e-12;
    }
    GeneratorSpec g;
    g.count = 8;
    g.length = 256;
    auto pool = generate_corpus(g, 3);
    MixupOptions mo;
    mo.length = 128;
    for (std::uint64_t s = 0; s < 200; ++s) {
        auto m = tsmixup(pool, mo, s);
        double sum = 0;
        for (double v : m.lambda) simplex = simplex && v >= 0.0, sum += v;
        simplex = simplex && std::abs(sum - 1.0) <= 1e-12 && m.lambda.size() >= 1 && m.lambda.size() <= mo.k_max;
    }
    if (!simplex) failed.push_back("mixup simplex");

    bool determinism = true;
    for (std::uint64_t s = 0; s < 20; ++s) {
        std::mt19937_64 a(s), b(s);
        determinism = determinism && sample_dirichlet(3, 1.5, a) == sample_dirichlet(3, 1.5, b);
        determinism = determinism && cauker_lite(s, 256) == cauker_lite(s, 256);
        determinism = determinism && tsmixup(pool, mo, s).record == tsmixup(pool, mo, s).record;
    }
    if (!determinism) failed.push_back("determinism");

    std::string detail = "sigma rel err " + fmt(worst_sigma, 3) + ", impulse rate rel err " + fmt(worst_rate, 3) +
                         ", magnitude 8 sigma_x exact, simplex and seeded determinism";
    if (!failed.empty()) {
        detail += "; failed:";
        for (const auto& f : failed) detail += " " + f;
    }
    return {failed.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance run"};
    std::size_t steps = 1000, threads = 0;
    std::string workdir = "acceptance_artifacts";
    app.add_option("--steps", steps, "Training steps per toy run");
    app.add_option("--threads", threads, "Worker threads (0: EIDOSLAB_THREADS or 1)");
    app.add_option("--out", workdir, "Artifact directory");
    CLI11_PARSE(app, argc, argv);
    if (threads == 0) threads = worker_threads();
    fs::create_directories(workdir);

    int failures = 0;
    auto report = [&](int id, const std::string& name, const Outcome& o) {
        std::cout << "criterion " << id << " " << name << ": " << (o.pass ? "PASS" : "FAIL") << " (" << o.detail
                  << ")" << std::endl;
        if (!o.pass) ++failures;
    };
    auto guarded = [&](const std::function<Outcome()>& f) {
        try {
            return f();
        } catch (const std::exception& e) {
            return Outcome{false, std::string("exception: ") + e.what()};
        }
    };

    report(1, "gradient suite", guarded(gradient_suite));
    report(2, "loss oracles", guarded(loss_oracles));
    report(3, "structural exactness", guarded([&] { return structural(workdir); }));
    report(4, "gradient routing", guarded(routing));

    GeneratorSpec held = *toy_train_config().data.front().generator;
    held.count = 64;
    const auto heldout = make_tasks(generate_corpus(held, 0xACCE57), toy_model_config().horizon);

    ToyRun grounded, ungrounded;
    bool trained = true;
    try {
        grounded = train_toy(0.1, steps, threads, heldout, workdir, "toy_gnd");
        ungrounded = train_toy(0.0, steps, threads, heldout, workdir, "toy_nognd");
    } catch (const std::exception& e) {
        trained = false;
        std::cerr << "training failed: " << e.what() << "\n";
    }
    if (!trained) {
        for (int id = 5; id <= 9; ++id) report(id, "trained-model check", {false, "training failed"});
    } else {
        const double m1 = grounded.report.mase_ratio.geomean;
        report(5, "training smoke",
               {m1 < 1.0 && grounded.seconds < 1200.0,
                std::to_string(steps) + " steps in " + fmt(grounded.seconds, 4) + " s, held-out MASE ratio " +
                    fmt(m1) + " over " + std::to_string(grounded.report.mase_ratio.used) + " tasks, CRPS ratio " +
                    fmt(grounded.report.crps_ratio.geomean)});

        const double m0 = ungrounded.report.mase_ratio.geomean;
        const bool lower = ungrounded.latent_tail < grounded.latent_tail;
        const bool not_better = m0 >= m1;
        report(6, "collapse direction",
               {lower && not_better && grounded.seconds + ungrounded.seconds < 2400.0,
                "latent loss (last 10%) gnd=0: " + fmt(ungrounded.latent_tail, 5) + " vs gnd=0.1: " +
                    fmt(grounded.latent_tail, 5) + (lower ? " (lower)" : " (not lower)") + "; MASE ratio gnd=0: " +
                    fmt(m0) + " vs gnd=0.1: " + fmt(m1) + (not_better ? " (not better)" : " (better)") + ", " +
                    fmt(grounded.seconds + ungrounded.seconds, 4) + " s"});

        report(7, "probing direction", guarded([&] {
                   const auto t0 = Clock::now();
                   ProbeOptions po;  // 1000 pairs, length 512, sigma 0.1
                   auto data = make_probe_dataset(ConceptKind::Trend, po);
                   const auto& mc = grounded.cfg.model;
                   auto trained_curve = probe_sweep(mc, grounded.params, data, threads);
                   auto init_curve = probe_sweep(mc, grounded.init_params, data, threads);
                   write_probe_csv((fs::path(workdir) / "probe_trained.csv").string(), trained_curve);
                   write_probe_csv((fs::path(workdir) / "probe_init.csv").string(), init_curve);
                   PlotSeries a{"trained", {}, trained_curve}, b{"random init", {}, init_curve};
                   for (std::size_t l = 0; l < trained_curve.size(); ++l) a.x.push_back(double(l)), b.x.push_back(double(l));
                   write_line_svg((fs::path(workdir) / "probe_trend.svg").string(), "Trend LDR by layer", "layer",
                                  "LDR", {a, b});
                   const double ratio = trained_curve.back() / init_curve.back();
                   const double secs = seconds_since(t0);
                   return Outcome{ratio >= 2.0 && secs < 300.0,
                                  "final-layer trend LDR " + fmt(trained_curve.back()) + " trained vs " +
                                      fmt(init_curve.back()) + " init, ratio " + fmt(ratio) + ", " + fmt(secs, 3) +
                                      " s"};
               }));

        report(8, "steering direction", guarded([&] {
                   const auto& mc = grounded.cfg.model;
                   ProbeOptions po;
                   auto data = make_steering_dataset(ConceptKind::Trend, po);
                   auto dir = extract_direction(mc, grounded.params, data, mc.backbone.n_layers, threads);
                   const std::vector<double> alphas{-0.5, -0.2, 0.0, 0.2, 0.5};
                   // Slope in normalized units, averaged over zero-slope inputs.
                   const std::size_t inputs = 32;
                   std::vector<double> slopes(alphas.size(), 0.0);
                   std::size_t monotone_inputs = 0;
                   std::ofstream csv(fs::path(workdir) / "steer_trend.csv");
                   csv << "input,alpha,slope\n" << std::setprecision(17);
                   for (std::size_t k = 0; k < inputs; ++k) {
                       std::vector<double> s(alphas.size());
                       for (std::size_t j = 0; j < alphas.size(); ++j) {
                           auto [base, steered] = steer_forecast(mc, grounded.params, data.class0[k], mc.horizon, dir,
                                                                 alphas[j]);
                           s[j] = fitted_slope(steered.median()) / steered.norm_stats.scale();
                           slopes[j] += s[j] / double(inputs);
                           csv << k << "," << alphas[j] << "," << s[j] << "\n";
                       }
                       if (spearman(alphas, s) >= 0.9) ++monotone_inputs;
                   }
                   const double rho = spearman(alphas, slopes);
                   std::string detail = "mean slope over " + std::to_string(inputs) + " flat inputs:";
                   for (double v : slopes) detail += " " + fmt(v, 3);
                   detail += ", spearman " + fmt(rho) + "; " + std::to_string(monotone_inputs) + "/" +
                             std::to_string(inputs) + " inputs individually rho >= 0.9";
                   return Outcome{rho >= 0.9, detail};
               }));

        report(9, "noise harness",
               guarded([&] { return noise_contract(grounded, heldout, threads, workdir); }));
    }
    report(10, "statistical generators", guarded(generators));

    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
