#include "eidos/forecast_eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "eidos/errors.hpp"
#include "eidos/params.hpp"

namespace eidos {

namespace {

constexpr double kUndefinedFloor = 1e-12;

double pinball(double q, double y, double yhat) {
    const double e = y - yhat;
    return std::max(q * e, (q - 1.0) * e);
}

double pinball_sum(const Tensor& pred_q, std::span<const double> truth, std::span<const double> levels) {
    const std::size_t nq = levels.size();
    if (pred_q.shape.size() != 2 || pred_q.shape[0] != truth.size() || pred_q.shape[1] != nq) {
        throw DimensionError("quantile metric: prediction " + shape_str(pred_q.shape) + " for " +
                             std::to_string(truth.size()) + " steps and " + std::to_string(nq) + " levels");
    }
    double s = 0.0;
    for (std::size_t t = 0; t < truth.size(); ++t)
        for (std::size_t q = 0; q < nq; ++q) s += 2.0 * pinball(levels[q], truth[t], pred_q.data[t * nq + q]);
    return s;
}

double mean_abs(std::span<const double> x) {
    double s = 0.0;
    for (double v : x) s += std::abs(v);
    return s / static_cast<double>(x.size());
}

template <typename F>
void parallel_for(std::size_t n, std::size_t threads, F&& f) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < threads; ++k)
        pool.emplace_back([&, k] {
            for (std::size_t i = k; i < n; i += threads) {
                try {
                    f(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

template <typename F>
std::optional<double> defined(F&& f) {
    try {
        return f();
    } catch (const UndefinedMetricError&) {
        return std::nullopt;
    }
}

}  // namespace

// ---- forecasting -----------------------------------------------------------------

std::vector<double> ForecastResult::column(std::size_t level) const {
    const std::size_t nq = levels.size();
    std::vector<double> out(horizon);
    for (std::size_t t = 0; t < horizon; ++t) out[t] = quantiles.data[t * nq + level];
    return out;
}

std::vector<double> ForecastResult::median() const {
    for (std::size_t i = 0; i < levels.size(); ++i)
        if (std::abs(levels[i] - 0.5) < 1e-12) return column(i);
    throw ConfigError("forecast has no 0.5 quantile");
}

double crossing_rate(const Tensor& q) {
    const std::size_t H = q.shape.at(0), nq = q.shape.at(1);
    if (nq < 2) return 0.0;
    std::size_t crossed = 0;
    for (std::size_t t = 0; t < H; ++t)
        for (std::size_t i = 0; i + 1 < nq; ++i) crossed += q.data[t * nq + i + 1] < q.data[t * nq + i];
    return static_cast<double>(crossed) / static_cast<double>(H * (nq - 1));
}

void sort_quantile_rows(Tensor& q) {
    const std::size_t H = q.shape.at(0), nq = q.shape.at(1);
    for (std::size_t t = 0; t < H; ++t) {
        auto b = q.data.begin() + static_cast<std::ptrdiff_t>(t * nq);
        std::sort(b, b + static_cast<std::ptrdiff_t>(nq));
    }
}

ForecastResult forecast(std::span<const double> context, std::size_t H, const ModelConfig& cfg,
                        const ModelParams& params, const ForecastOptions& opts) {
    if (context.empty()) throw InputError("forecast: empty context");
    if (H == 0) throw ContractError("forecast: horizon must be >= 1");
    for (double v : context)
        if (!std::isfinite(v)) throw InputError("forecast: context contains a non-finite value");
    const std::size_t block = opts.block_l ? opts.block_l : cfg.horizon;
    if (block > cfg.horizon) {
        throw ConfigError("forecast: block length " + std::to_string(block) + " exceeds the model horizon " +
                          std::to_string(cfg.horizon));
    }
    const std::size_t nq = cfg.levels.size();
    const std::size_t med = cfg.median_index();

    ForecastResult r;
    r.levels = cfg.levels;
    r.horizon = H;
    std::vector<double> seq = znorm(context, &r.norm_stats);

    Tape tape(false);
    ParamBinder binder(tape);
    const ModelVars vars = bind(binder, params);
    ForwardHooks hooks;
    hooks.intervene = opts.intervene;
    KvCache cache(cfg.backbone.n_layers, cfg.backbone.d_model);
    if (opts.use_cache) hooks.cache = &cache;

    std::vector<double> out;
    out.reserve(H * nq);
    std::size_t fed = 0;  // positions already inside the cache
    while (out.size() < H * nq) {
        std::span<const double> fresh = opts.use_cache ? std::span<const double>(seq).subspan(fed) : seq;
        Var z = embed_series(tape, fresh, vars.tokenizer);
        Var h = backbone_forward(z, cfg.backbone, vars.backbone, hooks);
        ++r.forward_passes;
        if (opts.intervene_first_pass_only) hooks.intervene = nullptr;
        fed = seq.size();
        Var last = slice_rows(h, h.rows() - 1, 1);
        const auto head = apply_head(last, vars.head).data();
        const std::size_t take = std::min(block, H - out.size() / nq);
        out.insert(out.end(), head.begin(), head.begin() + static_cast<std::ptrdiff_t>(take * nq));
        if (out.size() < H * nq)
            for (std::size_t s = 0; s < take; ++s) seq.push_back(head[s * nq + med]);
    }

    const double mu = r.norm_stats.mean, sc = r.norm_stats.scale();
    for (double& v : out) v = v * sc + mu;
    r.quantiles = Tensor({H, nq}, std::move(out));
    r.crossing_rate = crossing_rate(r.quantiles);
    if (opts.sort_quantiles) sort_quantile_rows(r.quantiles);
    return r;
}

void write_forecast_csv(const std::string& path, const ForecastResult& r) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << "step";
    for (double q : r.levels) os << ",q" << q;
    os << '\n';
    os.precision(17);
    const std::size_t nq = r.levels.size();
    for (std::size_t t = 0; t < r.horizon; ++t) {
        os << t + 1;
        for (std::size_t q = 0; q < nq; ++q) os << ',' << r.quantiles.data[t * nq + q];
        os << '\n';
    }
    if (!os) throw IoError("write failed on '" + path + "'");
}

// ---- metrics -------------------------------------------------------------------------

std::vector<double> seasonal_naive(std::span<const double> context, std::size_t H, std::size_t m,
                                   std::size_t* m_used) {
    if (context.empty()) throw InputError("seasonal_naive: empty context");
    if (m == 0 || context.size() < m) m = 1;
    if (m_used) *m_used = m;
    const std::size_t n = context.size();
    std::vector<double> out(H);
    for (std::size_t h = 1; h <= H; ++h) {
        const std::size_t back = m * ((h + m - 1) / m);
        out[h - 1] = context[n + h - 1 - back];
    }
    return out;
}

double mase(std::span<const double> forecast, std::span<const double> truth, std::span<const double> insample,
            std::size_t m) {
    if (forecast.size() != truth.size() || truth.empty())
        throw DimensionError("mase: forecast and truth lengths differ or are empty");
    if (m == 0 || insample.size() <= m)
        throw UndefinedMetricError("mase: in-sample length " + std::to_string(insample.size()) +
                                   " must exceed season " + std::to_string(m));
    double den = 0.0;
    for (std::size_t t = m; t < insample.size(); ++t) den += std::abs(insample[t] - insample[t - m]);
    den /= static_cast<double>(insample.size() - m);
    if (den < kUndefinedFloor) throw UndefinedMetricError("mase: in-sample seasonal differences are all zero");
    double num = 0.0;
    for (std::size_t t = 0; t < truth.size(); ++t) num += std::abs(forecast[t] - truth[t]);
    num /= static_cast<double>(truth.size());
    return num / den;
}

double crps_quantile(const Tensor& pred_q, std::span<const double> truth, std::span<const double> levels) {
    if (truth.empty()) throw DimensionError("crps: empty truth");
    return pinball_sum(pred_q, truth, levels) / static_cast<double>(truth.size() * levels.size());
}

double crps_normalized(const Tensor& pred_q, std::span<const double> truth, std::span<const double> levels) {
    const double raw = crps_quantile(pred_q, truth, levels);
    const double scale = mean_abs(truth);
    if (scale < kUndefinedFloor) throw UndefinedMetricError("crps: mean |truth| is zero");
    return raw / scale;
}

double wql(const Tensor& pred_q, std::span<const double> truth, std::span<const double> levels) {
    if (truth.empty()) throw DimensionError("wql: empty truth");
    double den = 0.0;
    for (double y : truth) den += std::abs(y);
    const double num = pinball_sum(pred_q, truth, levels);
    if (den <= 0.0) throw UndefinedMetricError("wql: truth is all zero");
    return num / den;
}

Tensor point_as_quantiles(std::span<const double> point, std::size_t n_levels) {
    std::vector<double> d;
    d.reserve(point.size() * n_levels);
    for (double v : point) d.insert(d.end(), n_levels, v);
    return Tensor({point.size(), n_levels}, std::move(d));
}

// ---- reports ---------------------------------------------------------------------------

std::vector<EvalTask> make_tasks(const std::vector<SeriesRecord>& records, std::size_t H) {
    std::vector<EvalTask> out;
    for (const auto& r : records) {
        if (r.target.size() <= H) {
            throw InputError("series '" + r.id + "' has " + std::to_string(r.target.size()) +
                             " points, needs more than the horizon " + std::to_string(H));
        }
        const auto cut = static_cast<std::ptrdiff_t>(r.target.size() - H);
        out.push_back({r.id, {r.target.begin(), r.target.begin() + cut}, {r.target.begin() + cut, r.target.end()},
                       r.season_m});
    }
    return out;
}

Aggregate geometric_mean(std::span<const std::optional<double>> ratios) {
    Aggregate a;
    double logs = 0.0;
    for (const auto& r : ratios) {
        if (r && std::isfinite(*r) && *r > 0.0) {
            logs += std::log(*r);
            ++a.used;
        } else {
            ++a.excluded;
        }
    }
    if (a.used) a.geomean = std::exp(logs / static_cast<double>(a.used));
    return a;
}

EvalReport aggregate(std::vector<TaskRow> rows) {
    EvalReport rep;
    std::vector<std::optional<double>> m, c;
    for (const auto& r : rows) {
        m.push_back(r.mase_ratio);
        c.push_back(r.crps_ratio);
    }
    rep.mase_ratio = geometric_mean(m);
    rep.crps_ratio = geometric_mean(c);
    if (rep.mase_ratio.used == 0 && rep.crps_ratio.used == 0)
        throw EmptyReportError("no task produced a valid metric ratio (" + std::to_string(rows.size()) + " rows)");
    rep.rows = std::move(rows);
    return rep;
}

std::vector<double> average_ranks(const std::vector<std::vector<double>>& scores) {
    if (scores.empty()) return {};
    const std::size_t M = scores.size(), N = scores.front().size();
    for (const auto& s : scores)
        if (s.size() != N) throw DimensionError("average_ranks: models scored on different task counts");
    if (N == 0) throw EmptyReportError("average_ranks: no tasks");
    std::vector<double> total(M, 0.0);
    std::vector<std::size_t> idx(M);
    for (std::size_t t = 0; t < N; ++t) {
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a][t] < scores[b][t]; });
        for (std::size_t i = 0; i < M;) {
            std::size_t j = i;
            while (j + 1 < M && scores[idx[j + 1]][t] == scores[idx[i]][t]) ++j;
            const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
            for (std::size_t k = i; k <= j; ++k) total[idx[k]] += rank;
            i = j + 1;
        }
    }
    for (double& v : total) v /= static_cast<double>(N);
    return total;
}

namespace {

std::string opt_str(const std::optional<double>& v) {
    if (!v) return "";
    std::ostringstream os;
    os.precision(17);
    os << *v;
    return os.str();
}

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json agg_json(const Aggregate& a) { return {{"geomean", a.geomean}, {"used", a.used}, {"excluded", a.excluded}}; }

}  // namespace

json EvalReport::summary() const {
    json rows_j = json::array();
    for (const auto& r : rows) {
        rows_j.push_back({{"task_id", r.task_id},
                          {"mase", opt_json(r.mase)},
                          {"crps", opt_json(r.crps)},
                          {"wql", opt_json(r.wql)},
                          {"base_mase", opt_json(r.base_mase)},
                          {"base_crps", opt_json(r.base_crps)},
                          {"mase_ratio", opt_json(r.mase_ratio)},
                          {"crps_ratio", opt_json(r.crps_ratio)}});
    }
    return {{"tasks", rows.size()},
            {"mase_ratio", agg_json(mase_ratio)},
            {"crps_ratio", agg_json(crps_ratio)},
            {"config_hash", model_hash},
            {"seed", seed},
            {"noise", noise}};
}

void EvalReport::write_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << "task_id,mase,crps,wql,base_mase,base_crps,mase_ratio,crps_ratio,crossing_rate\n";
    for (const auto& r : rows) {
        os << r.task_id << ',' << opt_str(r.mase) << ',' << opt_str(r.crps) << ',' << opt_str(r.wql) << ','
           << opt_str(r.base_mase) << ',' << opt_str(r.base_crps) << ',' << opt_str(r.mase_ratio) << ','
           << opt_str(r.crps_ratio) << ',' << opt_str(r.crossing_rate) << '\n';
    }
    if (!os) throw IoError("write failed on '" + path + "'");
}

void EvalReport::write_json(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << summary().dump(2) << '\n';
}

TaskRow evaluate_task(const EvalTask& task, const ModelConfig& cfg, const ModelParams& params,
                      const ForecastOptions& opts) {
    const std::size_t H = task.truth.size();
    const auto& levels = cfg.levels;
    const ForecastResult f = forecast(task.context, H, cfg, params, opts);
    const auto point = f.median();
    std::size_t m = 1;
    const auto naive = seasonal_naive(task.context, H, task.season_m, &m);
    const Tensor naive_q = point_as_quantiles(naive, levels.size());

    TaskRow r;
    r.task_id = task.id;
    r.crossing_rate = f.crossing_rate;
    r.mase = defined([&] { return mase(point, task.truth, task.context, m); });
    r.base_mase = defined([&] { return mase(naive, task.truth, task.context, m); });
    r.crps = defined([&] { return crps_normalized(f.quantiles, task.truth, levels); });
    r.base_crps = defined([&] { return crps_normalized(naive_q, task.truth, levels); });
    r.wql = defined([&] { return wql(f.quantiles, task.truth, levels); });
    if (r.mase && r.base_mase && *r.base_mase > 0.0) r.mase_ratio = *r.mase / *r.base_mase;
    if (r.crps && r.base_crps && *r.base_crps > 0.0) r.crps_ratio = *r.crps / *r.base_crps;
    return r;
}

EvalReport evaluate(const std::vector<EvalTask>& tasks, const ModelConfig& cfg, const ModelParams& params,
                    const EvalOptions& opts) {
    std::vector<TaskRow> rows(tasks.size());
    parallel_for(tasks.size(), opts.threads,
                 [&](std::size_t i) { rows[i] = evaluate_task(tasks[i], cfg, params, opts.forecast); });
    EvalReport rep = aggregate(std::move(rows));
    rep.model_hash = eidos::model_hash(cfg);
    return rep;
}

// ---- noise robustness ------------------------------------------------------------------

NoiseKind parse_noise_kind(const std::string& s) {
    if (s == "gaussian") return NoiseKind::Gaussian;
    if (s == "impulse") return NoiseKind::Impulse;
    throw ConfigError("unknown noise kind '" + s + "' (expected gaussian or impulse)");
}

std::string to_string(NoiseKind k) { return k == NoiseKind::Gaussian ? "gaussian" : "impulse"; }

std::vector<double> default_noise_levels(NoiseKind k) {
    if (k == NoiseKind::Gaussian) return {0.0, 0.2, 0.4, 0.6, 0.8};
    return {0.0, 0.05, 0.1, 0.15, 0.2};
}

std::vector<NoiseRow> noise_bench(const std::vector<EvalTask>& tasks, const ModelConfig& cfg,
                                  const ModelParams& params, NoiseKind kind, std::span<const double> levels,
                                  std::uint64_t seed, std::size_t threads) {
    if (tasks.empty()) throw EmptyReportError("noise_bench: no tasks");
    const auto clean = std::find(levels.begin(), levels.end(), 0.0);
    if (clean == levels.end()) throw ConfigError("noise_bench: levels must include the clean level 0");

    std::vector<NoiseRow> rows;
    for (double level : levels) {
        std::vector<std::optional<double>> crps(tasks.size());
        parallel_for(tasks.size(), threads, [&](std::size_t i) {
            const auto& t = tasks[i];
            const std::uint64_t s = mix_seed(seed, i);
            const std::vector<double> ctx = kind == NoiseKind::Gaussian ? gaussian_noise(t.context, level, s)
                                                                         : impulse_noise(t.context, level, s).values;
            const ForecastResult f = forecast(ctx, t.truth.size(), cfg, params);
            crps[i] = defined([&] { return crps_normalized(f.quantiles, t.truth, cfg.levels); });
        });
        const Aggregate a = geometric_mean(crps);
        rows.push_back({level, a.geomean, 0.0, a.used, a.excluded});
    }
    const double base = rows[static_cast<std::size_t>(clean - levels.begin())].crps;
    if (!(base > 0.0)) throw EmptyReportError("noise_bench: clean CRPS is undefined for every task");
    for (auto& r : rows) r.relative_crps = r.crps / base;
    return rows;
}

void write_noise_csv(const std::string& path, NoiseKind kind, const std::vector<NoiseRow>& rows) {
    auto shortest = [](double v) {
        char buf[32];
        auto res = std::to_chars(buf, buf + sizeof buf, v);
        return std::string(buf, res.ptr);
    };
    std::ofstream os(path);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os.precision(17);
    os << "noise,level,crps,relative_crps,tasks_used,tasks_excluded\n";
    for (const auto& r : rows)
        os << to_string(kind) << ',' << shortest(r.level) << ',' << r.crps << ',' << r.relative_crps << ',' << r.used << ','
           << r.excluded << '\n';
    if (!os) throw IoError("write failed on '" + path + "'");
}

}  // namespace eidos
