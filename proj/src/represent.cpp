#include "eidos/represent.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "eidos/errors.hpp"
#include "eidos/params.hpp"

namespace eidos {

namespace {

constexpr double kDegenerateNorm = 1e-9;

Series ramp(double slope, std::size_t T, double sigma, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, sigma);
    Series x(T);
    const double denom = T > 1 ? static_cast<double>(T - 1) : 1.0;
    for (std::size_t t = 0; t < T; ++t) x[t] = slope * static_cast<double>(t) / denom + n(rng);
    return x;
}

Series sine(std::size_t T, double sigma, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> f(1.0, 5.0), ph(0.0, 2.0 * std::numbers::pi);
    std::normal_distribution<double> n(0.0, sigma);
    const double freq = f(rng), phase = ph(rng);
    Series x(T);
    for (std::size_t t = 0; t < T; ++t)
        x[t] = std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(t) / static_cast<double>(T) + phase) +
               n(rng);
    return x;
}

Series white(std::size_t T, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Series x(T);
    for (auto& v : x) v = n(rng);
    return x;
}

void check_options(const ProbeOptions& o) {
    if (o.count == 0) throw ConfigError("probe dataset: count must be positive");
    if (o.length < 2) throw ConfigError("probe dataset: length must be at least 2");
    if (!(o.sigma >= 0.0)) throw ConfigError("probe dataset: sigma must be >= 0");
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

std::vector<Series> joined(const ProbeDataset& d) {
    std::vector<Series> all = d.class0;
    all.insert(all.end(), d.class1.begin(), d.class1.end());
    return all;
}

std::vector<double> ranks(std::span<const double> x) {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return x[a] < x[b]; });
    std::vector<double> r(x.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
        i = j + 1;
    }
    return r;
}

}  // namespace

ConceptKind parse_concept_kind(const std::string& s) {
    if (s == "trend") return ConceptKind::Trend;
    if (s == "periodicity") return ConceptKind::Periodicity;
    throw ConfigError("unknown concept '" + s + "' (expected trend or periodicity)");
}

std::string to_string(ConceptKind k) { return k == ConceptKind::Trend ? "trend" : "periodicity"; }

ProbeDataset make_probe_dataset(ConceptKind kind, const ProbeOptions& o) {
    check_options(o);
    ProbeDataset d{kind, {}, {}, o.length, o.sigma};
    std::mt19937_64 rng(mix_seed(o.seed, kind == ConceptKind::Trend ? 0x7E11D : 0xFE41));
    std::uniform_real_distribution<double> slope(0.5, 2.0);
    for (std::size_t i = 0; i < o.count; ++i) {
        if (kind == ConceptKind::Trend) {
            d.class0.push_back(ramp(-slope(rng), o.length, o.sigma, rng));
            d.class1.push_back(ramp(slope(rng), o.length, o.sigma, rng));
        } else {
            d.class0.push_back(white(o.length, rng));
            d.class1.push_back(sine(o.length, o.sigma, rng));
        }
    }
    return d;
}

ProbeDataset make_steering_dataset(ConceptKind kind, const ProbeOptions& o) {
    check_options(o);
    ProbeDataset d{kind, {}, {}, o.length, o.sigma};
    std::mt19937_64 rng(mix_seed(o.seed, kind == ConceptKind::Trend ? 0x57EE7 : 0x57EE8));
    std::uniform_real_distribution<double> slope(0.5, 2.0);
    for (std::size_t i = 0; i < o.count; ++i) {
        if (kind == ConceptKind::Trend) {
            d.class0.push_back(ramp(0.0, o.length, o.sigma, rng));
            d.class1.push_back(ramp(slope(rng), o.length, o.sigma, rng));
        } else {
            d.class0.push_back(white(o.length, rng));
            d.class1.push_back(sine(o.length, o.sigma, rng));
        }
    }
    return d;
}

std::vector<States> extract_all_layers(const ModelConfig& cfg, const ModelParams& params,
                                       std::span<const Series> series, std::size_t threads) {
    const std::size_t L = cfg.backbone.n_layers + 1, d = cfg.backbone.d_model;
    std::vector<States> out(L, States(series.size()));
    parallel_for(series.size(), threads, [&](std::size_t i) {
        if (series[i].empty()) throw InputError("extract_states: empty series");
        Tape tape(false);
        ParamBinder binder(tape);
        const ModelVars vars = bind(binder, params);
        std::vector<Var> states;
        ForwardHooks hooks;
        hooks.layer_states = &states;
        const auto x = znorm(series[i]);
        backbone_forward(embed_series(tape, x, vars.tokenizer), cfg.backbone, vars.backbone, hooks);
        for (std::size_t l = 0; l < L; ++l) {
            const auto s = states[l].data();
            out[l][i].assign(s.end() - static_cast<std::ptrdiff_t>(d), s.end());
        }
    });
    return out;
}

States extract_states(const ModelConfig& cfg, const ModelParams& params, std::span<const Series> series,
                      std::size_t layer, std::size_t threads) {
    if (layer > cfg.backbone.n_layers) {
        throw ConfigError("layer " + std::to_string(layer) + " out of range 0.." +
                          std::to_string(cfg.backbone.n_layers));
    }
    return std::move(extract_all_layers(cfg, params, series, threads)[layer]);
}

double ldr(const States& c0, const States& c1, double eps) {
    if (c0.empty() || c1.empty()) throw ContractError("ldr: both classes need at least one state");
    const std::size_t d = c0.front().size();
    auto moments = [d](const States& s, std::vector<double>& mu) {
        mu.assign(d, 0.0);
        for (const auto& v : s) {
            if (v.size() != d) throw DimensionError("ldr: states have differing dimensions");
            for (std::size_t k = 0; k < d; ++k) mu[k] += v[k];
        }
        for (double& m : mu) m /= static_cast<double>(s.size());
        double var = 0.0;
        for (const auto& v : s)
            for (std::size_t k = 0; k < d; ++k) var += (v[k] - mu[k]) * (v[k] - mu[k]);
        return var / static_cast<double>(s.size());
    };
    std::vector<double> mu0, mu1;
    const double v0 = moments(c0, mu0), v1 = moments(c1, mu1);
    double num = 0.0;
    for (std::size_t k = 0; k < d; ++k) num += (mu1[k] - mu0[k]) * (mu1[k] - mu0[k]);
    return num / (v1 + v0 + eps);
}

std::vector<double> probe_sweep(const ModelConfig& cfg, const ModelParams& params, const ProbeDataset& data,
                                std::size_t threads) {
    const auto all = joined(data);
    const auto layers = extract_all_layers(cfg, params, all, threads);
    const auto n0 = static_cast<std::ptrdiff_t>(data.class0.size());
    std::vector<double> curve;
    for (const auto& st : layers) curve.push_back(ldr(States(st.begin(), st.begin() + n0), States(st.begin() + n0, st.end())));
    return curve;
}

void write_probe_csv(const std::string& path, const std::vector<double>& curve) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os.precision(17);
    os << "layer,ldr\n";
    for (std::size_t l = 0; l < curve.size(); ++l) os << l << ',' << curve[l] << '\n';
    if (!os) throw IoError("write failed on '" + path + "'");
}

std::vector<double> coordinate_median(const States& s) {
    if (s.empty()) throw ContractError("median of an empty state set");
    const std::size_t d = s.front().size(), n = s.size();
    std::vector<double> out(d), col(n);
    for (std::size_t k = 0; k < d; ++k) {
        for (std::size_t i = 0; i < n; ++i) col[i] = s[i].at(k);
        std::sort(col.begin(), col.end());
        out[k] = n % 2 ? col[n / 2] : 0.5 * (col[n / 2 - 1] + col[n / 2]);
    }
    return out;
}

ConceptDirection direction_from_states(const States& c0, const States& c1, std::size_t layer) {
    ConceptDirection dir;
    dir.layer = layer;
    dir.median0 = coordinate_median(c0);
    dir.median1 = coordinate_median(c1);
    if (dir.median0.size() != dir.median1.size()) throw DimensionError("direction: class dimensions differ");
    std::vector<double> diff(dir.median0.size());
    double sq = 0.0;
    for (std::size_t k = 0; k < diff.size(); ++k) {
        diff[k] = dir.median1[k] - dir.median0[k];
        sq += diff[k] * diff[k];
    }
    const double norm = std::sqrt(sq);
    if (norm < kDegenerateNorm)
        throw DegenerateDirectionError("class medians coincide (difference norm " + std::to_string(norm) + ")");
    for (double& v : diff) v /= norm;
    dir.v_unit = std::move(diff);
    double e = 0.0;
    for (const States* s : {&c0, &c1})
        for (const auto& v : *s) e += std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    dir.energy = e / static_cast<double>(c0.size() + c1.size());
    return dir;
}

ConceptDirection extract_direction(const ModelConfig& cfg, const ModelParams& params, const ProbeDataset& data,
                                   std::size_t layer, std::size_t threads) {
    const auto n0 = static_cast<std::ptrdiff_t>(data.class0.size());
    const auto st = extract_states(cfg, params, joined(data), layer, threads);
    return direction_from_states(States(st.begin(), st.begin() + n0), States(st.begin() + n0, st.end()), layer);
}

std::pair<ForecastResult, ForecastResult> steer_forecast(const ModelConfig& cfg, const ModelParams& params,
                                                         std::span<const double> context, std::size_t H,
                                                         const ConceptDirection& dir, double alpha,
                                                         const SteerOptions& o) {
    if (dir.layer > cfg.backbone.n_layers)
        throw ConfigError("steering layer " + std::to_string(dir.layer) + " out of range");
    if (dir.v_unit.size() != cfg.backbone.d_model) {
        throw ConfigError("steering direction has dimension " + std::to_string(dir.v_unit.size()) +
                          ", model has d_model " + std::to_string(cfg.backbone.d_model));
    }
    ForecastOptions base;
    base.block_l = o.block_l;
    const ForecastResult baseline = forecast(context, H, cfg, params, base);

    std::vector<double> shift(dir.v_unit.size());
    for (std::size_t k = 0; k < shift.size(); ++k) shift[k] = (alpha * dir.energy) * dir.v_unit[k];
    ForecastOptions steered = base;
    steered.intervene_first_pass_only = true;
    steered.intervene = [&](std::size_t layer, Var h) {
        if (layer != dir.layer) return h;
        Tape& tape = *h.tape();
        const std::size_t T = h.rows(), d = h.cols();
        std::vector<double> add(T * d, 0.0);
        for (std::size_t t = o.last_position_only ? T - 1 : 0; t < T; ++t)
            std::copy(shift.begin(), shift.end(), add.begin() + static_cast<std::ptrdiff_t>(t * d));
        return eidos::add(h, tape.constant(Tensor({T, d}, std::move(add))));
    };
    return {baseline, forecast(context, H, cfg, params, steered)};
}

double fitted_slope(std::span<const double> y) {
    const std::size_t n = y.size();
    if (n < 2) throw ContractError("fitted_slope: need at least two points");
    const double tbar = 0.5 * static_cast<double>(n - 1);
    const double ybar = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        const double dt = static_cast<double>(t) - tbar;
        sxy += dt * (y[t] - ybar);
        sxx += dt * dt;
    }
    return sxy / sxx;
}

double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw DimensionError("spearman: need two equal-length samples");
    const auto rx = ranks(x), ry = ranks(y);
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / static_cast<double>(rx.size());
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / static_cast<double>(ry.size());
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

// ---- plots ---------------------------------------------------------------------

namespace {

std::string esc(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

void write_line_svg(const std::string& path, const std::string& title, const std::string& x_label,
                    const std::string& y_label, const std::vector<PlotSeries>& series) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};
    const double W = 640, Hh = 400, ml = 64, mr = 150, mt = 40, mb = 50;
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (const auto& s : series) {
        if (s.x.size() != s.y.size()) throw DimensionError("plot series '" + s.name + "': x and y lengths differ");
        for (double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
        for (double v : s.y)
            if (std::isfinite(v)) y0 = std::min(y0, v), y1 = std::max(y1, v);
    }
    if (x0 > x1) x0 = 0, x1 = 1;
    if (y0 > y1) y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad, y1 += pad;
    auto px = [&](double x) { return ml + (x - x0) / (x1 - x0) * (W - ml - mr); };
    auto py = [&](double y) { return Hh - mb - (y - y0) / (y1 - y0) * (Hh - mt - mb); };

    std::ostringstream os;
    os.precision(6);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << Hh
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << esc(title) << "</text>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << Hh - mb << "\" x2=\"" << W - mr << "\" y2=\"" << Hh - mb
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << Hh - mb
       << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
        os << "<text x=\"" << px(xv) << "\" y=\"" << Hh - mb + 16 << "\" text-anchor=\"middle\">" << xv << "</text>\n";
        os << "<text x=\"" << ml - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << yv << "</text>\n";
    }
    os << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << Hh - 10 << "\" text-anchor=\"middle\">" << esc(x_label)
       << "</text>\n";
    os << "<text transform=\"translate(16," << (mt + Hh - mb) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
       << esc(y_label) << "</text>\n";
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& s = series[i];
        const char* color = palette[i % std::size(palette)];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t k = 0; k < s.x.size(); ++k)
            if (std::isfinite(s.y[k])) os << px(s.x[k]) << ',' << py(s.y[k]) << ' ';
        os << "\"/>\n";
        const double ly = mt + 18.0 * static_cast<double>(i);
        os << "<line x1=\"" << W - mr + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - mr + 30 << "\" y2=\"" << ly
           << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << W - mr + 36 << "\" y=\"" << ly + 4 << "\">" << esc(s.name) << "</text>\n";
    }
    os << "</svg>\n";

    std::ofstream f(path);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f << os.str();
    if (!f) throw IoError("write failed on '" + path + "'");
}

}  // namespace eidos
