#include "eidos/datagen.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include "eidos/errors.hpp"
#include "eidos/params.hpp"

namespace eidos {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::size_t season_for(double frequency, std::size_t T) {
    if (!(frequency > 0.0)) return 1;
    const double period = static_cast<double>(T) / frequency;
    const double r = std::round(period);
    if (r >= 1.0 && std::abs(period - r) < 1e-9) return static_cast<std::size_t>(r);
    return 1;
}

double activate(Activation a, double v) {
    switch (a) {
        case Activation::Identity: return v;
        case Activation::Tanh: return std::tanh(v);
        case Activation::Sin: return std::sin(v);
        case Activation::LeakyRelu: return v > 0.0 ? v : 0.1 * v;
    }
    return v;
}

std::vector<double> realize_root(const std::vector<KernelComponent>& recipe, std::size_t T, std::mt19937_64& rng) {
    std::vector<double> x(T, 0.0);
    std::uniform_real_distribution<double> phase(0.0, kTwoPi);
    std::normal_distribution<double> n01(0.0, 1.0);
    const double Td = static_cast<double>(T);
    for (const auto& c : recipe) {
        switch (c.kind) {
            case KernelComponent::Kind::Periodic:
                // fundamental plus two decaying harmonics
                for (int h = 1; h <= 3; ++h) {
                    const double ph = phase(rng);
                    for (std::size_t t = 0; t < T; ++t)
                        x[t] += c.weight / h * std::sin(kTwoPi * h * c.frequency * static_cast<double>(t) / Td + ph);
                }
                break;
            case KernelComponent::Kind::Rbf: {
                std::vector<double> w(T);
                for (auto& v : w) v = n01(rng);
                const double ls = std::max(c.lengthscale, 1.0);
                const auto half = static_cast<std::ptrdiff_t>(std::ceil(3.0 * ls));
                std::vector<double> s(T, 0.0);
                for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(T); ++t) {
                    double acc = 0.0;
                    for (std::ptrdiff_t j = -half; j <= half; ++j) {
                        const std::ptrdiff_t k = std::clamp<std::ptrdiff_t>(t + j, 0, static_cast<std::ptrdiff_t>(T) - 1);
                        acc += std::exp(-0.5 * double(j * j) / (ls * ls)) * w[static_cast<std::size_t>(k)];
                    }
                    s[static_cast<std::size_t>(t)] = acc;
                }
                const NormStats st = stats_of(s);
                for (std::size_t t = 0; t < T; ++t) x[t] += c.weight * (s[t] - st.mean) / st.scale();
                break;
            }
            case KernelComponent::Kind::Linear:
                for (std::size_t t = 0; t < T; ++t)
                    x[t] += c.weight * c.slope * (static_cast<double>(t) / (Td - 1.0) - 0.5);
                break;
        }
    }
    return x;
}

void check_finite_values(std::span<const double> x, const std::string& what) {
    for (std::size_t i = 0; i < x.size(); ++i)
        if (!std::isfinite(x[i])) throw InputError(what + ": non-finite value at index " + std::to_string(i));
}

}  // namespace

PrimitiveKind parse_primitive_kind(const std::string& name) {
    if (name == "sine") return PrimitiveKind::Sine;
    if (name == "trend") return PrimitiveKind::Trend;
    if (name == "sine+trend") return PrimitiveKind::SineTrend;
    if (name == "noise") return PrimitiveKind::Noise;
    throw ConfigError("unknown primitive kind '" + name + "'");
}

std::string to_string(PrimitiveKind kind) {
    switch (kind) {
        case PrimitiveKind::Sine: return "sine";
        case PrimitiveKind::Trend: return "trend";
        case PrimitiveKind::SineTrend: return "sine+trend";
        case PrimitiveKind::Noise: return "noise";
    }
    return "?";
}

SeriesRecord gen_primitive(PrimitiveKind kind, const PrimitiveParams& p, std::size_t T, std::uint64_t seed) {
    if (T < 2) throw ContractError("gen_primitive: length must be >= 2");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    const double Td = static_cast<double>(T);
    SeriesRecord r;
    r.id = to_string(kind) + "-" + std::to_string(seed);
    r.target.assign(T, p.offset);
    const bool sine = kind == PrimitiveKind::Sine || kind == PrimitiveKind::SineTrend;
    const bool trend = kind == PrimitiveKind::Trend || kind == PrimitiveKind::SineTrend;
    for (std::size_t t = 0; t < T; ++t) {
        const double td = static_cast<double>(t);
        if (sine) r.target[t] += p.amplitude * std::sin(kTwoPi * p.frequency * td / Td + p.phase);
        if (trend) r.target[t] += p.slope * td / (Td - 1.0);
        if (kind == PrimitiveKind::Noise) r.target[t] += n01(rng);
    }
    if (p.sigma > 0.0)
        for (auto& v : r.target) v += p.sigma * n01(rng);
    r.season_m = sine ? season_for(p.frequency, T) : 1;
    return r;
}

std::vector<double> sample_dirichlet(std::size_t k, double alpha, std::mt19937_64& rng) {
    if (k == 0 || !(alpha > 0.0)) throw ConfigError("dirichlet: need k >= 1 and alpha > 0");
    std::gamma_distribution<double> g(alpha, 1.0);
    std::vector<double> w(k);
    double s = 0.0;
    do {
        s = 0.0;
        for (auto& v : w) s += (v = g(rng));
    } while (!(s > 0.0));
    for (auto& v : w) v /= s;
    return w;
}

MixupResult tsmixup(std::span<const SeriesRecord> pool, const MixupOptions& o, std::uint64_t seed) {
    if (pool.empty()) throw ContractError("tsmixup: empty pool");
    if (o.k_max == 0 || o.length == 0) throw ConfigError("tsmixup: k_max and length must be positive");
    std::mt19937_64 rng(seed);
    const std::size_t k = o.force_k ? *o.force_k : 1 + static_cast<std::size_t>(rng() % o.k_max);
    if (k == 0) throw ConfigError("tsmixup: k must be >= 1");

    MixupResult out;
    if (o.force_lambda) {
        if (o.force_lambda->size() != k) throw ConfigError("tsmixup: forced lambda size differs from k");
        out.lambda = *o.force_lambda;
    } else {
        out.lambda = sample_dirichlet(k, o.alpha, rng);
    }
    out.record.target.assign(o.length, 0.0);
    std::size_t attempts = 0;
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t idx = 0;
        while (true) {
            if (attempts++ >= o.max_attempts) {
                throw InputError("tsmixup: no series of length >= " + std::to_string(o.length) + " after " +
                                 std::to_string(o.max_attempts) + " attempts");
            }
            idx = static_cast<std::size_t>(rng() % pool.size());
            if (pool[idx].target.size() >= o.length) break;
        }
        const auto& src = pool[idx].target;
        const std::size_t start = static_cast<std::size_t>(rng() % (src.size() - o.length + 1));
        auto seg = znorm(std::span<const double>(src).subspan(start, o.length));
        for (std::size_t t = 0; t < o.length; ++t) out.record.target[t] += out.lambda[i] * seg[t];
        out.sources.push_back(idx);
        out.starts.push_back(start);
    }
    out.record.id = "mix-" + std::to_string(seed);
    out.record.freq = pool[out.sources.front()].freq;
    out.record.season_m = pool[out.sources.front()].season_m;
    return out;
}

void ScmGraph::validate() const {
    if (nodes.empty()) throw GraphError("scm: graph has no nodes");
    if (!is_root(0)) throw GraphError("scm: node 0 must be a root");
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const auto& n = nodes[i];
        if (n.parents.empty()) {
            if (n.recipe.empty()) throw GraphError("scm: root " + std::to_string(i) + " has no kernel recipe");
            continue;
        }
        if (n.weights.size() != n.parents.size() || n.activations.size() != n.parents.size()) {
            throw GraphError("scm: node " + std::to_string(i) + " has mismatched edge lists");
        }
        for (std::size_t p : n.parents) {
            if (p >= i) {
                throw GraphError("scm: edge " + std::to_string(p) + " -> " + std::to_string(i) +
                                 " breaks topological order (cycle or forward reference)");
            }
        }
    }
}

ScmGraph ScmGraph::sample(std::uint64_t seed, std::size_t max_nodes) {
    if (max_nodes == 0) throw ConfigError("scm: max_nodes must be positive");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> n01(0.0, 1.0);
    auto recipe = [&]() {
        std::vector<KernelComponent> r;
        const std::size_t n = 1 + static_cast<std::size_t>(rng() % 3);
        for (std::size_t c = 0; c < n; ++c) {
            KernelComponent k;
            k.kind = static_cast<KernelComponent::Kind>(rng() % 3);
            k.weight = 0.5 + u01(rng);
            k.frequency = static_cast<double>(1 + rng() % 16);
            k.lengthscale = 4.0 + 60.0 * u01(rng);
            k.slope = -2.0 + 4.0 * u01(rng);
            r.push_back(k);
        }
        return r;
    };
    ScmGraph g;
    const std::size_t n = 1 + static_cast<std::size_t>(rng() % max_nodes);
    for (std::size_t i = 0; i < n; ++i) {
        ScmNode node;
        if (i == 0 || u01(rng) < 0.3) {
            node.recipe = recipe();
        } else {
            const std::size_t np = 1 + static_cast<std::size_t>(rng() % std::min<std::size_t>(i, 2));
            std::vector<std::size_t> cand(i);
            std::iota(cand.begin(), cand.end(), 0);
            std::shuffle(cand.begin(), cand.end(), rng);
            for (std::size_t j = 0; j < np; ++j) {
                node.parents.push_back(cand[j]);
                node.weights.push_back(n01(rng));
                node.activations.push_back(static_cast<Activation>(rng() % 4));
            }
            std::sort(node.parents.begin(), node.parents.end());
            node.bias = 0.2 * n01(rng);
        }
        g.nodes.push_back(std::move(node));
    }
    return g;
}

std::vector<SeriesRecord> cauker_lite(const ScmGraph& graph, std::size_t T, std::uint64_t seed) {
    if (T < 16) throw ContractError("cauker_lite: length must be >= 16");
    graph.validate();
    std::vector<SeriesRecord> out(graph.nodes.size());
    for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
        const auto& n = graph.nodes[i];
        SeriesRecord& r = out[i];
        r.id = "scm-" + std::to_string(seed) + "-" + std::to_string(i);
        if (graph.is_root(i)) {
            std::mt19937_64 rng(mix_seed(seed, i));
            r.target = realize_root(n.recipe, T, rng);
            for (const auto& c : n.recipe) {
                if (c.kind == KernelComponent::Kind::Periodic) {
                    r.season_m = season_for(c.frequency, T);
                    break;
                }
            }
        } else {
            r.target.assign(T, n.bias);
            for (std::size_t e = 0; e < n.parents.size(); ++e) {
                const auto& px = out[n.parents[e]].target;
                for (std::size_t t = 0; t < T; ++t) r.target[t] += n.weights[e] * activate(n.activations[e], px[t]);
            }
            r.season_m = out[n.parents.front()].season_m;
        }
    }
    return out;
}

std::vector<SeriesRecord> cauker_lite(std::uint64_t seed, std::size_t T) {
    return cauker_lite(ScmGraph::sample(seed), T, seed);
}

NormStats stats_of(std::span<const double> x, double eps) {
    if (x.empty()) throw ContractError("znorm: empty input");
    NormStats s;
    s.eps = eps;
    double m = 0.0;
    for (double v : x) m += v;
    m /= static_cast<double>(x.size());
    double var = 0.0;
    for (double v : x) var += (v - m) * (v - m);
    var /= static_cast<double>(x.size());
    s.mean = m;
    s.std = std::sqrt(var);
    return s;
}

std::vector<double> znorm(std::span<const double> x, NormStats* stats_out, double eps) {
    const NormStats s = stats_of(x, eps);
    std::vector<double> out(x.size());
    const double sc = s.scale();
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - s.mean) / sc;
    if (stats_out) *stats_out = s;
    return out;
}

std::vector<double> denorm(std::span<const double> x, const NormStats& s) {
    std::vector<double> out(x.size());
    const double sc = s.scale();
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * sc + s.mean;
    return out;
}

std::vector<double> gaussian_noise(std::span<const double> x, double sigma_level, std::uint64_t seed) {
    if (!(sigma_level >= 0.0)) throw ConfigError("gaussian_noise: sigma level must be >= 0");
    std::vector<double> out(x.begin(), x.end());
    if (sigma_level == 0.0 || x.empty()) return out;
    const double sd = sigma_level * stats_of(x).std;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& v : out) v += sd * n(rng);
    return out;
}

ImpulseResult impulse_noise(std::span<const double> x, double p, std::uint64_t seed) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("impulse_noise: probability must lie in [0, 1]");
    ImpulseResult r;
    r.values.assign(x.begin(), x.end());
    if (p == 0.0 || x.empty()) return r;
    r.sigma_x = stats_of(x).std;
    const double mag = kImpulseMagnitude * r.sigma_x;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t t = 0; t < x.size(); ++t) {
        const bool hit = u(rng) < p;
        const bool up = (rng() & 1u) != 0;
        if (!hit) continue;
        const double delta = up ? mag : -mag;
        r.values[t] += delta;
        r.spikes.push_back({t, delta});
    }
    return r;
}

void GeneratorSpec::validate() const {
    static const char* kinds[] = {"sine", "trend", "sine+trend", "noise", "cauker", "tsmixup"};
    if (std::find(std::begin(kinds), std::end(kinds), kind) == std::end(kinds))
        throw ConfigError("unknown generator kind '" + kind + "'");
    if (count == 0) throw ConfigError("generator count must be positive (empty spec)");
    if (length < 2) throw ConfigError("generator length must be >= 2");
    if (kind == "cauker" && length < 16) throw ConfigError("cauker length must be >= 16");
    if (frequencies.empty()) throw ConfigError("generator frequencies must be non-empty");
    if (amplitude_min > amplitude_max || slope_min > slope_max) throw ConfigError("generator ranges are inverted");
    if (!(sigma >= 0.0)) throw ConfigError("generator sigma must be >= 0");
    if (kind == "tsmixup") {
        if (mixup_base == "tsmixup") throw ConfigError("tsmixup base cannot be tsmixup");
        if (mixup.k_max == 0 || !(mixup.alpha > 0.0)) throw ConfigError("tsmixup needs k_max >= 1 and alpha > 0");
    }
}

nlohmann::json to_json(const GeneratorSpec& s) {
    return {{"kind", s.kind},
            {"count", s.count},
            {"length", s.length},
            {"frequencies", s.frequencies},
            {"amplitude_min", s.amplitude_min},
            {"amplitude_max", s.amplitude_max},
            {"slope_min", s.slope_min},
            {"slope_max", s.slope_max},
            {"sigma", s.sigma},
            {"random_phase", s.random_phase},
            {"freq_tag", s.freq_tag},
            {"mixup_k_max", s.mixup.k_max},
            {"mixup_alpha", s.mixup.alpha},
            {"mixup_base", s.mixup_base}};
}

GeneratorSpec generator_spec_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("generator spec must be an object");
    GeneratorSpec s;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        const auto& v = it.value();
        try {
            if (k == "kind") s.kind = v.get<std::string>();
            else if (k == "count") s.count = v.get<std::size_t>();
            else if (k == "length") s.length = v.get<std::size_t>();
            else if (k == "frequencies") s.frequencies = v.get<std::vector<double>>();
            else if (k == "amplitude_min") s.amplitude_min = v.get<double>();
            else if (k == "amplitude_max") s.amplitude_max = v.get<double>();
            else if (k == "slope_min") s.slope_min = v.get<double>();
            else if (k == "slope_max") s.slope_max = v.get<double>();
            else if (k == "sigma") s.sigma = v.get<double>();
            else if (k == "random_phase") s.random_phase = v.get<bool>();
            else if (k == "freq_tag") s.freq_tag = v.get<std::string>();
            else if (k == "mixup_k_max") s.mixup.k_max = v.get<std::size_t>();
            else if (k == "mixup_alpha") s.mixup.alpha = v.get<double>();
            else if (k == "mixup_base") s.mixup_base = v.get<std::string>();
            else throw ConfigError("unknown generator key '" + k + "'");
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("generator key '" + k + "': " + e.what());
        }
    }
    s.validate();
    return s;
}

std::vector<SeriesRecord> generate_corpus(const GeneratorSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::vector<SeriesRecord> out;
    out.reserve(spec.count);
    if (spec.kind == "cauker") {
        for (std::uint64_t g = 0; out.size() < spec.count; ++g) {
            for (auto& r : cauker_lite(mix_seed(seed, g), spec.length)) {
                if (out.size() == spec.count) break;
                r.freq = spec.freq_tag;
                out.push_back(std::move(r));
            }
        }
        return out;
    }
    if (spec.kind == "tsmixup") {
        GeneratorSpec base = spec;
        base.kind = spec.mixup_base;
        base.length = 2 * spec.length;
        const auto pool = generate_corpus(base, mix_seed(seed, 0xB45E));
        MixupOptions o = spec.mixup;
        o.length = spec.length;
        for (std::size_t i = 0; i < spec.count; ++i) {
            auto m = tsmixup(pool, o, mix_seed(seed, i));
            m.record.id = "tsmixup-" + std::to_string(seed) + "-" + std::to_string(i);
            out.push_back(std::move(m.record));
        }
        return out;
    }
    const PrimitiveKind kind = parse_primitive_kind(spec.kind);
    for (std::size_t i = 0; i < spec.count; ++i) {
        const std::uint64_t s = mix_seed(seed, i);
        std::mt19937_64 rng(s);
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        PrimitiveParams p;
        p.frequency = spec.frequencies[rng() % spec.frequencies.size()];
        p.amplitude = spec.amplitude_min + (spec.amplitude_max - spec.amplitude_min) * u01(rng);
        p.slope = spec.slope_min + (spec.slope_max - spec.slope_min) * u01(rng);
        p.phase = spec.random_phase ? 2.0 * std::numbers::pi * u01(rng) : 0.0;
        p.sigma = spec.sigma;
        SeriesRecord r = gen_primitive(kind, p, spec.length, mix_seed(s, 1));
        r.id = spec.kind + "-" + std::to_string(seed) + "-" + std::to_string(i);
        r.freq = spec.freq_tag;
        out.push_back(std::move(r));
    }
    return out;
}

std::string format_record(const SeriesRecord& r) {
    check_finite_values(r.target, "record '" + r.id + "'");
    nlohmann::json j = {{"id", r.id}, {"freq", r.freq}, {"season_m", r.season_m}, {"target", r.target}};
    return j.dump();
}

SeriesRecord parse_record(const std::string& line, std::size_t line_no) {
    const std::string where = "line " + std::to_string(line_no) + ": ";
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(where + "malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw ParseError(where + "record must be a JSON object");
    for (const char* f : {"id", "freq", "season_m", "target"})
        if (!j.contains(f)) throw ParseError(where + "missing field '" + f + "'");
    SeriesRecord r;
    if (!j["id"].is_string()) throw ParseError(where + "field 'id' must be a string");
    if (!j["freq"].is_string()) throw ParseError(where + "field 'freq' must be a string");
    if (!j["season_m"].is_number_unsigned() || j["season_m"].get<std::size_t>() == 0)
        throw ParseError(where + "field 'season_m' must be a positive integer");
    if (!j["target"].is_array()) throw ParseError(where + "field 'target' must be an array");
    r.id = j["id"].get<std::string>();
    r.freq = j["freq"].get<std::string>();
    r.season_m = j["season_m"].get<std::size_t>();
    const auto& arr = j["target"];
    r.target.reserve(arr.size());
    for (std::size_t i = 0; i < arr.size(); ++i) {
        if (!arr[i].is_number()) throw InputError(where + "non-finite or non-numeric value at target[" + std::to_string(i) + "]");
        const double v = arr[i].get<double>();
        if (!std::isfinite(v)) throw InputError(where + "non-finite value at target[" + std::to_string(i) + "]");
        r.target.push_back(v);
    }
    return r;
}

SeriesReader::SeriesReader(const std::string& path) : path_(path), in_(path) {
    if (!in_) throw IoError("cannot open '" + path + "' for reading");
}

std::optional<SeriesRecord> SeriesReader::next() {
    while (std::getline(in_, buf_)) {
        ++line_no_;
        if (buf_.find_first_not_of(" \t\r") == std::string::npos) continue;
        return parse_record(buf_, line_no_);
    }
    return std::nullopt;
}

SeriesWriter::SeriesWriter(const std::string& path) : path_(path), out_(path) {
    if (!out_) throw IoError("cannot open '" + path + "' for writing");
}

void SeriesWriter::write(const SeriesRecord& r) {
    out_ << format_record(r) << '\n';
    if (!out_) throw IoError("write failed on '" + path_ + "'");
    ++count_;
}

void SeriesWriter::close() {
    out_.close();
    if (out_.fail()) throw IoError("close failed on '" + path_ + "'");
}

std::vector<SeriesRecord> read_series(const std::string& path) {
    SeriesReader reader(path);
    std::vector<SeriesRecord> out;
    while (auto r = reader.next()) out.push_back(std::move(*r));
    return out;
}

void write_series(const std::string& path, std::span<const SeriesRecord> records) {
    SeriesWriter w(path);
    for (const auto& r : records) w.write(r);
    w.close();
}

}  // namespace eidos
