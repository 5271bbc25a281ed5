#include "eidos/trainer.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <thread>

#include "eidos/errors.hpp"
#include "eidos/params.hpp"

namespace eidos {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume a little-endian host");

double lr_at(std::size_t step, const OptimConfig& o) {
    if (step >= o.total_steps) return 0.0;
    if (step < o.warmup_steps) return o.lr_peak * static_cast<double>(step) / static_cast<double>(o.warmup_steps);
    const double span = static_cast<double>(o.total_steps - o.warmup_steps);
    const double progress = static_cast<double>(step - o.warmup_steps) / span;
    return o.lr_peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamState adam_init(const std::vector<Tensor*>& params) {
    AdamState s;
    for (const Tensor* p : params) {
        s.m.emplace_back(p->size(), 0.0);
        s.v.emplace_back(p->size(), 0.0);
    }
    return s;
}

void adamw_step(const std::vector<Tensor*>& params, const std::vector<std::vector<double>>& grads, AdamState& s,
                const OptimConfig& o, double lr) {
    if (grads.size() != params.size() || s.m.size() != params.size())
        throw ContractError("adamw_step: parameter, gradient and moment counts differ");
    s.step += 1;
    const double t = static_cast<double>(s.step);
    const double bc1 = 1.0 - std::pow(o.beta1, t);
    const double bc2 = 1.0 - std::pow(o.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& w = params[i]->data;
        const auto& g = grads[i];
        auto& m = s.m[i];
        auto& v = s.v[i];
        if (g.size() != w.size() || m.size() != w.size()) throw ContractError("adamw_step: shape mismatch");
        for (std::size_t k = 0; k < w.size(); ++k) {
            m[k] = o.beta1 * m[k] + (1.0 - o.beta1) * g[k];
            v[k] = o.beta2 * v[k] + (1.0 - o.beta2) * g[k] * g[k];
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            w[k] -= lr * o.weight_decay * w[k];
            w[k] -= lr * mhat / (std::sqrt(vhat) + o.eps);
        }
    }
}

double clip_global_norm(std::vector<std::vector<double>>& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& g : grads)
        for (double v : g) sq += v * v;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (auto& g : grads)
            for (double& v : g) v *= s;
    }
    return norm;
}

// ---- sampler ----------------------------------------------------------------

WindowSampler::WindowSampler(std::vector<SourcePool> sources, std::size_t length, std::uint64_t seed)
    : length_(length), seed_(seed) {
    double acc = 0.0;
    for (auto& s : sources) {
        std::vector<SeriesRecord> ok;
        for (auto& r : s.records)
            if (r.target.size() >= length) ok.push_back(std::move(r));
        if (ok.empty())
            throw InputError("data source '" + s.name + "' has no series of length >= " + std::to_string(length));
        s.records = std::move(ok);
        acc += s.weight;
        cumulative_.push_back(acc);
        sources_.push_back(std::move(s));
    }
    if (sources_.empty()) throw ConfigError("no training data sources");
    source_draws_.assign(sources_.size(), 0);
    cached_epoch_.assign(sources_.size(), ~std::uint64_t{0});
    cached_order_.resize(sources_.size());
}

const std::vector<std::size_t>& WindowSampler::order(std::size_t source, std::uint64_t epoch) {
    if (cached_epoch_[source] != epoch) {
        auto& o = cached_order_[source];
        o.resize(sources_[source].records.size());
        std::iota(o.begin(), o.end(), 0);
        std::mt19937_64 rng(mix_seed(mix_seed(seed_, 0x5EED + source), epoch));
        std::shuffle(o.begin(), o.end(), rng);
        cached_epoch_[source] = epoch;
    }
    return cached_order_[source];
}

std::vector<double> WindowSampler::next() {
    std::mt19937_64 rng(mix_seed(seed_, draws_++));
    std::uniform_real_distribution<double> u(0.0, cumulative_.back());
    const double pick = u(rng);
    std::size_t s = 0;
    while (s + 1 < cumulative_.size() && pick >= cumulative_[s]) ++s;
    const auto n = static_cast<std::uint64_t>(sources_[s].records.size());
    const std::uint64_t k = source_draws_[s]++;
    const auto& rec = sources_[s].records[order(s, k / n)[k % n]].target;
    const std::size_t start = static_cast<std::size_t>(rng() % (rec.size() - length_ + 1));
    return {rec.begin() + static_cast<std::ptrdiff_t>(start), rec.begin() + static_cast<std::ptrdiff_t>(start + length_)};
}

json WindowSampler::state() const { return {{"seed", seed_}, {"draws", draws_}, {"source_draws", source_draws_}}; }

void WindowSampler::restore(const json& st) {
    if (st.at("seed").get<std::uint64_t>() != seed_) throw ConfigError("sampler state has a different seed");
    auto sd = st.at("source_draws").get<std::vector<std::uint64_t>>();
    if (sd.size() != sources_.size()) throw ConfigError("sampler state has a different number of sources");
    draws_ = st.at("draws").get<std::uint64_t>();
    source_draws_ = std::move(sd);
}

std::vector<SourcePool> load_sources(const TrainConfig& cfg) {
    std::vector<SourcePool> out;
    for (std::size_t i = 0; i < cfg.data.size(); ++i) {
        const auto& d = cfg.data[i];
        SourcePool p;
        p.weight = d.weight;
        if (d.generator) {
            p.name = "generator:" + d.generator->kind;
            p.records = generate_corpus(*d.generator, mix_seed(cfg.seed, 0xDA7A + i));
        } else {
            p.name = d.path;
            p.records = read_series(d.path);
        }
        out.push_back(std::move(p));
    }
    return out;
}

// ---- batch gradients ---------------------------------------------------------

std::size_t worker_threads() {
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("EIDOSLAB_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) n = std::min<std::size_t>(n, static_cast<std::size_t>(v));
    }
    return n;
}

BatchResult batch_gradients(const ModelParams& params, const ModelConfig& cfg, const LossWeights& w,
                            const std::vector<std::vector<double>>& windows, std::size_t threads) {
    auto& mp = const_cast<ModelParams&>(params);
    std::vector<const Tensor*> trainable;
    mp.visit_trainable([&](const std::string&, Tensor& t) { trainable.push_back(&t); });

    const std::size_t B = windows.size();
    if (B == 0) throw ContractError("batch_gradients: empty batch");
    struct Element {
        double total = 0, pred = 0, latent = 0, gnd = 0;
        std::vector<std::vector<double>> grads;
        std::exception_ptr error;
    };
    std::vector<Element> out(B);

    auto work = [&](std::size_t b) {
        try {
            Tape tape;
            ParamBinder binder(tape);
            JointLoss jl = joint_loss(bind(binder, params), cfg, windows[b], w);
            auto& e = out[b];
            e.total = jl.total.item();
            e.pred = jl.pred.item();
            e.latent = jl.latent.item();
            e.gnd = jl.gnd.item();
            check_finite(e.pred, e.latent, e.gnd, e.total);
            tape.backward(jl.total);
            e.grads.reserve(trainable.size());
            for (const Tensor* t : trainable) {
                auto g = binder.grad_of(*t);
                if (g.empty()) e.grads.emplace_back(t->size(), 0.0);
                else e.grads.emplace_back(g.begin(), g.end());
            }
        } catch (...) {
            out[b].error = std::current_exception();
        }
    };

    threads = std::max<std::size_t>(1, std::min(threads, B));
    if (threads == 1) {
        for (std::size_t b = 0; b < B; ++b) work(b);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t k = 0; k < threads; ++k)
            pool.emplace_back([&, k] {
                for (std::size_t b = k; b < B; b += threads) work(b);
            });
        for (auto& t : pool) t.join();
    }
    for (const auto& e : out)
        if (e.error) std::rethrow_exception(e.error);

    BatchResult r;
    r.grads.resize(trainable.size());
    for (std::size_t i = 0; i < trainable.size(); ++i) r.grads[i].assign(trainable[i]->size(), 0.0);
    for (std::size_t b = 0; b < B; ++b) {
        r.total += out[b].total;
        r.pred += out[b].pred;
        r.latent += out[b].latent;
        r.gnd += out[b].gnd;
        for (std::size_t i = 0; i < trainable.size(); ++i)
            for (std::size_t k = 0; k < r.grads[i].size(); ++k) r.grads[i][k] += out[b].grads[i][k];
    }
    const double inv = 1.0 / static_cast<double>(B);
    r.total *= inv;
    r.pred *= inv;
    r.latent *= inv;
    r.gnd *= inv;
    for (auto& g : r.grads)
        for (double& v : g) v *= inv;
    return r;
}

// ---- trainer ------------------------------------------------------------------

Trainer::Trainer(TrainConfig cfg, std::vector<SourcePool> sources) : Trainer(std::move(cfg), std::move(sources), true) {}

Trainer::Trainer(TrainConfig cfg, std::vector<SourcePool> sources, bool init_params)
    : cfg_((cfg.validate(), std::move(cfg))),
      params_(init_params ? ModelParams::init(cfg_.model, cfg_.seed) : ModelParams{}),
      sampler_(std::move(sources), cfg_.context_length, mix_seed(cfg_.seed, 0x5A3F)),
      threads_(worker_threads()) {
    if (init_params) adam_ = adam_init(trainable());
}

std::vector<Tensor*> Trainer::trainable() {
    std::vector<Tensor*> out;
    params_.visit_trainable([&](const std::string&, Tensor& t) { out.push_back(&t); });
    return out;
}

StepLog Trainer::step() {
    std::vector<std::vector<double>> windows;
    windows.reserve(cfg_.batch_size);
    for (std::size_t b = 0; b < cfg_.batch_size; ++b) windows.push_back(znorm(sampler_.next()));

    const std::size_t next = adam_.step + 1;
    BatchResult r;
    try {
        r = batch_gradients(params_, cfg_.model, cfg_.weights, windows, threads_);
    } catch (const TrainingGuardError& e) {
        throw TrainingGuardError(std::string(e.what()) + " at step " + std::to_string(next));
    }
    StepLog log;
    log.grad_norm = clip_global_norm(r.grads, cfg_.optim.clip_norm);
    log.lr = lr_at(next, cfg_.optim);
    adamw_step(trainable(), r.grads, adam_, cfg_.optim, log.lr);
    log.step = adam_.step;
    log.total = r.total;
    log.pred = r.pred;
    log.latent = r.latent;
    log.gnd = r.gnd;
    return log;
}

void Trainer::run(std::size_t until, const std::function<void(const StepLog&)>& on_log) {
    if (until == 0) until = cfg_.optim.total_steps;
    while (adam_.step < until) {
        StepLog s = step();
        if (on_log && (s.step % cfg_.log_every == 0 || s.step == until)) on_log(s);
    }
}

void Trainer::save(const std::string& path) const {
    Checkpoint c;
    c.config = cfg_;
    c.params = params_;
    c.optim = adam_;
    c.rng_state = sampler_.state();
    c.step = adam_.step;
    c.config_hash = model_hash(cfg_.model);
    write_checkpoint(path, c);
}

Trainer Trainer::resume(const std::string& path, std::vector<SourcePool> sources) {
    Checkpoint c = read_checkpoint(path);
    Trainer t(c.config, std::move(sources), false);
    t.params_ = std::move(c.params);
    t.adam_ = std::move(c.optim);
    t.sampler_.restore(c.rng_state);
    return t;
}

// ---- checkpoint -----------------------------------------------------------------

namespace {

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is, const std::string& path) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError("truncated checkpoint '" + path + "'");
    return v;
}

}  // namespace

void write_checkpoint(const std::string& path, const Checkpoint& c) {
    auto params = c.params;
    json tensors = json::array();
    params.visit([&](const std::string& n, Tensor& t) {
        tensors.push_back({{"name", n}, {"shape", t.shape}});
    });
    std::vector<std::string> trainable_names;
    params.visit_trainable([&](const std::string& n, Tensor&) { trainable_names.push_back(n); });
    if (c.optim.m.size() != trainable_names.size()) throw ContractError("checkpoint: optimizer state does not match parameters");

    json header = {{"format", "eidos-checkpoint"},
                   {"config", to_json(c.config)},
                   {"config_hash", c.config_hash},
                   {"step", c.step},
                   {"rng", c.rng_state},
                   {"optimizer", {{"step", c.optim.step}, {"moments", trainable_names}}},
                   {"tensors", tensors}};
    const std::string hs = header.dump();

    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw IoError("cannot open '" + tmp + "' for writing");
        os.write(kCheckpointMagic, sizeof kCheckpointMagic);
        put<std::uint32_t>(os, kCheckpointVersion);
        put<std::uint64_t>(os, hs.size());
        os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
        auto dump = [&](const std::vector<double>& v) {
            os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
        };
        params.visit([&](const std::string&, Tensor& t) { dump(t.data); });
        for (const auto& m : c.optim.m) dump(m);
        for (const auto& v : c.optim.v) dump(v);
        if (!os) throw IoError("write failed on '" + tmp + "'");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot move checkpoint into place at '" + path + "'");
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint '" + path + "'");
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw ParseError("'" + path + "' is not a checkpoint (bad magic)");
    const auto version = get<std::uint32_t>(is, path);
    if (version != kCheckpointVersion)
        throw ParseError("checkpoint format version " + std::to_string(version) + " is not supported");
    const auto hlen = get<std::uint64_t>(is, path);
    std::string hs(hlen, '\0');
    if (!is.read(hs.data(), static_cast<std::streamsize>(hlen))) throw IoError("truncated checkpoint header");
    json header;
    try {
        header = json::parse(hs);
    } catch (const json::exception& e) {
        throw ParseError(std::string("checkpoint header: ") + e.what());
    }

    Checkpoint c;
    c.config = train_from_json(header.at("config"));
    c.config_hash = header.at("config_hash").get<std::string>();
    if (c.config_hash != model_hash(c.config.model))
        throw HashMismatchError("checkpoint header hash " + c.config_hash + " does not match its config (" +
                                model_hash(c.config.model) + ")");
    c.step = header.at("step").get<std::size_t>();
    c.rng_state = header.at("rng");
    c.params = ModelParams::init(c.config.model, 0);

    const auto& tensors = header.at("tensors");
    std::size_t idx = 0;
    auto read_into = [&](std::vector<double>& v) {
        if (!is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double))))
            throw IoError("truncated checkpoint payload");
    };
    c.params.visit([&](const std::string& n, Tensor& t) {
        if (idx >= tensors.size() || tensors[idx].at("name") != n || tensors[idx].at("shape").get<Shape>() != t.shape)
            throw ParseError("checkpoint tensor " + std::to_string(idx) + " does not match parameter '" + n + "'");
        read_into(t.data);
        ++idx;
    });
    if (idx != tensors.size()) throw ParseError("checkpoint has extra tensors");
    std::vector<Tensor*> trainable;
    c.params.visit_trainable([&](const std::string&, Tensor& t) { trainable.push_back(&t); });
    c.optim = adam_init(trainable);
    c.optim.step = header.at("optimizer").at("step").get<std::size_t>();
    for (auto& m : c.optim.m) read_into(m);
    for (auto& v : c.optim.v) read_into(v);
    return c;
}

MetricLog::MetricLog(const std::string& path, bool append) : out_(path, append ? std::ios::app : std::ios::trunc) {
    if (!out_) throw IoError("cannot open metric log '" + path + "'");
    if (!append) out_ << "step,lr,loss_total,loss_pred,loss_latent,loss_gnd\n";
    out_.precision(17);
}

void MetricLog::write(const StepLog& s) {
    out_ << s.step << ',' << s.lr << ',' << s.total << ',' << s.pred << ',' << s.latent << ',' << s.gnd << '\n';
    out_.flush();
}

}  // namespace eidos
