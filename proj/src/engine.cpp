#include "deshadow/engine.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "deshadow/errors.hpp"

namespace fs = std::filesystem;

namespace deshadow::engine {

// ---------------------------------------------------------------------------
// CycleState
// ---------------------------------------------------------------------------

namespace {

std::vector<std::pair<std::string, torch::Tensor>> named_fields(const CycleState& s) {
    return {{"u", s.u},
            {"v", s.v},
            {"m", s.m},
            {"u_hat", s.u_hat},
            {"v_hat", s.v_hat},
            {"mask_f", s.mask_f.value},
            {"mask_s", s.mask_s.value},
            {"u_rec", s.u_rec},
            {"v_rec", s.v_rec},
            {"mask_rec_f", s.mask_rec_f.value},
            {"mask_rec_s", s.mask_rec_s.value}};
}

} // namespace

void CycleState::require_complete() const {
    for (const auto& [name, t] : named_fields(*this))
        if (!t.defined())
            throw ContractViolation("cycle state is missing field: " + name);
}

std::vector<std::string> CycleState::non_finite_fields() const {
    std::vector<std::string> bad;
    for (const auto& [name, t] : named_fields(*this))
        if (t.defined() && !torch::isfinite(t.detach()).all().item<bool>())
            bad.push_back(name);
    return bad;
}

// ---------------------------------------------------------------------------
// Cycle
// ---------------------------------------------------------------------------

CycleMask binarize_cycle(const torch::Tensor& shadow_free_like, const torch::Tensor& shadow_like, double temperature) {
    if (shadow_free_like.sizes() != shadow_like.sizes())
        throw InvalidInput("binarize_cycle: shape mismatch");
    // Model space spans 2 units; halve to express the difference on [0, 1].
    auto d = (shadow_free_like - shadow_like).mean(1, /*keepdim=*/true) * 0.5;
    auto flat = std::get<0>(d.detach().flatten(1).sort(1));
    const auto k = flat.size(1);
    torch::Tensor threshold =
        k % 2 == 1 ? flat.select(1, k / 2) : 0.5 * (flat.select(1, k / 2 - 1) + flat.select(1, k / 2));
    threshold = threshold.view({-1, 1, 1, 1});
    auto hard = (d.detach() > threshold).to(d.scalar_type());
    auto soft = torch::sigmoid((d - threshold) / temperature);
    return {hard + (soft - soft.detach()), soft};
}

CycleState forward_step(const torch::Tensor& u, const torch::Tensor& v, const torch::Tensor& m,
                        const Translators& nets, double temperature) {
    if (u.sizes() != v.sizes())
        throw InvalidInput("forward_step: u and v differ in shape");
    if (m.dim() != 4 || m.size(1) != 1 || m.size(2) != u.size(2) || m.size(3) != u.size(3))
        throw InvalidInput("forward_step: mask must be [N, 1, H, W] matching the images");
    CycleState s;
    s.u = u;
    s.v = v;
    s.m = m;
    s.u_hat = nets.remove(v);
    s.v_hat = nets.insert(u, m);
    s.mask_f = binarize_cycle(s.u_hat, v, temperature);
    s.mask_s = binarize_cycle(u, s.v_hat, temperature);
    return s;
}

void reconstruction_step(CycleState& s, const Translators& nets, bool literal, double temperature) {
    if (!s.has_forward())
        throw ContractViolation("reconstruction_step needs a completed forward step");
    s.u_rec = nets.remove(literal ? s.u_hat : s.v_hat);
    s.v_rec = nets.insert(s.u_hat, s.mask_f.value);
    s.mask_rec_f = binarize_cycle(s.u_rec, s.v_hat, temperature);
    s.mask_rec_s = binarize_cycle(s.u_hat, s.v_rec, temperature);
}

// ---------------------------------------------------------------------------
// ReplayBuffer
// ---------------------------------------------------------------------------

ReplayBuffer::ReplayBuffer(size_t capacity, double swap_probability, uint64_t seed)
    : capacity_(capacity), swap_probability_(swap_probability), rng_(seed) {
    if (capacity == 0)
        throw ConfigError("replay buffer capacity must be positive");
}

torch::Tensor ReplayBuffer::query(const torch::Tensor& batch) {
    std::vector<torch::Tensor> out;
    for (int64_t i = 0; i < batch.size(0); ++i) {
        auto image = batch[i].detach().clone();
        if (entries_.size() < capacity_) {
            entries_.push_back(image);
            out.push_back(image);
            continue;
        }
        if (std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < swap_probability_) {
            const auto idx = std::uniform_int_distribution<size_t>(0, entries_.size() - 1)(rng_);
            out.push_back(entries_[idx]);
            entries_[idx] = image;
        } else {
            out.push_back(image);
        }
    }
    return torch::stack(out);
}

ReplayBuffer::State ReplayBuffer::save() const { return {entries_, data::serialize_rng(rng_)}; }

void ReplayBuffer::load(const State& state) {
    entries_ = state.entries;
    rng_ = data::deserialize_rng(state.rng);
}

// ---------------------------------------------------------------------------

double lr_schedule(int epoch, const TrainConfig& config) {
    if (epoch < 0 || epoch > config.epochs)
        throw InvalidInput("lr_schedule: epoch " + std::to_string(epoch) + " outside [0, " +
                           std::to_string(config.epochs) + "]");
    if (epoch <= config.decay_start_epoch)
        return config.lr;
    const double progress = static_cast<double>(epoch - config.decay_start_epoch) /
                            static_cast<double>(config.epochs - config.decay_start_epoch);
    return config.lr * (1.0 - progress);
}

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

Networks Networks::build(const TrainConfig& config) {
    auto rng = at::make_generator<at::CPUGeneratorImpl>(config.seed);
    Networks n;
    n.remover = nets::build_generator(3, rng, config.depth, config.init_std);
    n.inserter = nets::build_generator(4, rng, config.depth, config.init_std);
    n.critic_f = nets::build_discriminator(rng, config.init_std);
    n.critic_s = nets::build_discriminator(rng, config.init_std);
    n.remover->set_identity(config.debug_identity);
    n.inserter->set_identity(config.debug_identity);
    return n;
}

Translators Networks::translators() {
    auto remover_ = remover;
    auto inserter_ = inserter;
    return {[remover_](const torch::Tensor& x) mutable { return remover_->forward(x); },
            [inserter_](const torch::Tensor& x, const torch::Tensor& m) mutable { return inserter_->forward(x, m); }};
}

void Networks::train(bool on) {
    remover->train(on);
    inserter->train(on);
    critic_f->train(on);
    critic_s->train(on);
}

std::string Networks::spec_hash() const {
    const auto text = remover->spec().describe() + "\n" + inserter->spec().describe() + "\n" +
                      critic_f->spec().describe() + "\n" + critic_s->spec().describe();
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << nets::fnv1a(text);
    return os.str();
}

// ---------------------------------------------------------------------------
// Training step
// ---------------------------------------------------------------------------

namespace {

std::unique_ptr<torch::optim::Adam> make_adam(const std::vector<torch::Tensor>& params, const TrainConfig& c) {
    return std::make_unique<torch::optim::Adam>(
        params, torch::optim::AdamOptions(c.lr).betas(std::make_tuple(c.adam_beta1, c.adam_beta2)));
}

std::vector<torch::Tensor> concat(std::vector<torch::Tensor> a, const std::vector<torch::Tensor>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

void set_trainable(torch::nn::Module& module, bool on) {
    for (auto& p : module.parameters())
        p.set_requires_grad(on);
}

losses::PatchCritic critic_fn(nets::Discriminator d) {
    return [d](const torch::Tensor& pair) mutable { return d->forward(pair); };
}

} // namespace

TrainingState::TrainingState(const TrainConfig& cfg)
    : config(cfg),
      nets(Networks::build(cfg)),
      replay_f(static_cast<size_t>(cfg.replay_capacity), cfg.replay_swap_probability, cfg.seed + 101),
      replay_s(static_cast<size_t>(cfg.replay_capacity), cfg.replay_swap_probability, cfg.seed + 202),
      mask_bank(static_cast<size_t>(cfg.mask_bank_capacity), cfg.seed + 303) {
    cfg.validate();
    opt_generators = make_adam(concat(nets.remover->parameters(), nets.inserter->parameters()), cfg);
    opt_critic_f = make_adam(nets.critic_f->parameters(), cfg);
    opt_critic_s = make_adam(nets.critic_s->parameters(), cfg);
}

void TrainingState::set_lr(double lr) {
    for (auto* opt : {opt_generators.get(), opt_critic_f.get(), opt_critic_s.get()})
        for (auto& group : opt->param_groups())
            static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
}

StepReport train_step(const Batch& batch, TrainingState& st, features::FeatureExtractor& fx) {
    const auto& cfg = st.config;
    st.nets.train(true);
    auto translators = st.nets.translators();

    CycleState cycle = forward_step(batch.u, batch.v, batch.m, translators, cfg.mask_temperature);
    cycle.paired = batch.paired;
    reconstruction_step(cycle, translators, cfg.literal_reconstruction, cfg.mask_temperature);

    if (auto bad = cycle.non_finite_fields(); !bad.empty())
        throw NumericFailure("non-finite values in cycle tensor '" + bad.front() + "'");

    auto negative_f = st.replay_f.query(cycle.v_hat.detach());
    auto negative_s = st.replay_s.query(cycle.u_hat.detach());
    const auto forward_masks = cycle.mask_f.hard();
    for (int64_t i = 0; i < forward_masks.size(0); ++i)
        st.mask_bank.insert(forward_masks[i]);

    // Generators: discriminators are frozen so the joint loss only reaches G_f and G_s.
    set_trainable(*st.nets.critic_f, false);
    set_trainable(*st.nets.critic_s, false);
    losses::AdversarialInputs adversarial{critic_fn(st.nets.critic_f), critic_fn(st.nets.critic_s), negative_f,
                                          negative_s};
    auto breakdown = batch.paired
                         ? losses::total_loss_paired(cycle, adversarial, cfg.weights, fx, cfg.loss_options)
                         : losses::total_loss_unpaired(cycle, adversarial, cfg.weights, fx, cfg.loss_options);
    StepReport report;
    for (const auto& term : breakdown.terms) {
        const double value = term.value.item<double>();
        if (!std::isfinite(value))
            throw NumericFailure("non-finite loss component '" + term.name + "'");
        report.components[term.name] = value;
    }
    report.generator_total = breakdown.total.item<double>();
    if (!std::isfinite(report.generator_total))
        throw NumericFailure("non-finite generator total loss");

    st.opt_generators->zero_grad();
    breakdown.total.backward();
    st.opt_generators->step();
    set_trainable(*st.nets.critic_f, true);
    set_trainable(*st.nets.critic_s, true);

    // Discriminators: least-squares dual with replay-buffer negatives.
    const auto& real_f = batch.u_real.defined() ? batch.u_real : batch.u;
    const auto& real_s = batch.v_real.defined() ? batch.v_real : batch.v;
    auto loss_f = losses::gan_loss_discriminator(critic_fn(st.nets.critic_f), real_f, batch.u, negative_f);
    st.opt_critic_f->zero_grad();
    loss_f.backward();
    st.opt_critic_f->step();

    auto loss_s = losses::gan_loss_discriminator(critic_fn(st.nets.critic_s), real_s, batch.v, negative_s);
    st.opt_critic_s->zero_grad();
    loss_s.backward();
    st.opt_critic_s->step();

    report.critic_f = loss_f.item<double>();
    report.critic_s = loss_s.item<double>();
    if (!std::isfinite(report.critic_f))
        throw NumericFailure("non-finite loss component 'critic_f'");
    if (!std::isfinite(report.critic_s))
        throw NumericFailure("non-finite loss component 'critic_s'");
    report.replay_f_size = st.replay_f.size();
    report.replay_s_size = st.replay_s.size();
    report.mask_bank_size = st.mask_bank.size();
    return report;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

namespace {

torch::Tensor to_model(const ImageTensor& image) { return image.to(ValueSpace::model).pixels.to(torch::kFloat32); }

} // namespace

Trainer::Trainer(const TrainConfig& config, data::Dataset dataset, std::shared_ptr<features::FeatureExtractor> fx)
    : state_(config), dataset_(std::move(dataset)), fx_(std::move(fx)), data_rng_(config.seed + 7) {
    if (!fx_)
        throw ConfigError("trainer needs a feature extractor");
    if (dataset_.samples.empty())
        throw ConfigError("training dataset is empty");

    for (const auto& s : dataset_.samples) {
        shadow_pool_.push_back(to_model(s.shadow_image));
        if (s.shadow_free_image)
            free_pool_.push_back(to_model(*s.shadow_free_image));
        if (s.mask)
            masks_.push_back(s.mask->bits.to(torch::kFloat32));
    }

    const auto batch = static_cast<int64_t>(config.batch_size);
    if (config.regime == Regime::paired) {
        if (free_pool_.size() != shadow_pool_.size() || masks_.size() != shadow_pool_.size())
            throw ConfigError("paired training needs a shadow-free image and a mask for every sample");
        paired_cursor_ = data::PoolCursor(shadow_pool_.size());
    } else {
        if (!dataset_.shadow_free_pool.empty()) {
            free_pool_.clear();
            for (const auto& p : dataset_.shadow_free_pool)
                free_pool_.push_back(to_model(p.image));
        }
        if (free_pool_.empty())
            throw ConfigError("unpaired training needs a shadow-free pool");
        unpaired_.emplace(free_pool_.size(), shadow_pool_.size(), config.seed + 11);
    }
    steps_per_epoch_ = (static_cast<int64_t>(shadow_pool_.size()) + batch - 1) / batch;
    seed_mask_bank();
}

void Trainer::seed_mask_bank() {
    switch (state_.config.mask_bank_seed) {
    case MaskBankSeed::none: return;
    case MaskBankSeed::ground_truth:
        for (const auto& s : dataset_.samples)
            if (s.mask)
                state_.mask_bank.insert(s.mask->bits);
        return;
    case MaskBankSeed::binarized: {
        const auto method = data::parse_threshold_method(state_.config.mask_method);
        for (const auto& s : dataset_.samples)
            if (s.shadow_free_image)
                state_.mask_bank.insert(
                    data::binarize_difference(*s.shadow_free_image, s.shadow_image, method).bits);
        return;
    }
    }
}

torch::Tensor Trainer::draw_bank_mask(const torch::Tensor& v) {
    if (state_.mask_bank.size() == 0) {
        // Nothing to condition on yet: bootstrap from the current removal result.
        torch::NoGradGuard no_grad;
        auto u_hat = state_.nets.remover->forward(v.unsqueeze(0));
        state_.mask_bank.insert(binarize_cycle(u_hat, v.unsqueeze(0), state_.config.mask_temperature).hard()[0]);
    }
    return state_.mask_bank.sample();
}

Batch Trainer::next_batch() {
    std::vector<torch::Tensor> us, vs, ms, u_reals, v_reals;
    Batch b;
    b.paired = state_.config.regime == Regime::paired;
    for (int i = 0; i < state_.config.batch_size; ++i) {
        if (b.paired) {
            const auto idx = paired_cursor_.next(data_rng_);
            us.push_back(free_pool_[idx]);
            vs.push_back(shadow_pool_[idx]);
            ms.push_back(masks_[idx]);
        } else {
            const auto [ui, vi] = unpaired_->draw();
            us.push_back(free_pool_[ui]);
            vs.push_back(shadow_pool_[vi]);
            ms.push_back(draw_bank_mask(shadow_pool_[vi]));
            u_reals.push_back(free_pool_[std::uniform_int_distribution<size_t>(0, free_pool_.size() - 1)(data_rng_)]);
            v_reals.push_back(
                shadow_pool_[std::uniform_int_distribution<size_t>(0, shadow_pool_.size() - 1)(data_rng_)]);
        }
    }
    b.u = torch::stack(us);
    b.v = torch::stack(vs);
    b.m = torch::stack(ms);
    if (!u_reals.empty()) {
        b.u_real = torch::stack(u_reals);
        b.v_real = torch::stack(v_reals);
    }
    return b;
}

int Trainer::epoch() const { return static_cast<int>(step_ / steps_per_epoch_); }

bool Trainer::finished() const {
    const auto& c = state_.config;
    return epoch() >= c.epochs || (c.max_steps > 0 && step_ >= c.max_steps);
}

StepReport Trainer::step() {
    const int e = std::min(epoch(), state_.config.epochs);
    const double lr = lr_schedule(e, state_.config);
    state_.set_lr(lr);
    auto batch = next_batch();
    auto report = train_step(batch, state_, *fx_);
    ++step_;
    report.step = step_;
    report.epoch = e;
    report.lr = lr;
    return report;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kFormat = "deshadow-checkpoint-v1";

void write_string(torch::serialize::OutputArchive& ar, const std::string& key, const std::string& value) {
    ar.write(key, c10::IValue(value));
}

std::string read_string(torch::serialize::InputArchive& ar, const std::string& key) {
    c10::IValue v;
    ar.read(key, v);
    return v.toStringRef();
}

int64_t read_int(torch::serialize::InputArchive& ar, const std::string& key) {
    c10::IValue v;
    ar.read(key, v);
    return v.toInt();
}

void write_tensors(torch::serialize::OutputArchive& ar, const std::string& key, const std::vector<torch::Tensor>& ts) {
    ar.write(key + "_count", c10::IValue(static_cast<int64_t>(ts.size())));
    ar.write(key, ts.empty() ? torch::zeros({0}) : torch::stack(ts));
}

std::vector<torch::Tensor> read_tensors(torch::serialize::InputArchive& ar, const std::string& key) {
    const auto n = read_int(ar, key + "_count");
    torch::Tensor stacked;
    ar.read(key, stacked);
    std::vector<torch::Tensor> out;
    for (int64_t i = 0; i < n; ++i)
        out.push_back(stacked[i].clone());
    return out;
}

void save_module(torch::serialize::OutputArchive& ar, const std::string& key, const torch::nn::Module& m) {
    torch::serialize::OutputArchive sub;
    m.save(sub);
    ar.write(key, sub);
}

void load_module(torch::serialize::InputArchive& ar, const std::string& key, torch::nn::Module& m) {
    torch::serialize::InputArchive sub;
    ar.read(key, sub);
    m.load(sub);
}

void save_optimizer(torch::serialize::OutputArchive& ar, const std::string& key, const torch::optim::Optimizer& opt) {
    torch::serialize::OutputArchive sub;
    opt.save(sub);
    ar.write(key, sub);
}

void load_optimizer(torch::serialize::InputArchive& ar, const std::string& key, torch::optim::Optimizer& opt) {
    torch::serialize::InputArchive sub;
    ar.read(key, sub);
    opt.load(sub);
}

void save_networks(torch::serialize::OutputArchive& ar, const Networks& n) {
    save_module(ar, "g_f", *n.remover);
    save_module(ar, "g_s", *n.inserter);
    save_module(ar, "d_f", *n.critic_f);
    save_module(ar, "d_s", *n.critic_s);
    nets::Generator g_f = n.remover, g_s = n.inserter;
    ar.write("dropout_f", g_f->dropout_generator().get_state());
    ar.write("dropout_s", g_s->dropout_generator().get_state());
}

void load_networks_from(torch::serialize::InputArchive& ar, Networks& n) {
    load_module(ar, "g_f", *n.remover);
    load_module(ar, "g_s", *n.inserter);
    load_module(ar, "d_f", *n.critic_f);
    load_module(ar, "d_s", *n.critic_s);
    torch::Tensor state;
    ar.read("dropout_f", state);
    n.remover->dropout_generator().set_state(state);
    ar.read("dropout_s", state);
    n.inserter->dropout_generator().set_state(state);
}

torch::serialize::InputArchive open_archive(const fs::path& path) {
    if (!fs::exists(path))
        throw CorruptCheckpoint("checkpoint not found: " + path.string());
    torch::serialize::InputArchive ar;
    try {
        ar.load_from(path.string());
    } catch (const c10::Error& e) {
        throw CorruptCheckpoint("cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
    }
    return ar;
}

CheckpointHeader read_header(torch::serialize::InputArchive& ar) {
    CheckpointHeader h;
    h.format = read_string(ar, "format");
    if (h.format != kFormat)
        throw IncompatibleCheckpoint("unsupported checkpoint format '" + h.format + "'");
    h.spec_hash = read_string(ar, "spec_hash");
    h.config_text = read_string(ar, "config");
    h.epoch = static_cast<int>(read_int(ar, "epoch"));
    h.step = read_int(ar, "step");
    return h;
}

template <typename Fn>
auto guard_corruption(const fs::path& path, Fn&& fn) {
    try {
        return fn();
    } catch (const c10::Error& e) {
        throw CorruptCheckpoint("corrupt checkpoint " + path.string() + ": " + e.what_without_backtrace());
    }
}

} // namespace

CheckpointHeader read_checkpoint_header(const fs::path& path) {
    auto ar = open_archive(path);
    return guard_corruption(path, [&] { return read_header(ar); });
}

Networks load_networks(const fs::path& path, TrainConfig* config_out) {
    auto ar = open_archive(path);
    return guard_corruption(path, [&] {
        const auto header = read_header(ar);
        auto config = build_config(parse_config_text(header.config_text));
        auto n = Networks::build(config);
        if (n.spec_hash() != header.spec_hash)
            throw IncompatibleCheckpoint("checkpoint architecture hash " + header.spec_hash +
                                         " does not match rebuilt networks " + n.spec_hash());
        load_networks_from(ar, n);
        if (config_out)
            *config_out = config;
        return n;
    });
}

void Trainer::save_checkpoint(const fs::path& path) const {
    torch::serialize::OutputArchive ar;
    write_string(ar, "format", kFormat);
    write_string(ar, "spec_hash", state_.nets.spec_hash());
    write_string(ar, "config", config_to_text(state_.config));
    ar.write("epoch", c10::IValue(static_cast<int64_t>(epoch())));
    ar.write("step", c10::IValue(step_));

    save_networks(ar, state_.nets);
    save_optimizer(ar, "opt_g", *state_.opt_generators);
    save_optimizer(ar, "opt_d_f", *state_.opt_critic_f);
    save_optimizer(ar, "opt_d_s", *state_.opt_critic_s);

    const auto rf = state_.replay_f.save();
    const auto rs = state_.replay_s.save();
    const auto bank = state_.mask_bank.save();
    write_tensors(ar, "replay_f", rf.entries);
    write_string(ar, "replay_f_rng", rf.rng);
    write_tensors(ar, "replay_s", rs.entries);
    write_string(ar, "replay_s_rng", rs.rng);
    write_tensors(ar, "mask_bank", bank.entries);
    write_string(ar, "mask_bank_rng", bank.rng);

    write_string(ar, "data_rng", data::serialize_rng(data_rng_));
    write_string(ar, "paired_cursor", paired_cursor_.save());
    write_string(ar, "unpaired_sampler", unpaired_ ? unpaired_->save() : std::string{});

    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    ar.save_to(tmp);
    fs::rename(tmp, path);
}

void Trainer::load_checkpoint(const fs::path& path) {
    auto ar = open_archive(path);
    guard_corruption(path, [&] {
        const auto header = read_header(ar);
        if (header.spec_hash != state_.nets.spec_hash())
            throw IncompatibleCheckpoint("checkpoint architecture hash " + header.spec_hash +
                                         " does not match this trainer (" + state_.nets.spec_hash() + ")");
        load_networks_from(ar, state_.nets);
        load_optimizer(ar, "opt_g", *state_.opt_generators);
        load_optimizer(ar, "opt_d_f", *state_.opt_critic_f);
        load_optimizer(ar, "opt_d_s", *state_.opt_critic_s);

        state_.replay_f.load({read_tensors(ar, "replay_f"), read_string(ar, "replay_f_rng")});
        state_.replay_s.load({read_tensors(ar, "replay_s"), read_string(ar, "replay_s_rng")});
        state_.mask_bank.load({read_tensors(ar, "mask_bank"), read_string(ar, "mask_bank_rng")});

        data_rng_ = data::deserialize_rng(read_string(ar, "data_rng"));
        paired_cursor_.load(read_string(ar, "paired_cursor"));
        const auto sampler = read_string(ar, "unpaired_sampler");
        if (unpaired_ && !sampler.empty())
            unpaired_->load(sampler);
        step_ = header.step;
        return 0;
    });
}

// ---------------------------------------------------------------------------
// TrainLog
// ---------------------------------------------------------------------------

TrainLog::TrainLog(const fs::path& path, bool append) {
    if (append && fs::exists(path)) {
        std::ifstream in(path);
        std::string header;
        std::getline(in, header);
        std::stringstream ss(header);
        std::string col;
        while (std::getline(ss, col, ','))
            columns_.push_back(col);
        header_written_ = !columns_.empty();
    }
    out_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out_)
        throw ConfigError("cannot open log file " + path.string());
}

void TrainLog::write(const StepReport& r) {
    std::map<std::string, double> row{{"step", static_cast<double>(r.step)},
                                      {"epoch", static_cast<double>(r.epoch)},
                                      {"lr", r.lr},
                                      {"generator_total", r.generator_total},
                                      {"critic_f", r.critic_f},
                                      {"critic_s", r.critic_s},
                                      {"replay_f_size", static_cast<double>(r.replay_f_size)},
                                      {"replay_s_size", static_cast<double>(r.replay_s_size)},
                                      {"mask_bank_size", static_cast<double>(r.mask_bank_size)}};
    for (const auto& [k, v] : r.components)
        row[k] = v;
    if (!header_written_) {
        columns_ = {"step", "epoch", "lr", "generator_total", "critic_f", "critic_s"};
        for (const auto& [k, _] : r.components)
            columns_.push_back(k);
        for (const char* k : {"replay_f_size", "replay_s_size", "mask_bank_size"})
            columns_.push_back(k);
        for (size_t i = 0; i < columns_.size(); ++i)
            out_ << (i ? "," : "") << columns_[i];
        out_ << '\n';
        header_written_ = true;
    }
    out_ << std::setprecision(10);
    for (size_t i = 0; i < columns_.size(); ++i) {
        auto it = row.find(columns_[i]);
        out_ << (i ? "," : "") << (it == row.end() ? 0.0 : it->second);
    }
    out_ << '\n';
    out_.flush();
}

} // namespace deshadow::engine
