#include "rae/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

namespace rae {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::string unquote(std::string_view v) {
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return std::string(v.substr(1, v.size() - 2));
    return std::string(v);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected, int line) {
    throw ParseError(std::string(key) + " expects " + expected + ", got '" +
                         std::string(value) + "'",
                     line);
}

template <typename I>
I to_integer(std::string_view key, std::string_view v, int line) {
    v = trim(v);
    I out{};
    const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || end != v.data() + v.size() || v.empty()) bad_value(key, v, "an integer", line);
    return out;
}

double to_double(std::string_view key, std::string_view v, int line) {
    v = trim(v);
    double out = 0.0;
    const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || end != v.data() + v.size() || v.empty()) bad_value(key, v, "a number", line);
    return out;
}

bool to_bool(std::string_view key, std::string_view v, int line) {
    v = trim(v);
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    bad_value(key, v, "a boolean", line);
}

template <typename I>
std::vector<I> to_list(std::string_view key, std::string_view v, int line) {
    v = trim(v);
    if (v.size() >= 2 && v.front() == '[' && v.back() == ']') v = v.substr(1, v.size() - 2);
    std::vector<I> out;
    while (!trim(v).empty()) {
        const auto comma = v.find(',');
        out.push_back(to_integer<I>(key, v.substr(0, comma), line));
        if (comma == std::string_view::npos) break;
        v.remove_prefix(comma + 1);
    }
    if (out.empty()) bad_value(key, v, "a non-empty integer list", line);
    return out;
}

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <typename I>
std::string join(const std::vector<I>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? ", " : "") + std::to_string(xs[i]);
    return out;
}

template <typename E>
struct EnumNames {
    std::vector<std::pair<E, std::string>> names;
    E parse(std::string_view key, std::string_view v, int line) const {
        const auto s = unquote(trim(v));
        for (const auto& [e, n] : names)
            if (n == s) return e;
        std::string expected = "one of";
        for (const auto& [e, n] : names) expected += " " + n;
        bad_value(key, v, expected.c_str(), line);
    }
    std::string name(E e) const {
        for (const auto& [x, n] : names)
            if (x == e) return n;
        return "?";
    }
};

const EnumNames<ExperimentKind> kKinds{{{ExperimentKind::overfit_sweep, "overfit_sweep"},
                                        {ExperimentKind::schedule_ablation, "schedule_ablation"},
                                        {ExperimentKind::noiseaug_ablation, "noiseaug_ablation"},
                                        {ExperimentKind::pipeline, "pipeline"},
                                        {ExperimentKind::generate, "generate"},
                                        {ExperimentKind::verify_theory, "verify_theory"}}};
const EnumNames<LrSchedule> kSchedules{{{LrSchedule::constant, "constant"}, {LrSchedule::linear_decay, "linear_decay"}}};
const EnumNames<GuidanceMode> kGuidance{{{GuidanceMode::none, "none"},
                                         {GuidanceMode::cfg_interval, "cfg_interval"},
                                         {GuidanceMode::autoguidance, "autoguidance"}}};

struct Field {
    std::string key;
    std::function<void(ExperimentConfig&, std::string_view, int)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

template <typename M>
Field int_field(std::string key, M ExperimentConfig::*section, int M::*member) {
    return {key, [=](ExperimentConfig& c, std::string_view v, int line) { (c.*section).*member = to_integer<int>(key, v, line); },
            [=](const ExperimentConfig& c) { return std::to_string((c.*section).*member); }};
}
template <typename M>
Field i64_field(std::string key, M ExperimentConfig::*section, std::int64_t M::*member) {
    return {key,
            [=](ExperimentConfig& c, std::string_view v, int line) {
                (c.*section).*member = to_integer<std::int64_t>(key, v, line);
            },
            [=](const ExperimentConfig& c) { return std::to_string((c.*section).*member); }};
}
template <typename M>
Field u64_field(std::string key, M ExperimentConfig::*section, std::uint64_t M::*member) {
    return {key,
            [=](ExperimentConfig& c, std::string_view v, int line) {
                (c.*section).*member = to_integer<std::uint64_t>(key, v, line);
            },
            [=](const ExperimentConfig& c) { return std::to_string((c.*section).*member); }};
}
template <typename M>
Field double_field(std::string key, M ExperimentConfig::*section, double M::*member) {
    return {key, [=](ExperimentConfig& c, std::string_view v, int line) { (c.*section).*member = to_double(key, v, line); },
            [=](const ExperimentConfig& c) { return num((c.*section).*member); }};
}
template <typename M>
Field bool_field(std::string key, M ExperimentConfig::*section, bool M::*member) {
    return {key, [=](ExperimentConfig& c, std::string_view v, int line) { (c.*section).*member = to_bool(key, v, line); },
            [=](const ExperimentConfig& c) { return std::string((c.*section).*member ? "true" : "false"); }};
}
template <typename M>
Field string_field(std::string key, M ExperimentConfig::*section, std::string M::*member) {
    return {key, [=](ExperimentConfig& c, std::string_view v, int) { (c.*section).*member = unquote(trim(v)); },
            [=](const ExperimentConfig& c) { return "\"" + (c.*section).*member + "\""; }};
}
template <typename M>
Field int_list_field(std::string key, M ExperimentConfig::*section, std::vector<int> M::*member) {
    return {key, [=](ExperimentConfig& c, std::string_view v, int line) { (c.*section).*member = to_list<int>(key, v, line); },
            [=](const ExperimentConfig& c) { return join((c.*section).*member); }};
}

const std::vector<Field>& fields() {
    using C = ExperimentConfig;
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        f.push_back({"experiment.kind",
                     [](C& c, std::string_view v, int line) { c.kind = kKinds.parse("experiment.kind", v, line); },
                     [](const C& c) { return kKinds.name(c.kind); }});
        f.push_back({"seeds",
                     [](C& c, std::string_view v, int line) { c.seeds = to_list<std::uint64_t>("seeds", v, line); },
                     [](const C& c) { return join(c.seeds); }});
        f.push_back({"out", [](C& c, std::string_view v, int) { c.out = unquote(trim(v)); },
                     [](const C& c) { return "\"" + c.out + "\""; }});

        f.push_back(string_field("model.preset", &C::model, &ModelSection::preset));
        f.push_back(int_field("model.width", &C::model, &ModelSection::width));
        f.push_back(int_field("model.depth", &C::model, &ModelSection::depth));
        f.push_back(int_field("model.heads", &C::model, &ModelSection::heads));
        f.push_back(int_field("model.head.depth", &C::model, &ModelSection::head_depth));
        f.push_back(int_field("model.head.width", &C::model, &ModelSection::head_width));
        f.push_back(int_field("model.head.heads", &C::model, &ModelSection::head_heads));
        f.push_back(double_field("model.fourier_scale", &C::model, &ModelSection::fourier_scale));

        f.push_back(bool_field("flow.shift.enabled", &C::flow, &FlowSection::shift));
        f.push_back(i64_field("flow.shift.m", &C::flow, &FlowSection::shift_m));
        f.push_back(i64_field("flow.shift.n_base", &C::flow, &FlowSection::n_base));
        f.push_back(bool_field("flow.shift.grid", &C::flow, &FlowSection::shift_grid));

        f.push_back(double_field("rae.tau", &C::rae, &RaeSection::tau));
        f.push_back(int_field("rae.patch", &C::rae, &RaeSection::patch));
        f.push_back(int_field("rae.token_dim", &C::rae, &RaeSection::token_dim));
        f.push_back(int_field("rae.decoder.patch", &C::rae, &RaeSection::decoder_patch));
        f.push_back(int_field("rae.decoder.width", &C::rae, &RaeSection::decoder_width));
        f.push_back(int_field("rae.decoder.depth", &C::rae, &RaeSection::decoder_depth));
        f.push_back(int_field("rae.decoder.steps", &C::rae, &RaeSection::decoder_steps));
        f.push_back(int_field("rae.decoder.batch", &C::rae, &RaeSection::decoder_batch));
        f.push_back(double_field("rae.decoder.lr", &C::rae, &RaeSection::decoder_lr));

        f.push_back(string_field("data.path", &C::data, &DataSection::path));
        f.push_back(int_field("data.count", &C::data, &DataSection::count));
        f.push_back(int_field("data.size", &C::data, &DataSection::size));
        f.push_back(u64_field("data.seed", &C::data, &DataSection::seed));

        f.push_back(int_field("train.steps", &C::train, &TrainSection::steps));
        f.push_back(int_field("train.batch", &C::train, &TrainSection::batch));
        f.push_back(double_field("train.lr", &C::train, &TrainSection::lr));
        f.push_back(double_field("train.lr_end", &C::train, &TrainSection::lr_end));
        f.push_back({"train.schedule",
                     [](C& c, std::string_view v, int line) { c.train.schedule = kSchedules.parse("train.schedule", v, line); },
                     [](const C& c) { return kSchedules.name(c.train.schedule); }});
        f.push_back(int_field("train.warmup_epochs", &C::train, &TrainSection::warmup_epochs));
        f.push_back(double_field("train.grad_clip", &C::train, &TrainSection::grad_clip));
        f.push_back(double_field("train.label_dropout", &C::train, &TrainSection::label_dropout));
        f.push_back(bool_field("ema.enabled", &C::train, &TrainSection::ema));
        f.push_back(double_field("ema.beta", &C::train, &TrainSection::ema_beta));

        f.push_back(int_field("sampler.steps", &C::sampler, &SamplerConfig::steps));
        f.push_back({"guidance.mode",
                     [](C& c, std::string_view v, int line) { c.guidance.mode = kGuidance.parse("guidance.mode", v, line); },
                     [](const C& c) { return kGuidance.name(c.guidance.mode); }});
        f.push_back(double_field("guidance.scale", &C::guidance, &GuidanceConfig::scale));
        f.push_back(double_field("guidance.t_lo", &C::guidance, &GuidanceConfig::t_lo));
        f.push_back(double_field("guidance.t_hi", &C::guidance, &GuidanceConfig::t_hi));

        f.push_back(int_field("eval.samples", &C::eval, &EvalSection::samples));
        f.push_back(int_field("eval.features", &C::eval, &EvalSection::features));
        f.push_back(int_field("eval.reference", &C::eval, &EvalSection::reference));
        f.push_back(u64_field("eval.reference_seed", &C::eval, &EvalSection::reference_seed));
        f.push_back(int_field("eval.weak_step", &C::eval, &EvalSection::weak_step));

        f.push_back(int_field("overfit.n", &C::overfit, &OverfitSection::n));
        f.push_back(int_field("overfit.tokens", &C::overfit, &OverfitSection::tokens));
        f.push_back(int_list_field("overfit.widths", &C::overfit, &OverfitSection::widths));
        f.push_back(int_list_field("overfit.depths", &C::overfit, &OverfitSection::depths));
        f.push_back(int_field("overfit.steps", &C::overfit, &OverfitSection::steps));
        f.push_back(int_field("overfit.batch", &C::overfit, &OverfitSection::batch));
        f.push_back(double_field("overfit.lr", &C::overfit, &OverfitSection::lr));
        f.push_back(int_field("overfit.targets", &C::overfit, &OverfitSection::targets));
        f.push_back(int_field("overfit.runs", &C::overfit, &OverfitSection::runs));
        f.push_back(i64_field("overfit.shift_m", &C::overfit, &OverfitSection::shift_m));
        f.push_back(double_field("overfit.lower_tol", &C::overfit, &OverfitSection::lower_tol));
        f.push_back(double_field("overfit.upper_tol", &C::overfit, &OverfitSection::upper_tol));
        f.push_back(double_field("overfit.ceiling", &C::overfit, &OverfitSection::ceiling));
        return f;
    }();
    return table;
}

const Field* find_field(std::string_view key) {
    for (const auto& f : fields())
        if (f.key == key) return &f;
    return nullptr;
}

void assign(ExperimentConfig& cfg, std::string_view line_text, int line) {
    const auto eq = line_text.find('=');
    if (eq == std::string_view::npos) {
        throw ParseError("expected key = value", line);
    }
    const auto key = trim(line_text.substr(0, eq));
    const auto value = trim(line_text.substr(eq + 1));
    const Field* f = find_field(key);
    if (f == nullptr) throw ParseError("unknown key '" + std::string(key) + "'", line);
    if (value.empty()) throw ParseError("missing value for " + std::string(key), line);
    f->set(cfg, value, line);
}

// Drops a trailing comment that is not inside double quotes.
std::string_view strip_comment(std::string_view s) {
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '"') quoted = !quoted;
        if (s[i] == '#' && !quoted) return s.substr(0, i);
    }
    return s;
}

}  // namespace

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& what) { throw ParseError("invalid config: " + what, 0); };
    if (seeds.empty()) fail("seed list is empty");
    try {
        preset_config(model.preset);
    } catch (const ConfigError& e) {
        fail(e.what());
    }
    if (model.width < 0 || model.depth < 0 || model.heads < 0 || model.head_depth < 0 || model.head_width < 0) {
        fail("model sizes must be non-negative");
    }
    if (flow.n_base <= 0 || flow.shift_m < 0) fail("shift dimensions must be positive");
    if (rae.tau < 0.0) fail("rae.tau must be non-negative");
    if (rae.patch <= 0 || rae.token_dim < 2 || rae.decoder_patch <= 0) fail("rae patch sizes must be positive");
    if (data.count <= 0 || data.size <= 0 || data.size % rae.patch != 0) fail("data size must be a positive multiple of rae.patch");
    if (train.steps < 0 || train.batch <= 0 || train.lr <= 0.0 || train.lr_end < 0.0) fail("train settings out of range");
    if (train.label_dropout < 0.0 || train.label_dropout > 1.0) fail("train.label_dropout must lie in [0, 1]");
    if (train.ema_beta < 0.0 || train.ema_beta > 1.0) fail("ema.beta must lie in [0, 1]");
    if (sampler.steps < 1) fail("sampler.steps must be at least 1");
    if (guidance.scale < 0.0 || guidance.t_lo > guidance.t_hi || guidance.t_lo < 0.0 || guidance.t_hi > 1.0) {
        fail("guidance settings out of range");
    }
    if (eval.samples < 2 || eval.features <= 0 || eval.reference < 2) fail("eval sizes out of range");
    if (overfit.n <= 0 || overfit.tokens <= 0 || overfit.steps < 0 || overfit.batch <= 0 || overfit.lr <= 0.0 ||
        overfit.targets <= 0 || overfit.runs <= 0) {
        fail("overfit settings out of range");
    }
}

ExperimentConfig parse_config(std::string_view text) {
    ExperimentConfig cfg;
    int line = 0;
    while (!text.empty()) {
        ++line;
        const auto nl = text.find('\n');
        std::string_view raw = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        const auto body = trim(strip_comment(raw));
        if (body.empty()) continue;
        assign(cfg, body, line);
    }
    cfg.validate();
    return cfg;
}

void apply_override(ExperimentConfig& cfg, std::string_view assignment) {
    assign(cfg, trim(assignment), 0);
    cfg.validate();
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
    return out;
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) { return serialize_config(a) == serialize_config(b); }

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& f : fields()) keys.push_back(f.key);
    return keys;
}

std::string to_string(ExperimentKind kind) { return kKinds.name(kind); }

ModelConfig model_config(const ExperimentConfig& cfg, int token_dim, int num_tokens, int label_count) {
    ModelConfig mc = preset_config(cfg.model.preset);
    if (cfg.model.width > 0) mc.dim = cfg.model.width;
    if (cfg.model.depth > 0) mc.depth = cfg.model.depth;
    if (cfg.model.heads > 0) mc.num_heads = cfg.model.heads;
    mc.token_dim = token_dim;
    mc.num_tokens = num_tokens;
    mc.label_count = label_count;
    mc.fourier_scale = cfg.model.fourier_scale;
    if (cfg.model.head_width > 0) {
        mc.head = HeadConfig{cfg.model.head_depth > 0 ? cfg.model.head_depth : 2, cfg.model.head_width, cfg.model.head_heads};
    }
    mc.validate();
    return mc;
}

}  // namespace rae
