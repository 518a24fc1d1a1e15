#include <doctest.h>

#include "rae/config.hpp"

using namespace rae;

TEST_CASE("empty text gives the defaults") {
    const auto cfg = parse_config("");
    CHECK(cfg == ExperimentConfig{});
    CHECK(cfg.model.preset == "S");
    CHECK(cfg.sampler.steps == 50);
    CHECK(cfg.rae.tau == 0.8);
    CHECK(cfg.train.ema_beta == 0.9999);
    CHECK(cfg.train.lr == 2e-4);
    CHECK(cfg.guidance.scale == 1.5);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{0});
    CHECK(parse_config("# only a comment\n\n   \n") == cfg);
}

TEST_CASE("values, comments and sections") {
    const auto cfg = parse_config(
        "experiment.kind = schedule_ablation  # trailing comment\n"
        "seeds = 3,4,5\n"
        "model.preset = desk64\n"
        "flow.shift.m = 196608\n"
        "train.schedule = linear_decay\n"
        "ema.enabled = false\n"
        "guidance.mode = autoguidance\n");
    CHECK(cfg.kind == ExperimentKind::schedule_ablation);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{3, 4, 5});
    CHECK(cfg.model.preset == "desk64");
    CHECK(cfg.flow.shift_m == 196608);
    CHECK(cfg.train.schedule == LrSchedule::linear_decay);
    CHECK_FALSE(cfg.train.ema);
    CHECK(cfg.guidance.mode == GuidanceMode::autoguidance);
}

TEST_CASE("errors carry the line number") {
    auto line_of = [](const char* text) {
        try {
            parse_config(text);
        } catch (const ParseError& e) {
            return e.line();
        }
        return -1;
    };
    CHECK(line_of("seeds = 1\nmodel.width = \"wide\"\n") == 2);
    CHECK(line_of("\n\nno.such.key = 3\n") == 3);
    CHECK(line_of("train.steps 100\n") == 1);
    CHECK(line_of("train.lr = fast\n") == 1);
    CHECK(line_of("model.preset = nope\n") == 0);
    CHECK(line_of("seeds = \n") == 1);
    CHECK_THROWS_AS(parse_config("ema.beta = 1.5\n"), ParseError);
}

TEST_CASE("serialization round trip") {
    auto cfg = parse_config("seeds = 7,8\ntrain.lr = 1e-3\nrae.tau = 0.25\nmodel.head.width = 96\nguidance.t_lo = 0.1\n");
    const auto text = serialize_config(cfg);
    CHECK(parse_config(text) == cfg);
    CHECK(serialize_config(parse_config(text)) == text);
    const auto keys = config_keys();
    CHECK(keys.size() > 40);
    for (const auto& k : keys) CHECK(text.find(k + " = ") != std::string::npos);
}

TEST_CASE("overrides") {
    auto cfg = parse_config("flow.shift.m = 1024\n");
    apply_override(cfg, "flow.shift.m=196608");
    CHECK(cfg.flow.shift_m == 196608);
    apply_override(cfg, "  train.steps =  12 ");
    CHECK(cfg.train.steps == 12);
    CHECK_THROWS_AS(apply_override(cfg, "train.steps"), ParseError);
    CHECK_THROWS_AS(apply_override(cfg, "bogus=1"), ParseError);
}

TEST_CASE("model config from an experiment") {
    auto cfg = parse_config("model.preset = desk32\nmodel.head.width = 96\n");
    const auto mc = model_config(cfg, 64, 16, 10);
    CHECK(mc.dim == 32);
    CHECK(mc.token_dim == 64);
    CHECK(mc.num_tokens == 16);
    REQUIRE(mc.head.has_value());
    CHECK(mc.head->width == 96);
    CHECK(mc.head->depth == 2);
}
