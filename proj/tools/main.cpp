// shapprune: layer-contribution-guided non-uniform pruning for a built-in
// byte-level transformer. Subcommands compose through files only; rerunning
// any command with the same flags and seeds writes byte-identical outputs.
#include <CLI11.hpp>

#include <cinttypes>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "shapprune/allocation.hpp"
#include "shapprune/calibration.hpp"
#include "shapprune/checkpoint_io.hpp"
#include "shapprune/errors.hpp"
#include "shapprune/evaluation.hpp"
#include "shapprune/layer_stats.hpp"
#include "shapprune/model.hpp"
#include "shapprune/pruners.hpp"
#include "shapprune/shapley.hpp"
#include "shapprune/train.hpp"

namespace {

using namespace shapprune;

struct run_config {
    std::string model;
    std::string corpus;
    std::string report;
    std::string plan;
    std::string pruned;
    std::string out;
    std::string method = "magnitude";
    double rho = 0.5;
    double lambda = 0.1;
    int window = 5;
    bool exact = false;
    int calib_count = 32;
    int calib_len = 256;
    int steps = 600;
    std::uint64_t seed = 1;
    int threads = 1;
};

std::string out_path(const run_config& cfg, const char* name) {
    std::filesystem::create_directories(cfg.out);
    return (std::filesystem::path(cfg.out) / name).string();
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) {
        throw invalid_input_error("cannot write " + path);
    }
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw invalid_input_error("cannot open " + path);
    }
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::string fmt(const char* format, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* format, ...) {
    char buf[256];
    va_list args;
    va_start(args, format);
    std::vsnprintf(buf, sizeof buf, format, args);
    va_end(args);
    return buf;
}

shapley_report run_shapley_estimate(const model_checkpoint& m, const calibration_batch& batch,
                                    const run_config& cfg) {
    perplexity_oracle oracle(m, batch);
    shapley_options opts;
    opts.threads = cfg.threads;
    const int layers = static_cast<int>(m.config.n_layers);
    shapley_report report =
        cfg.exact ? exact_shapley(oracle, layers, opts) : swsv(oracle, layers, cfg.window, opts);
    std::printf("oracle evaluations: %" PRIu64 "\n", report.oracle_evaluations);

    if (cfg.exact) {
        double sum = 0.0;
        for (double phi : report.contributions) sum += phi;
        const double v_full = oracle.value(layer_set::full(layers));
        const double gap = std::abs(sum - v_full);
        const bool ok = gap <= 1e-9 * std::max(1.0, std::abs(v_full));
        std::printf("efficiency check: |sum(phi) - v(full)| = %.3e (%s)\n", gap,
                    ok ? "pass" : "fail");
        if (!ok) {
            throw numeric_error("exact contributions violate the efficiency identity");
        }
    }
    return report;
}

int cmd_train(const run_config& cfg) {
    const auto corpus = read_corpus(cfg.corpus);
    model_config model_cfg;
    model_cfg.seed = cfg.seed;
    train_options opt;
    opt.steps = cfg.steps;
    const auto result = train(corpus, model_cfg, opt);
    const std::string path = out_path(cfg, "model.bin");
    save_checkpoint(result.checkpoint, path);
    std::printf("final loss: %.6f\n", result.final_loss);
    std::printf("held-out ppl: %.6f\n", result.held_out_ppl);
    std::printf("wrote %s\n", path.c_str());
    return 0;
}

int cmd_shapley(const run_config& cfg) {
    const auto m = load_checkpoint(cfg.model);
    const auto corpus = read_corpus(cfg.corpus);
    const auto batch =
        make_calibration(corpus, cfg.calib_count, cfg.calib_len, cfg.seed, cfg.corpus);
    const auto report = run_shapley_estimate(m, batch, cfg);
    const std::string path = out_path(cfg, "shapley.json");
    write_text(path, report.to_json());
    std::printf("wrote %s\n", path.c_str());
    return 0;
}

int cmd_allocate(const run_config& cfg) {
    auto report = shapley_report::from_json(read_text(cfg.report));
    sparsity_plan plan = allocate_ratios(report.contributions, cfg.rho, cfg.lambda);
    plan.source = cfg.report;
    if (plan.clamped) {
        std::fprintf(stderr, "warning: some ratios were clamped to [0, 1]\n");
    }
    std::string line = "ratios:";
    for (double r : plan.ratios) line += fmt(" %.17g", r);
    std::printf("%s\n", line.c_str());
    const std::string path = out_path(cfg, "plan.json");
    write_text(path, plan.to_json());
    std::printf("wrote %s\n", path.c_str());
    return 0;
}

int cmd_prune(const run_config& cfg) {
    const auto m = load_checkpoint(cfg.model);
    const auto plan = sparsity_plan::from_json(read_text(cfg.plan));
    const prune_method method = parse_prune_method(cfg.method);

    calibration_batch batch;
    if (method == prune_method::wanda) {
        if (cfg.corpus.empty()) {
            throw invalid_parameter_error("wanda pruning needs --corpus for calibration");
        }
        const auto corpus = read_corpus(cfg.corpus);
        batch = make_calibration(corpus, cfg.calib_count, cfg.calib_len, cfg.seed, cfg.corpus);
    }

    const auto result = apply_plan(m, plan, method, batch);
    const std::string model_path = out_path(cfg, "pruned.bin");
    const std::string csv_path = out_path(cfg, "sparsity.csv");
    save_checkpoint(result.model, model_path);
    write_text(csv_path, result.report.to_csv());
    std::printf("overall sparsity: %.6f\n", result.report.overall_achieved());
    std::printf("wrote %s\n", model_path.c_str());
    std::printf("wrote %s\n", csv_path.c_str());
    return 0;
}

int cmd_eval(const run_config& cfg) {
    const auto m = load_checkpoint(cfg.model);
    const auto corpus = read_corpus(cfg.corpus);
    const auto batch =
        make_calibration(corpus, cfg.calib_count, cfg.calib_len, cfg.seed, cfg.corpus);
    const auto result =
        perplexity(m, layer_set::full(static_cast<int>(m.config.n_layers)), batch, cfg.threads);
    std::printf("ppl: %.6f\n", result.ppl);
    const std::string path = out_path(cfg, "ppl.json");
    write_text(path, result.to_json());
    std::printf("wrote %s\n", path.c_str());
    return 0;
}

int cmd_stats(const run_config& cfg) {
    const auto m = load_checkpoint(cfg.model);
    const std::string path = out_path(cfg, "stats.csv");
    write_text(path, compute_magnitude_stats(m).to_csv());
    std::printf("wrote %s\n", path.c_str());
    return 0;
}

int cmd_similarity(const run_config& cfg) {
    const auto dense = load_checkpoint(cfg.model);
    const auto pruned = load_checkpoint(cfg.pruned);
    const auto corpus = read_corpus(cfg.corpus);
    const auto batch =
        make_calibration(corpus, cfg.calib_count, cfg.calib_len, cfg.seed, cfg.corpus);
    const auto profile = activation_cosine(dense, pruned, batch);
    if (profile.zero_vector_seen) {
        std::fprintf(stderr, "warning: zero hidden vectors contributed cosine 0\n");
    }
    const std::string path = out_path(cfg, "similarity.csv");
    write_text(path, profile.to_csv());
    std::printf("wrote %s\n", path.c_str());
    return 0;
}

// train -> shapley -> allocate -> prune -> eval, once with the contribution
// plan and once with the uniform baseline, compared on the held-out tail.
int cmd_pipeline(const run_config& cfg) {
    const auto corpus = read_corpus(cfg.corpus);

    model_checkpoint m;
    if (!cfg.model.empty()) {
        m = load_checkpoint(cfg.model);
    } else {
        model_config model_cfg;
        model_cfg.seed = cfg.seed;
        train_options opt;
        opt.steps = cfg.steps;
        const auto trained = train(corpus, model_cfg, opt);
        m = trained.checkpoint;
        save_checkpoint(m, out_path(cfg, "model.bin"));
        std::printf("trained model: held-out ppl %.6f\n", trained.held_out_ppl);
    }
    const int layers = static_cast<int>(m.config.n_layers);

    const auto batch =
        make_calibration(corpus, cfg.calib_count, cfg.calib_len, cfg.seed, cfg.corpus);
    const auto report = run_shapley_estimate(m, batch, cfg);
    write_text(out_path(cfg, "shapley.json"), report.to_json());

    sparsity_plan plan = allocate_ratios(report.contributions, cfg.rho, cfg.lambda);
    plan.source = "shapley";
    write_text(out_path(cfg, "plan.json"), plan.to_json());

    sparsity_plan uniform;
    uniform.rho = cfg.rho;
    uniform.lambda = 0.0;
    uniform.ratios.assign(static_cast<std::size_t>(layers), cfg.rho);
    uniform.source = "uniform";

    const prune_method method = parse_prune_method(cfg.method);
    const auto pruned_nonuniform = apply_plan(m, plan, method, batch);
    const auto pruned_uniform = apply_plan(m, uniform, method, batch);
    save_checkpoint(pruned_nonuniform.model, out_path(cfg, "pruned_nonuniform.bin"));
    save_checkpoint(pruned_uniform.model, out_path(cfg, "pruned_uniform.bin"));
    write_text(out_path(cfg, "sparsity_nonuniform.csv"), pruned_nonuniform.report.to_csv());
    write_text(out_path(cfg, "sparsity_uniform.csv"), pruned_uniform.report.to_csv());

    const auto held_out =
        make_held_out(corpus, 0.1, 32, static_cast<int>(m.config.max_seq_len));
    const layer_set full = layer_set::full(layers);
    const double dense_ppl = perplexity(m, full, held_out, cfg.threads).ppl;
    const double uniform_ppl =
        perplexity(pruned_uniform.model, full, held_out, cfg.threads).ppl;
    const double nonuniform_ppl =
        perplexity(pruned_nonuniform.model, full, held_out, cfg.threads).ppl;

    const std::string window_label = cfg.exact ? "exact" : std::to_string(cfg.window);
    std::string table = "scheme,method,rho,lambda,window,held_out_ppl,delta_vs_dense_pct\n";
    table += fmt("uniform,%s,%g,0,-,%.17g,%.4f\n", cfg.method.c_str(), cfg.rho, uniform_ppl,
                 100.0 * (uniform_ppl - dense_ppl) / dense_ppl);
    table += fmt("non-uniform,%s,%g,%g,%s,%.17g,%.4f\n", cfg.method.c_str(), cfg.rho,
                 cfg.lambda, window_label.c_str(), nonuniform_ppl,
                 100.0 * (nonuniform_ppl - dense_ppl) / dense_ppl);
    write_text(out_path(cfg, "comparison.csv"), table);

    std::printf("dense held-out ppl: %.6f\n", dense_ppl);
    std::printf("%s", table.c_str());
    std::printf("wrote %s\n", out_path(cfg, "comparison.csv").c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Layer-contribution-guided non-uniform pruning toolkit"};
    app.require_subcommand(1);

    run_config cfg;

    auto add_calib = [&cfg](CLI::App* sub) {
        sub->add_option("--calib-count", cfg.calib_count, "Calibration sequence count")
            ->check(CLI::PositiveNumber);
        sub->add_option("--calib-len", cfg.calib_len, "Calibration sequence length")
            ->check(CLI::PositiveNumber);
    };
    auto add_seed_threads = [&cfg](CLI::App* sub) {
        sub->add_option("--seed", cfg.seed, "Deterministic seed");
        sub->add_option("--threads", cfg.threads, "Worker thread cap")
            ->check(CLI::PositiveNumber);
    };

    CLI::App* train_cmd = app.add_subcommand("train", "Train the built-in transformer");
    train_cmd->add_option("--corpus", cfg.corpus, "Byte corpus path")->required();
    train_cmd->add_option("--out", cfg.out, "Output directory")->required();
    train_cmd->add_option("--steps", cfg.steps, "Optimizer steps")->check(CLI::PositiveNumber);
    add_seed_threads(train_cmd);

    CLI::App* shapley_cmd =
        app.add_subcommand("shapley", "Estimate per-layer contributions");
    shapley_cmd->add_option("--model", cfg.model, "Checkpoint path")->required();
    shapley_cmd->add_option("--corpus", cfg.corpus, "Byte corpus path")->required();
    shapley_cmd->add_option("--out", cfg.out, "Output directory")->required();
    shapley_cmd->add_option("--window", cfg.window, "Sliding window size (odd)");
    shapley_cmd->add_flag("--exact", cfg.exact, "Exact enumeration instead of windows");
    add_calib(shapley_cmd);
    add_seed_threads(shapley_cmd);

    CLI::App* allocate_cmd =
        app.add_subcommand("allocate", "Turn contributions into per-layer ratios");
    allocate_cmd->add_option("--report", cfg.report, "Contribution report JSON")->required();
    allocate_cmd->add_option("--out", cfg.out, "Output directory")->required();
    allocate_cmd->add_option("--rho", cfg.rho, "Global pruning ratio");
    allocate_cmd->add_option("--lambda", cfg.lambda, "Deviation bound");

    CLI::App* prune_cmd = app.add_subcommand("prune", "Apply a sparsity plan");
    prune_cmd->add_option("--model", cfg.model, "Checkpoint path")->required();
    prune_cmd->add_option("--plan", cfg.plan, "Sparsity plan JSON")->required();
    prune_cmd->add_option("--out", cfg.out, "Output directory")->required();
    prune_cmd->add_option("--method", cfg.method, "magnitude | wanda")
        ->check(CLI::IsMember({"magnitude", "wanda"}));
    prune_cmd->add_option("--corpus", cfg.corpus, "Calibration corpus (wanda)");
    add_calib(prune_cmd);
    add_seed_threads(prune_cmd);

    CLI::App* eval_cmd = app.add_subcommand("eval", "Perplexity on corpus windows");
    eval_cmd->add_option("--model", cfg.model, "Checkpoint path")->required();
    eval_cmd->add_option("--corpus", cfg.corpus, "Byte corpus path")->required();
    eval_cmd->add_option("--out", cfg.out, "Output directory")->required();
    add_calib(eval_cmd);
    add_seed_threads(eval_cmd);

    CLI::App* stats_cmd = app.add_subcommand("stats", "Weight-magnitude statistics");
    stats_cmd->add_option("--model", cfg.model, "Checkpoint path")->required();
    stats_cmd->add_option("--out", cfg.out, "Output directory")->required();

    CLI::App* similarity_cmd =
        app.add_subcommand("similarity", "Layer-wise activation cosine profile");
    similarity_cmd->add_option("--model", cfg.model, "Dense checkpoint path")->required();
    similarity_cmd->add_option("--pruned", cfg.pruned, "Pruned checkpoint path")->required();
    similarity_cmd->add_option("--corpus", cfg.corpus, "Byte corpus path")->required();
    similarity_cmd->add_option("--out", cfg.out, "Output directory")->required();
    add_calib(similarity_cmd);
    add_seed_threads(similarity_cmd);

    CLI::App* pipeline_cmd = app.add_subcommand(
        "pipeline", "train -> shapley -> allocate -> prune -> eval, uniform vs contribution-led");
    pipeline_cmd->add_option("--corpus", cfg.corpus, "Byte corpus path")->required();
    pipeline_cmd->add_option("--out", cfg.out, "Output directory")->required();
    pipeline_cmd->add_option("--model", cfg.model, "Skip training, use this checkpoint");
    pipeline_cmd->add_option("--steps", cfg.steps, "Optimizer steps")->check(CLI::PositiveNumber);
    pipeline_cmd->add_option("--rho", cfg.rho, "Global pruning ratio");
    pipeline_cmd->add_option("--lambda", cfg.lambda, "Deviation bound");
    pipeline_cmd->add_option("--window", cfg.window, "Sliding window size (odd)");
    pipeline_cmd->add_flag("--exact", cfg.exact, "Exact enumeration instead of windows");
    pipeline_cmd->add_option("--method", cfg.method, "magnitude | wanda")
        ->check(CLI::IsMember({"magnitude", "wanda"}));
    add_calib(pipeline_cmd);
    add_seed_threads(pipeline_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand(train_cmd)) return cmd_train(cfg);
        if (app.got_subcommand(shapley_cmd)) return cmd_shapley(cfg);
        if (app.got_subcommand(allocate_cmd)) return cmd_allocate(cfg);
        if (app.got_subcommand(prune_cmd)) return cmd_prune(cfg);
        if (app.got_subcommand(eval_cmd)) return cmd_eval(cfg);
        if (app.got_subcommand(stats_cmd)) return cmd_stats(cfg);
        if (app.got_subcommand(similarity_cmd)) return cmd_similarity(cfg);
        if (app.got_subcommand(pipeline_cmd)) return cmd_pipeline(cfg);
    } catch (const invalid_parameter_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const format_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const invalid_input_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const numeric_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    }
    return 0;
}
