#include <cstdio>
#include <cstdlib>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "mvlift/pipeline.hpp"

int main(int argc, char** argv) {
    CLI::App app{"mvlift: lifting single-view 2D pose sequences to global 3D motion"};
    app.fallthrough();
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path, "pipeline configuration file");
    std::uint64_t seed = 0;
    CLI::Option* seed_opt = app.add_option("--seed", seed, "override the config seed");
    int threads = 1;
    CLI::Option* threads_opt =
        app.add_option("--threads", threads, "worker thread cap")->check(CLI::PositiveNumber);
    std::string mode;

    app.add_subcommand("gen-synth", "generate the synthetic 3D corpus and its 2D projections");
    app.add_subcommand("train-lcdm", "train the line-conditioned diffusion model");
    app.add_subcommand("train-mvdm", "train the cross-view diffusion model");
    app.add_subcommand("optimize-mv", "optimize multi-view sequences for the selected inputs");
    app.add_subcommand("build-mvdataset", "build the consistent multi-view dataset");
    CLI::App* lift = app.add_subcommand("lift", "lift held-out 2D inputs to 3D");
    lift->add_option("--mode", mode, "stage1 | stage2 | full")
        ->required()
        ->check(CLI::IsMember({"stage1", "stage2", "full"}));
    CLI::App* eval = app.add_subcommand("eval", "score predictions against the 3D oracle");
    eval->add_option("--mode", mode, "stage1 | stage2 | full")
        ->required()
        ->check(CLI::IsMember({"stage1", "stage2", "full"}));
    CLI::App* render = app.add_subcommand("render", "write trajectory plots and 2D overlays");
    render->add_option("--mode", mode, "gt | stage1 | stage2 | full (default gt)")
        ->check(CLI::IsMember({"gt", "stage1", "stage2", "full"}));
    app.add_subcommand("show-config", "print the merged configuration and exit");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 1;
    }

    const std::string cmd = app.get_subcommands().front()->get_name();
    if (config_path.empty() && cmd != "show-config") {
        std::fprintf(stderr, "usage error: %s requires --config\n", cmd.c_str());
        return 1;
    }

    try {
        mvlift::PipelineConfig cfg;
        if (!config_path.empty()) cfg = mvlift::load_pipeline_config(config_path);
        if (seed_opt->count() > 0) cfg.seed = seed;
        if (threads_opt->count() > 0) mvlift::thread_count() = threads;

        std::string out_root = cfg.out_root;
        if (const char* env = std::getenv("MVLIFT_OUT"); env && *env) out_root = env;

        if (cmd == "show-config") {
            std::fputs(mvlift::show_config_text(cfg).c_str(), stdout);
        } else if (cmd == "gen-synth") {
            mvlift::run_gen_synth(cfg, out_root);
        } else if (cmd == "train-lcdm") {
            mvlift::run_train_lcdm(cfg, out_root);
        } else if (cmd == "train-mvdm") {
            mvlift::run_train_mvdm(cfg, out_root);
        } else if (cmd == "optimize-mv") {
            mvlift::run_optimize_mv(cfg, out_root);
        } else if (cmd == "build-mvdataset") {
            mvlift::run_build_mvdataset(cfg, out_root);
        } else if (cmd == "lift") {
            mvlift::run_lift(cfg, out_root, mode);
        } else if (cmd == "eval") {
            mvlift::run_eval(cfg, out_root, mode);
        } else if (cmd == "render") {
            mvlift::run_render(cfg, out_root, mode);
        }
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
