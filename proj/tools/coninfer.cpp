#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "coninfer/coninfer.hpp"

namespace {

void add_infer_options(CLI::App& cmd, coninfer::InferConfig& cfg, bool with_mode) {
    static const std::map<std::string, coninfer::InferMode> modes{{"joint", coninfer::InferMode::joint},
                                                                  {"decoupled", coninfer::InferMode::decoupled},
                                                                  {"prior-only", coninfer::InferMode::prior_only}};
    static const std::map<std::string, coninfer::CovMode> cov_modes{{"full", coninfer::CovMode::full},
                                                                    {"diag", coninfer::CovMode::diag}};
    static const std::map<std::string, coninfer::SynonymMode> syn_modes{{"max", coninfer::SynonymMode::max},
                                                                        {"mean", coninfer::SynonymMode::mean}};

    cmd.add_option("--manifest", cfg.manifest, "Scene manifest (JSON)")->required()->check(CLI::ExistingFile);
    cmd.add_option("--batch-size", cfg.batch_size, "Tiles per batch")->capture_default_str()->check(CLI::PositiveNumber);
    cmd.add_option("--iters", cfg.iters, "Alternating iterations per batch")->capture_default_str()->check(CLI::PositiveNumber);
    cmd.add_option("--tau", cfg.tau, "Softmax temperature for priors computed from prototypes")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    cmd.add_option("--synonym-mode", cfg.synonym_mode, "How synonym prototype scores combine: max or mean")
        ->transform(CLI::CheckedTransformer(syn_modes, CLI::ignore_case));
    cmd.add_option("--cov-mode", cfg.cov_mode, "Covariance model: full or diag")
        ->transform(CLI::CheckedTransformer(cov_modes, CLI::ignore_case));
    cmd.add_option("--reg-eps", cfg.reg_eps, "Covariance diagonal loading (default: 1e-6 x mean feature variance)");
    cmd.add_flag("--l2-normalize-features", cfg.l2_normalize, "L2-normalize context features before fitting");
    cmd.add_option("--threads", cfg.threads, "Worker threads (0 = all cores)")->capture_default_str();
    if (with_mode) {
        cmd.add_option("--mode", cfg.mode, "joint, decoupled or prior-only")
            ->transform(CLI::CheckedTransformer(modes, CLI::ignore_case));
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Context-aware calibration of open-vocabulary patch predictions"};
    app.require_subcommand(1);

    coninfer::InferConfig infer_cfg;
    auto* infer = app.add_subcommand("infer", "Calibrate priors batch by batch and write one PGM mask per tile");
    add_infer_options(*infer, infer_cfg, true);
    infer->add_option("--out", infer_cfg.out_dir, "Output directory for masks")->required();
    infer->add_option("--trace", infer_cfg.trace_path, "Write the per-iteration objective trace as CSV");

    coninfer::EvalConfig eval_cfg;
    auto* eval = app.add_subcommand("eval", "Score predicted masks against the manifest's ground truth");
    eval->add_option("--manifest", eval_cfg.manifest, "Scene manifest with gt_path per tile")
        ->required()
        ->check(CLI::ExistingFile);
    eval->add_option("--pred", eval_cfg.pred_dir, "Directory of <tile id>.pgm masks")->required();
    eval->add_option("--report", eval_cfg.report_path, "JSON report path");

    coninfer::SceneFixture fixture;
    std::filesystem::path synth_dir;
    auto* synth = app.add_subcommand("synth", "Write a seeded synthetic scene (tensors + manifest)");
    synth->add_option("--out", synth_dir, "Output directory")->required();
    synth->add_option("--seed", fixture.spec.seed, "RNG seed")->capture_default_str();
    synth->add_option("--tiles", fixture.tiles, "Number of tiles")->capture_default_str();
    synth->add_option("--grid-rows", fixture.grid_rows, "Patch rows per tile")->capture_default_str();
    synth->add_option("--grid-cols", fixture.grid_cols, "Patch columns per tile")->capture_default_str();
    synth->add_option("--patch-px", fixture.patch_px, "Pixels per patch side")->capture_default_str();
    synth->add_option("--classes", fixture.spec.clusters, "Number of classes")->capture_default_str();
    synth->add_option("--dim", fixture.spec.dim, "Feature dimension")->capture_default_str();
    synth->add_option("--center-spread", fixture.spec.center_spread, "Minimum distance between class centers")
        ->capture_default_str();
    synth->add_option("--cluster-cov", fixture.spec.cluster_cov, "Isotropic variance per class")->capture_default_str();
    synth->add_option("--prior-noise", fixture.spec.prior_noise, "Fraction of uniform prior rows")->capture_default_str();
    synth->add_option("--prior-flip", fixture.spec.prior_flip, "Fraction of wrong one-hot prior rows")->capture_default_str();

    coninfer::InferConfig ablate_cfg;
    std::optional<std::filesystem::path> ablate_report;
    auto* ablate = app.add_subcommand("ablate", "Compare prior-only, decoupled and joint modes by mIoU");
    add_infer_options(*ablate, ablate_cfg, false);
    ablate->add_option("--report", ablate_report, "JSON report path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    if (*infer) return coninfer::cmd_infer(infer_cfg);
    if (*eval) return coninfer::cmd_eval(eval_cfg);
    if (*synth) return coninfer::cmd_synth(synth_dir, fixture);
    if (*ablate) return coninfer::cmd_ablate(ablate_cfg, ablate_report);
    return 1;
}
