#pragma once

// Scene-level commands behind the `coninfer` executable. Each cmd_* function
// maps errors to exit codes: 0 success, 1 input/validation error, 2 numerical failure.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "consensus.hpp"
#include "error.hpp"
#include "gmm.hpp"
#include "log.hpp"
#include "prior.hpp"
#include "segmap.hpp"
#include "synth.hpp"
#include "tensorio.hpp"
#include "types.hpp"

namespace coninfer {

enum class InferMode { joint, decoupled, prior_only };

inline const char* mode_name(InferMode m) {
    switch (m) {
    case InferMode::joint: return "joint";
    case InferMode::decoupled: return "decoupled";
    case InferMode::prior_only: return "prior-only";
    }
    return "?";
}

struct InferConfig {
    fs::path manifest;
    fs::path out_dir;
    std::size_t batch_size = 50;
    std::size_t iters = 10;
    double tau = 0.01;
    SynonymMode synonym_mode = SynonymMode::max;
    CovMode cov_mode = CovMode::full;
    std::optional<double> reg_eps;
    bool l2_normalize = false;
    InferMode mode = InferMode::joint;
    std::optional<fs::path> trace_path;
    /// 0 = all hardware threads.
    unsigned threads = 0;

    GmmConfig gmm() const { return {cov_mode, reg_eps, l2_normalize, threads}; }
    SolverConfig solver() const { return {iters, 1e-12, 0.0}; }
    PriorConfig prior() const { return {tau, synonym_mode, threads}; }
};

/// Half-open range of tile indices processed together.
struct BatchRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const { return end - begin; }
    friend bool operator==(const BatchRange&, const BatchRange&) = default;
};

/// Consecutive batches of batch_size tiles; the last one may be shorter.
inline std::vector<BatchRange> partition_batches(std::size_t tiles, std::size_t batch_size) {
    if (batch_size < 1) throw InputError("batch size must be >= 1");
    std::vector<BatchRange> out;
    for (std::size_t b = 0; b < tiles; b += batch_size) out.push_back({b, std::min(tiles, b + batch_size)});
    return out;
}

namespace detail {

inline std::string batch_label(const TileManifest& m, const BatchRange& r, std::size_t index) {
    return "batch " + std::to_string(index) + " (tiles " + m.tiles[r.begin].id + ".." + m.tiles[r.end - 1].id + ")";
}

template <typename Fn>
auto with_context(const std::string& where, Fn&& fn) {
    try {
        return fn();
    } catch (Error& e) {
        e.add_context(where);
        throw;
    }
}

inline Matrix read_float_matrix(const fs::path& p) { return to_matrix(read_tensor(p)); }

} // namespace detail

/// Prior rows for a batch, taken from each tile's priors tensor or computed from
/// its VLM features and the manifest prototypes.
inline ProbMatrix load_batch_prior(const TileManifest& m, const BatchRange& range, const InferConfig& cfg) {
    const auto per_tile = static_cast<Index>(m.geometry.patches_per_tile());
    const auto c = static_cast<Index>(m.num_classes());
    ProbMatrix prior(per_tile * static_cast<Index>(range.size()), c);

    std::optional<TextPrototypes> protos;
    for (std::size_t t = range.begin; t < range.end; ++t) {
        const auto& tile = m.tiles[t];
        detail::with_context("tile " + tile.id, [&] {
            ProbMatrix block;
            if (tile.priors_path) {
                block = detail::read_float_matrix(*tile.priors_path);
                validate_prob_rows(block);
            } else if (tile.vlm_features_path && m.prototypes_path) {
                if (!protos) {
                    protos.emplace();
                    protos->vectors = detail::read_float_matrix(*m.prototypes_path);
                    std::vector<std::size_t> rows_per_class;
                    for (const auto& cls : m.classes) rows_per_class.push_back(1 + cls.synonyms.size());
                    protos->owner = TextPrototypes::consecutive_owners(rows_per_class);
                    protos->num_classes = m.num_classes();
                }
                block = encode_prior(detail::read_float_matrix(*tile.vlm_features_path), *protos, cfg.prior());
            } else {
                throw InputError("no priors_path, and no vlm_features_path + prototypes_path to compute a prior");
            }
            prior.middleRows(static_cast<Index>(t - range.begin) * per_tile, per_tile) = block;
            return 0;
        });
    }
    return prior;
}

inline Matrix load_batch_features(const TileManifest& m, const BatchRange& range) {
    const auto per_tile = static_cast<Index>(m.geometry.patches_per_tile());
    Matrix x;
    for (std::size_t t = range.begin; t < range.end; ++t) {
        const auto& tile = m.tiles[t];
        detail::with_context("tile " + tile.id, [&] {
            const Matrix block = detail::read_float_matrix(tile.features_path);
            if (x.size() == 0) x.resize(per_tile * static_cast<Index>(range.size()), block.cols());
            if (block.rows() != per_tile || block.cols() != x.cols()) {
                throw ShapeError("features tensor has shape " + std::to_string(block.rows()) + "x" +
                                 std::to_string(block.cols()));
            }
            x.middleRows(static_cast<Index>(t - range.begin) * per_tile, per_tile) = block;
            return 0;
        });
    }
    return x;
}

struct BatchOutput {
    ProbMatrix z;
    std::vector<LabelMask> masks;
    std::optional<RunTrace> trace;
};

/// Runs one batch in the given mode. Features are only read for joint and decoupled modes.
inline BatchOutput infer_batch(const TileManifest& m, const BatchRange& range, const InferConfig& cfg, InferMode mode) {
    BatchOutput out;
    const ProbMatrix prior = load_batch_prior(m, range, cfg);
    if (mode == InferMode::prior_only) {
        out.z = prior;
    } else {
        const Matrix x = load_batch_features(m, range);
        auto result = mode == InferMode::joint ? run(x, prior, cfg.gmm(), cfg.solver())
                                               : run_decoupled(x, prior, cfg.gmm(), cfg.solver());
        out.z = std::move(result.z);
        out.trace = std::move(result.trace);
    }
    const PatchGrid grid{m.geometry.rows, m.geometry.cols, m.geometry.patch_px, range.size()};
    out.masks = assemble_masks(out.z, grid);
    return out;
}

struct InferSummary {
    std::vector<BatchRange> batches;
    std::vector<RunTrace> traces;
};

/// Infers every batch and writes <out_dir>/<tile id>.pgm masks (and the trace CSV when requested).
inline InferSummary run_infer(const InferConfig& cfg) {
    if (cfg.iters < 1) throw InputError("--iters must be >= 1");
    const TileManifest m = load_manifest(cfg.manifest, {.features = cfg.mode != InferMode::prior_only});
    fs::create_directories(cfg.out_dir);

    InferSummary summary;
    summary.batches = partition_batches(m.tiles.size(), cfg.batch_size);
    for (std::size_t b = 0; b < summary.batches.size(); ++b) {
        const auto& range = summary.batches[b];
        detail::with_context(detail::batch_label(m, range, b), [&] {
            auto out = infer_batch(m, range, cfg, cfg.mode);
            for (std::size_t t = 0; t < range.size(); ++t) {
                write_mask(cfg.out_dir / (m.tiles[range.begin + t].id + ".pgm"), out.masks[t]);
            }
            if (out.trace) {
                logger().info("batch {}: {} tiles, J {:.6g} -> {:.6g}", b, range.size(), out.trace->objective.front(),
                              out.trace->objective.back());
                summary.traces.push_back(std::move(*out.trace));
            }
            return 0;
        });
    }

    if (cfg.trace_path && !summary.traces.empty()) {
        std::ofstream csv(*cfg.trace_path);
        if (!csv) throw IoError("cannot open '" + cfg.trace_path->string() + "' for writing");
        csv << std::setprecision(17) << "batch,iteration,objective,max_z_delta\n";
        for (std::size_t b = 0; b < summary.traces.size(); ++b) {
            const auto& tr = summary.traces[b];
            for (std::size_t l = 0; l < tr.objective.size(); ++l) {
                csv << b << ',' << l << ',' << tr.objective[l] << ',' << tr.max_z_delta[l] << '\n';
            }
        }
    }
    return summary;
}

struct EvalConfig {
    fs::path pred_dir;
    fs::path manifest;
    std::optional<fs::path> report_path;
};

/// Scores <pred_dir>/<tile id>.pgm against each tile's ground truth.
inline IouReport run_eval(const EvalConfig& cfg) {
    const TileManifest m = load_manifest(cfg.manifest, {.features = false});
    ConfusionMatrix cm(m.num_classes());
    for (const auto& tile : m.tiles) {
        detail::with_context("tile " + tile.id, [&] {
            if (!tile.gt_path) throw InputError("no gt_path in manifest");
            const LabelMask gt = to_mask(read_tensor(*tile.gt_path));
            const LabelMask pred = read_mask(cfg.pred_dir / (tile.id + ".pgm"));
            accumulate_confusion(cm, pred, gt, m.ignore_label);
            return 0;
        });
    }
    const IouReport report = iou_scores(cm);
    if (cfg.report_path) {
        std::vector<std::string> names;
        for (const auto& c : m.classes) names.push_back(c.name);
        std::ofstream out(*cfg.report_path);
        if (!out) throw IoError("cannot open '" + cfg.report_path->string() + "' for writing");
        out << report_to_json(report, names).dump(2) << '\n';
    }
    return report;
}

struct AblationRow {
    InferMode mode;
    double miou = 0.0;
    double pixel_accuracy = 0.0;
};

/// Prior-only, decoupled and joint inference over the same batches, scored against ground truth.
inline std::vector<AblationRow> run_ablate(const InferConfig& cfg) {
    const TileManifest m = load_manifest(cfg.manifest);
    for (const auto& tile : m.tiles) {
        if (!tile.gt_path) throw InputError("tile " + tile.id + ": ablation needs gt_path on every tile");
    }
    const auto batches = partition_batches(m.tiles.size(), cfg.batch_size);
    std::vector<AblationRow> rows;
    for (const InferMode mode : {InferMode::prior_only, InferMode::decoupled, InferMode::joint}) {
        ConfusionMatrix cm(m.num_classes());
        for (std::size_t b = 0; b < batches.size(); ++b) {
            const auto& range = batches[b];
            detail::with_context(std::string(mode_name(mode)) + " " + detail::batch_label(m, range, b), [&] {
                const auto out = infer_batch(m, range, cfg, mode);
                for (std::size_t t = 0; t < range.size(); ++t) {
                    const LabelMask gt = to_mask(read_tensor(*m.tiles[range.begin + t].gt_path));
                    accumulate_confusion(cm, out.masks[t], gt, m.ignore_label);
                }
                return 0;
            });
        }
        rows.push_back({mode, iou_scores(cm).miou, pixel_accuracy(cm)});
    }
    return rows;
}

inline void print_ablation(std::ostream& os, const std::vector<AblationRow>& rows) {
    os << std::left << std::setw(12) << "mode" << std::right << std::setw(10) << "mIoU" << std::setw(12)
       << "pixel_acc" << '\n';
    for (const auto& r : rows) {
        os << std::left << std::setw(12) << mode_name(r.mode) << std::right << std::fixed << std::setprecision(4)
           << std::setw(10) << r.miou << std::setw(12) << r.pixel_accuracy << '\n';
    }
    os.unsetf(std::ios::floatfield);
}

/// Layout of a synthetic scene written to disk.
struct SceneFixture {
    synth::SynthSpec spec;
    std::size_t tiles = 4;
    std::size_t grid_rows = 4;
    std::size_t grid_cols = 4;
    std::size_t patch_px = 4;
};

/// Writes features, priors and ground-truth tensors per tile, the patch labels
/// (labels.npy) and manifest.json into dir. Returns the manifest path.
inline fs::path write_synthetic_scene(const fs::path& dir, const SceneFixture& f) {
    if (f.tiles < 1 || f.grid_rows < 1 || f.grid_cols < 1 || f.patch_px < 1) {
        throw InputError("synth: tiles, grid and patch size must be >= 1");
    }
    if (f.spec.clusters > 256) throw InputError("synth: at most 256 classes");
    const std::size_t per_tile = f.grid_rows * f.grid_cols;
    const std::size_t total = per_tile * f.tiles;
    synth::SynthSpec spec = f.spec;
    spec.n_per_cluster = (total + spec.clusters - 1) / spec.clusters;
    const synth::SynthScene scene = synth::generate(spec);

    fs::create_directories(dir);
    TileManifest m;
    m.scene_id = "synthetic-seed-" + std::to_string(spec.seed);
    for (std::size_t k = 0; k < spec.clusters; ++k) m.classes.push_back({"class_" + std::to_string(k), {}});
    m.geometry = {f.grid_rows, f.grid_cols, f.patch_px, f.grid_rows * f.patch_px, f.grid_cols * f.patch_px};

    std::vector<std::uint8_t> labels(total);
    for (std::size_t i = 0; i < total; ++i) labels[i] = static_cast<std::uint8_t>(scene.labels[i]);
    write_tensor(dir / "labels.npy", TensorFile{DType::uint8, {total}, labels});

    const PatchGrid grid{f.grid_rows, f.grid_cols, f.patch_px, 1};
    for (std::size_t t = 0; t < f.tiles; ++t) {
        char id[32];
        std::snprintf(id, sizeof id, "tile_%04zu", t);
        const auto rows = static_cast<Index>(t * per_tile);
        const auto n = static_cast<Index>(per_tile);

        TileEntry e;
        e.id = id;
        e.features_path = dir / (e.id + "_features.npy");
        e.priors_path = dir / (e.id + "_priors.npy");
        e.gt_path = dir / (e.id + "_gt.npy");
        write_tensor(e.features_path, from_matrix(scene.x.middleRows(rows, n)));
        write_tensor(*e.priors_path, from_matrix(scene.prior.middleRows(rows, n)));

        ProbMatrix one_hot = ProbMatrix::Zero(n, static_cast<Index>(spec.clusters));
        for (Index i = 0; i < n; ++i) one_hot(i, static_cast<Index>(scene.labels[static_cast<std::size_t>(rows + i)])) = 1.0;
        write_tensor(*e.gt_path, from_mask(assemble_masks(one_hot, grid).front()));
        m.tiles.push_back(std::move(e));
    }

    const fs::path manifest = dir / "manifest.json";
    std::ofstream out(manifest);
    if (!out) throw IoError("cannot open '" + manifest.string() + "' for writing");
    out << manifest_to_json(m, dir).dump(2) << '\n';
    return manifest;
}

/// Runs fn and converts engine errors into exit codes, printing them to err.
template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
    try {
        fn();
        return 0;
    } catch (const NumericalError& e) {
        err << "error: " << e.kind() << ": " << e.what() << '\n';
        return 2;
    } catch (const Error& e) {
        err << "error: " << e.kind() << ": " << e.what() << '\n';
        return 1;
    } catch (const fs::filesystem_error& e) {
        err << "error: IoError: " << e.what() << '\n';
        return 1;
    }
}

inline int cmd_infer(const InferConfig& cfg, std::ostream& err = std::cerr) {
    return guarded(err, [&] { run_infer(cfg); });
}

inline int cmd_eval(const EvalConfig& cfg, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return guarded(err, [&] {
        const auto report = run_eval(cfg);
        out << "mIoU " << std::setprecision(6) << report.miou << '\n';
    });
}

inline int cmd_ablate(const InferConfig& cfg, const std::optional<fs::path>& report_path, std::ostream& out = std::cout,
                      std::ostream& err = std::cerr) {
    return guarded(err, [&] {
        const auto rows = run_ablate(cfg);
        print_ablation(out, rows);
        if (report_path) {
            nlohmann::json doc = nlohmann::json::array();
            for (const auto& r : rows) {
                doc.push_back({{"mode", mode_name(r.mode)}, {"miou", r.miou}, {"pixel_accuracy", r.pixel_accuracy}});
            }
            std::ofstream f(*report_path);
            if (!f) throw IoError("cannot open '" + report_path->string() + "' for writing");
            f << doc.dump(2) << '\n';
        }
    });
}

inline int cmd_synth(const fs::path& dir, const SceneFixture& fixture, std::ostream& out = std::cout,
                     std::ostream& err = std::cerr) {
    return guarded(err, [&] { out << write_synthetic_scene(dir, fixture).string() << '\n'; });
}

} // namespace coninfer
