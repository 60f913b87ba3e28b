// Command line front end. All numbers it prints come from the library; the
// binary only parses flags and moves files around.
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "segdiff/runner.hpp"
#include "segdiff/synthdata.hpp"

using namespace segdiff;

namespace {

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

runner::RunConfig load_run_config(const std::string& config_path) {
    if (config_path.empty()) return runner::RunConfig::defaults();
    return runner::RunConfig::from_file(config_path);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"referring action segmentation experiments"};
    app.require_subcommand(1);

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
    synth::ScenarioConfig scen;
    int samples = 64, families = 8;
    std::string split_mode = "random", out_dir = "data";
    synth_cmd->add_option("--samples", samples, "number of samples");
    synth_cmd->add_option("--families", families, "number of scenario families");
    synth_cmd->add_option("--split", split_mode, "random | cross_family");
    synth_cmd->add_option("--out", out_dir, "output directory");
    synth_cmd->add_option("--seed", scen.seed, "master seed");
    synth_cmd->add_option("--persons", scen.persons, "persons per scene");
    synth_cmd->add_option("--classes", scen.classes, "action classes");
    synth_cmd->add_option("--frames", scen.frames, "frames per sample");
    synth_cmd->add_option("--p-stay", scen.p_stay, "labelset stickiness");
    synth_cmd->add_option("--co-occur", scen.co_occur, "extra-class co-occurrence rate");
    synth_cmd->add_option("--p-absent", scen.p_absent, "empty-labelset rate");
    synth_cmd->add_option("--feat-dim", scen.feat_dim, "feature width before reference channels");
    synth_cmd->add_option("--snr", scen.snr, "signal to noise ratio");
    synth_cmd->add_option("--mixing", scen.mixing, "holistic mixing weights (one per person)");

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model from a run config");
    std::string config_path, resume_path, manifest_override, out_override;
    int64_t seed_override = -1;
    int epochs_override = -1;
    train_cmd->add_option("--config", config_path, "run config JSON");
    train_cmd->add_option("--manifest", manifest_override, "override manifest path");
    train_cmd->add_option("--out", out_override, "override output directory");
    train_cmd->add_option("--seed", seed_override, "override seed");
    train_cmd->add_option("--epochs", epochs_override, "override epoch count");
    train_cmd->add_option("--resume", resume_path, "resume from checkpoint");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint or a prediction directory");
    std::string ckpt, manifest_path, split = "test", pred_in, pred_out, report_out;
    uint64_t eval_seed = 7;
    int sample_steps = 25, threads = 1;
    eval_cmd->add_option("--checkpoint", ckpt, "model checkpoint (SDM1)");
    eval_cmd->add_option("--predictions", pred_in, "score an existing prediction directory instead");
    eval_cmd->add_option("--manifest", manifest_path, "dataset manifest")->required();
    eval_cmd->add_option("--split", split, "train | val | test");
    eval_cmd->add_option("--seed", eval_seed, "sampling seed");
    eval_cmd->add_option("--steps", sample_steps, "reverse diffusion steps");
    eval_cmd->add_option("--threads", threads, "worker pool size");
    eval_cmd->add_option("--pred-out", pred_out, "write predicted label files here");
    eval_cmd->add_option("--out", report_out, "write the JSON report here");

    // ablate
    auto* abl_cmd = app.add_subcommand("ablate", "train and score model variants");
    std::string variants_csv = "full,no_partial,no_hpxlstm,no_bca,no_dft_cond,none";
    std::string abl_config, abl_out;
    abl_cmd->add_option("--config", abl_config, "run config JSON");
    abl_cmd->add_option("--variants", variants_csv, "comma separated variant names");
    abl_cmd->add_option("--out", abl_out, "write the table here as well");

    // render
    auto* render_cmd = app.add_subcommand("render", "draw a prediction/GT timeline as SVG");
    std::string r_pred, r_gt, r_out;
    render_cmd->add_option("--pred", r_pred, "predicted labels (SDL1)")->required();
    render_cmd->add_option("--gt", r_gt, "ground truth labels (SDL1)")->required();
    render_cmd->add_option("--out", r_out, "output SVG path")->required();

    // config
    auto* config_cmd = app.add_subcommand("config", "run config utilities");
    auto* cfg_init = config_cmd->add_subcommand("init", "write a config with all defaults");
    std::string cfg_out = "run.json";
    cfg_init->add_option("--out", cfg_out, "output path");
    auto* cfg_check = config_cmd->add_subcommand("validate", "parse and echo a config");
    std::string cfg_in;
    cfg_check->add_option("path", cfg_in, "config to validate")->required();
    config_cmd->require_subcommand(1);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*synth_cmd) {
            synth::SplitMode mode;
            if (split_mode == "random")
                mode = synth::SplitMode::Random;
            else if (split_mode == "cross_family")
                mode = synth::SplitMode::CrossFamily;
            else
                throw ConfigError("--split must be random or cross_family");
            synth::generate_dataset(scen, samples, families, mode, out_dir);
            std::cout << "wrote " << samples << " samples to " << out_dir << "\n";
        } else if (*train_cmd) {
            runner::RunConfig cfg = load_run_config(config_path);
            if (!manifest_override.empty()) cfg.manifest = manifest_override;
            if (!out_override.empty()) cfg.out_dir = out_override;
            if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
            if (epochs_override > 0) cfg.epochs = epochs_override;
            if (cfg.manifest.empty()) throw ConfigError("train: no manifest given");
            auto outcome = runner::train_run(cfg, resume_path, &std::cout);
            std::cout << "checkpoint " << outcome.checkpoint_path << "\n";
            std::cout << "final loss " << outcome.final_loss << "\n";
            std::cout << runner::report_to_json(outcome.val) << "\n";
        } else if (*eval_cmd) {
            metrics::MetricReport rep;
            if (!pred_in.empty()) {
                rep = runner::eval_pred_dir(pred_in, manifest_path, split);
            } else if (!ckpt.empty()) {
                rep = runner::eval_run(ckpt, manifest_path, split, eval_seed, sample_steps,
                                       threads, pred_out);
            } else {
                throw ConfigError("eval: need --checkpoint or --predictions");
            }
            std::string j = runner::report_to_json(rep);
            std::cout << j << "\n";
            if (!report_out.empty()) {
                std::ofstream os(report_out);
                if (!os) throw FormatError(report_out + ": cannot open for writing");
                os << j << "\n";
            }
        } else if (*abl_cmd) {
            runner::RunConfig cfg = load_run_config(abl_config);
            if (cfg.manifest.empty()) throw ConfigError("ablate: no manifest in config");
            auto rows = runner::ablate_run(cfg, split_csv(variants_csv), &std::cout);
            std::string table = runner::ablation_table(rows);
            std::cout << table;
            if (!abl_out.empty()) {
                std::ofstream os(abl_out);
                if (!os) throw FormatError(abl_out + ": cannot open for writing");
                os << table;
            }
        } else if (*render_cmd) {
            auto pred = synth::read_labels(r_pred);
            auto gt = synth::read_labels(r_gt);
            runner::render_svg(pred, gt, r_out);
            std::cout << "wrote " << r_out << "\n";
        } else if (*config_cmd) {
            if (*cfg_init) {
                runner::RunConfig::defaults().to_file(cfg_out);
                std::cout << "wrote " << cfg_out << "\n";
            } else if (*cfg_check) {
                auto cfg = runner::RunConfig::from_file(cfg_in);
                std::cout << cfg.to_json_string() << "\n";
            }
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const FormatError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
