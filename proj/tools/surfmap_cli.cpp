#include "surfmap/pipeline.hpp"
#include "surfmap/synthetic.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

enum Exit { kOk = 0, kValidation = 1, kIo = 2 };

}  // namespace

int main(int argc, char** argv) {
    using namespace surfmap;
    CLI::App app{"surfmap: geologic mapping dataset builder"};
    app.set_version_flag("--version", std::string(SURFMAP_VERSION));
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path = "config.ini";
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output;
    bool resume = false;
    int jobs = 0;
    app.add_option("--config", config_path, "Pipeline configuration (INI)");
    app.add_option("--seed", seed, "Override the split seed");
    app.add_option("--output", output, "Override the output directory");
    app.add_flag("--resume", resume, "Skip stages whose inputs and outputs are unchanged");
    app.add_option("--jobs", jobs, "Worker threads (default: hardware concurrency)")->check(CLI::NonNegativeNumber);

    std::vector<std::string> selected;
    const std::vector<std::pair<std::string, std::string>> stage_help{
        {"validate", "Check geology topology, derive the AOI and clip the geology"},
        {"rasterize", "Rasterize the geology mask and the hydrography / infrastructure lines"},
        {"mosaic", "Align and mosaic DEM and imagery tiles onto the reference grid"},
        {"terrain", "Compute the 30 terrain derivative channels"},
        {"patches", "Cut overlapping patches, labels and the patch index"},
        {"splits", "Draw spatially independent train / val / test splits"},
        {"stats", "Label distributions and channel normalization statistics"},
        {"metrics", "Score model outputs: per-class metrics, mAP, Hamming loss, delta AUC"}};
    for (const auto& [name, help] : stage_help) app.add_subcommand(name, help)->callback([&, n = name] { selected = {n}; });
    app.add_subcommand("all", "Run every stage in order")->callback([&] { selected = kStages; });

    auto* synth = app.add_subcommand("synth", "Write a small synthetic input set with a ready-to-run config");
    std::string synth_dir;
    synth->add_option("dir", synth_dir, "Destination directory")->required();

    auto* init = app.add_subcommand("init-config", "Write a commented configuration template with all defaults");
    std::string init_path;
    init->add_option("path", init_path, "Destination file")->required();

    CLI11_PARSE(app, argc, argv);
    if (jobs > 0) set_default_jobs(jobs);
    auto log = [](const std::string& m) { std::cerr << "surfmap " << m << "\n"; };

    try {
        if (synth->parsed()) {
            const auto path = synthetic::write_inputs(synth_dir, seed.value_or(42));
            log("wrote synthetic inputs; config at " + path.string());
            return kOk;
        }
        if (init->parsed()) {
            write_text_file(init_path, config_template());
            return kOk;
        }
        PipelineConfig cfg = load_config(config_path);
        if (seed) cfg.seed = *seed;
        if (output) cfg.output = fs::absolute(*output).string();
        run_stages(cfg, selected, RunOptions{resume, log});
        return kOk;
    } catch (const ValidationFailure& e) {
        std::cerr << "surfmap: " << e.what() << "\n";
        return kValidation;
    } catch (const std::exception& e) {
        std::cerr << "surfmap: error: " << e.what() << "\n";
        return kIo;
    }
}
