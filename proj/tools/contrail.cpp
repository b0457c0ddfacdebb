#include "contrail/config.hpp"
#include "contrail/dataset.hpp"
#include "contrail/error.hpp"
#include "contrail/falsecolor.hpp"
#include "contrail/pipeline.hpp"
#include "contrail/synth.hpp"
#include "contrail/workflow.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace contrail;

namespace {

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::Io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw Error(Errc::Io, "cannot write " + path.string());
}

std::vector<dataset::RecordBundle> load_all(const fs::path& root, bool require_truth) {
    std::vector<dataset::RecordBundle> out;
    for (const auto& id : dataset::list_record_ids(root)) out.push_back(dataset::load_record(root / id, require_truth));
    if (out.empty()) throw Error(Errc::EmptyDataset, "no records under " + root.string());
    return out;
}

int cmd_render(const fs::path& input, const fs::path& out, std::optional<int> frame) {
    const auto cube = dataset::load_cube(input);
    const int f = frame.value_or(dataset::RecordBundle::labeled_frame_of(cube.frames()));
    const auto img = falsecolor::ash_rgb(cube, f);
    falsecolor::write_png(out, img);
    std::printf("wrote %s (%dx%d, frame %d)\n", out.string().c_str(), img.width, img.height, f);
    return 0;
}

int cmd_synth(const fs::path& spec_path, int n, const fs::path& out, std::optional<std::uint64_t> seed) {
    auto cfg = KeyValueConfig::load(spec_path);
    if (seed) cfg.set("seed", std::to_string(*seed));
    const auto spec = synth::SyntheticSceneSpec::from_config(cfg);
    for (int i = 0; i < n; ++i) dataset::save_record(out, synth::synth_record(spec, i));
    std::printf("wrote %d records to %s\n", n, out.string().c_str());
    return 0;
}

int cmd_train(const fs::path& config, const fs::path& data, const fs::path& out, std::optional<std::uint64_t> seed) {
    auto cfg = KeyValueConfig::load(config);
    if (seed) cfg.set("seed", std::to_string(*seed));
    const auto job = workflow::TrainJob::from_config(cfg);
    const auto records = load_all(data, true);
    const auto outcome = workflow::run_training(job, records, out);
    std::printf("trained on %zu records, validated on %zu\n", outcome.train_ids.size(), outcome.val_ids.size());
    std::fputs(workflow::history_csv(outcome.result.history).c_str(), stdout);
    return 0;
}

int cmd_predict(const std::vector<std::string>& model_dirs, const fs::path& data, double threshold,
                const fs::path& out) {
    std::vector<pipeline::TrainedModel> models;
    for (const auto& dir : model_dirs) models.push_back(pipeline::load_checkpoint(dir));
    std::vector<std::pair<std::string, mask::BitMask>> results;
    for (const auto& id : dataset::list_record_ids(data)) {
        const auto cube = dataset::load_cube(data / id);
        results.emplace_back(id, pipeline::predict_record(models, cube, dataset::RecordBundle::labeled_frame_of(cube.frames()),
                                                          threshold));
    }
    write_text(out, pipeline::write_submission(results));
    std::printf("wrote %zu rows to %s\n", results.size(), out.string().c_str());
    return 0;
}

int cmd_eval(const fs::path& pred, const fs::path& truth, const std::string& out) {
    const auto report = pipeline::evaluate_submission(read_text(pred), truth);
    const auto json = metrics::to_json(report);
    if (!out.empty()) write_text(out, json + "\n");
    std::printf("%s\n", json.c_str());
    return 0;
}

int cmd_validate_labels(const fs::path& data) {
    std::size_t checked = 0, failed = 0;
    for (const auto& id : dataset::list_record_ids(data)) {
        auto record = dataset::load_record(data / id);
        auto frames = record.frame_masks;
        if (frames.empty()) frames.push_back(record.truth);
        const auto tracks = mask::link_tracks(frames);
        for (std::size_t t = 0; t < tracks.size(); ++t) {
            const auto& track = tracks[t];
            std::optional<mask::BitMask> prior;
            const int first = track.frames.front().frame;
            if (first > 0) prior = frames[static_cast<std::size_t>(first - 1)];
            const auto rep = mask::validate_track(track, prior);
            ++checked;
            if (rep.valid()) continue;
            ++failed;
            std::printf("%s track %zu:%s%s%s%s\n", id.c_str(), t, rep.min_pixels_ok ? "" : " too-small",
                        rep.elongation_ok ? "" : " not-elongated", rep.entry_ok ? "" : " appeared-in-interior",
                        rep.persistence_ok ? "" : " single-frame");
        }
    }
    std::printf("%zu tracks checked, %zu violate the labeling rules\n", checked, failed);
    return failed == 0 ? 0 : 2;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Contrail segmentation toolkit"};
    app.require_subcommand(1);
    std::optional<std::uint64_t> seed;
    app.add_option("--seed", seed, "Override the seed of the config or spec file");

    fs::path input, out, spec, config, data, pred, truth;
    std::optional<int> frame;
    int n = 0;
    double threshold = 0.75;
    std::vector<std::string> model_dirs;
    std::string report_out;

    auto* render = app.add_subcommand("render", "Ash false-color PNG of one record");
    render->add_option("--input", input, "Record directory")->required();
    render->add_option("--out", out, "PNG path")->required();
    render->add_option("--frame", frame, "Frame index (default: labeled frame)");

    auto* synth = app.add_subcommand("synth", "Generate synthetic records");
    synth->add_option("--spec", spec, "Scene spec file")->required();
    synth->add_option("--n", n, "Number of records")->required()->check(CLI::NonNegativeNumber);
    synth->add_option("--out", out, "Output directory")->required();

    auto* train = app.add_subcommand("train", "Train one model");
    train->add_option("--config", config, "Training config file")->required();
    train->add_option("--data", data, "Record directory")->required();
    train->add_option("--out", out, "Checkpoint directory")->required();

    auto* predict = app.add_subcommand("predict", "Fused threshold inference to a submission CSV");
    predict->add_option("--models", model_dirs, "Checkpoint directories")->required()->delimiter(',');
    predict->add_option("--data", data, "Record directory")->required();
    predict->add_option("--threshold", threshold, "Probability threshold (strict)")->capture_default_str();
    predict->add_option("--out", out, "Submission path")->required();

    auto* eval = app.add_subcommand("eval", "Score a submission against labeled records");
    eval->add_option("--pred", pred, "Submission CSV")->required();
    eval->add_option("--truth", truth, "Record directory")->required();
    eval->add_option("--out", report_out, "Also write the JSON report here");

    auto* validate = app.add_subcommand("validate-labels", "Check labels against the contrail rules");
    validate->add_option("--data", data, "Record directory")->required();

    for (auto* sub : app.get_subcommands({})) sub->add_option("--seed", seed, "Override the seed");

    CLI11_PARSE(app, argc, argv);
    try {
        if (render->parsed()) return cmd_render(input, out, frame);
        if (synth->parsed()) return cmd_synth(spec, n, out, seed);
        if (train->parsed()) return cmd_train(config, data, out, seed);
        if (predict->parsed()) return cmd_predict(model_dirs, data, threshold, out);
        if (eval->parsed()) return cmd_eval(pred, truth, report_out);
        if (validate->parsed()) return cmd_validate_labels(data);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
