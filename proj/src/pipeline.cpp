#include "contrail/pipeline.hpp"

#include "contrail/dataset.hpp"
#include "contrail/error.hpp"
#include "contrail/npy.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace contrail::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string spread_mode_name(falsecolor::SpreadMode mode) {
    return mode == falsecolor::SpreadMode::Variance ? "variance" : "std";
}

falsecolor::SpreadMode parse_spread_mode(const std::string& name) {
    if (name == "std") return falsecolor::SpreadMode::StdDev;
    if (name == "variance") return falsecolor::SpreadMode::Variance;
    throw Error(Errc::BadConfig, "unknown spread mode '" + name + "'");
}

std::string param_file(std::size_t index, const std::string& name) {
    char prefix[16];
    std::snprintf(prefix, sizeof prefix, "p%03zu_", index);
    return prefix + name + ".npy";
}

void check_threshold(double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0))
        throw Error(Errc::BadConfig, "threshold must lie in (0, 1), got " + std::to_string(threshold));
}

} // namespace

void save_checkpoint(const fs::path& dir, const models::Model<float>& model,
                     const std::vector<falsecolor::InputChannel>& channels,
                     const std::vector<falsecolor::ChannelStats>& stats, falsecolor::SpreadMode mode) {
    if (channels.size() != stats.size())
        throw Error(Errc::ShapeMismatch, "one statistics entry is needed per input channel");
    fs::create_directories(dir);
    const auto& cfg = model.config();
    json manifest;
    manifest["architecture"] = models::to_string(cfg.architecture);
    manifest["in_channels"] = cfg.in_channels;
    manifest["base_width"] = cfg.base_width;
    manifest["depth"] = cfg.depth;
    manifest["num_classes"] = cfg.num_classes;
    manifest["spread_mode"] = spread_mode_name(mode);
    json inputs = json::array();
    for (std::size_t i = 0; i < channels.size(); ++i) {
        json c;
        c["band"] = channels[i].band.channel();
        c["minus"] = channels[i].minus ? json(channels[i].minus->channel()) : json(nullptr);
        c["mean"] = stats[i].mean;
        c["spread"] = stats[i].spread;
        inputs.push_back(c);
    }
    manifest["inputs"] = inputs;
    json params = json::array();
    const auto& ps = model.parameters();
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const auto& t = ps[i].tensor;
        npy::Shape shape(t.shape().begin(), t.shape().end());
        const auto file = param_file(i, ps[i].name);
        npy::save(dir / file, npy::DenseArray::f32(shape, {t.values().begin(), t.values().end()}));
        params.push_back({{"name", ps[i].name}, {"file", file}, {"shape", t.shape()}});
    }
    manifest["parameters"] = params;
    std::ofstream out(dir / "manifest.json");
    out << manifest.dump(2) << '\n';
    if (!out) throw Error(Errc::Io, "cannot write " + (dir / "manifest.json").string());
}

TrainedModel load_checkpoint(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw Error(Errc::Io, "cannot open " + (dir / "manifest.json").string());
    json manifest;
    try {
        manifest = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(Errc::BadConfig, "malformed manifest in " + dir.string() + ": " + e.what());
    }
    try {
        models::ModelConfig cfg;
        cfg.architecture = models::parse_architecture(manifest.at("architecture").get<std::string>());
        cfg.in_channels = manifest.at("in_channels").get<int>();
        cfg.base_width = manifest.at("base_width").get<int>();
        cfg.depth = manifest.at("depth").get<int>();
        cfg.num_classes = manifest.at("num_classes").get<int>();

        TrainedModel out;
        out.spread_mode = parse_spread_mode(manifest.at("spread_mode").get<std::string>());
        for (const auto& c : manifest.at("inputs")) {
            falsecolor::InputChannel ch{falsecolor::BandId::checked(c.at("band").get<int>()), std::nullopt};
            if (!c.at("minus").is_null()) ch.minus = falsecolor::BandId::checked(c.at("minus").get<int>());
            out.channels.push_back(ch);
            out.stats.push_back({c.at("mean").get<double>(), c.at("spread").get<double>()});
        }
        if (static_cast<int>(out.channels.size()) != cfg.in_channels)
            throw Error(Errc::BadConfig, "manifest lists a different number of inputs than in_channels");

        out.model = models::build_model<float>(cfg, 0);
        auto& ps = out.model->parameters();
        const auto& entries = manifest.at("parameters");
        if (entries.size() != ps.size())
            throw Error(Errc::ShapeMismatch, "checkpoint has " + std::to_string(entries.size()) +
                                                 " parameters, model expects " + std::to_string(ps.size()));
        for (std::size_t i = 0; i < ps.size(); ++i) {
            const auto& e = entries[i];
            if (e.at("name").get<std::string>() != ps[i].name)
                throw Error(Errc::ShapeMismatch, "parameter " + std::to_string(i) + " is '" +
                                                     e.at("name").get<std::string>() + "', expected '" + ps[i].name + "'");
            const auto arr = npy::load(dir / e.at("file").get<std::string>(), {.strict_finite = true});
            const auto& shape = ps[i].tensor.shape();
            if (arr.header().shape != npy::Shape(shape.begin(), shape.end()))
                throw Error(Errc::ShapeMismatch, "parameter '" + ps[i].name + "' has the wrong shape");
            const auto& vals = arr.as_f32();
            std::copy(vals.begin(), vals.end(), ps[i].tensor.values().begin());
        }
        return out;
    } catch (const json::exception& e) {
        throw Error(Errc::BadConfig, "malformed manifest in " + dir.string() + ": " + e.what());
    }
}

mask::BitMask fuse_probabilities(const std::vector<std::vector<float>>& maps, int height, int width,
                                 double threshold) {
    if (maps.empty()) throw Error(Errc::EmptyModelList, "fusion needs at least one model");
    check_threshold(threshold);
    const std::size_t n = static_cast<std::size_t>(height) * width;
    for (const auto& m : maps)
        if (m.size() != n) throw Error(Errc::ShapeMismatch, "probability map does not match the mask size");
    mask::BitMask out(height, width);
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (const auto& m : maps) sum += m[i];
        out.set_flat(i, sum / static_cast<double>(maps.size()) > threshold);
    }
    return out;
}

mask::BitMask predict_fused(const std::vector<const models::Model<float>*>& models, const ad::Tensor<float>& input,
                            double threshold) {
    if (models.empty()) throw Error(Errc::EmptyModelList, "fusion needs at least one model");
    if (input.rank() != 3) throw Error(Errc::ShapeMismatch, "expected a [C,H,W] input");
    const int h = input.dim(1), w = input.dim(2);
    const auto batch = ad::Tensor<float>::from({1, input.dim(0), h, w}, {input.values().begin(), input.values().end()});
    std::vector<std::vector<float>> maps;
    for (const auto* m : models) {
        const auto p = models::predict_probability(*m, batch);
        maps.emplace_back(p.values().begin(), p.values().end());
    }
    return fuse_probabilities(maps, h, w, threshold);
}

mask::BitMask predict_record(const std::vector<TrainedModel>& models, const falsecolor::BandCube& cube, int frame,
                             double threshold) {
    if (models.empty()) throw Error(Errc::EmptyModelList, "fusion needs at least one model");
    std::vector<std::vector<float>> maps;
    for (const auto& m : models) {
        const auto input = falsecolor::model_input_stack(cube, frame, m.stats, m.channels);
        const auto batch = ad::Tensor<float>::from({1, input.dim(0), input.dim(1), input.dim(2)},
                                                   {input.values().begin(), input.values().end()});
        const auto p = models::predict_probability(*m.model, batch);
        maps.emplace_back(p.values().begin(), p.values().end());
    }
    return fuse_probabilities(maps, cube.height(), cube.width(), threshold);
}

std::string write_submission(const std::vector<std::pair<std::string, mask::BitMask>>& results) {
    std::set<std::string> seen;
    std::string out = "record_id,encoded_pixels\n";
    for (const auto& [id, m] : results) {
        if (id.empty() || id.find_first_of(",\r\n") != std::string::npos)
            throw Error(Errc::BadConfig, "record id '" + id + "' is empty or contains a separator");
        if (!seen.insert(id).second) throw Error(Errc::DuplicateId, "duplicate record id '" + id + "'");
        const auto rle = mask::rle_encode(m);
        out += id + ',' + (rle.empty() ? "-" : rle) + '\n';
    }
    return out;
}

std::vector<SubmissionRow> parse_submission(std::string_view csv) {
    std::vector<SubmissionRow> rows;
    std::set<std::string> seen;
    std::istringstream in{std::string(csv)};
    std::string line;
    bool header = true;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (header) {
            if (line != "record_id,encoded_pixels")
                throw Error(Errc::MalformedRle, "submission must start with 'record_id,encoded_pixels'");
            header = false;
            continue;
        }
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos || comma == 0)
            throw Error(Errc::MalformedRle, "line " + std::to_string(line_no) + ": expected 'record_id,encoded_pixels'");
        SubmissionRow row{line.substr(0, comma), line.substr(comma + 1)};
        if (row.encoded_pixels == "-") row.encoded_pixels.clear();
        if (!seen.insert(row.record_id).second)
            throw Error(Errc::DuplicateId, "duplicate record id '" + row.record_id + "'");
        rows.push_back(std::move(row));
    }
    if (header) throw Error(Errc::MalformedRle, "submission is empty");
    return rows;
}

metrics::EvaluationReport evaluate_submission(const std::vector<SubmissionRow>& rows,
                                              const std::function<mask::BitMask(const std::string&)>& truth_of) {
    std::vector<const SubmissionRow*> order;
    for (const auto& r : rows) order.push_back(&r);
    std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->record_id < b->record_id; });
    std::vector<metrics::RecordScore> scores;
    for (const auto* r : order) {
        const auto truth = truth_of(r->record_id);
        const auto pred = mask::rle_decode(r->encoded_pixels, truth.height(), truth.width());
        scores.push_back({r->record_id, metrics::confusion(pred, truth)});
    }
    return metrics::make_report(std::move(scores));
}

metrics::EvaluationReport evaluate_submission(std::string_view csv, const fs::path& truth_dir) {
    return evaluate_submission(parse_submission(csv), [&](const std::string& id) {
        if (!fs::is_directory(truth_dir / id))
            throw Error(Errc::MissingTruth, "no truth record '" + id + "' under " + truth_dir.string());
        return dataset::load_truth(truth_dir / id);
    });
}

} // namespace contrail::pipeline
