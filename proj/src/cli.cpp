#include "cdam/cli.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cdam/csv_io.hpp"
#include "cdam/error.hpp"
#include "cdam/estimators.hpp"
#include "cdam/eval.hpp"
#include "cdam/heatmap.hpp"
#include "cdam/image_io.hpp"
#include "cdam/kernels.hpp"
#include "cdam/rng.hpp"
#include "cdam/verify.hpp"
#include "cdam/vtw.hpp"

namespace cdam {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Flag combinations that CLI11 cannot express; reported with the subcommand help.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string precision;
    unsigned jobs = 1;
    std::string manifest;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--precision", c.precision, "Compute precision (default: $CDAM_PRECISION, else f32)")
        ->check(CLI::IsMember({"f32", "f64"}));
    sub->add_option("--jobs", c.jobs, "Worker threads; results do not depend on this")->check(CLI::PositiveNumber);
    sub->add_option("--manifest", c.manifest, "Manifest path (default: <primary output>.manifest.json)");
}

Precision resolve_precision(const Common& c) {
    if (c.precision == "f64") return Precision::F64;
    if (c.precision == "f32") return Precision::F32;
    return precision_from_env(Precision::F32);
}

std::vector<double> parse_double_list(const std::string& text, const char* flag) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError(std::string(flag) + ": '" + item + "' is not a number");
        }
    }
    if (out.empty()) throw UsageError(std::string(flag) + " must list at least one value");
    return out;
}

std::vector<std::size_t> parse_size_list(const std::string& text, const char* flag) {
    std::vector<std::size_t> out;
    for (double v : parse_double_list(text, flag)) {
        if (v < 1 || v != static_cast<double>(static_cast<std::size_t>(v))) {
            throw UsageError(std::string(flag) + " values must be positive integers");
        }
        out.push_back(static_cast<std::size_t>(v));
    }
    return out;
}

struct Manifest {
    std::string command;
    std::vector<std::string> argv;
    Precision precision = Precision::F32;
    json parameters = json::object();
    json inputs = json::object();
    std::vector<std::string> outputs;

    void write(const std::string& path) const {
        json j;
        j["tool"] = "cdam";
        j["version"] = kToolVersion;
        j["command"] = command;
        j["argv"] = argv;
        j["precision"] = precision == Precision::F64 ? "f64" : "f32";
        j["parameters"] = parameters;
        j["inputs"] = inputs;
        j["outputs"] = outputs;
        write_text_file(path, j.dump(2) + "\n");
    }
};

std::string manifest_path(const Common& c, const std::string& primary) {
    return c.manifest.empty() ? primary + ".manifest.json" : c.manifest;
}

ResizeMode resize_mode(bool resize) { return resize ? ResizeMode::bilinear : ResizeMode::exact; }

std::vector<fs::path> concept_images(const std::string& dir, std::size_t n_examples) {
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) fail(Errc::io, "concept directory '" + dir + "' does not exist");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        auto ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
        if (entry.is_regular_file() && ext == ".png") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
    if (files.empty()) fail(Errc::io, "concept directory '" + dir + "' contains no PNG files");
    if (n_examples > 0) {
        if (n_examples > files.size()) {
            fail(Errc::invalid_argument, "--n-examples " + std::to_string(n_examples) + " exceeds the " +
                                             std::to_string(files.size()) + " PNGs in '" + dir + "'");
        }
        files.resize(n_examples);
    }
    return files;
}

ConceptVector build_concept(const ViTModel& model, const std::vector<fs::path>& files, bool resize, unsigned jobs) {
    std::vector<Tensor> images;
    images.reserve(files.size());
    for (const auto& f : files) images.push_back(load_image(f, model.config, model.preprocess, resize_mode(resize)));
    return concept_embedding(model, images, jobs);
}

void write_concept_vector(const std::string& path, const Tensor& v) {
    CsvTable t;
    t.header = {"dim", "value"};
    for (std::size_t i = 0; i < v.size(); ++i) t.rows.push_back({std::to_string(i), format_number(v[i])});
    write_csv(path, t);
}

Tensor read_concept_vector(const std::string& path, std::size_t d_model) {
    const CsvTable t = read_csv(path);
    if (t.header != std::vector<std::string>{"dim", "value"}) fail(Errc::parse, path + ": header must be 'dim,value'");
    if (t.rows.size() != d_model) {
        fail(Errc::shape_mismatch, path + ": concept vector has " + std::to_string(t.rows.size()) +
                                       " entries, model d_model is " + std::to_string(d_model));
    }
    Tensor v({d_model});
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const double dim = parse_number(t.rows[i][0], path, t.lines[i], "dim");
        if (dim != static_cast<double>(i)) fail(Errc::validation, path + ":" + std::to_string(t.lines[i]) + ": dims must run 0.." + std::to_string(d_model - 1) + " in order");
        v[i] = parse_number(t.rows[i][1], path, t.lines[i], "value");
    }
    return v;
}

// ---------------------------------------------------------------- explain

struct ExplainArgs {
    Common common;
    std::string model, image, concept_dir, concept_vector, method = "vanilla", site, metric, out_csv, out_png,
        out_variance, upsample = "nearest";
    std::size_t cls = 0, n_examples = 0, steps = 50;
    double sigma = -1.0;
    std::uint64_t seed = 0;
    bool resize = false, print_cls = false;
    CLI::Option *cls_opt = nullptr, *concept_dir_opt = nullptr, *concept_vec_opt = nullptr, *metric_opt = nullptr,
                *n_examples_opt = nullptr, *sigma_opt = nullptr, *steps_opt = nullptr, *seed_opt = nullptr,
                *site_opt = nullptr, *variance_opt = nullptr;
};

void setup_explain(CLI::App& app, ExplainArgs& a) {
    auto* s = app.add_subcommand("explain", "Compute a CDAM or attention score map for one image");
    s->add_option("--model", a.model, "VTW weight file")->required();
    s->add_option("--image", a.image, "8-bit RGB PNG")->required();
    a.cls_opt = s->add_option("--class", a.cls, "Target class index");
    a.concept_dir_opt = s->add_option("--concept-dir", a.concept_dir, "Directory of PNGs defining a concept");
    a.concept_vec_opt = s->add_option("--concept-vector", a.concept_vector, "Concept vector CSV from 'cdam concept'");
    a.metric_opt = s->add_option("--metric", a.metric, "Concept similarity: dot, cosine or l2 (default dot)")
                       ->check(CLI::IsMember({"dot", "cosine", "l2"}));
    a.n_examples_opt = s->add_option("--n-examples", a.n_examples, "Use the first n PNGs (by filename) of --concept-dir")
                           ->check(CLI::PositiveNumber);
    s->add_option("--method", a.method, "vanilla, smooth, integrated or attention")
        ->check(CLI::IsMember({"vanilla", "smooth", "integrated", "attention"}));
    a.site_opt = s->add_option("--site", a.site, "block-input or post-ln1 (default: post-ln1 for vanilla, block-input otherwise)")
                     ->check(CLI::IsMember({"block-input", "post-ln1"}));
    a.sigma_opt = s->add_option("--sigma", a.sigma, "Smooth: noise std (default 0.1 x std of the site activations)")
                      ->check(CLI::NonNegativeNumber);
    a.steps_opt = s->add_option("--steps", a.steps, "Smooth/integrated: number of samples or path steps (default 50)")
                      ->check(CLI::PositiveNumber);
    a.seed_opt = s->add_option("--seed", a.seed, "Smooth: noise seed (default 0)");
    s->add_option("--out-csv", a.out_csv, "Score map CSV (row,col,score)")->required();
    s->add_option("--out-png", a.out_png, "Rendered heat map");
    a.variance_opt = s->add_option("--out-variance", a.out_variance, "Smooth: per-token variance CSV (row,col,variance)");
    s->add_option("--upsample", a.upsample, "Heat map upsampling: nearest or bilinear")
        ->check(CLI::IsMember({"nearest", "bilinear"}));
    s->add_flag("--resize", a.resize, "Bilinearly resize images to the model size instead of requiring it");
    s->add_flag("--print-cls", a.print_cls, "Print the CLS token score (never part of the grid)");
    add_common(s, a.common);
}

void check_explain_flags(const ExplainArgs& a) {
    const bool has_class = a.cls_opt->count() > 0;
    const bool has_concept = a.concept_dir_opt->count() > 0 || a.concept_vec_opt->count() > 0;
    if (a.concept_dir_opt->count() > 0 && a.concept_vec_opt->count() > 0) {
        throw UsageError("--concept-dir and --concept-vector are mutually exclusive");
    }
    if (a.method == "attention") {
        if (has_class || has_concept) throw UsageError("--method attention takes no --class or concept target");
        if (a.site_opt->count() > 0) throw UsageError("--site does not apply to --method attention");
    } else {
        if (!has_class && !has_concept) throw UsageError("one of --class or --concept-dir/--concept-vector is required");
        if (has_class && has_concept) throw UsageError("--class and a concept target are mutually exclusive");
    }
    if (!has_concept && a.metric_opt->count() > 0) throw UsageError("--metric requires a concept target");
    if (a.concept_dir_opt->count() == 0 && a.n_examples_opt->count() > 0) throw UsageError("--n-examples requires --concept-dir");
    if (a.method != "smooth") {
        if (a.sigma_opt->count() > 0) throw UsageError("--sigma applies only to --method smooth");
        if (a.seed_opt->count() > 0) throw UsageError("--seed applies only to --method smooth");
        if (a.variance_opt->count() > 0) throw UsageError("--out-variance applies only to --method smooth");
    }
    if (a.method != "smooth" && a.method != "integrated" && a.steps_opt->count() > 0) {
        throw UsageError("--steps applies only to --method smooth or integrated");
    }
}

int cmd_explain(const ExplainArgs& a, Manifest& m, std::ostream& out) {
    check_explain_flags(a);
    const ViTModel model = load_weights(a.model);
    const Tensor image = load_image(a.image, model.config, model.preprocess, resize_mode(a.resize));
    const ForwardTrace trace = forward(model, image);
    const UpsampleMode up = parse_upsample_mode(a.upsample);

    m.inputs["model"] = a.model;
    m.inputs["image"] = a.image;
    m.parameters["method"] = a.method;
    m.parameters["resize"] = a.resize;

    std::optional<GradTarget> target;
    if (a.cls_opt->count() > 0) {
        target = ClassLogit{a.cls};
        m.parameters["class"] = a.cls;
    } else if (a.method != "attention") {
        const Metric metric = a.metric.empty() ? Metric::dot : parse_metric(a.metric);
        Tensor lc;
        if (a.concept_dir_opt->count() > 0) {
            const auto files = concept_images(a.concept_dir, a.n_examples);
            lc = build_concept(model, files, a.resize, a.common.jobs).latent;
            json names = json::array();
            for (const auto& f : files) names.push_back(f.filename().string());
            m.inputs["concept_dir"] = a.concept_dir;
            m.inputs["concept_images"] = names;
        } else {
            lc = read_concept_vector(a.concept_vector, model.config.d_model);
            m.inputs["concept_vector"] = a.concept_vector;
        }
        target = ConceptSim{lc, metric};
        m.parameters["metric"] = metric_name(metric);
    }

    ScoreMap map;
    Tensor variance;
    if (a.method == "attention") {
        map = attention_map(model, trace);
    } else {
        const ActivationSite site = !a.site.empty() ? parse_site(a.site)
                                    : a.method == "vanilla" ? ActivationSite::post_ln1
                                                            : ActivationSite::block_input;
        m.parameters["site"] = site_name(site);
        if (a.method == "vanilla") {
            map = cdam(model, trace, *target, site);
        } else if (a.method == "smooth") {
            SmoothOptions opt;
            opt.sigma = a.sigma;
            opt.n = a.steps;
            opt.seed = a.seed;
            opt.site = site;
            opt.jobs = a.common.jobs;
            const double sigma = a.sigma < 0.0 ? default_smooth_sigma(trace.at(site)) : a.sigma;
            m.parameters["sigma"] = sigma;
            m.parameters["n"] = a.steps;
            m.parameters["seed"] = a.seed;
            opt.sigma = sigma;
            map = smooth_cdam(model, trace, *target, opt, a.out_variance.empty() ? nullptr : &variance);
        } else {
            map = integrated_cdam(model, trace, *target, a.steps, site, a.common.jobs);
            m.parameters["n"] = a.steps;
        }
    }

    write_scoremap(a.out_csv, map);
    m.outputs.push_back(a.out_csv);
    if (!a.out_variance.empty()) {
        const ScoreMap vmap = score_map_from_tokens(model.config, variance);
        std::string text = format_scoremap(vmap);
        text.replace(0, text.find('\n'), "row,col,variance");
        write_text_file(a.out_variance, text);
        m.outputs.push_back(a.out_variance);
    }
    if (!a.out_png.empty()) {
        const auto s = model.config.image_size;
        render_heatmap(upsample(map, s, s, up), HeatmapStyle{}, a.out_png);
        m.parameters["upsample"] = upsample_mode_name(up);
        m.outputs.push_back(a.out_png);
    }
    if (a.print_cls) out << "cls_score," << format_number(map.cls_score()) << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------- concept

struct ConceptArgs {
    Common common;
    std::string model, concept_dir, out;
    std::size_t n_examples = 0;
    bool resize = false;
};

void setup_concept(CLI::App& app, ConceptArgs& a) {
    auto* s = app.add_subcommand("concept", "Build a concept vector (mean CLS latent) from a directory of PNGs");
    s->add_option("--model", a.model, "VTW weight file")->required();
    s->add_option("--concept-dir", a.concept_dir, "Directory of PNGs, used in filename order")->required();
    s->add_option("--n-examples", a.n_examples, "Use only the first n PNGs")->check(CLI::PositiveNumber);
    s->add_option("--out", a.out, "Concept vector CSV (dim,value)")->required();
    s->add_flag("--resize", a.resize, "Bilinearly resize images to the model size");
    add_common(s, a.common);
}

int cmd_concept(const ConceptArgs& a, Manifest& m, std::ostream&) {
    const ViTModel model = load_weights(a.model);
    const auto files = concept_images(a.concept_dir, a.n_examples);
    const ConceptVector cv = build_concept(model, files, a.resize, a.common.jobs);
    write_concept_vector(a.out, cv.latent);
    json names = json::array();
    for (const auto& f : files) names.push_back(f.filename().string());
    m.inputs["model"] = a.model;
    m.inputs["concept_dir"] = a.concept_dir;
    m.inputs["concept_images"] = names;
    m.parameters["n_examples"] = cv.n_examples;
    m.parameters["resize"] = a.resize;
    m.outputs.push_back(a.out);
    return kExitOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
    Common common;
    std::string model, image, map, map_wrong, grid, sizes, upsample = "nearest", estimator, out;
    std::size_t target = 0, trials = kBoxTrials;
    std::uint64_t seed = 0;
    double threshold = kCompactnessThreshold;
    bool resize = false;
};

struct EvalCommands {
    CLI::App *fidelity = nullptr, *box = nullptr, *classdisc = nullptr, *compact = nullptr;
};

void setup_eval(CLI::App& app, EvalArgs& a, EvalCommands& cmds) {
    auto* e = app.add_subcommand("eval", "Evaluate a score map (fidelity, box, classdisc, compact)");
    e->require_subcommand(1);
    auto add_map = [&](CLI::App* s) {
        s->add_option("--model", a.model, "VTW weight file (geometry and classifier)")->required();
        s->add_option("--map", a.map, "Score map CSV (row,col,score)")->required();
        s->add_option("--upsample", a.upsample, "Token-to-pixel upsampling: nearest or bilinear")
            ->check(CLI::IsMember({"nearest", "bilinear"}));
        s->add_option("--estimator", a.estimator, "Label for the summary row (default: map file stem)");
        s->add_option("--out", a.out, "Output prefix")->required();
        add_common(s, a.common);
    };
    auto add_image = [&](CLI::App* s) {
        s->add_option("--image", a.image, "8-bit RGB PNG")->required();
        s->add_option("--target-class", a.target, "Logit recorded under perturbation")->required();
        s->add_flag("--resize", a.resize, "Bilinearly resize the image to the model size");
    };
    auto add_grid = [&](CLI::App* s) {
        s->add_option("--grid", a.grid, "Comma-separated perturbation percents, 0 first and 100 last (default 0,2,...,100)");
    };
    auto add_box = [&](CLI::App* s) {
        s->add_option("--sizes", a.sizes, "Comma-separated box sizes in pixels (default: 7 sizes, image/14 steps)");
        s->add_option("--trials", a.trials, "Boxes per size")->check(CLI::Range(2, 1000000));
        s->add_option("--seed", a.seed, "Box placement seed");
    };
    cmds.fidelity = e->add_subcommand("fidelity", "MIF/LIF perturbation curves and areas");
    add_map(cmds.fidelity);
    add_image(cmds.fidelity);
    add_grid(cmds.fidelity);
    cmds.box = e->add_subcommand("box", "Box sensitivity curve and area");
    add_map(cmds.box);
    add_image(cmds.box);
    add_box(cmds.box);
    cmds.classdisc = e->add_subcommand("classdisc", "Class discrimination against a wrong-class map");
    add_map(cmds.classdisc);
    add_image(cmds.classdisc);
    cmds.classdisc->add_option("--map-wrong", a.map_wrong, "Score map CSV for a wrong target")->required();
    add_grid(cmds.classdisc);
    add_box(cmds.classdisc);
    cmds.compact = e->add_subcommand("compact", "Fraction of near-zero pixel scores");
    add_map(cmds.compact);
    cmds.compact->add_option("--threshold", a.threshold, "Relative threshold t")->check(CLI::Range(0.0, 1.0));
}

struct EvalContext {
    ViTModel model;
    Tensor image, blurred;
    PixelMap map;
};

PixelMap load_pixel_map(const std::string& path, const ViTConfig& c, UpsampleMode up) {
    const ScoreMap s = read_scoremap(path, c.grid_size(), c.grid_size());
    return upsample(s, c.image_size, c.image_size, up);
}

CsvTable summary_table(const EvalArgs& a, std::vector<std::string> columns, const std::vector<double>& values) {
    CsvTable t;
    t.header = {"image", "estimator"};
    t.header.insert(t.header.end(), columns.begin(), columns.end());
    std::vector<std::string> row = {a.image.empty() ? "-" : fs::path(a.image).filename().string(),
                                    a.estimator.empty() ? fs::path(a.map).stem().string() : a.estimator};
    for (double v : values) row.push_back(format_number(v));
    t.rows.push_back(std::move(row));
    t.lines.push_back(2);
    return t;
}

int cmd_eval(const EvalArgs& a, const EvalCommands& cmds, Manifest& m, std::ostream& out) {
    const ViTModel model = load_weights(a.model);
    const ViTConfig& c = model.config;
    const UpsampleMode up = parse_upsample_mode(a.upsample);
    const PixelMap map = load_pixel_map(a.map, c, up);
    m.inputs["model"] = a.model;
    m.inputs["map"] = a.map;
    m.parameters["upsample"] = upsample_mode_name(up);
    const std::string summary_path = a.out + ".summary.csv";

    if (cmds.compact->parsed()) {
        m.command = "eval compact";
        const auto r = compactness(map, a.threshold);
        m.parameters["threshold"] = a.threshold;
        const auto t = summary_table(a, {"compactness", "degenerate"}, {r.fraction, r.degenerate ? 1.0 : 0.0});
        write_csv(summary_path, t);
        m.outputs.push_back(summary_path);
        out << format_csv(t);
        return kExitOk;
    }

    if (!model.has_head()) fail(Errc::no_head, "evaluation needs a model with a classifier head");
    if (a.target >= c.n_classes) {
        fail(Errc::invalid_argument, "--target-class " + std::to_string(a.target) + " out of range (" +
                                         std::to_string(c.n_classes) + " classes)");
    }
    const Tensor image = load_image(a.image, c, model.preprocess, resize_mode(a.resize));
    const Tensor blurred = gaussian_blur(image, kPerturbationBlurSigma);
    const Classifier clf = vit_classifier(model);
    m.inputs["image"] = a.image;
    m.parameters["target_class"] = a.target;
    m.parameters["resize"] = a.resize;
    m.parameters["blur_sigma"] = kPerturbationBlurSigma;

    const std::vector<double> grid = a.grid.empty() ? default_fraction_grid() : parse_double_list(a.grid, "--grid");
    const std::vector<std::size_t> sizes = a.sizes.empty() ? default_box_sizes(c.image_size) : parse_size_list(a.sizes, "--sizes");

    CsvTable summary;
    if (cmds.fidelity->parsed()) {
        m.command = "eval fidelity";
        m.parameters["grid"] = grid;
        const auto mif = perturbation_curve(clf, image, blurred, map, RankOrder::mif, a.target, grid, a.common.jobs);
        const auto lif = perturbation_curve(clf, image, blurred, map, RankOrder::lif, a.target, grid, a.common.jobs);
        const auto f = fidelity(mif, lif);
        const std::string curve_path = a.out + ".curve.csv";
        write_curve_csv(curve_path, {{"percent", grid}, {"mif", mif.logits}, {"lif", lif.logits}});
        m.outputs.push_back(curve_path);
        const double end_mif = mif.logits.back(), end_lif = lif.logits.back();
        summary = summary_table(a, {"a_mif", "a_lif", "a_lif_mif", "f_mif_100", "f_lif_100", "endpoint_equal"},
                                {f.a_mif, f.a_lif, f.a_lif_mif, end_mif, end_lif, end_mif == end_lif ? 1.0 : 0.0});
    } else if (cmds.box->parsed()) {
        m.command = "eval box";
        m.parameters["sizes"] = sizes;
        m.parameters["trials"] = a.trials;
        m.parameters["seed"] = a.seed;
        const auto b = box_sensitivity(clf, image, blurred, map, a.target, sizes, a.trials, a.seed, a.common.jobs);
        const std::string curve_path = a.out + ".curve.csv";
        std::vector<double> sz(sizes.begin(), sizes.end()), deg(b.degenerate_counts.begin(), b.degenerate_counts.end());
        write_curve_csv(curve_path, {{"size", sz}, {"correlation", b.correlations}, {"degenerate", deg}});
        m.outputs.push_back(curve_path);
        double n_deg = 0;
        for (double d : deg) n_deg += d;
        summary = summary_table(a, {"a_box", "degenerate_sizes"}, {box_area(b), n_deg});
    } else {
        m.command = "eval classdisc";
        m.inputs["map_wrong"] = a.map_wrong;
        m.parameters["grid"] = grid;
        m.parameters["sizes"] = sizes;
        m.parameters["trials"] = a.trials;
        m.parameters["seed"] = a.seed;
        const PixelMap wrong = load_pixel_map(a.map_wrong, c, up);
        ClassDiscriminationOptions opt;
        opt.fractions = grid;
        opt.sizes = sizes;
        opt.trials = a.trials;
        opt.seed = a.seed;
        opt.jobs = a.common.jobs;
        const auto r = class_discrimination(clf, image, blurred, map, wrong, a.target, opt);
        const std::string fid_path = a.out + ".fidelity.csv", box_path = a.out + ".box.csv";
        write_curve_csv(fid_path, {{"percent", grid},
                                   {"mif", r.mif.logits},
                                   {"lif", r.lif.logits},
                                   {"mif_wrong", r.mif_wrong.logits},
                                   {"lif_wrong", r.lif_wrong.logits},
                                   {"delta", r.delta_fidelity_curve}});
        std::vector<double> sz(sizes.begin(), sizes.end());
        write_curve_csv(box_path, {{"size", sz},
                                   {"box", r.box_correct.correlations},
                                   {"box_wrong", r.box_wrong.correlations},
                                   {"delta", r.delta_box_curve}});
        m.outputs.push_back(fid_path);
        m.outputs.push_back(box_path);
        summary = summary_table(a, {"a_lif_mif", "a_lif_mif_wrong", "delta_lif_mif", "a_box", "a_box_wrong", "delta_box"},
                                {r.fidelity_correct.a_lif_mif, r.fidelity_wrong.a_lif_mif, r.delta_fidelity,
                                 box_area(r.box_correct), box_area(r.box_wrong), r.delta_box});
    }
    write_csv(summary_path, summary);
    m.outputs.push_back(summary_path);
    out << format_csv(summary);
    return kExitOk;
}

// ---------------------------------------------------------------- aggregate

struct AggregateArgs {
    Common common;
    std::vector<std::string> inputs;
    std::string out;
};

void setup_aggregate(CLI::App& app, AggregateArgs& a) {
    auto* s = app.add_subcommand("aggregate", "Average summary or curve CSVs over images");
    s->add_option("inputs", a.inputs, "Summary or curve CSVs with identical headers")->required();
    s->add_option("--out", a.out, "Aggregated CSV")->required();
    add_common(s, a.common);
}

// Rows are grouped by their key columns ("estimator", and a leading "percent"
// or "size" column for curves); "image" is dropped; every other column is
// averaged. Groups keep first-appearance order.
CsvTable aggregate_tables(const std::vector<CsvTable>& tables, const std::vector<std::string>& sources) {
    const auto& header = tables.front().header;
    for (std::size_t i = 1; i < tables.size(); ++i) {
        if (tables[i].header != header) fail(Errc::validation, sources[i] + ": header differs from " + sources[0]);
    }
    std::vector<std::size_t> keys, values;
    for (std::size_t j = 0; j < header.size(); ++j) {
        const auto& h = header[j];
        if (h == "image") continue;
        if (h == "estimator" || (j == 0 && (h == "percent" || h == "size"))) {
            keys.push_back(j);
        } else {
            values.push_back(j);
        }
    }
    struct Group {
        std::vector<std::string> key;
        std::vector<double> sums;
        std::size_t count = 0;
    };
    std::vector<Group> groups;
    for (std::size_t t = 0; t < tables.size(); ++t) {
        for (std::size_t r = 0; r < tables[t].rows.size(); ++r) {
            const auto& row = tables[t].rows[r];
            std::vector<std::string> key;
            for (auto j : keys) key.push_back(row[j]);
            auto it = std::find_if(groups.begin(), groups.end(), [&](const Group& g) { return g.key == key; });
            if (it == groups.end()) {
                groups.push_back({key, std::vector<double>(values.size(), 0.0), 0});
                it = groups.end() - 1;
            }
            for (std::size_t v = 0; v < values.size(); ++v) {
                it->sums[v] += parse_number(row[values[v]], sources[t], tables[t].lines[r], header[values[v]]);
            }
            ++it->count;
        }
    }
    CsvTable out;
    for (auto j : keys) out.header.push_back(header[j]);
    for (auto j : values) out.header.push_back(header[j]);
    out.header.push_back("count");
    for (const auto& g : groups) {
        std::vector<std::string> row = g.key;
        for (double s : g.sums) row.push_back(format_number(s / static_cast<double>(g.count)));
        row.push_back(std::to_string(g.count));
        out.rows.push_back(std::move(row));
        out.lines.push_back(out.rows.size() + 1);
    }
    return out;
}

int cmd_aggregate(const AggregateArgs& a, Manifest& m, std::ostream&) {
    std::vector<CsvTable> tables;
    for (const auto& p : a.inputs) tables.push_back(read_csv(p));
    write_csv(a.out, aggregate_tables(tables, a.inputs));
    m.inputs["files"] = a.inputs;
    m.outputs.push_back(a.out);
    return kExitOk;
}

// ---------------------------------------------------------------- render

struct RenderArgs {
    Common common;
    std::string model, map, out, upsample = "nearest";
    std::size_t grid = 0, size = 0;
    CLI::Option *model_opt = nullptr, *grid_opt = nullptr, *size_opt = nullptr;
};

void setup_render(CLI::App& app, RenderArgs& a) {
    auto* s = app.add_subcommand("render", "Render a score map CSV as a heat map PNG");
    s->add_option("--map", a.map, "Score map CSV")->required();
    a.model_opt = s->add_option("--model", a.model, "Take grid and image size from this model");
    a.grid_opt = s->add_option("--grid", a.grid, "Patch grid side (without --model)")->check(CLI::PositiveNumber);
    a.size_opt = s->add_option("--size", a.size, "Output side in pixels (default: model image size, else grid)")
                     ->check(CLI::PositiveNumber);
    s->add_option("--upsample", a.upsample, "nearest or bilinear")->check(CLI::IsMember({"nearest", "bilinear"}));
    s->add_option("--out", a.out, "Output PNG")->required();
    add_common(s, a.common);
}

int cmd_render(const RenderArgs& a, Manifest& m, std::ostream&) {
    if ((a.model_opt->count() > 0) == (a.grid_opt->count() > 0)) throw UsageError("give exactly one of --model or --grid");
    std::size_t grid = a.grid, size = a.size;
    if (a.model_opt->count() > 0) {
        const ViTModel model = load_weights(a.model);
        grid = model.config.grid_size();
        if (size == 0) size = model.config.image_size;
        m.inputs["model"] = a.model;
    } else if (size == 0) {
        size = grid;
    }
    const UpsampleMode up = parse_upsample_mode(a.upsample);
    const ScoreMap map = read_scoremap(a.map, grid, grid);
    render_heatmap(upsample(map, size, size, up), HeatmapStyle{}, a.out);
    m.inputs["map"] = a.map;
    m.parameters["grid"] = grid;
    m.parameters["size"] = size;
    m.parameters["upsample"] = upsample_mode_name(up);
    m.outputs.push_back(a.out);
    return kExitOk;
}

// ---------------------------------------------------------------- verify

struct VerifyArgs {
    std::string model;
    bool full = false;
};

void setup_verify(CLI::App& app, VerifyArgs& a) {
    auto* s = app.add_subcommand("verify", "Run the built-in property suite");
    s->add_option("--model", a.model, "Also check this weight file's forward and gradient path");
    s->add_flag("--full", a.full, "Add the n=256 integrated-gradients completeness check");
}

int cmd_verify(const VerifyArgs& a, std::ostream& out) {
    std::optional<ViTModel> model;
    if (!a.model.empty()) model = load_weights(a.model);
    VerifyOptions opt;
    opt.model = model ? &*model : nullptr;
    opt.full = a.full;
    const auto results = run_verify(opt);
    bool ok = true;
    for (const auto& r : results) {
        out << (r.passed ? "PASS  " : "FAIL  ") << r.name << "  " << r.detail << "\n";
        ok = ok && r.passed;
    }
    return ok ? kExitOk : kExitCheckFailed;
}

// ---------------------------------------------------------------- synth

struct SynthModelArgs {
    Common common;
    std::string out, tail_mode = "standard";
    ViTConfig config = tiny_config();
    std::uint64_t seed = 0;
};

void setup_synth_model(CLI::App& app, SynthModelArgs& a) {
    auto* s = app.add_subcommand("synth-model", "Write a randomly initialised model (tiny config by default)");
    s->add_option("--out", a.out, "Output VTW file")->required();
    s->add_option("--seed", a.seed, "Initialisation seed");
    s->add_option("--image-size", a.config.image_size, "Image side in pixels")->check(CLI::PositiveNumber);
    s->add_option("--patch-size", a.config.patch_size, "Patch side in pixels")->check(CLI::PositiveNumber);
    s->add_option("--d-model", a.config.d_model, "Embedding width")->check(CLI::PositiveNumber);
    s->add_option("--heads", a.config.n_heads, "Attention heads")->check(CLI::PositiveNumber);
    s->add_option("--blocks", a.config.n_blocks, "Transformer blocks")->check(CLI::PositiveNumber);
    s->add_option("--d-mlp", a.config.d_mlp, "MLP hidden width")->check(CLI::PositiveNumber);
    s->add_option("--classes", a.config.n_classes, "0 for a headless model");
    s->add_option("--registers", a.config.n_registers, "Register tokens");
    s->add_option("--tail-mode", a.tail_mode, "Last-block tail: standard, linear_pool or detached_identity")->check(CLI::IsMember({"standard", "linear_pool", "detached_identity"}));
    add_common(s, a.common);
}

int cmd_synth_model(const SynthModelArgs& a, Manifest& m, std::ostream&) {
    ViTConfig c = a.config;
    c.tail_mode = parse_tail_mode(a.tail_mode);
    c.validate();
    write_weights(random_model(c, a.seed), a.out);
    m.parameters["seed"] = a.seed;
    m.outputs.push_back(a.out);
    return kExitOk;
}

struct SynthImageArgs {
    Common common;
    std::string out;
    std::size_t size = 16;
    std::uint64_t seed = 0;
};

void setup_synth_image(CLI::App& app, SynthImageArgs& a) {
    auto* s = app.add_subcommand("synth-image", "Write a uniform-noise RGB PNG");
    s->add_option("--out", a.out, "Output PNG")->required();
    s->add_option("--size", a.size, "Side in pixels")->check(CLI::PositiveNumber);
    s->add_option("--seed", a.seed, "Noise seed");
    add_common(s, a.common);
}

int cmd_synth_image(const SynthImageArgs& a, Manifest& m, std::ostream&) {
    SeededRng rng(a.seed);
    RgbImage img;
    img.width = img.height = a.size;
    img.pixels.resize(a.size * a.size * 3);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_below(256));
    write_png(a.out, img);
    m.parameters["size"] = a.size;
    m.parameters["seed"] = a.seed;
    m.outputs.push_back(a.out);
    return kExitOk;
}

// ---------------------------------------------------------------- replay

struct ReplayArgs {
    std::string manifest;
};

void setup_replay(CLI::App& app, ReplayArgs& a) {
    auto* s = app.add_subcommand("replay", "Re-run the invocation recorded in a manifest");
    s->add_option("manifest", a.manifest, "Manifest JSON")->required();
}

std::vector<std::string> replay_argv(const std::string& path) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        fail(Errc::parse, path + ": not a valid manifest: " + e.what());
    }
    if (!j.is_object() || j.value("tool", "") != "cdam" || !j.contains("argv") || !j["argv"].is_array()) {
        fail(Errc::parse, path + ": not a cdam manifest");
    }
    std::vector<std::string> argv;
    for (const auto& v : j["argv"]) {
        if (!v.is_string()) fail(Errc::parse, path + ": argv entries must be strings");
        argv.push_back(v.get<std::string>());
    }
    if (argv.empty() || argv[0] == "replay") fail(Errc::parse, path + ": manifest has no replayable command");
    const std::string precision = j.value("precision", "f32");
    if (std::find(argv.begin(), argv.end(), "--precision") == argv.end()) {
        argv.push_back("--precision");
        argv.push_back(precision);
    }
    return argv;
}

int report_error(std::ostream& err, const Error& e) {
    err << "error (" << errc_name(e.code()) << "): " << e.what() << "\n";
    return exit_code(e.code());
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Class-discriminative attention maps for vision transformers"};
    app.name("cdam");
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    ExplainArgs explain;
    ConceptArgs concept_args;
    EvalArgs eval;
    EvalCommands eval_cmds;
    AggregateArgs aggregate;
    RenderArgs render;
    VerifyArgs verify;
    SynthModelArgs synth_model;
    SynthImageArgs synth_image;
    ReplayArgs replay;
    setup_explain(app, explain);
    setup_concept(app, concept_args);
    setup_eval(app, eval, eval_cmds);
    setup_aggregate(app, aggregate);
    setup_render(app, render);
    setup_verify(app, verify);
    setup_synth_model(app, synth_model);
    setup_synth_image(app, synth_image);
    setup_replay(app, replay);

    std::vector<std::string> storage;
    storage.reserve(args.size() + 1);
    storage.push_back("cdam");
    storage.insert(storage.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& s : storage) argv.push_back(s.data());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForVersion&) {
        out << kToolVersion << "\n";
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        const auto subs = app.get_subcommands();
        CLI::App* leaf = subs.empty() ? &app : subs.front();
        while (!leaf->get_subcommands().empty()) leaf = leaf->get_subcommands().front();
        err << leaf->help();
        return kExitUsage;
    }

    CLI::App* sub = app.get_subcommands().front();
    CLI::App* leaf = sub;
    while (!leaf->get_subcommands().empty()) leaf = leaf->get_subcommands().front();

    if (sub->get_name() == "replay") {
        try {
            return run_cli(replay_argv(replay.manifest), out, err);
        } catch (const Error& e) {
            return report_error(err, e);
        }
    }
    if (sub->get_name() == "verify") {
        try {
            return cmd_verify(verify, out);
        } catch (const Error& e) {
            return report_error(err, e);
        } catch (const std::exception& e) {
            err << "error: " << e.what() << "\n";
            return kExitCheckFailed;
        }
    }

    const Common* common = nullptr;
    if (sub->get_name() == "explain") common = &explain.common;
    else if (sub->get_name() == "concept") common = &concept_args.common;
    else if (sub->get_name() == "eval") common = &eval.common;
    else if (sub->get_name() == "aggregate") common = &aggregate.common;
    else if (sub->get_name() == "render") common = &render.common;
    else if (sub->get_name() == "synth-model") common = &synth_model.common;
    else common = &synth_image.common;

    Manifest manifest;
    manifest.command = sub->get_name();
    manifest.argv = args;
    manifest.precision = resolve_precision(*common);
    PrecisionScope scope(manifest.precision);

    try {
        int code = kExitOk;
        if (sub->get_name() == "explain") code = cmd_explain(explain, manifest, out);
        else if (sub->get_name() == "concept") code = cmd_concept(concept_args, manifest, out);
        else if (sub->get_name() == "eval") code = cmd_eval(eval, eval_cmds, manifest, out);
        else if (sub->get_name() == "aggregate") code = cmd_aggregate(aggregate, manifest, out);
        else if (sub->get_name() == "render") code = cmd_render(render, manifest, out);
        else if (sub->get_name() == "synth-model") code = cmd_synth_model(synth_model, manifest, out);
        else code = cmd_synth_image(synth_image, manifest, out);
        manifest.write(manifest_path(*common, manifest.outputs.front()));
        return code;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n" << leaf->help();
        return kExitUsage;
    } catch (const Error& e) {
        return report_error(err, e);
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return kExitCheckFailed;
    }
}

}  // namespace cdam
