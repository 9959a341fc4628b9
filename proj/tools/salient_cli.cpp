// salient: command-line front end for the saliency pipeline.

#include "salient/salient.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace fs = std::filesystem;
using namespace salient;

namespace {

struct Usage : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<fs::path> files_in(const fs::path& dir, const std::vector<std::string>& exts)
{
    if (!fs::is_directory(dir))
        throw IoError("not a directory: '" + dir.string() + "'");
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && std::find(exts.begin(), exts.end(), e.path().extension().string()) != exts.end())
            out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

void write_json(const nlohmann::json& j, const fs::path& path)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out)
        throw IoError("cannot write '" + path.string() + "'");
    out << j.dump(2) << "\n";
}

void write_map(const SaliencyMap& map, const fs::path& path)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    if (path.extension() == ".raw")
        save_raw_map(map, path);
    else
        save_map(map, path);
}

Pixel parse_mean_pixel(const std::string& s)
{
    Pixel p{};
    char c1 = 0, c2 = 0;
    std::istringstream in(s);
    if (!(in >> p[0] >> c1 >> p[1] >> c2 >> p[2]) || c1 != ',' || c2 != ',')
        throw ParameterError("--mean-pixel must be 'r,g,b' in [0,1]");
    return p;
}

Pixel image_mean(const ImageRGB& img)
{
    std::array<double, 3> s{};
    for (std::size_t i = 0; i < img.pixel_count(); ++i)
        for (int c = 0; c < 3; ++c)
            s[c] += img.data[3 * i + c];
    const double n = double(img.pixel_count());
    return {float(s[0] / n), float(s[1] / n), float(s[2] / n)};
}

PipelineConfig config_or_default(const std::string& path)
{
    return path.empty() ? PipelineConfig{} : load_config(path);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Multiscale-feature salient object detection"};
    app.require_subcommand(1);
    std::function<void()> action;

    // segment ---------------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("segment", "superpixels, edge strength and the merge hierarchy");
        static std::string image, out, edges;
        static int levels = 15, fine = 300, coarse = 20, min_size = 0;
        static double k = 150.0, sigma = 1.0;
        cmd->add_option("--image", image)->required();
        cmd->add_option("--levels", levels);
        cmd->add_option("--fine", fine);
        cmd->add_option("--coarse", coarse);
        cmd->add_option("--k", k, "superpixel scale");
        cmd->add_option("--min-size", min_size, "0: area/1200");
        cmd->add_option("--sigma", sigma, "edge pre-blur");
        cmd->add_option("--edges", edges, "external edge-strength map (raw float)");
        cmd->add_option("--out", out)->required();
        cmd->callback([&] {
            action = [&] {
                PipelineConfig cfg;
                cfg.segment = {levels, fine, coarse, k, min_size, sigma};
                cfg.validate();
                auto img = load_image(image);
                auto part = superpixels(img, k, cfg.segment.effective_min_size(img));
                auto es = edges.empty() ? edge_strength(img, sigma) : load_edges(edges);
                require_same_size(img, es, "segment --edges");
                auto hier = build_hierarchy(part, es, level_targets(levels, fine, coarse));
                save_hierarchy(hier, out);
                std::cout << part.count << " superpixels, " << hier.level_count() << " levels"
                          << (hier.under_target ? " (fewer superpixels than the finest target)" : "") << "\n";
            };
        });
    }

    // features --------------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("features", "S-3 descriptors for every region of every level");
        static std::string image, hier_dir, extractor = "builtin", out, mean;
        static int side = 64;
        cmd->add_option("--image", image)->required();
        cmd->add_option("--hier", hier_dir)->required();
        cmd->add_option("--extractor", extractor, "builtin | file:PATH");
        cmd->add_option("--side", side, "warp side length");
        cmd->add_option("--mean-pixel", mean, "r,g,b masking colour (default: image mean)");
        cmd->add_option("--out", out)->required();
        cmd->callback([&] {
            action = [&] {
                auto img = load_image(image);
                auto hier = load_hierarchy(hier_dir, &img);
                std::vector<FeatureRecord> recs;
                int dim = 0;
                if (extractor == "builtin") {
                    BuiltinExtractor ex(side);
                    dim = ex.dimension();
                    recs = extract_all(img, hier, ex, mean.empty() ? image_mean(img) : parse_mean_pixel(mean));
                } else if (extractor.rfind("file:", 0) == 0) {
                    recs = load_features(extractor.substr(5), &dim);
                    FeatureTable table(recs);
                    for (int l = 0; l < hier.level_count(); ++l)
                        for (int r = 0; r < hier.levels[l].region_count; ++r)
                            table.at(l, r);
                } else {
                    throw ParameterError("--extractor must be 'builtin' or 'file:PATH'");
                }
                save_features(out, dim, recs);
                std::cout << recs.size() << " records, dimension " << dim << "\n";
            };
        });
    }

    // train -----------------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("train", "fit the regressor on per-image features and ground truth");
        static std::string feat_dir, gt_dir, hier_dir, config, out;
        cmd->add_option("--features", feat_dir, "directory of <stem>.s3fv")->required();
        cmd->add_option("--gt", gt_dir, "directory of <stem>.png masks")->required();
        cmd->add_option("--hier", hier_dir, "directory of <stem>/ hierarchies (default: --features)");
        cmd->add_option("--config", config);
        cmd->add_option("--out", out)->required();
        cmd->callback([&] {
            action = [&] {
                const auto cfg = config_or_default(config);
                const fs::path hroot = hier_dir.empty() ? fs::path(feat_dir) : fs::path(hier_dir);
                std::vector<TrainingSample> samples;
                std::vector<std::string> missing;
                auto files = files_in(feat_dir, {".s3fv"});
                if (files.empty())
                    throw DataError("no .s3fv files in '" + feat_dir + "'");
                int dim = 0;
                for (const auto& f : files) {
                    const auto gt_path = fs::path(gt_dir) / (f.stem().string() + ".png");
                    if (!fs::exists(gt_path)) {
                        missing.push_back(f.stem().string());
                        continue;
                    }
                    auto recs = load_features(f, &dim);
                    auto hier = load_hierarchy(hroot / f.stem());
                    auto s = make_samples(hier, load_mask(gt_path), FeatureTable(recs), cfg.features.blocks);
                    samples.insert(samples.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
                }
                if (!missing.empty()) {
                    std::string list;
                    for (const auto& m : missing)
                        list += (list.empty() ? "" : ", ") + m;
                    throw DataError("no ground truth for: " + list);
                }
                auto model = train(samples, cfg.train);
                model.feature_tag = "extractor=external;blocks=" + to_string(cfg.features.blocks);
                save_model(model, out);
                std::cout << samples.size() << " samples, final loss " << model.meta.loss_curve.back() << "\n";
            };
        });
    }

    // predict ---------------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("predict", "score every region of one level");
        static std::string model_path, feat, hier_dir, out, blocks = "ABC";
        static int level = 0;
        cmd->add_option("--model", model_path)->required();
        cmd->add_option("--features", feat)->required();
        cmd->add_option("--hier", hier_dir)->required();
        cmd->add_option("--level", level)->required();
        cmd->add_option("--blocks", blocks, "ABC, A, B, C, AB or AC (must match training)");
        cmd->add_option("--out", out, "PNG, or raw float for a .raw extension")->required();
        cmd->callback([&] {
            action = [&] {
                auto model = load_model(model_path);
                auto hier = load_hierarchy(hier_dir);
                if (level < 0 || level >= hier.level_count())
                    throw ParameterError("--level out of range [0, " + std::to_string(hier.level_count()) + ")");
                auto recs = load_features(feat);
                write_map(score_level(model, hier, level, FeatureTable(recs), parse_block_set(blocks)), out);
            };
        });
    }

    // refine ----------------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("refine", "spatial-coherence refinement over superpixels");
        static std::string map, partition, edges, out, graph_json;
        static bool dense = false;
        cmd->add_option("--map", map)->required();
        cmd->add_option("--partition", partition, "directory holding labels.png")->required();
        cmd->add_option("--edges", edges, "raw edge-strength map (default: <partition>/edges.raw)");
        cmd->add_option("--out", out)->required();
        cmd->add_option("--graph-json", graph_json, "dump the superpixel graph");
        cmd->add_flag("--dense", dense, "direct solve instead of conjugate gradient");
        cmd->callback([&] {
            action = [&] {
                auto part = load_partition(partition);
                auto es = load_edges(edges.empty() ? fs::path(partition) / "edges.raw" : fs::path(edges));
                auto graph = build_graph(part, es);
                if (!graph_json.empty())
                    write_json(graph_to_json(graph), graph_json);
                write_map(refine_map(load_any_map(map), part, graph,
                                     dense ? SolveMethod::Dense : SolveMethod::ConjugateGradient),
                          out);
            };
        });
    }

    // fuse-fit / fuse -------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("fuse-fit", "least-squares fusion weights");
        static std::string maps, gt, out;
        cmd->add_option("--maps", maps, "directory of <stem>/level_NN.raw")->required();
        cmd->add_option("--gt", gt)->required();
        cmd->add_option("--out", out)->required();
        cmd->callback([&] {
            action = [&] {
                std::vector<std::vector<SaliencyMap>> all;
                std::vector<LabelMask> gts;
                std::vector<fs::path> dirs;
                for (const auto& e : fs::directory_iterator(maps))
                    if (e.is_directory())
                        dirs.push_back(e.path());
                std::sort(dirs.begin(), dirs.end());
                for (const auto& d : dirs) {
                    const auto g = fs::path(gt) / (d.filename().string() + ".png");
                    if (!fs::exists(g))
                        throw DataError("no ground truth for '" + d.filename().string() + "'");
                    all.push_back(pipeline_detail::load_level_maps(d));
                    gts.push_back(load_mask(g));
                }
                auto w = fit_weights(all, gts, fs::path(maps).filename().string());
                save_weights(w, out);
                std::cout << all.size() << " images, residual " << w.residual << (w.regularized ? " (ridge)" : "")
                          << "\n";
            };
        });
    }
    {
        auto* cmd = app.add_subcommand("fuse", "combine level maps with fitted weights");
        static std::string maps, weights, out;
        cmd->add_option("--maps", maps, "directory of level_NN.raw")->required();
        cmd->add_option("--weights", weights)->required();
        cmd->add_option("--out", out)->required();
        cmd->callback([&] {
            action = [&] { write_map(fuse(pipeline_detail::load_level_maps(maps), load_weights(weights)), out); };
        });
    }

    // eval / dataset-check --------------------------------------------------
    {
        auto* cmd = app.add_subcommand("eval", "PR curve, F-measure and MAE over a corpus");
        static std::string maps, gt, out, csv;
        static double beta2 = 0.3;
        cmd->add_option("--maps", maps, "directory of <stem>.png or <stem>.raw")->required();
        cmd->add_option("--gt", gt)->required();
        cmd->add_option("--out", out)->required();
        cmd->add_option("--csv", csv, "PR curves as CSV");
        cmd->add_option("--beta2", beta2);
        cmd->callback([&] {
            action = [&] {
                std::vector<ImageEval> rows;
                for (const auto& m : files_in(maps, {".png", ".raw"})) {
                    const auto g = fs::path(gt) / (m.stem().string() + ".png");
                    if (!fs::exists(g))
                        throw DataError("no ground truth for '" + m.filename().string() + "'");
                    rows.push_back(evaluate_image(load_any_map(m), load_mask(g), beta2, m.stem().string()));
                }
                if (rows.empty())
                    throw DataError("no maps in '" + maps + "'");
                auto report = summarize(std::move(rows), beta2);
                write_json(report_to_json(report), out);
                if (!csv.empty())
                    write_pr_csv(report, csv);
                std::cout << "mean F " << report.mean_f << ", mean MAE " << report.mean_mae << "\n";
            };
        });
    }
    {
        auto* cmd = app.add_subcommand("dataset-check", "annotation consistency and selection rules");
        static std::string ann, images, out;
        cmd->add_option("--ann", ann, "directory of <stem>_1.png, <stem>_2.png, <stem>_3.png")->required();
        cmd->add_option("--images", images)->required();
        cmd->add_option("--out", out)->required();
        cmd->callback([&] {
            action = [&] {
                nlohmann::json j = nlohmann::json::object();
                int accepted = 0;
                for (const auto& img : files_in(images, {".png", ".ppm"})) {
                    AnnotationSet set;
                    for (int a = 0; a < 3; ++a)
                        set.masks[a] = load_mask(fs::path(ann) / (img.stem().string() + "_" + std::to_string(a + 1) + ".png"));
                    auto d = dataset_filter(set, load_image(img));
                    accepted += d.accept;
                    j[img.filename().string()] = decision_to_json(d);
                }
                write_json(j, out);
                std::cout << accepted << " of " << j.size() << " accepted\n";
            };
        });
    }

    // run-train / run-predict -----------------------------------------------
    {
        auto* cmd = app.add_subcommand("run-train", "train the regressor and fusion weights on a corpus");
        static std::string corpus, config, out;
        cmd->add_option("--corpus", corpus, "directory with images/ and masks/")->required();
        cmd->add_option("--config", config);
        cmd->add_option("--out", out)->required();
        cmd->callback([&] {
            action = [&] {
                const auto cfg = config_or_default(config);
                auto res = run_train(corpus, cfg);
                fs::create_directories(out);
                save_model(res.model, fs::path(out) / "model.mdfr");
                save_weights(res.weights, fs::path(out) / "weights.json");
                nlohmann::json split;
                for (auto [key, part] : {std::pair{"train", &res.split.train}, {"validation", &res.split.validation},
                                         {"test", &res.split.test}}) {
                    split[key] = nlohmann::json::array();
                    for (const auto& it : *part)
                        split[key].push_back(it.name);
                }
                write_json(split, fs::path(out) / "split.json");
                write_json(manifest_to_json(res.manifest), fs::path(out) / "manifest.json");
                std::cout << "trained on " << res.split.train.size() << " images, fusion fitted on "
                          << res.split.validation.size() << "\n";
            };
        });
    }
    {
        auto* cmd = app.add_subcommand("run-predict", "full per-image flow: segment, score, refine, fuse");
        static std::string model_path, weights, config, image, images, out;
        static bool raw = false;
        cmd->add_option("--model", model_path, "default: [paths] model");
        cmd->add_option("--weights", weights, "default: [paths] weights");
        cmd->add_option("--config", config);
        auto* one = cmd->add_option("--image", image);
        auto* many = cmd->add_option("--images", images);
        one->excludes(many);
        cmd->add_option("--out", out, "output directory")->required();
        cmd->add_flag("--raw", raw, "write raw float maps instead of PNG");
        cmd->callback([&] {
            action = [&] {
                const auto cfg = config_or_default(config);
                const std::string mp = model_path.empty() ? cfg.model_path : model_path;
                const std::string wp = weights.empty() ? cfg.weights_path : weights;
                if (mp.empty() || wp.empty())
                    throw ParameterError("run-predict needs --model and --weights (or [paths] in the config)");
                if (!fs::exists(mp))
                    throw ParameterError("model file not found: '" + mp + "'");
                if (!fs::exists(wp))
                    throw ParameterError("weights file not found: '" + wp + "'");
                const auto model = load_model(mp);
                const auto w = load_weights(wp);
                check_predict_inputs(cfg, model, w);
                std::vector<fs::path> inputs;
                if (!image.empty())
                    inputs.push_back(image);
                else if (!images.empty())
                    inputs = files_in(images, {".png", ".ppm"});
                else
                    throw Usage("run-predict needs --image or --images");
                fs::create_directories(out);
                const auto cache = StageCache::from_config(cfg);
                RunManifest manifest;
                manifest.config_hash = config_hash(cfg);
                manifest.entries.resize(inputs.size());
                parallel_for(inputs.size(), cfg.threads, [&](std::size_t i) {
                    const auto dst = fs::path(out) / (inputs[i].stem().string() + (raw ? ".raw" : ".png"));
                    manifest.entries[i] = run_predict(inputs[i], cfg, model, w, dst, &cache).manifest;
                });
                write_json(manifest_to_json(manifest), fs::path(out) / "manifest.json");
                std::cout << inputs.size() << " maps written to " << out << "\n";
            };
        });
    }

    // utilities -------------------------------------------------------------
    {
        auto* cmd = app.add_subcommand("synth", "write a synthetic corpus (images/ and masks/)");
        static std::string out;
        static int count = 50, width = 96, height = 72;
        static std::uint64_t seed = 1;
        cmd->add_option("--out", out)->required();
        cmd->add_option("--count", count);
        cmd->add_option("--seed", seed);
        cmd->add_option("--width", width);
        cmd->add_option("--height", height);
        cmd->callback([&] {
            action = [&] {
                if (count < 1)
                    throw ParameterError("--count must be >= 1");
                write_synthetic_corpus(out, count, seed, width, height);
                std::cout << count << " images written to " << out << "\n";
            };
        });
    }
    {
        auto* cmd = app.add_subcommand("print-config", "print the effective configuration");
        static std::string config;
        cmd->add_option("--config", config);
        cmd->callback([&] {
            action = [&] {
                const auto cfg = config_or_default(config);
                std::cout << config_to_text(cfg) << "; hash " << config_hash(cfg) << "\n";
            };
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    try {
        action();
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e.kind());
    } catch (const Usage& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
