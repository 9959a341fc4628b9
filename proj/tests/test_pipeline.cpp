#include "support.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

using namespace salient;
using testing_support::TempDir;
namespace fs = std::filesystem;

namespace {

PipelineConfig desk_config()
{
    return load_config(SALIENT_DESK_CONFIG);
}

// One corpus and one trained model shared by the slower tests.
struct Trained {
    TempDir root{"pipe"};
    PipelineConfig cfg;
    TrainResult result;

    Trained()
    {
        write_synthetic_corpus(root / "corpus", 20, 3);
        cfg = desk_config();
        cfg.cache_dir = (root / "cache").string();
        cfg.threads = 4;
        result = run_train(root / "corpus", cfg);
    }
};

Trained& trained()
{
    static Trained t;
    return t;
}

// Reference model at desk scale: 50-image seed-1 corpus, desk config as shipped.
struct DeskModel {
    TempDir root{"desk"};
    PipelineConfig cfg = desk_config();
    TrainResult result;

    DeskModel()
    {
        write_synthetic_corpus(root / "corpus", 50, 1);
        result = run_train(root / "corpus", cfg);
    }
};

int run_cli(const std::string& args)
{
    int status = std::system((std::string(SALIENT_CLI) + " " + args + " > /dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::size_t count_hits(const ManifestEntry& e)
{
    std::size_t n = 0;
    for (const auto& s : e.stages)
        n += s.cache_hit;
    return n;
}

} // namespace

TEST(Hashing, KnownDigest)
{
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Config, DeskFileParses)
{
    auto c = desk_config();
    EXPECT_EQ(c.segment.levels, 15);
    EXPECT_EQ(c.segment.fine, 100);
    EXPECT_EQ(c.segment.coarse, 8);
    EXPECT_EQ(c.features.blocks, BlockSet::ABC);
    EXPECT_DOUBLE_EQ(c.train.stdev_floor, 0.05);
    EXPECT_TRUE(c.coherence);
}

TEST(Config, TextRoundTripAndHashScope)
{
    auto c = desk_config();
    c.features.mean_pixel = Pixel{0.1f, 0.2f, 0.30000001f};
    c.train.loss = LossKind::CrossEntropy;
    auto back = parse_config(config_to_text(c));
    EXPECT_EQ(config_to_text(back), config_to_text(c));
    EXPECT_EQ(config_hash(back), config_hash(c));
    EXPECT_EQ(*back.features.mean_pixel, *c.features.mean_pixel);

    auto other = c;
    other.threads = 8;
    other.cache_dir = "/elsewhere";
    other.model_path = "m.mdfr";
    EXPECT_EQ(config_hash(other), config_hash(c));
    other.train.seed = 99;
    EXPECT_NE(config_hash(other), config_hash(c));
}

TEST(Config, Defaults)
{
    auto c = parse_config("");
    EXPECT_EQ(c.segment.levels, 15);
    EXPECT_EQ(c.segment.fine, 300);
    EXPECT_EQ(c.segment.coarse, 20);
    EXPECT_EQ(c.features.warp_side, 64);
    EXPECT_DOUBLE_EQ(c.split.train, 0.5);
    EXPECT_DOUBLE_EQ(c.split.validation, 0.1);
    EXPECT_DOUBLE_EQ(c.split.test, 0.4);
}

TEST(Config, Errors)
{
    EXPECT_THROW(parse_config("[segment]\nbogus = 1\n"), ParameterError);
    EXPECT_THROW(parse_config("[nowhere]\nlevels = 1\n"), ParameterError);
    EXPECT_THROW(parse_config("[segment]\nlevels = many\n"), ParameterError);
    EXPECT_THROW(parse_config("[segment]\nlevels = 1\n"), ParameterError);
    EXPECT_THROW(parse_config("[split]\ntrain = 0.9\n"), ParameterError);
    EXPECT_THROW(parse_config("[train]\nepochs = 0\n"), ParameterError);
    EXPECT_THROW(parse_config("[features]\nextractor = cnn\n"), ParameterError);
    EXPECT_THROW(parse_config("[coherence]\nenabled = maybe\n"), ParameterError);
    EXPECT_THROW(load_config("/nonexistent/config.ini"), ParameterError);
}

TEST(FeatureTagText, RoundTripsMeanPixelBits)
{
    FeatureTag t{"builtin/1", 64, BlockSet::AC, {0.1f, 1.0f / 3.0f, 0.7f}, 15};
    auto back = parse_feature_tag(format_feature_tag(t));
    EXPECT_EQ(back.extractor, t.extractor);
    EXPECT_EQ(back.side, 64);
    EXPECT_EQ(back.blocks, BlockSet::AC);
    EXPECT_EQ(back.levels, 15);
    EXPECT_EQ(back.mean_pixel, t.mean_pixel);
}

TEST(Corpus, SplitOrdersByNameDigest)
{
    std::vector<CorpusItem> items;
    for (int i = 0; i < 20; ++i)
        items.push_back({"img_" + std::to_string(i) + ".png", {}, {}});
    auto split = split_corpus(items, {0.5, 0.1, 0.4});
    EXPECT_EQ(split.train.size(), 10u);
    EXPECT_EQ(split.validation.size(), 2u);
    EXPECT_EQ(split.test.size(), 8u);

    std::vector<std::string> names;
    for (auto& it : items)
        names.push_back(it.name);
    std::sort(names.begin(), names.end(), [](auto& a, auto& b) { return sha256_hex(a) < sha256_hex(b); });
    std::vector<std::string> got;
    for (auto* part : {&split.train, &split.validation, &split.test})
        for (auto& it : *part)
            got.push_back(it.name);
    EXPECT_EQ(got, names);

    auto reversed = items;
    std::reverse(reversed.begin(), reversed.end());
    auto again = split_corpus(reversed, {0.5, 0.1, 0.4});
    for (std::size_t i = 0; i < split.train.size(); ++i)
        EXPECT_EQ(again.train[i].name, split.train[i].name);
}

TEST(Corpus, MissingGroundTruthNamesFiles)
{
    TempDir dir;
    write_synthetic_corpus(dir / "c", 4, 1, 32, 24);
    fs::remove(dir / "c" / "masks" / "img_001.png");
    fs::remove(dir / "c" / "masks" / "img_003.png");
    try {
        list_corpus(dir / "c");
        FAIL();
    } catch (const DataError& e) {
        std::string msg = e.what();
        EXPECT_NE(msg.find("img_001.png"), std::string::npos);
        EXPECT_NE(msg.find("img_003.png"), std::string::npos);
        EXPECT_EQ(msg.find("img_002.png"), std::string::npos);
    }
    EXPECT_THROW(run_train(dir / "c", desk_config()), DataError);
    EXPECT_THROW(list_corpus(dir / "none"), DataError);
}

TEST(Corpus, EmptySplitIsConfigError)
{
    TempDir dir;
    write_synthetic_corpus(dir / "c", 4, 1, 32, 24);
    auto cfg = desk_config();
    cfg.split = {0.0, 0.5, 0.5};
    EXPECT_THROW(run_train(dir / "c", cfg), ParameterError);
    cfg.split = {0.5, 0.0, 0.5};
    EXPECT_THROW(run_train(dir / "c", cfg), ParameterError);
}

TEST(Corpus, SyntheticCorpusDeterministic)
{
    TempDir dir;
    write_synthetic_corpus(dir / "a", 3, 5, 40, 30);
    write_synthetic_corpus(dir / "b", 3, 5, 40, 30);
    for (const char* sub : {"images", "masks"})
        for (int i = 0; i < 3; ++i) {
            auto name = "img_00" + std::to_string(i) + ".png";
            EXPECT_EQ(testing_support::read_bytes(dir / "a" / sub / name),
                      testing_support::read_bytes(dir / "b" / sub / name));
        }
}

TEST(ParallelFor, CoversEveryIndexAndRethrowsFirst)
{
    std::vector<int> hit(100, 0);
    parallel_for(hit.size(), 4, [&](std::size_t i) { hit[i] += 1; });
    for (int h : hit)
        EXPECT_EQ(h, 1);
    try {
        parallel_for(10, 3, [](std::size_t i) {
            if (i == 7 || i == 4)
                throw DataError("index " + std::to_string(i));
        });
        FAIL();
    } catch (const DataError& e) {
        EXPECT_STREQ(e.what(), "index 4");
    }
}

TEST(StageCacheDir, PublishIsAtomic)
{
    TempDir dir;
    StageCache cache(dir.path());
    EXPECT_FALSE(cache.has("s", "k"));
    EXPECT_THROW(cache.publish("s", "k", [](const fs::path& p) {
        std::ofstream(p / "half") << "x";
        throw IoError("disk full");
    }), IoError);
    EXPECT_FALSE(cache.has("s", "k"));
    EXPECT_TRUE(fs::is_empty(dir / "s"));
    cache.publish("s", "k", [](const fs::path& p) { std::ofstream(p / "done") << "y"; });
    EXPECT_TRUE(fs::exists(cache.entry("s", "k") / "done"));
    StageCache off;
    EXPECT_FALSE(off.enabled());
    EXPECT_FALSE(off.has("s", "k"));
}

TEST(RunTrain, ArtifactsAndManifest)
{
    auto& t = trained();
    const auto& r = t.result;
    EXPECT_EQ(r.split.train.size() + r.split.validation.size() + r.split.test.size(), 20u);
    EXPECT_EQ(r.manifest.entries.size(), 20u);
    EXPECT_EQ(r.weights.levels(), 15);
    EXPECT_EQ(r.model.input_dim(), 3 * 555);
    auto tag = parse_feature_tag(r.model.feature_tag);
    EXPECT_EQ(tag.levels, 15);
    EXPECT_EQ(tag.extractor, "builtin/1");
    EXPECT_EQ(tag.mean_pixel, mean_pixel_of(r.split.train));
    EXPECT_EQ(r.manifest.config_hash, config_hash(t.cfg));
    int tests = 0;
    for (const auto& e : r.manifest.entries)
        tests += e.split == "test";
    EXPECT_EQ(tests, int(r.split.test.size()));
    EXPECT_NE(r.weights.corpus_id.find("validation:"), std::string::npos);
}

TEST(RunTrain, DeterministicWithAndWithoutCache)
{
    auto& t = trained();
    auto cold = t.cfg;
    cold.cache_dir.clear();
    ::unsetenv("SALIENT_CACHE");
    cold.threads = 2;
    auto again = run_train(t.root / "corpus", cold);
    EXPECT_EQ(serialize_model(again.model), serialize_model(t.result.model));
    EXPECT_EQ(again.weights.alphas, t.result.weights.alphas);
    EXPECT_EQ(weights_to_json(again.weights).dump(), weights_to_json(t.result.weights).dump());
}

TEST(RunPredict, WarmCacheGivesIdenticalBytes)
{
    auto& t = trained();
    TempDir out;
    const auto image = t.root / "corpus" / "images" / t.result.split.test.front().name;
    StageCache cache(out / "cache");
    auto first = run_predict(image, t.cfg, t.result.model, t.result.weights, out / "a.png", &cache);
    auto second = run_predict(image, t.cfg, t.result.model, t.result.weights, out / "b.png", &cache);
    EXPECT_EQ(testing_support::read_bytes(out / "a.png"), testing_support::read_bytes(out / "b.png"));
    EXPECT_EQ(first.map, second.map);
    EXPECT_EQ(count_hits(first.manifest), 0u);
    EXPECT_EQ(count_hits(second.manifest), 4u);   // segment, features, score, refine
    EXPECT_EQ(second.manifest.outputs, std::vector<std::string>{(out / "b.png").string()});
    EXPECT_FALSE(fs::exists(out / "b.png.partial"));
    ASSERT_EQ(first.refined_maps.size(), 15u);
}

TEST(RunPredict, DeletedIntermediateIsRebuiltExactly)
{
    auto& t = trained();
    TempDir out;
    const auto image = t.root / "corpus" / "images" / t.result.split.test.back().name;
    StageCache cache(out / "cache");
    auto first = run_predict(image, t.cfg, t.result.model, t.result.weights, out / "a.raw", &cache);
    for (const char* stage : {"features", "refine", "segment"}) {
        std::vector<std::vector<std::uint8_t>> before;
        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(out / "cache" / stage))
            if (e.is_regular_file()) {
                files.push_back(e.path());
                before.push_back(testing_support::read_bytes(e.path()));
            }
        ASSERT_FALSE(files.empty());
        fs::remove_all(out / "cache" / stage);
        auto again = run_predict(image, t.cfg, t.result.model, t.result.weights, out / "b.raw", &cache);
        EXPECT_EQ(again.map, first.map) << stage;
        for (std::size_t i = 0; i < files.size(); ++i)
            EXPECT_EQ(testing_support::read_bytes(files[i]), before[i]) << files[i];
    }
    EXPECT_EQ(load_raw_map(out / "a.raw"), first.map);
}

TEST(RunPredict, SingleSquareImage)
{
    DeskModel desk;
    TempDir out;
    SyntheticSpec spec;
    spec.kind = ShapeKind::Square;
    spec.centered = true;
    spec.texture = 0.0;
    auto s = gen_synthetic(1, spec);
    save_image(s.image, out / "square.png");
    auto res = run_predict(out / "square.png", desk.cfg, desk.result.model, desk.result.weights);
    EXPECT_GE(evaluate_image(res.map, s.mask).f, 0.9);
}

TEST(RunPredict, CoherenceOffReturnsRawLevels)
{
    auto& t = trained();
    auto cfg = t.cfg;
    cfg.coherence = false;
    const auto image = t.root / "corpus" / "images" / t.result.split.test.front().name;
    auto res = run_predict(image, cfg, t.result.model, t.result.weights);
    ASSERT_EQ(res.refined_maps.size(), res.level_maps.size());
    for (std::size_t l = 0; l < res.level_maps.size(); ++l)
        EXPECT_EQ(res.refined_maps[l], res.level_maps[l]);
}

TEST(RunPredict, StageErrorsCarryStageAndImage)
{
    auto& t = trained();
    TempDir out;
    try {
        run_predict(out / "ghost.png", t.cfg, t.result.model, t.result.weights, out / "ghost_map.png");
        FAIL();
    } catch (const IoError& e) {
        std::string msg = e.what();
        EXPECT_NE(msg.find("[load]"), std::string::npos);
        EXPECT_NE(msg.find("ghost.png"), std::string::npos);
    }
    EXPECT_FALSE(fs::exists(out / "ghost_map.png"));
    EXPECT_FALSE(fs::exists(out / "ghost_map.png.partial"));
}

TEST(RunPredict, MismatchedInputsRejected)
{
    auto& t = trained();
    auto cfg = t.cfg;
    cfg.segment.levels = 10;
    const auto image = t.root / "corpus" / "images" / t.result.split.test.front().name;
    EXPECT_THROW(run_predict(image, cfg, t.result.model, t.result.weights), ParameterError);
    cfg = t.cfg;
    cfg.features.warp_side = 32;
    EXPECT_THROW(run_predict(image, cfg, t.result.model, t.result.weights), ParameterError);
}

TEST(Cli, ExitCodesAndFailFast)
{
    auto& t = trained();
    TempDir out;
    save_model(t.result.model, out / "model.mdfr");
    save_weights(t.result.weights, out / "weights.json");
    const std::string config = std::string(" --config ") + SALIENT_DESK_CONFIG;
    const auto image = (t.root / "corpus" / "images" / t.result.split.test.front().name).string();

    EXPECT_EQ(run_cli("run-predict --model " + (out / "absent.mdfr").string() + " --weights " +
                      (out / "weights.json").string() + config + " --image " + image + " --out " +
                      (out / "maps").string()),
              2);
    EXPECT_FALSE(fs::exists(out / "maps"));
    EXPECT_EQ(run_cli("run-predict --model " + (out / "model.mdfr").string() + " --weights " +
                      (out / "weights.json").string() + config + " --image " + image + " --out " +
                      (out / "maps").string()),
              0);
    EXPECT_TRUE(fs::exists(out / "maps" / "manifest.json"));
    EXPECT_EQ(run_cli("segment --image " + (out / "nope.png").string() + " --out " + (out / "seg").string()), 3);
    EXPECT_EQ(run_cli("no-such-verb"), 2);
    EXPECT_EQ(run_cli("segment --image " + image + " --levels 1 --out " + (out / "seg").string()), 2);
    EXPECT_EQ(run_cli("print-config" + config), 0);
}
