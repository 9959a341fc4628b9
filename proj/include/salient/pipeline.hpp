#pragma once

// Per-image orchestration (segment -> features -> score levels -> refine -> fuse), corpus
// training, configuration and the content-addressed stage cache.

#include "salient/coherence.hpp"
#include "salient/evalkit.hpp"
#include "salient/featwin.hpp"
#include "salient/fusion.hpp"
#include "salient/regressor.hpp"
#include "salient/segment.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <openssl/evp.h>

#include <chrono>
#include <cstdlib>
#include <exception>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

namespace salient {

// ---------------------------------------------------------------------------
// Hashing
// ---------------------------------------------------------------------------

/// Incremental SHA-256, hex digest.
class Hasher {
public:
    Hasher() : ctx_(EVP_MD_CTX_new())
    {
        if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
            throw std::runtime_error("SHA-256 initialisation failed");
    }
    ~Hasher() { EVP_MD_CTX_free(ctx_); }
    Hasher(const Hasher&) = delete;
    Hasher& operator=(const Hasher&) = delete;

    Hasher& update(const void* data, std::size_t n)
    {
        EVP_DigestUpdate(ctx_, data, n);
        return *this;
    }
    Hasher& update(const std::string& s)
    {
        auto len = std::uint64_t(s.size());
        update(&len, sizeof len);
        return update(s.data(), s.size());
    }
    std::string hex()
    {
        unsigned char md[EVP_MAX_MD_SIZE];
        unsigned int len = 0;
        EVP_DigestFinal_ex(ctx_, md, &len);
        std::ostringstream out;
        for (unsigned int i = 0; i < len; ++i)
            out << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
        return out.str();
    }

private:
    EVP_MD_CTX* ctx_;
};

inline std::string sha256_hex(const std::string& s)
{
    return Hasher().update(s.data(), s.size()).hex();
}

inline std::string hash_image(const ImageRGB& image)
{
    Hasher h;
    h.update(&image.width, sizeof image.width).update(&image.height, sizeof image.height);
    return h.update(image.data.data(), image.data.size() * sizeof(float)).hex();
}

inline std::string hash_file(const std::filesystem::path& path)
{
    auto bytes = io_detail::read_all(path);
    return Hasher().update(bytes.data(), bytes.size()).hex();
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct SegmentParams {
    int levels = 15;
    int fine = 300;
    int coarse = 20;
    double scale_k = 150.0;
    int min_size = 0;             ///< 0: image_area / 1200
    double edge_sigma = 1.0;

    int effective_min_size(const ImageRGB& image) const
    {
        return min_size > 0 ? min_size : std::max(1, int(image.pixel_count() / 1200));
    }
};

struct FeatureParams {
    std::string extractor = "builtin";   ///< "builtin" or "file:DIR" (DIR/<stem>.s3fv)
    int warp_side = 64;
    std::optional<Pixel> mean_pixel;     ///< unset: mean over the training split
    BlockSet blocks = BlockSet::ABC;
};

struct SplitParams {
    double train = 0.5;
    double validation = 0.1;
    double test = 0.4;
};

struct PipelineConfig {
    SegmentParams segment;
    FeatureParams features;
    TrainConfig train;
    bool coherence = true;
    SplitParams split;
    int threads = 1;
    std::string cache_dir;   ///< empty: $SALIENT_CACHE, else caching disabled
    std::string model_path;  ///< run-predict defaults
    std::string weights_path;

    void validate() const
    {
        if (segment.levels < 2 || segment.fine < segment.coarse || segment.coarse < 1)
            throw ParameterError("config [segment]: need levels >= 2 and fine >= coarse >= 1");
        if (!(segment.scale_k > 0.0) || segment.min_size < 0 || segment.edge_sigma < 0.0)
            throw ParameterError("config [segment]: scale_k must be > 0, min_size and edge_sigma >= 0");
        if (features.warp_side < 8)
            throw ParameterError("config [features]: warp_side must be >= 8");
        if (features.extractor != "builtin" && features.extractor.rfind("file:", 0) != 0)
            throw ParameterError("config [features]: extractor must be 'builtin' or 'file:DIR'");
        if (split.train < 0 || split.validation < 0 || split.test < 0 ||
            std::abs(split.train + split.validation + split.test - 1.0) > 1e-9)
            throw ParameterError("config [split]: fractions must be non-negative and sum to 1");
        if (threads < 1)
            throw ParameterError("config [run]: threads must be >= 1");
        train.validate();
    }
};

namespace config_detail {

inline std::string format_double(double v)
{
    std::ostringstream out;
    out << std::setprecision(17) << v;
    return out.str();
}

inline std::string format_pixel(const Pixel& p)
{
    std::ostringstream out;
    out << std::setprecision(9) << p[0] << "," << p[1] << "," << p[2];
    return out.str();
}

inline Pixel parse_pixel(const std::string& s)
{
    Pixel p{};
    std::istringstream in(s);
    char comma;
    if (!(in >> p[0] >> comma >> p[1] >> comma >> p[2]))
        throw ParameterError("config: mean_pixel must be 'r,g,b'");
    return p;
}

} // namespace config_detail

/// Canonical text of one config section; used for hashing and for writing config files.
inline std::string config_section(const PipelineConfig& c, const std::string& section)
{
    using config_detail::format_double;
    std::ostringstream out;
    if (section == "segment") {
        out << "levels = " << c.segment.levels << "\nfine = " << c.segment.fine << "\ncoarse = " << c.segment.coarse
            << "\nscale_k = " << format_double(c.segment.scale_k) << "\nmin_size = " << c.segment.min_size
            << "\nedge_sigma = " << format_double(c.segment.edge_sigma) << "\n";
    } else if (section == "features") {
        out << "extractor = " << c.features.extractor << "\nwarp_side = " << c.features.warp_side
            << "\nblocks = " << to_string(c.features.blocks) << "\n";
        if (c.features.mean_pixel)
            out << "mean_pixel = " << config_detail::format_pixel(*c.features.mean_pixel) << "\n";
    } else if (section == "train") {
        const auto& t = c.train;
        out << "learning_rate = " << format_double(t.learning_rate) << "\nmomentum = " << format_double(t.momentum)
            << "\nbatch_size = " << t.batch_size << "\nepochs = " << t.epochs << "\nseed = " << t.seed
            << "\nweight_decay = " << format_double(t.weight_decay)
            << "\nloss = " << (t.loss == LossKind::Squared ? "squared" : "cross-entropy")
            << "\nactivation = " << (t.activation == Activation::Relu ? "relu" : "tanh") << "\nhidden1 = " << t.hidden1
            << "\nhidden2 = " << t.hidden2 << "\nstdev_floor = " << format_double(t.stdev_floor) << "\n";
    } else if (section == "coherence") {
        out << "enabled = " << (c.coherence ? "true" : "false") << "\n";
    } else if (section == "split") {
        out << "train = " << format_double(c.split.train) << "\nvalidation = " << format_double(c.split.validation)
            << "\ntest = " << format_double(c.split.test) << "\n";
    } else if (section == "run") {
        out << "threads = " << c.threads << "\n";
        if (!c.cache_dir.empty())
            out << "cache_dir = " << c.cache_dir << "\n";
    } else if (section == "paths") {
        if (!c.model_path.empty())
            out << "model = " << c.model_path << "\n";
        if (!c.weights_path.empty())
            out << "weights = " << c.weights_path << "\n";
    } else {
        throw ContractError("config_section: unknown section " + section);
    }
    return out.str();
}

inline std::string config_to_text(const PipelineConfig& c)
{
    std::string text;
    for (const char* s : {"segment", "features", "train", "coherence", "split", "run", "paths"})
        text += std::string("[") + s + "]\n" + config_section(c, s) + "\n";
    return text;
}

/// Hash of everything that can change outputs ([run] and [paths] are excluded).
inline std::string config_hash(const PipelineConfig& c)
{
    Hasher h;
    for (const char* s : {"segment", "features", "train", "coherence", "split"})
        h.update(config_section(c, s));
    return h.hex();
}

/// INI-style hierarchical key-value text: "[section]" headers, "key = value" lines, ';' or '#'
/// comments. Unknown sections or keys are configuration errors.
inline PipelineConfig parse_config(const std::string& text)
{
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ParameterError(std::string("config: ") + e.what());
    }
    PipelineConfig c;
    auto fail = [](const std::string& what) { throw ParameterError("config: " + what); };
    try {
        for (const auto& [section, body] : tree) {
            if (body.empty() && !body.data().empty())
                fail("key '" + section + "' outside a section");
            for (const auto& [key, node] : body) {
                const std::string v = node.data();
                auto as_int = [&] { return node.get_value<int>(); };
                auto as_double = [&] { return node.get_value<double>(); };
                auto as_bool = [&] {
                    if (v == "true" || v == "1" || v == "on") return true;
                    if (v == "false" || v == "0" || v == "off") return false;
                    fail(section + "." + key + " must be a boolean");
                    return false;
                };
                const std::string k = section + "." + key;
                if (k == "segment.levels") c.segment.levels = as_int();
                else if (k == "segment.fine") c.segment.fine = as_int();
                else if (k == "segment.coarse") c.segment.coarse = as_int();
                else if (k == "segment.scale_k") c.segment.scale_k = as_double();
                else if (k == "segment.min_size") c.segment.min_size = as_int();
                else if (k == "segment.edge_sigma") c.segment.edge_sigma = as_double();
                else if (k == "features.extractor") c.features.extractor = v;
                else if (k == "features.warp_side") c.features.warp_side = as_int();
                else if (k == "features.blocks") c.features.blocks = parse_block_set(v);
                else if (k == "features.mean_pixel") c.features.mean_pixel = config_detail::parse_pixel(v);
                else if (k == "train.learning_rate") c.train.learning_rate = as_double();
                else if (k == "train.momentum") c.train.momentum = as_double();
                else if (k == "train.batch_size") c.train.batch_size = as_int();
                else if (k == "train.epochs") c.train.epochs = as_int();
                else if (k == "train.seed") c.train.seed = node.get_value<std::uint64_t>();
                else if (k == "train.weight_decay") c.train.weight_decay = as_double();
                else if (k == "train.loss") c.train.loss = parse_loss(v);
                else if (k == "train.activation") c.train.activation = parse_activation(v);
                else if (k == "train.hidden1") c.train.hidden1 = as_int();
                else if (k == "train.hidden2") c.train.hidden2 = as_int();
                else if (k == "train.stdev_floor") c.train.stdev_floor = as_double();
                else if (k == "coherence.enabled") c.coherence = as_bool();
                else if (k == "split.train") c.split.train = as_double();
                else if (k == "split.validation") c.split.validation = as_double();
                else if (k == "split.test") c.split.test = as_double();
                else if (k == "run.threads") c.threads = as_int();
                else if (k == "run.cache_dir") c.cache_dir = v;
                else if (k == "paths.model") c.model_path = v;
                else if (k == "paths.weights") c.weights_path = v;
                else fail("unknown key '" + k + "'");
            }
        }
    } catch (const pt::ptree_bad_data& e) {
        throw ParameterError(std::string("config: bad value: ") + e.what());
    }
    c.validate();
    return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw ParameterError("config: cannot read '" + path.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

// ---------------------------------------------------------------------------
// Feature tag: records how a model's inputs were produced
// ---------------------------------------------------------------------------

struct FeatureTag {
    std::string extractor;
    int side = 0;
    BlockSet blocks = BlockSet::ABC;
    Pixel mean_pixel{};
    int levels = 0;
};

inline std::string format_feature_tag(const FeatureTag& t)
{
    std::ostringstream out;
    out << "extractor=" << t.extractor << ";side=" << t.side << ";blocks=" << to_string(t.blocks)
        << ";levels=" << t.levels << ";mean=";
    for (int c = 0; c < 3; ++c) {
        std::uint32_t bits;
        std::memcpy(&bits, &t.mean_pixel[c], 4);
        out << (c ? "," : "") << std::hex << std::setw(8) << std::setfill('0') << bits << std::dec;
    }
    return out.str();
}

inline FeatureTag parse_feature_tag(const std::string& s)
{
    FeatureTag t;
    std::istringstream in(s);
    std::string field;
    int seen = 0;
    while (std::getline(in, field, ';')) {
        auto eq = field.find('=');
        if (eq == std::string::npos)
            throw FormatError("model feature tag: malformed field '" + field + "'");
        auto key = field.substr(0, eq), value = field.substr(eq + 1);
        if (key == "extractor") t.extractor = value;
        else if (key == "side") t.side = std::stoi(value);
        else if (key == "blocks") t.blocks = parse_block_set(value);
        else if (key == "levels") t.levels = std::stoi(value);
        else if (key == "mean") {
            std::istringstream ms(value);
            std::string part;
            for (int c = 0; c < 3; ++c) {
                if (!std::getline(ms, part, ','))
                    throw FormatError("model feature tag: bad mean pixel");
                std::uint32_t bits = std::uint32_t(std::stoul(part, nullptr, 16));
                std::memcpy(&t.mean_pixel[c], &bits, 4);
            }
        } else {
            continue;
        }
        ++seen;
    }
    if (seen != 5)
        throw FormatError("model feature tag: incomplete ('" + s + "')");
    return t;
}

// ---------------------------------------------------------------------------
// Cache
// ---------------------------------------------------------------------------

/// Content-addressed stage outputs: ROOT/<stage>/<sha256 key>/. Entries are written to a
/// temporary sibling and renamed into place, so a present entry is always complete.
class StageCache {
public:
    explicit StageCache(std::filesystem::path root = {}) : root_(std::move(root)) {}

    static StageCache from_config(const PipelineConfig& cfg)
    {
        if (!cfg.cache_dir.empty())
            return StageCache(cfg.cache_dir);
        if (const char* env = std::getenv("SALIENT_CACHE"); env && *env)
            return StageCache(env);
        return StageCache();
    }

    bool enabled() const noexcept { return !root_.empty(); }
    const std::filesystem::path& root() const noexcept { return root_; }

    std::filesystem::path entry(const std::string& stage, const std::string& key) const
    {
        return root_ / stage / key;
    }
    bool has(const std::string& stage, const std::string& key) const
    {
        return enabled() && std::filesystem::is_directory(entry(stage, key));
    }

    /// Runs writer(tmpdir) and publishes tmpdir as the entry.
    template <class Writer>
    void publish(const std::string& stage, const std::string& key, Writer&& writer) const
    {
        if (!enabled())
            return;
        const auto final_dir = entry(stage, key);
        std::filesystem::create_directories(final_dir.parent_path());
        static std::atomic<unsigned> counter{0};
        const auto tmp = final_dir.parent_path() /
                         (".tmp-" + key + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(tmp);
        std::filesystem::create_directories(tmp);
        try {
            writer(tmp);
            std::error_code ec;
            std::filesystem::rename(tmp, final_dir, ec);
            if (ec)
                std::filesystem::remove_all(tmp); // another writer won the race
        } catch (...) {
            std::filesystem::remove_all(tmp);
            throw;
        }
    }

private:
    std::filesystem::path root_;
};

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct StageRecord {
    std::string stage;
    double seconds = 0.0;
    bool cache_hit = false;
};

struct ManifestEntry {
    std::string image;
    std::vector<StageRecord> stages;
    std::vector<std::string> outputs;
    std::string config_hash;
    std::string split;   ///< train / validation / test in a training run
};

struct RunManifest {
    std::string config_hash;
    std::vector<ManifestEntry> entries;
};

inline nlohmann::json manifest_to_json(const RunManifest& m)
{
    nlohmann::json j;
    j["config_hash"] = m.config_hash;
    j["images"] = nlohmann::json::array();
    for (const auto& e : m.entries) {
        nlohmann::json stages = nlohmann::json::array();
        for (const auto& s : e.stages)
            stages.push_back({{"stage", s.stage}, {"seconds", s.seconds}, {"cache_hit", s.cache_hit}});
        nlohmann::json row{{"image", e.image}, {"config_hash", e.config_hash}, {"stages", stages}, {"outputs", e.outputs}};
        if (!e.split.empty())
            row["split"] = e.split;
        j["images"].push_back(std::move(row));
    }
    return j;
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

namespace pipeline_detail {

class StageTimer {
public:
    StageTimer(ManifestEntry& entry, std::string stage) : entry_(entry), stage_(std::move(stage)) {}
    void finish(bool hit)
    {
        entry_.stages.push_back(
            {stage_, std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(), hit});
    }

private:
    ManifestEntry& entry_;
    std::string stage_;
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

/// Wraps stage failures with the stage name and image id; DataError et al. keep their kind.
template <class Fn>
auto run_stage(const std::string& stage, const std::string& image, Fn&& fn)
{
    try {
        return fn();
    } catch (const DivergenceError& e) {
        throw DivergenceError("[" + stage + "] " + image + ": " + e.what(), e.epoch);
    } catch (const Error& e) {
        switch (e.kind()) {
        case ErrorKind::Io: throw IoError("[" + stage + "] " + image + ": " + e.what());
        case ErrorKind::Format: throw FormatError("[" + stage + "] " + image + ": " + e.what());
        case ErrorKind::Parameter: throw ParameterError("[" + stage + "] " + image + ": " + e.what());
        case ErrorKind::Data: throw DataError("[" + stage + "] " + image + ": " + e.what());
        case ErrorKind::Training: throw TrainingError("[" + stage + "] " + image + ": " + e.what());
        default: throw ContractError("[" + stage + "] " + image + ": " + e.what());
        }
    }
}

inline std::string level_file(int level)
{
    std::ostringstream out;
    out << "level_" << std::setw(2) << std::setfill('0') << level << ".raw";
    return out.str();
}

inline void save_level_maps(const std::vector<SaliencyMap>& maps, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    for (std::size_t l = 0; l < maps.size(); ++l)
        save_raw_map(maps[l], dir / level_file(int(l)));
}

inline std::vector<SaliencyMap> load_level_maps(const std::filesystem::path& dir)
{
    std::vector<SaliencyMap> maps;
    for (int l = 0;; ++l) {
        auto p = dir / level_file(l);
        if (!std::filesystem::exists(p))
            break;
        maps.push_back(load_raw_map(p));
    }
    if (maps.empty())
        throw DataError("no level maps (level_00.raw, ...) in '" + dir.string() + "'");
    return maps;
}

} // namespace pipeline_detail

/// One image's trip through the pipeline. Stages are computed lazily and cached.
class ImageJob {
public:
    ImageJob(std::filesystem::path path, const PipelineConfig& cfg, const StageCache& cache)
        : path_(std::move(path)), cfg_(cfg), cache_(cache)
    {
        entry_.image = path_.filename().string();
        entry_.config_hash = config_hash(cfg);
    }

    const std::string& name() const noexcept { return entry_.image; }
    std::string stem() const { return path_.stem().string(); }
    ManifestEntry& manifest() noexcept { return entry_; }

    const ImageRGB& image()
    {
        if (!image_) {
            image_ = pipeline_detail::run_stage("load", name(), [&] { return load_image(path_); });
            image_hash_ = hash_image(*image_);
        }
        return *image_;
    }

    const SegmentationHierarchy& hierarchy()
    {
        if (hier_)
            return *hier_;
        const auto& img = image();
        segment_key_ = Hasher().update("segment/1").update(config_section(cfg_, "segment")).update(image_hash_).hex();
        pipeline_detail::StageTimer timer(entry_, "segment");
        if (cache_.has("segment", segment_key_)) {
            hier_ = pipeline_detail::run_stage("segment", name(), [&] {
                return load_hierarchy(cache_.entry("segment", segment_key_), &img);
            });
            timer.finish(true);
            return *hier_;
        }
        hier_ = pipeline_detail::run_stage("segment", name(), [&] {
            const auto& sp = cfg_.segment;
            auto part = superpixels(img, sp.scale_k, sp.effective_min_size(img));
            auto edges = edge_strength(img, sp.edge_sigma);
            return build_hierarchy(part, edges, level_targets(sp.levels, sp.fine, sp.coarse));
        });
        cache_.publish("segment", segment_key_, [&](const std::filesystem::path& dir) { save_hierarchy(*hier_, dir); });
        timer.finish(false);
        return *hier_;
    }

    /// S-3 records for every (level, region), always the full A|B|C vector.
    const std::vector<FeatureRecord>& features(const Pixel& mean_pixel)
    {
        if (features_)
            return *features_;
        const auto& hier = hierarchy();
        const auto& fp = cfg_.features;
        Hasher h;
        h.update("features/1").update(segment_key_).update(fp.extractor).update(std::to_string(fp.warp_side));
        h.update(mean_pixel.data(), sizeof(float) * 3);
        if (fp.extractor.rfind("file:", 0) == 0)
            h.update(hash_file(external_feature_path()));
        features_key_ = h.hex();
        pipeline_detail::StageTimer timer(entry_, "features");
        if (cache_.has("features", features_key_)) {
            features_ = pipeline_detail::run_stage("features", name(), [&] {
                return load_features(cache_.entry("features", features_key_) / "features.s3fv");
            });
            timer.finish(true);
            return *features_;
        }
        int dimension = 0;
        features_ = pipeline_detail::run_stage("features", name(), [&] {
            if (fp.extractor == "builtin") {
                BuiltinExtractor ex(fp.warp_side);
                dimension = ex.dimension();
                return extract_all(image(), hier, ex, mean_pixel);
            }
            auto recs = load_features(external_feature_path(), &dimension);
            FeatureTable table(recs);
            for (int l = 0; l < hier.level_count(); ++l)
                for (int r = 0; r < hier.levels[l].region_count; ++r)
                    table.at(l, r);
            return recs;
        });
        cache_.publish("features", features_key_, [&](const std::filesystem::path& dir) {
            save_features(dir / "features.s3fv", dimension, *features_);
        });
        timer.finish(false);
        return *features_;
    }

    /// Per-level maps from the regressor, before refinement.
    const std::vector<SaliencyMap>& level_maps(const RegressorModel& model, const std::string& model_hash,
                                               const FeatureTag& tag)
    {
        if (levels_)
            return *levels_;
        const auto& feats = features(tag.mean_pixel);
        const auto& hier = hierarchy();
        scores_key_ = Hasher().update("score/1").update(features_key_).update(model_hash).update(to_string(tag.blocks)).hex();
        pipeline_detail::StageTimer timer(entry_, "score");
        if (cache_.has("score", scores_key_)) {
            levels_ = pipeline_detail::load_level_maps(cache_.entry("score", scores_key_));
            timer.finish(true);
            return *levels_;
        }
        levels_ = pipeline_detail::run_stage("score", name(), [&] {
            FeatureTable table(feats);
            std::vector<SaliencyMap> maps;
            for (int l = 0; l < hier.level_count(); ++l)
                maps.push_back(score_level(model, hier, l, table, tag.blocks));
            return maps;
        });
        cache_.publish("score", scores_key_,
                       [&](const std::filesystem::path& dir) { pipeline_detail::save_level_maps(*levels_, dir); });
        timer.finish(false);
        return *levels_;
    }

    /// Level maps after spatial-coherence refinement (or unchanged when disabled).
    const std::vector<SaliencyMap>& refined_maps(const RegressorModel& model, const std::string& model_hash,
                                                 const FeatureTag& tag)
    {
        if (refined_)
            return *refined_;
        const auto& raw = level_maps(model, model_hash, tag);
        if (!cfg_.coherence) {
            refined_ = raw;
            return *refined_;
        }
        const auto key = Hasher().update("refine/1").update(scores_key_).update(segment_key_).hex();
        pipeline_detail::StageTimer timer(entry_, "refine");
        if (cache_.has("refine", key)) {
            refined_ = pipeline_detail::load_level_maps(cache_.entry("refine", key));
            timer.finish(true);
            return *refined_;
        }
        refined_ = pipeline_detail::run_stage("refine", name(), [&] {
            const auto& hier = hierarchy();
            const auto graph = build_graph(hier.base, hier.edges);
            std::vector<SaliencyMap> maps;
            for (const auto& m : raw)
                maps.push_back(refine_map(m, hier.base, graph));
            return maps;
        });
        cache_.publish("refine", key,
                       [&](const std::filesystem::path& dir) { pipeline_detail::save_level_maps(*refined_, dir); });
        timer.finish(false);
        return *refined_;
    }

private:
    std::filesystem::path external_feature_path() const
    {
        return std::filesystem::path(cfg_.features.extractor.substr(5)) / (stem() + ".s3fv");
    }

    std::filesystem::path path_;
    const PipelineConfig& cfg_;
    const StageCache& cache_;
    ManifestEntry entry_;
    std::optional<ImageRGB> image_;
    std::string image_hash_, segment_key_, features_key_, scores_key_;
    std::optional<SegmentationHierarchy> hier_;
    std::optional<std::vector<FeatureRecord>> features_;
    std::optional<std::vector<SaliencyMap>> levels_, refined_;
};

// ---------------------------------------------------------------------------
// Parallel helper
// ---------------------------------------------------------------------------

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Results must be written by index;
/// the first exception in index order is rethrown.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn)
{
    std::vector<std::exception_ptr> errors(n);
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> workers;
        for (int t = 0; t < std::min<int>(threads, int(n)); ++t)
            workers.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
    }
    for (auto& e : errors)
        if (e)
            std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Corpus
// ---------------------------------------------------------------------------

struct CorpusItem {
    std::string name;
    std::filesystem::path image;
    std::filesystem::path mask;
};

inline bool is_raster_file(const std::filesystem::path& p)
{
    auto ext = p.extension().string();
    return ext == ".png" || ext == ".ppm";
}

/// CORPUS/images/<stem>.{png,ppm} paired with CORPUS/masks/<stem>.png, sorted by name.
inline std::vector<CorpusItem> list_corpus(const std::filesystem::path& corpus)
{
    const auto images = corpus / "images", masks = corpus / "masks";
    if (!std::filesystem::is_directory(images))
        throw DataError("corpus '" + corpus.string() + "' has no images/ directory");
    std::vector<CorpusItem> items;
    std::vector<std::string> missing;
    for (const auto& e : std::filesystem::directory_iterator(images)) {
        if (!e.is_regular_file() || !is_raster_file(e.path()))
            continue;
        CorpusItem it{e.path().filename().string(), e.path(), masks / (e.path().stem().string() + ".png")};
        if (!std::filesystem::exists(it.mask))
            missing.push_back(it.name);
        items.push_back(std::move(it));
    }
    if (!missing.empty()) {
        std::sort(missing.begin(), missing.end());
        std::string list;
        for (const auto& m : missing)
            list += (list.empty() ? "" : ", ") + m;
        throw DataError("corpus images without ground truth in masks/: " + list);
    }
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
    return items;
}

struct CorpusSplit {
    std::vector<CorpusItem> train, validation, test;
};

/// Orders items by SHA-256 of the file name and cuts the sequence by the configured fractions.
inline CorpusSplit split_corpus(std::vector<CorpusItem> items, const SplitParams& sp)
{
    std::vector<std::pair<std::string, CorpusItem>> keyed;
    for (auto& it : items)
        keyed.emplace_back(sha256_hex(it.name), std::move(it));
    std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    const std::size_t n = keyed.size();
    const auto n_train = std::size_t(std::llround(sp.train * double(n)));
    const auto n_val = std::min(n - std::min(n, n_train), std::size_t(std::llround(sp.validation * double(n))));
    CorpusSplit s;
    for (std::size_t i = 0; i < n; ++i) {
        auto& dst = i < n_train ? s.train : (i < n_train + n_val ? s.validation : s.test);
        dst.push_back(std::move(keyed[i].second));
    }
    return s;
}

/// Desk-scale corpus variation: 1-3 shapes, mixed contrast, 0-3 clutter blobs, a quarter
/// touching the border.
inline SyntheticSpec corpus_spec(std::uint64_t seed, int index, int width, int height)
{
    Rng rng(seed * 1000003ULL + std::uint64_t(index));
    SyntheticSpec spec;
    spec.width = width;
    spec.height = height;
    spec.shapes = 1 + int(rng.below(3));
    spec.touch_border = index % 4 == 3;
    spec.contrast = rng.uniform(0.35, 1.0);
    spec.texture = 0.03;
    spec.distractors = int(rng.below(4));
    spec.min_extent = spec.shapes == 1 ? 0.21 : 0.14;
    spec.max_extent = spec.shapes == 1 ? 0.38 : 0.25;
    return spec;
}

/// Writes CORPUS/images/img_NNN.png and CORPUS/masks/img_NNN.png.
inline void write_synthetic_corpus(const std::filesystem::path& dir, int count, std::uint64_t seed, int width = 96,
                                   int height = 72)
{
    std::filesystem::create_directories(dir / "images");
    std::filesystem::create_directories(dir / "masks");
    for (int i = 0; i < count; ++i) {
        auto sample = gen_synthetic(seed * 7919ULL + std::uint64_t(i), corpus_spec(seed, i, width, height));
        std::ostringstream name;
        name << "img_" << std::setw(3) << std::setfill('0') << i << ".png";
        save_image(sample.image, dir / "images" / name.str());
        save_mask(sample.mask, dir / "masks" / name.str());
    }
}

// ---------------------------------------------------------------------------
// Training and prediction
// ---------------------------------------------------------------------------

struct TrainResult {
    RegressorModel model;
    FusionWeights weights;
    FeatureTag tag;
    CorpusSplit split;
    RunManifest manifest;
};

inline Pixel mean_pixel_of(const std::vector<CorpusItem>& items)
{
    std::array<double, 3> sum{};
    double count = 0.0;
    for (const auto& it : items) {
        auto img = load_image(it.image);
        for (std::size_t i = 0; i < img.pixel_count(); ++i)
            for (int c = 0; c < 3; ++c)
                sum[c] += img.data[3 * i + c];
        count += double(img.pixel_count());
    }
    return {float(sum[0] / count), float(sum[1] / count), float(sum[2] / count)};
}

inline std::string model_hash(const RegressorModel& model)
{
    auto bytes = serialize_model(model);
    return Hasher().update(bytes.data(), bytes.size()).hex();
}

/// Trains the regressor on the train split (samples pooled over all levels and images), then
/// fits fusion weights on the validation split's refined level maps.
inline TrainResult run_train(const std::filesystem::path& corpus, const PipelineConfig& cfg)
{
    cfg.validate();
    TrainResult res;
    res.split = split_corpus(list_corpus(corpus), cfg.split);
    if (res.split.train.empty() || res.split.validation.empty())
        throw ParameterError("run-train: empty train or validation split (" + std::to_string(res.split.train.size()) +
                             " / " + std::to_string(res.split.validation.size()) + " images)");
    const auto cache = StageCache::from_config(cfg);
    res.manifest.config_hash = config_hash(cfg);

    FeatureTag& tag = res.tag;
    tag.extractor = cfg.features.extractor == "builtin" ? BuiltinExtractor(cfg.features.warp_side).name()
                                                        : cfg.features.extractor;
    tag.side = cfg.features.warp_side;
    tag.blocks = cfg.features.blocks;
    tag.levels = cfg.segment.levels;
    tag.mean_pixel = cfg.features.mean_pixel ? *cfg.features.mean_pixel : mean_pixel_of(res.split.train);

    std::vector<std::unique_ptr<ImageJob>> train_jobs, val_jobs;
    for (const auto& it : res.split.train)
        train_jobs.push_back(std::make_unique<ImageJob>(it.image, cfg, cache));
    for (const auto& it : res.split.validation)
        val_jobs.push_back(std::make_unique<ImageJob>(it.image, cfg, cache));

    std::vector<std::vector<TrainingSample>> per_image(train_jobs.size());
    parallel_for(train_jobs.size(), cfg.threads, [&](std::size_t i) {
        auto& job = *train_jobs[i];
        const auto& feats = job.features(tag.mean_pixel);
        const auto gt = load_mask(res.split.train[i].mask);
        per_image[i] = pipeline_detail::run_stage("samples", job.name(), [&] {
            return make_samples(job.hierarchy(), gt, FeatureTable(feats), tag.blocks);
        });
    });
    std::vector<TrainingSample> samples;
    for (auto& v : per_image)
        for (auto& s : v)
            samples.push_back(std::move(s));
    res.model = pipeline_detail::run_stage("train", corpus.filename().string(), [&] { return train(samples, cfg.train); });
    res.model.feature_tag = format_feature_tag(tag);
    const auto mhash = model_hash(res.model);

    std::vector<std::vector<SaliencyMap>> val_maps(val_jobs.size());
    std::vector<LabelMask> val_gts(val_jobs.size());
    parallel_for(val_jobs.size(), cfg.threads, [&](std::size_t i) {
        val_maps[i] = val_jobs[i]->refined_maps(res.model, mhash, tag);
        val_gts[i] = load_mask(res.split.validation[i].mask);
    });
    std::string val_names;
    for (const auto& it : res.split.validation)
        val_names += it.name + "\n";
    res.weights = pipeline_detail::run_stage("fuse-fit", corpus.filename().string(), [&] {
        return fit_weights(val_maps, val_gts, "validation:" + sha256_hex(val_names).substr(0, 16));
    });

    for (auto& j : train_jobs) {
        res.manifest.entries.push_back(j->manifest());
        res.manifest.entries.back().split = "train";
    }
    for (auto& j : val_jobs) {
        res.manifest.entries.push_back(j->manifest());
        res.manifest.entries.back().split = "validation";
    }
    for (const auto& it : res.split.test)
        res.manifest.entries.push_back({it.name, {}, {}, res.manifest.config_hash, "test"});
    return res;
}

struct PredictResult {
    SaliencyMap map;
    std::vector<SaliencyMap> level_maps;     ///< regressor output per level
    std::vector<SaliencyMap> refined_maps;   ///< after coherence refinement
    ManifestEntry manifest;
};

/// Checks that a model and fusion weights belong together and match the config.
inline FeatureTag check_predict_inputs(const PipelineConfig& cfg, const RegressorModel& model,
                                       const FusionWeights& weights)
{
    const auto tag = parse_feature_tag(model.feature_tag);
    if (tag.levels != cfg.segment.levels || weights.levels() != cfg.segment.levels)
        throw ParameterError("run-predict: level count mismatch (config " + std::to_string(cfg.segment.levels) +
                             ", model " + std::to_string(tag.levels) + ", weights " +
                             std::to_string(weights.levels()) + ")");
    const std::string configured = cfg.features.extractor == "builtin"
                                       ? BuiltinExtractor(cfg.features.warp_side).name()
                                       : cfg.features.extractor;
    if (tag.extractor != configured || tag.side != cfg.features.warp_side)
        throw ParameterError("run-predict: model was trained with extractor '" + tag.extractor + "' (side " +
                             std::to_string(tag.side) + "), config selects '" + configured + "'");
    return tag;
}

/// Full per-image flow. When out_path is non-empty the fused map is written there (PNG, or raw
/// float for a .raw extension) via a temporary file, so failures leave no partial output.
inline PredictResult run_predict(const std::filesystem::path& image_path, const PipelineConfig& cfg,
                                 const RegressorModel& model, const FusionWeights& weights,
                                 const std::filesystem::path& out_path = {}, const StageCache* cache_override = nullptr)
{
    cfg.validate();
    const auto tag = check_predict_inputs(cfg, model, weights);
    const StageCache default_cache = StageCache::from_config(cfg);
    const StageCache& cache = cache_override ? *cache_override : default_cache;
    ImageJob job(image_path, cfg, cache);
    const auto mhash = model_hash(model);
    PredictResult res;
    res.refined_maps = job.refined_maps(model, mhash, tag);
    res.level_maps = job.level_maps(model, mhash, tag);
    {
        pipeline_detail::StageTimer timer(job.manifest(), "fuse");
        res.map = pipeline_detail::run_stage("fuse", job.name(), [&] { return fuse(res.refined_maps, weights); });
        timer.finish(false);
    }
    if (!out_path.empty()) {
        auto tmp = out_path;
        tmp += ".partial";
        try {
            if (out_path.extension() == ".raw")
                save_raw_map(res.map, tmp);
            else
                save_map(res.map, tmp);
            std::filesystem::rename(tmp, out_path);
        } catch (...) {
            std::filesystem::remove(tmp);
            throw;
        }
        job.manifest().outputs.push_back(out_path.string());
    }
    res.manifest = job.manifest();
    return res;
}

} // namespace salient
