// Train on a small synthetic corpus, then predict and score one held-out image.
#include <salient/salient.hpp>

#include <cstdlib>
#include <iostream>

int main(int argc, char** argv)
{
    namespace fs = std::filesystem;
    using namespace salient;

    const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "salient_quickstart";
    fs::create_directories(work);

    try {
        write_synthetic_corpus(work / "corpus", 16, 7);

        PipelineConfig cfg;
        cfg.segment.levels = 6;
        cfg.segment.fine = 40;
        cfg.segment.coarse = 4;
        cfg.segment.scale_k = 20;
        cfg.segment.min_size = 6;
        cfg.train.hidden1 = cfg.train.hidden2 = 32;
        cfg.train.epochs = 8;
        cfg.train.stdev_floor = 0.05;
        cfg.split = {0.5, 0.25, 0.25};
        cfg.cache_dir = (work / "cache").string();

        auto trained = run_train(work / "corpus", cfg);
        std::cout << "trained on " << trained.split.train.size() << " images, final loss "
                  << trained.model.final_loss() << "\n";
        save_model(trained.model, work / "model.mdfr");
        save_weights(trained.weights, work / "weights.json");

        const auto& item = trained.split.test.front();
        auto res = run_predict(item.image, cfg, trained.model, trained.weights, work / "saliency.png");
        auto e = evaluate_image(res.map, load_mask(item.mask));
        std::cout << item.name << ": F " << e.f << ", MAE " << e.mae << "\n"
                  << "map written to " << (work / "saliency.png").string() << "\n";
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e.kind());
    }
    return 0;
}
