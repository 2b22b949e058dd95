// atnlab: train classifiers and attack networks, craft adversarial images and
// measure fooling rates.
//
// Exit codes: 0 success, 2 usage, 3 validation or data error, 4 numerical
// divergence.

#include <iostream>

#include "atnlab/error.hpp"
#include "commands.hpp"

namespace {

constexpr int kUsage = 2;
constexpr int kValidation = 3;
constexpr int kDivergence = 4;

}  // namespace

int main(int argc, char** argv) {
    using namespace atnlab::cli;
    CLI::App app{"adversarial transformation network lab"};
    app.set_version_flag("--version", std::string(ATNLAB_VERSION));
    app.require_subcommand(1);

    struct Command {
        CLI::App* app;
        std::unique_ptr<RunConfig> cfg;
        int (*run)(const RunConfig&);
    };
    std::vector<Command> commands;
    auto add = [&](const char* name, const char* help, void (*setup)(CLI::App*, RunConfig&),
                   int (*run)(const RunConfig&)) {
        CLI::App* sub = app.add_subcommand(name, help);
        auto cfg = std::make_unique<RunConfig>(sub);
        setup(sub, *cfg);
        commands.push_back({sub, std::move(cfg), run});
    };
    add("train-classifier", "train a target classifier", setup_train_classifier, run_train_classifier);
    add("train-atn", "train an attack generator against target classifiers", setup_train_atn, run_train_atn);
    add("attack", "write an archive of adversarial images", setup_attack, run_attack);
    add("eval", "fooling-rate report (transfer matrix, defenses, epsilon sweeps)", setup_eval, run_eval);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kUsage;
    }

    for (auto& c : commands) {
        if (!c.app->parsed()) {
            continue;
        }
        try {
            c.cfg->resolve();
            return c.run(*c.cfg);
        } catch (const UsageError& e) {
            std::cerr << "usage error: " << e.what() << "\n" << c.app->help();
            return kUsage;
        } catch (const atnlab::Error& e) {
            std::cerr << "error (" << atnlab::to_string(e.code()) << "): " << e.what() << "\n";
            return e.code() == atnlab::ErrorCode::NonFiniteLoss ? kDivergence : kValidation;
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            return kValidation;
        }
    }
    return kUsage;
}
