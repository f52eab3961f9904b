#include "cmr/cmr.h"

#include <CLI11.hpp>

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace {

constexpr int kUsage = 64;

struct Options {
    std::string config;
    std::vector<std::string> overrides;
    int workers = 0;
    bool quiet = false;
};

std::string take(char* s) {
    std::string out = s ? s : "";
    cmr_string_free(s);
    return out;
}

int report(cmr_status status) {
    std::cerr << "error: " << cmr_last_error() << "\n";
    return static_cast<int>(status);
}

int run_command(const std::string& command, const Options& opt) {
    std::string config = "{}";
    std::string base_dir = std::filesystem::current_path().string();
    if (!opt.config.empty()) {
        std::ifstream in(opt.config, std::ios::binary);
        if (!in) {
            std::cerr << "error: cannot read config '" << opt.config << "'\n";
            return CMR_ERR_IO;
        }
        std::ostringstream ss;
        ss << in.rdbuf();
        config = ss.str();
        base_dir = std::filesystem::absolute(opt.config).parent_path().string();
    }
    std::vector<std::string> sets = opt.overrides;
    if (const char* env = std::getenv("CMR_SEED")) {
        char* end = nullptr;
        errno = 0;
        unsigned long long seed = std::strtoull(env, &end, 10);
        if (!*env || *end || errno == ERANGE || env[0] == '-') {
            std::cerr << "error: CMR_SEED must be a non-negative integer\n";
            return kUsage;
        }
        sets.push_back("seed=" + std::to_string(seed));
    }
    for (const auto& s : sets) {
        char* updated = nullptr;
        cmr_status st = cmr_config_set(config.c_str(), s.c_str(), &updated);
        if (st != CMR_OK) return report(st);
        config = take(updated);
    }

    if (command == "simulate") {
        char* paths = nullptr;
        cmr_status st = cmr_simulate(config.c_str(), base_dir.c_str(), opt.workers, &paths);
        if (st != CMR_OK) return report(st);
        std::string written = take(paths);
        if (!opt.quiet) std::cout << written;
        return 0;
    }

    cmr_result* result = nullptr;
    cmr_status st = cmr_run(command.c_str(), config.c_str(), base_dir.c_str(), opt.workers, &result);
    if (st != CMR_OK) return report(st);
    char* paths = nullptr;
    st = cmr_result_write(result, &paths);
    if (st != CMR_OK) {
        cmr_result_free(result);
        return report(st);
    }
    take(paths);
    if (!opt.quiet) {
        char* summary = nullptr;
        if (cmr_result_summary(result, &summary) == CMR_OK) std::cout << take(summary);
    }
    cmr_result_free(result);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Doubly robust treatment effect estimation from multi-source data"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(cmr_version()));

    Options opt;
    std::string chosen;
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"ate-internal", "Average treatment effects in each internal source population"},
        {"ate-external", "Average treatment effect in the external target population"},
        {"ste-internal", "Subgroup treatment effects in each internal source population"},
        {"ste-external", "Subgroup treatment effects in the external target population"},
        {"simulate", "Generate synthetic multi-source and external datasets"},
    };
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("-c,--config", opt.config, "JSON run configuration")->check(CLI::ExistingFile);
        sub->add_option("--set", opt.overrides, "Override a config key (dotted.key=value); repeatable");
        sub->add_option("-w,--workers", opt.workers, "Worker threads (0 = all available)")->check(CLI::NonNegativeNumber);
        sub->add_flag("-q,--quiet", opt.quiet, "Do not print the summary");
        sub->callback([&chosen, name = name] { chosen = name; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }
    return run_command(chosen, opt);
}
