#include <hierctl/runner.hpp>

#include <CLI11.hpp>

int main(int argc, char** argv) {
    CLI::App app{"Hierarchical control experiments for fourth-order parabolic equations"};
    app.require_subcommand(1, 1);
    hierctl::RunRequest req;
    std::uint64_t seed = 0;
    std::string config_path, out_dir = "out";
    int threads = 1;
    app.add_option("--config", config_path, "INI config file")->required()->check(CLI::ExistingFile);
    app.add_option("--out", out_dir, "output directory");
    auto* seed_opt = app.add_option("--seed", seed, "overrides the config seed");
    app.add_option("--threads", threads, "caps parallel sweep width")->check(CLI::PositiveNumber);
    app.fallthrough();
    for (const auto& name : hierctl::subcommands()) app.add_subcommand(name)->fallthrough();
    app.add_flag_callback("--version", [] {
        std::cout << "hierctl " << hierctl::version << "\n";
        throw CLI::Success();
    }, "print version");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : hierctl::ExitUsage;
    }
    req.subcommand = app.get_subcommands().front()->get_name();
    req.config_path = config_path;
    req.out_dir = out_dir;
    if (seed_opt->count()) req.seed = seed;
    req.threads = threads;
    return hierctl::run(req);
}
