#include "commands.hpp"

#include <cfgloco/errors.hpp>

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Return-conditioned diffusion planner for a toy quadruped", "cfgloco"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "TOML/INI config; [collect], [train], ... sections hold subcommand settings");

    cli::RunContext ctx;
    ctx.out_root = cli::default_out_root();
    app.add_option("--seed", ctx.seed, "Seed for every random stream")->capture_default_str();
    app.add_option("--out-dir", ctx.out_root, "Output root (default $CFGLOCO_OUT or .)")->capture_default_str();
    app.add_flag("-q,--quiet", ctx.quiet, "Only print errors and tables");

    cli::add_collect(app, ctx);
    cli::add_train(app, ctx);
    cli::add_eval(app, ctx);
    cli::add_sample(app, ctx);
    cli::add_grad_check(app, ctx);
    cli::add_latency(app, ctx);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const cfgloco::MissingLabelsError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const cfgloco::FormatError& e) {
        std::cerr << "error: bad artifact: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
