#include "commands.hpp"

#include <cfgloco/checkpoint.hpp>
#include <cfgloco/control.hpp>
#include <cfgloco/csv.hpp>
#include <cfgloco/errors.hpp>

#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>

namespace fs = std::filesystem;
using namespace cfgloco;

namespace cli {
namespace {

struct EvalOptions {
    std::string experiment;
    std::vector<std::string> models;
    std::vector<std::string> variants;
    std::vector<std::string> samplers;
    int sampler_steps = 3;
    double lambda = 1.5;
    std::string grid = "0,0.5,1,1.5,2,3,5,10";
    bool best_lambda = false;
    double target_return = 1.0;
    int n_envs = 100;
    int steps = 250;
    int switch_step = 125;
    std::string prefix;
    bool traces = false;
};

struct Loaded {
    std::string path;
    TrainedModel model;
};

std::vector<Loaded> load_models(const std::vector<std::string>& paths, Manifest& manifest) {
    if (paths.empty()) throw InvalidArgument("eval needs at least one --model");
    std::vector<Loaded> out;
    for (const auto& p : paths) {
        out.push_back({p, load_checkpoint(p)});
        manifest.input("checkpoint", p);
    }
    return out;
}

EvalConfig base_config(const EvalOptions& o, const RunContext& ctx, const TrainedModel& m, SamplerKind kind) {
    EvalConfig c;
    c.rollout.n_envs = o.n_envs;
    c.rollout.steps = o.steps;
    c.rollout.seed = ctx.seed;
    c.rollout.target = m.target;
    c.sampler.kind = kind;
    c.sampler.n_steps = o.sampler_steps;
    c.sampler.seed = ctx.seed;
    c.guidance.lambda = o.lambda;
    c.guidance.target_return = o.target_return;
    c.guidance.allow_out_of_range = !m.stats.normalize;
    return c;
}

std::vector<SamplerKind> samplers(const EvalOptions& o, std::vector<std::string> fallback) {
    const auto& names = o.samplers.empty() ? fallback : o.samplers;
    std::vector<SamplerKind> out;
    for (const auto& n : names) out.push_back(parse_sampler_kind(n));
    return out;
}

std::string sampler_label(SamplerKind k) {
    switch (k) {
        case SamplerKind::DDPM: return "Ours (DDPM)";
        case SamplerKind::DDIM: return "Ours (DDIM)";
        case SamplerKind::DPMPP2M: return "Ours (DPM++(2M))";
    }
    return "Ours";
}

void print_row(const std::string& label, const std::vector<std::string>& cells) {
    std::cout << std::left << std::setw(20) << label;
    for (const auto& c : cells) std::cout << std::right << std::setw(18) << c;
    std::cout << '\n';
}

std::string cell(double mean, double sd) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3) << mean << " +- " << sd;
    return os.str();
}

void table1(const EvalOptions& o, RunContext& ctx, Manifest& manifest, const fs::path& dir) {
    const auto models = load_models(o.models, manifest);
    const auto kinds = samplers(o, {"ddpm", "ddim", "dpmpp2m"});
    const auto grid = parse_list(o.grid);

    std::vector<std::string> header = {"method"};
    for (const auto& m : models) header.push_back(m.model.target.describe());
    std::vector<EvalReport> reports;
    std::vector<std::vector<std::string>> table;

    std::vector<std::string> expert_row = {"Expert"}, expert_cells;
    for (const auto& m : models) {
        const EvalConfig c = base_config(o, ctx, m.model, SamplerKind::DDIM);
        EvalReport r = eval_expert(c.rollout);
        r.label = "Expert";
        expert_row.push_back(fmt_double(r.mean_reward));
        expert_cells.push_back(cell(r.mean_reward, r.std_reward));
        reports.push_back(std::move(r));
    }
    table.push_back(expert_row);
    print_row("method", {header.begin() + 1, header.end()});
    print_row("Expert", expert_cells);

    for (const SamplerKind kind : kinds) {
        std::vector<std::string> row = {sampler_label(kind)}, cells;
        for (const auto& m : models) {
            EvalConfig c = base_config(o, ctx, m.model, kind);
            if (o.best_lambda) c.guidance.lambda = sweep_lambda(m.model, grid, c).best_lambda();
            EvalReport r = eval_tracking(m.model, c);
            r.label = sampler_label(kind);
            row.push_back(fmt_double(r.mean_reward));
            cells.push_back(cell(r.mean_reward, r.std_reward) + " @" + fmt_double(c.guidance.lambda));
            reports.push_back(std::move(r));
        }
        table.push_back(row);
        print_row(sampler_label(kind), cells);
    }

    const fs::path table_path = dir / "table.csv";
    {
        CsvWriter w(table_path, header);
        for (const auto& r : table) w.row(r);
    }
    const fs::path report_path = dir / "report.csv";
    write_report_csv(report_path, reports);
    manifest.output("table", table_path);
    manifest.output("report", report_path);
}

void lambda_sweep(const EvalOptions& o, RunContext& ctx, Manifest& manifest, const fs::path& dir) {
    const auto models = load_models(o.models, manifest);
    const auto kinds = samplers(o, {"ddim"});
    const auto grid = parse_list(o.grid);
    for (const auto& m : models)
        for (const SamplerKind kind : kinds) {
            const EvalConfig c = base_config(o, ctx, m.model, kind);
            const LambdaSweep sweep = sweep_lambda(m.model, grid, c);
            const std::string label = m.model.target.describe() + "/" + std::string(to_string(kind));
            std::cout << label << '\n';
            for (std::size_t i = 0; i < sweep.points.size(); ++i) {
                const auto& p = sweep.points[i];
                std::cout << "  lambda " << std::setw(5) << p.lambda << "  reward " << cell(p.mean_reward, p.std_reward)
                          << "  terminations " << std::fixed << std::setprecision(2) << p.termination_rate
                          << std::defaultfloat << (i == sweep.best ? "  <- best" : "") << '\n';
            }
            std::string stem = "sweep_" + label;
            for (auto& ch : stem)
                if (ch == '/' || ch == '=' || ch == ',') ch = '_';
            const fs::path path = dir / (stem + ".csv");
            write_sweep_csv(path, sweep, label);
            manifest.output("sweep", path);
        }
}

void ablation(const EvalOptions& o, RunContext& ctx, Manifest& manifest, const fs::path& dir) {
    if (o.variants.empty()) throw InvalidArgument("ablation needs --variant name=checkpoint (repeatable)");
    std::vector<std::unique_ptr<TrainedModel>> owned;
    std::vector<AblationVariant> variants;
    for (const auto& v : o.variants) {
        const auto eq = v.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == v.size())
            throw InvalidArgument("--variant expects name=checkpoint, got '" + v + "'");
        const std::string path = v.substr(eq + 1);
        owned.push_back(std::make_unique<TrainedModel>(load_checkpoint(path)));
        manifest.input("variant:" + v.substr(0, eq), path);
        variants.push_back({v.substr(0, eq), owned.back().get()});
    }
    const auto kinds = samplers(o, {"ddim"});
    const EvalConfig c = base_config(o, ctx, *owned.front(), kinds.front());
    const auto rows = ablate_return_scaling(variants, parse_list(o.grid), c);
    print_row("variant", {"uncond", "best guided", "best lambda", "terminations"});
    for (const auto& r : rows)
        print_row(r.name, {fmt_double(r.unconditional_reward), fmt_double(r.best_guided_reward),
                           fmt_double(r.best_lambda), fmt_double(r.termination_rate)});
    const fs::path path = dir / "ablation.csv";
    write_ablation_csv(path, rows);
    manifest.output("ablation", path);
}

void skill_switch(const EvalOptions& o, RunContext& ctx, Manifest& manifest, const fs::path& dir) {
    const auto models = load_models(o.models, manifest);
    const auto kinds = samplers(o, {"ddim"});
    const EvalConfig c = base_config(o, ctx, models.front().model, kinds.front());
    const SkillSwitchReport rep = skill_switch_experiment(models.front().model, o.switch_step, c);
    std::cout << "switch at step " << rep.switch_step << ", new nominal height " << rep.new_nominal_height << '\n'
              << "settle: " << (rep.settle_steps < 0 ? std::string("never") : fmt_double(rep.settle_seconds) + " s")
              << ", terminations " << rep.terminations << '\n'
              << "reward around switch " << rep.window_reward << ", steady " << rep.steady_reward << ", ratio "
              << rep.window_ratio << '\n';

    const fs::path summary = dir / "switch.csv";
    {
        CsvWriter w(summary, {"metric", "value"});
        w.row({"switch_step", std::to_string(rep.switch_step)});
        w.row({"new_nominal_height", fmt_double(rep.new_nominal_height)});
        w.row({"settle_steps", std::to_string(rep.settle_steps)});
        w.row({"settle_seconds", fmt_double(rep.settle_seconds)});
        w.row({"terminations", std::to_string(rep.terminations)});
        w.row({"window_reward", fmt_double(rep.window_reward)});
        w.row({"steady_reward", fmt_double(rep.steady_reward)});
        w.row({"window_ratio", fmt_double(rep.window_ratio)});
    }
    const fs::path heights = dir / "mean_height.csv";
    {
        CsvWriter w(heights, {"t", "mean_height"});
        for (std::size_t t = 0; t < rep.mean_height.size(); ++t)
            w.row({std::to_string(t), fmt_double(rep.mean_height[t])});
    }
    const fs::path report = dir / "report.csv";
    write_report_csv(report, {rep.eval});
    manifest.output("switch", summary);
    manifest.output("mean_height", heights);
    manifest.output("report", report);
    if (o.traces) {
        const fs::path traces = dir / "traces.csv";
        write_trace_csv(traces, rep.eval);
        manifest.output("traces", traces);
    }
}

}  // namespace

void add_eval(CLI::App& app, RunContext& ctx) {
    auto o = std::make_shared<EvalOptions>();
    auto* sub = app.add_subcommand("eval", "Closed-loop evaluation experiments");
    sub->add_option("--experiment", o->experiment, "table1, lambda-sweep, ablation or skill-switch")
        ->required()
        ->check(CLI::IsMember({"table1", "lambda-sweep", "ablation", "skill-switch"}));
    sub->add_option("--model", o->models, "Checkpoint (repeat for several targets)")->check(CLI::ExistingFile);
    sub->add_option("--variant", o->variants, "name=checkpoint for the ablation (repeatable)");
    sub->add_option("--sampler", o->samplers, "ddpm, ddim, dpmpp2m (repeatable)");
    sub->add_option("--sampler-steps", o->sampler_steps)->capture_default_str();
    sub->add_option("--lambda", o->lambda, "Guidance scale")->capture_default_str();
    sub->add_option("--grid", o->grid, "Comma-separated lambda grid")->capture_default_str();
    sub->add_flag("--best-lambda", o->best_lambda, "table1: sweep the grid and report each row at its best lambda");
    sub->add_option("--target-return", o->target_return)->capture_default_str();
    sub->add_option("--n-envs", o->n_envs)->capture_default_str();
    sub->add_option("--episode-steps", o->steps)->capture_default_str();
    sub->add_option("--switch-step", o->switch_step, "skill-switch: step of the walk to crawl flip")
        ->capture_default_str();
    sub->add_option("--prefix", o->prefix, "Output directory under the output root (default: experiment name)");
    sub->add_flag("--traces", o->traces, "Also write per-step traces");
    sub->callback([o, &ctx, &app] {
        capture_config(app, ctx, "eval");
        const fs::path dir = ctx.output(fs::path(o->prefix.empty() ? o->experiment : o->prefix) / "");
        Manifest manifest(ctx);
        if (o->experiment == "table1") table1(*o, ctx, manifest, dir);
        else if (o->experiment == "lambda-sweep") lambda_sweep(*o, ctx, manifest, dir);
        else if (o->experiment == "ablation") ablation(*o, ctx, manifest, dir);
        else skill_switch(*o, ctx, manifest, dir);
        say(ctx, "wrote " + manifest.write(dir / "manifest.json").string());
    });
}

}  // namespace cli
