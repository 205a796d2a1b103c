#include "commands.hpp"

#include <cfgloco/checkpoint.hpp>
#include <cfgloco/control.hpp>
#include <cfgloco/csv.hpp>
#include <cfgloco/dataset.hpp>
#include <cfgloco/errors.hpp>
#include <cfgloco/grad_check.hpp>
#include <cfgloco/guidance.hpp>
#include <cfgloco/train.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>

namespace fs = std::filesystem;
using namespace cfgloco;

namespace cli {

void capture_config(const CLI::App& root, RunContext& ctx, const std::string& command) {
    ctx.command = command;
    // keep global keys and the running subcommand's section; the text can be
    // passed back through --config
    std::stringstream all(root.config_to_str(true, false));
    std::string line, kept;
    while (std::getline(all, line)) {
        const auto key = line.substr(0, line.find('='));
        if (key.find('.') == std::string::npos || key.rfind(command + ".", 0) == 0) kept += line + '\n';
    }
    ctx.resolved_config = kept;
}

std::vector<double> parse_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size()) throw InvalidArgument("not a number in list: '" + item + "'");
        out.push_back(v);
    }
    if (out.empty()) throw InvalidArgument("empty list '" + text + "'");
    return out;
}

namespace {

// "0.8" means vx=0.8; anything else goes through the component parser.
VelocityTarget parse_target(const std::string& spec) {
    if (spec.find('=') == std::string::npos) {
        std::size_t used = 0;
        const double v = std::stod(spec, &used);
        if (used != spec.size()) throw InvalidArgument("bad velocity target '" + spec + "'");
        return VelocityTarget::on_axis("vx", v);
    }
    return VelocityTarget::parse(spec);
}

std::string fixed(double v, int digits = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

struct CollectOptions {
    std::size_t steps = 100000;
    std::string output = "dataset.cfgds";
    std::string target;
    double gamma = 0.99;
    int horizon = 50;
    double temperature = 10.0;
    bool no_normalize = false;
    std::string relabel;
    int segment_min = EnvConfig{}.command_segment_min;
    int segment_max = EnvConfig{}.command_segment_max;
    int episode_length = EnvConfig{}.episode_length;
    double init_velocity_scale = EnvConfig{}.init_velocity_scale;
    double push_prob = EnvConfig{}.push_prob;
    double push_fraction = EnvConfig{}.push_fraction;
};

void run_collect(const CollectOptions& o, RunContext& ctx) {
    Manifest manifest(ctx);
    Dataset ds;
    if (!o.relabel.empty()) {
        if (o.target.empty()) throw InvalidArgument("--relabel needs --reward-target");
        ds = load_dataset(o.relabel);
        manifest.input("dataset", o.relabel);
    } else {
        EnvConfig env;
        env.command_segment_min = o.segment_min;
        env.command_segment_max = o.segment_max;
        env.episode_length = o.episode_length;
        env.init_velocity_scale = o.init_velocity_scale;
        env.push_prob = o.push_prob;
        env.push_fraction = o.push_fraction;
        ds = collect_dataset(o.steps, ctx.seed, env);
    }
    if (!o.target.empty()) {
        ReturnStats stats;
        stats.temperature = o.temperature;
        stats.normalize = !o.no_normalize;
        ds = label_returns(label_rewards(std::move(ds), parse_target(o.target)), o.gamma, o.horizon, stats);
    } else {
        ds.labels.reset();
    }
    const fs::path out = ctx.output(o.output);
    save_dataset(ds, out);
    manifest.output("dataset", out);
    manifest.extra()["records"] = ds.size();
    manifest.extra()["episodes"] = ds.episodes.size();
    manifest.extra()["content_sha256"] = dataset_content_hash(ds);
    manifest.extra()["labelled"] = ds.has_returns();
    manifest.write();

    say(ctx, "wrote " + out.string() + ": " + std::to_string(ds.size()) + " records, " +
                 std::to_string(ds.episodes.size()) + " episodes");
    if (ds.has_returns()) {
        const auto& l = *ds.labels;
        say(ctx, "labels: target " + l.target.describe() + ", gamma " + fmt_double(l.gamma) + ", horizon " +
                     std::to_string(l.horizon) + ", A " + fmt_double(l.stats.temperature) +
                     (l.stats.normalize ? ", normalized" : ", unnormalized"));
    } else {
        say(ctx, "no return labels (pass --reward-target to label)");
    }
}

struct TrainOptions {
    std::string dataset;
    std::string output = "model.ckpt";
    std::string resume;
    std::string loss_csv;
    int stop_after = 0;
    TrainConfig train{};
    ModelConfig model{};
};

void write_loss_csv(const fs::path& path, const TrainedModel& m) {
    CsvWriter w(path, {"epoch", "mean_loss"});
    for (std::size_t e = 0; e < m.epoch_losses.size(); ++e)
        w.row({std::to_string(e + 1), fmt_double(m.epoch_losses[e])});
}

void run_train(const TrainOptions& o, RunContext& ctx) {
    const Dataset ds = load_dataset(o.dataset);
    if (!ds.has_returns())
        throw MissingLabelsError("dataset " + o.dataset +
                                 " has no return labels; relabel it with `collect --relabel ... --reward-target ...`");
    const fs::path out = ctx.output(o.output);
    const fs::path loss_path = ctx.output(o.loss_csv.empty() ? fs::path(o.output + ".loss.csv") : fs::path(o.loss_csv));

    // checkpoint and loss curve are refreshed after every epoch
    const auto on_epoch = [&](const TrainedModel& m) {
        save_checkpoint(m, out);
        write_loss_csv(loss_path, m);
        say(ctx, "epoch " + std::to_string(m.epochs_done) + "/" + std::to_string(m.train.epochs) + " loss " +
                     fixed(m.epoch_losses.back(), 5));
    };
    std::optional<int> stop;
    if (o.stop_after > 0) stop = o.stop_after;

    Manifest manifest(ctx);
    manifest.input("dataset", o.dataset);
    TrainedModel m;
    if (!o.resume.empty()) {
        manifest.input("resume", o.resume);
        m = resume_training(load_checkpoint(o.resume), ds, on_epoch, stop);
    } else {
        TrainConfig tc = o.train;
        tc.seed = ctx.seed;
        m = train(ds, o.model, tc, on_epoch, stop);
    }
    save_checkpoint(m, out);
    write_loss_csv(loss_path, m);
    manifest.output("checkpoint", out);
    manifest.output("loss_curve", loss_path);
    manifest.extra()["epochs_done"] = m.epochs_done;
    manifest.extra()["weights_sha256"] = weights_hash(m);
    if (!m.epoch_losses.empty()) manifest.extra()["final_loss"] = m.epoch_losses.back();
    manifest.write();
    say(ctx, "wrote " + out.string() + " (weights " + weights_hash(m).substr(0, 16) + ")");
}

struct SampleOptions {
    std::string model;
    std::string sampler = "ddim";
    int steps = 3;
    double lambda = 1.5;
    double target_return = 1.0;
    std::string skill = "walk";
    double vx = 0.0;
    int count = 1;
    std::string output;
};

void run_sample(const SampleOptions& o, RunContext& ctx) {
    const TrainedModel m = load_checkpoint(o.model);
    const auto net = make_network(m);
    SamplerConfig sc;
    sc.kind = parse_sampler_kind(o.sampler);
    sc.n_steps = o.steps;
    sc.seed = ctx.seed;
    GuidanceConfig g;
    g.lambda = o.lambda;
    g.target_return = o.target_return;
    g.allow_out_of_range = !m.stats.normalize;
    if (o.count < 1) throw InvalidArgument("--count must be >= 1");

    const Skill skill = parse_skill(o.skill);
    EnvState s = rest_state(skill, EnvConfig{});
    s.vx = o.vx;
    Conditioning c;
    c.obs_history = m.norm.normalize_obs(observe(s).transpose().replicate(m.model.t_cond, 1));
    c.skill = static_cast<int>(skill);
    c.return_value = g.effective_target();
    const std::vector<Conditioning> conds(static_cast<std::size_t>(o.count), c);
    const GuidedSample gs = guided_sampler(m, net, sc, g, conds);
    for (const auto& w : gs.warnings) std::cerr << "warning: " << w << '\n';

    const std::vector<std::string> header = {"sample", "t", "a_vx", "a_vy", "a_wz", "a_h", "a_phi"};
    auto rows = [&](auto&& emit) {
        const Eigen::Index T = m.model.horizon;
        for (int k = 0; k < o.count; ++k)
            for (Eigen::Index t = 0; t < T; ++t) {
                std::vector<std::string> f = {std::to_string(k), std::to_string(t)};
                for (Eigen::Index j = 0; j < gs.actions.cols(); ++j) f.push_back(fmt_double(gs.actions(k * T + t, j)));
                emit(f);
            }
    };
    if (o.output.empty() || o.output == "-") {
        auto line = [](const std::vector<std::string>& f) {
            for (std::size_t i = 0; i < f.size(); ++i) std::cout << (i ? "," : "") << f[i];
            std::cout << '\n';
        };
        line(header);
        rows(line);
    } else {
        const fs::path out = ctx.output(o.output);
        {
            CsvWriter w(out, header);
            rows([&](const std::vector<std::string>& f) { w.row(f); });
        }
        Manifest manifest(ctx);
        manifest.input("checkpoint", o.model);
        manifest.output("samples", out);
        manifest.extra()["denoiser_calls"] = gs.denoiser_calls;
        manifest.write();
        say(ctx, "wrote " + out.string());
    }
}

struct GradCheckOptions {
    std::string size = "tiny";
    double step = 1e-5;
    int batch = 3;
    double tolerance = 1e-4;
};

void run_grad_check(const GradCheckOptions& o, RunContext& ctx) {
    GradCheckConfig cfg;
    cfg.model = o.size == "linear" ? GradCheckConfig::linear_model() : GradCheckConfig::tiny_model();
    cfg.step = o.step;
    cfg.batch = o.batch;
    cfg.seed = ctx.seed;
    const GradCheckReport rep = grad_check(cfg);
    std::cout << std::left << std::setw(28) << "group" << std::right << std::setw(8) << "n" << std::setw(14)
              << "max|grad|" << std::setw(14) << "rel err" << '\n';
    for (const auto& g : rep.groups)
        std::cout << std::left << std::setw(28) << g.group << std::right << std::setw(8) << g.n_params
                  << std::setw(14) << std::scientific << std::setprecision(3) << g.max_abs_analytic << std::setw(14)
                  << g.rel_error << std::defaultfloat << '\n';
    std::cout << "max relative error " << std::scientific << rep.max_rel_error << std::defaultfloat << " (tolerance "
              << o.tolerance << ")\n";
    if (!(rep.max_rel_error < o.tolerance))
        throw std::runtime_error("gradient check failed: " + fmt_double(rep.max_rel_error) + " >= " +
                                 fmt_double(o.tolerance));
}

struct LatencyOptionsCli {
    std::string model;
    std::string sampler = "ddim";
    int steps = 3;
    double lambda = 1.5;
    int samples = 200;
    bool unguided = false;
    double budget_ms = 40.0;
    ModelConfig fresh{};
};

void run_latency(const LatencyOptionsCli& o, RunContext& ctx) {
    TrainedModel m;
    if (!o.model.empty()) {
        m = load_checkpoint(o.model);
    } else {
        // untrained weights cost the same per step
        m.model = o.fresh;
        m.model.validate();
        m.norm.obs_mean = Vec::Zero(m.model.obs_dim);
        m.norm.obs_std = Vec::Ones(m.model.obs_dim);
        m.norm.act_mean = Vec::Zero(m.model.action_dim);
        m.norm.act_std = Vec::Ones(m.model.action_dim);
        m.params = DecoderNet<float>(m.model).init_params(ctx.seed);
    }
    SamplerConfig sc;
    sc.kind = parse_sampler_kind(o.sampler);
    sc.n_steps = o.steps;
    sc.seed = ctx.seed;
    GuidanceConfig g;
    g.lambda = o.lambda;
    LatencyOptions lo;
    lo.samples = o.samples;
    lo.guided = !o.unguided;
    const LatencyStats st = latency_probe(m, sc, g, lo);
    std::cout << to_string(sc.kind) << "-" << sc.n_steps << (lo.guided ? " guided" : " unguided") << ": mean "
              << fixed(st.mean_ms, 3) << " ms, p50 " << fixed(st.p50_ms, 3) << " ms, p99 " << fixed(st.p99_ms, 3)
              << " ms, max " << fixed(st.max_ms, 3) << " ms, " << st.denoiser_calls_per_step
              << " network calls/step\n";
    std::cout << "budget " << fixed(o.budget_ms, 1) << " ms: " << (st.p99_ms < o.budget_ms ? "within" : "EXCEEDED")
              << '\n';
    if (!(st.p99_ms < o.budget_ms)) throw std::runtime_error("p99 latency above budget");
}

void add_model_options(CLI::App* sub, ModelConfig& m) {
    sub->add_option("--d-model", m.d_model, "Transformer width")->capture_default_str()->group("Model");
    sub->add_option("--layers", m.n_layers, "Decoder blocks")->capture_default_str()->group("Model");
    sub->add_option("--heads", m.n_heads, "Attention heads")->capture_default_str()->group("Model");
    sub->add_option("--ff-mult", m.ff_mult, "Feed-forward width multiplier")->capture_default_str()->group("Model");
    sub->add_option("--horizon", m.horizon, "Planned actions per sample")->capture_default_str()->group("Model");
    sub->add_option("--t-cond", m.t_cond, "Observation history length")->capture_default_str()->group("Model");
}

}  // namespace

void add_collect(CLI::App& app, RunContext& ctx) {
    auto o = std::make_shared<CollectOptions>();
    auto* sub = app.add_subcommand("collect", "Roll out the scripted expert and store a dataset");
    sub->add_option("--steps", o->steps, "Records per skill")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("-o,--output", o->output, "Dataset file")->capture_default_str();
    sub->add_option("--reward-target,--v-target", o->target,
                    "Velocity target for reward labels, e.g. 0.8 or vy=0.5 (omit to store unlabelled data)");
    sub->add_option("--gamma", o->gamma, "Discount for returns")->capture_default_str();
    sub->add_option("--return-horizon", o->horizon, "Steps summed per return")->capture_default_str();
    sub->add_option("--temperature", o->temperature, "Return temperature A")->capture_default_str();
    sub->add_flag("--no-normalize", o->no_normalize, "Skip min-max scaling of returns");
    sub->add_option("--relabel", o->relabel, "Relabel an existing dataset instead of collecting")
        ->check(CLI::ExistingFile);
    sub->add_option("--segment-min", o->segment_min, "Shortest command segment (steps)")->capture_default_str();
    sub->add_option("--segment-max", o->segment_max, "Longest command segment (steps)")->capture_default_str();
    sub->add_option("--episode-length", o->episode_length, "Steps per episode")->capture_default_str();
    sub->add_option("--init-velocity-scale", o->init_velocity_scale,
                    "Initial base velocity range as a multiple of the command box")
        ->capture_default_str();
    sub->add_option("--push-prob", o->push_prob, "Per-step probability of a velocity kick")->capture_default_str();
    sub->add_option("--push-fraction", o->push_fraction, "Kick size as a fraction of the command box")
        ->capture_default_str();
    sub->callback([o, &ctx, &app] {
        capture_config(app, ctx, "collect");
        run_collect(*o, ctx);
    });
}

void add_train(CLI::App& app, RunContext& ctx) {
    auto o = std::make_shared<TrainOptions>();
    auto* sub = app.add_subcommand("train", "Train the return-conditioned denoiser");
    sub->add_option("--dataset", o->dataset, "Labelled dataset")->required()->check(CLI::ExistingFile);
    sub->add_option("-o,--output", o->output, "Checkpoint file (rewritten every epoch)")->capture_default_str();
    sub->add_option("--resume", o->resume, "Continue from a checkpoint; its own settings apply")
        ->check(CLI::ExistingFile);
    sub->add_option("--loss-csv", o->loss_csv, "Loss curve CSV (default <output>.loss.csv)");
    sub->add_option("--stop-after", o->stop_after, "End after this many total epochs (0: run all)")
        ->capture_default_str();
    auto& t = o->train;
    sub->add_option("--epochs", t.epochs)->capture_default_str()->group("Training");
    sub->add_option("--batch-size", t.batch_size)->capture_default_str()->group("Training");
    sub->add_option("--lr", t.lr, "Peak learning rate (cosine decay)")->capture_default_str()->group("Training");
    sub->add_option("--steps-per-epoch", t.steps_per_epoch, "0: one pass over the windows")
        ->capture_default_str()
        ->group("Training");
    sub->add_option("--grad-clip", t.grad_clip)->capture_default_str()->group("Training");
    sub->add_option("--mask-prob", o->model.mask_prob, "Probability of masking the return")
        ->capture_default_str()
        ->group("Training");
    add_model_options(sub, o->model);
    sub->callback([o, &ctx, &app] {
        capture_config(app, ctx, "train");
        run_train(*o, ctx);
    });
}

void add_sample(CLI::App& app, RunContext& ctx) {
    auto o = std::make_shared<SampleOptions>();
    auto* sub = app.add_subcommand("sample", "Plan action trajectories from a resting start");
    sub->add_option("--model", o->model, "Checkpoint")->required()->check(CLI::ExistingFile);
    sub->add_option("--sampler", o->sampler, "ddpm, ddim or dpmpp2m")->capture_default_str();
    sub->add_option("--sampler-steps", o->steps)->capture_default_str();
    sub->add_option("--lambda", o->lambda, "Guidance scale")->capture_default_str();
    sub->add_option("--target-return", o->target_return)->capture_default_str();
    sub->add_option("--skill", o->skill, "walk or crawl")->capture_default_str();
    sub->add_option("--vx", o->vx, "Initial forward velocity")->capture_default_str();
    sub->add_option("--count", o->count, "Trajectories to draw")->capture_default_str();
    sub->add_option("-o,--output", o->output, "CSV file (default stdout)");
    sub->callback([o, &ctx, &app] {
        capture_config(app, ctx, "sample");
        run_sample(*o, ctx);
    });
}

void add_grad_check(CLI::App& app, RunContext& ctx) {
    auto o = std::make_shared<GradCheckOptions>();
    auto* sub = app.add_subcommand("grad-check", "Finite-difference check of the training gradients");
    sub->add_option("--size", o->size, "tiny or linear")->capture_default_str()->check(CLI::IsMember({"tiny", "linear"}));
    sub->add_option("--step", o->step, "Central-difference step")->capture_default_str();
    sub->add_option("--batch", o->batch)->capture_default_str();
    sub->add_option("--tolerance", o->tolerance, "Fail above this relative error")->capture_default_str();
    sub->callback([o, &ctx, &app] {
        capture_config(app, ctx, "grad-check");
        run_grad_check(*o, ctx);
    });
}

void add_latency(CLI::App& app, RunContext& ctx) {
    auto o = std::make_shared<LatencyOptionsCli>();
    auto* sub = app.add_subcommand("latency", "Time single-env control steps");
    sub->add_option("--model", o->model, "Checkpoint (default: untrained model of the given size)")
        ->check(CLI::ExistingFile);
    sub->add_option("--sampler", o->sampler)->capture_default_str();
    sub->add_option("--sampler-steps", o->steps)->capture_default_str();
    sub->add_option("--lambda", o->lambda)->capture_default_str();
    sub->add_option("--samples", o->samples)->capture_default_str();
    sub->add_flag("--unguided", o->unguided, "Conditional branch only");
    sub->add_option("--budget-ms", o->budget_ms, "Fail when p99 exceeds this")->capture_default_str();
    add_model_options(sub, o->fresh);
    sub->callback([o, &ctx, &app] {
        capture_config(app, ctx, "latency");
        run_latency(*o, ctx);
    });
}

}  // namespace cli
