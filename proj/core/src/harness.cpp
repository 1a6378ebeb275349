#include "sola/harness.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "sola/attention.hpp"
#include "sola/gradcheck.hpp"
#include "sola/range.hpp"

namespace sola {

using nlohmann::json;

bool RunReport::all_passed() const {
    for (const CheckResult& c : checks)
        if (!c.passed) return false;
    return true;
}

std::string RunReport::to_json_string() const {
    json j;
    j["command"] = command;
    j["config_digest"] = config_digest;
    json m = json::object();
    for (const auto& [name, value] : metrics) m[name] = value;
    j["metrics"] = m;
    json cs = json::array();
    for (const CheckResult& c : checks)
        cs.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
    j["checks"] = cs;
    j["wall_time_ms"] = wall_time_ms;
    return j.dump(2);
}

void RunReport::print(std::ostream& os) const {
    os << std::setprecision(15);
    for (const auto& [name, value] : metrics) os << name << " = " << value << '\n';
    for (const CheckResult& c : checks)
        os << (c.passed ? "PASS" : "FAIL") << ' ' << c.name
           << (c.detail.empty() ? "" : " (" + c.detail + ")") << '\n';
}

namespace {
std::string sci(double v) {
    std::ostringstream os;
    os << std::setprecision(6) << std::scientific << v;
    return os.str();
}

void write_file(const std::string& path, const std::string& text) {
    if (path.empty()) return;
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write output file: " + path);
    out << text;
}

void add_blob(Tensor& image, double cy, double cx, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> hue(0.6, 1.0);
    const double amp[3] = {hue(rng), hue(rng), hue(rng)};
    const double sigma = 2.5;
    for (std::size_t y = 0; y < image.extent(0); ++y)
        for (std::size_t x = 0; x < image.extent(1); ++x) {
            const double dy = static_cast<double>(y) - cy;
            const double dx = static_cast<double>(x) - cx;
            const double g = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
            for (std::size_t c = 0; c < 3; ++c) image.at(y, x, c) += amp[c] * g;
        }
}

double cross_entropy(const Tensor& logits, int label, Tensor* g_logits) {
    const double m = std::max(logits[0], logits[1]);
    const double e0 = std::exp(logits[0] - m), e1 = std::exp(logits[1] - m);
    const double z = e0 + e1;
    const double loss = m + std::log(z) - logits[static_cast<std::size_t>(label)];
    if (g_logits) {
        (*g_logits)[0] = e0 / z - (label == 0 ? 1.0 : 0.0);
        (*g_logits)[1] = e1 / z - (label == 1 ? 1.0 : 0.0);
    }
    return loss;
}

double dataset_loss(const Backbone& model, const LinearProjection& head, const ToyTask& task,
                    double* accuracy) {
    double total = 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < task.images.size(); ++i) {
        const Tensor pooled = model.forward_pooled(task.images[i], nullptr);
        const Tensor logits = linear_apply(Tensor({1, pooled.size()}, pooled.values()), head);
        const Tensor row({2}, {logits.at(0, 0), logits.at(0, 1)});
        total += cross_entropy(row, task.labels[i], nullptr);
        const int pred = row[1] > row[0] ? 1 : 0;
        if (pred == task.labels[i]) ++correct;
    }
    if (accuracy)
        *accuracy = static_cast<double>(correct) / static_cast<double>(task.images.size());
    return total / static_cast<double>(task.images.size());
}
}  // namespace

ToyTask make_toy_task(std::size_t per_class, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> pos(4.0, 27.0);
    std::normal_distribution<double> noise(0.0, 0.05);
    ToyTask task;
    for (std::size_t i = 0; i < 2 * per_class; ++i) {
        const int label = static_cast<int>(i % 2);
        Tensor image({32, 32, 3});
        for (std::size_t j = 0; j < image.size(); ++j) image[j] = noise(rng);
        if (label == 0) {
            add_blob(image, pos(rng), pos(rng), rng);
        } else {
            double y0 = pos(rng), x0 = pos(rng), y1 = pos(rng), x1 = pos(rng);
            while (std::hypot(y1 - y0, x1 - x0) < 16.0) {
                y1 = pos(rng);
                x1 = pos(rng);
            }
            add_blob(image, y0, x0, rng);
            add_blob(image, y1, x1, rng);
        }
        task.images.push_back(std::move(image));
        task.labels.push_back(label);
    }
    return task;
}

ToyTrainResult train_toy(Backbone& model, const ToyTask& task, std::size_t steps, double lr) {
    const std::size_t feat = model.config().stage_dims[3];
    // Zero head: logits start neutral and backbone gradients ramp up with the
    // head weights, which keeps plain descent stable at the default rate.
    LinearProjection head = LinearProjection::zeros(feat, 2);

    ToyTrainResult result;
    result.initial_loss = dataset_loss(model, head, task, nullptr);

    // Full-batch descent: the step follows the gradient of the dataset loss.
    const std::size_t batch = task.images.size();
    for (std::size_t step = 0; step < steps; ++step) {
        Backbone grads = model.zero_clone();
        LinearProjection head_grads = LinearProjection::zeros(feat, 2);
        double batch_loss = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t idx = b;
            Backbone::Cache cache;
            const Tensor pooled = model.forward_pooled(task.images[idx], &cache);
            Differentiable logits =
                linear_vjp(Tensor({1, feat}, pooled.values()), head);
            Tensor row({2}, {logits.value.at(0, 0), logits.value.at(0, 1)});
            Tensor g_row({2});
            batch_loss += cross_entropy(row, task.labels[idx], &g_row);
            std::vector<Tensor> pulled = logits.pullback(Tensor({1, 2}, g_row.values()));
            for (std::size_t i = 0; i < head_grads.weight.size(); ++i)
                head_grads.weight[i] += pulled[1][i];
            for (std::size_t i = 0; i < head_grads.bias->size(); ++i)
                (*head_grads.bias)[i] += pulled[2][i];
            model.backward(cache, Tensor({feat}, pulled[0].values()), grads);
        }
        const double inv_batch = 1.0 / static_cast<double>(batch);
        model.apply_gradient(grads, lr * inv_batch);
        for (std::size_t i = 0; i < head.weight.size(); ++i)
            head.weight[i] -= lr * inv_batch * head_grads.weight[i];
        for (std::size_t i = 0; i < head.bias->size(); ++i)
            (*head.bias)[i] -= lr * inv_batch * (*head_grads.bias)[i];
        result.step_losses.push_back(batch_loss * inv_batch);
    }

    result.final_loss = dataset_loss(model, head, task, &result.train_accuracy);
    return result;
}

BackboneConfig micro_config() {
    return BackboneConfig::from_json_string(R"({
        "patch_size": 4,
        "stem_dim": 8,
        "stage_dims": [8, 8, 16, 16],
        "patterns": ["L", "L", "LSL", "LS"],
        "hsb_routes": [ {"src": [1, 1], "dst": [3, 2]} ],
        "mlp_ratio": 2,
        "head_divisor": 8
    })");
}

std::string trace_to_json(const ForwardTrace& trace, const BackboneConfig& cfg) {
    json rows = json::array();
    for (const TraceRow& r : trace.rows) {
        rows.push_back({{"kind", std::string(1, r.kind)},
                        {"stage", r.stage},
                        {"layer", r.layer},
                        {"height", r.height},
                        {"width", r.width},
                        {"dim", r.dim},
                        {"flops", r.flops},
                        {"attn_flops", r.attn_flops}});
    }
    json taps = json::array();
    for (const auto& [key, tensor] : trace.taps)
        taps.push_back({{"stage", key.first},
                        {"layer", key.second},
                        {"tokens", tensor.extent(0)},
                        {"dim", tensor.extent(1)}});
    json j;
    j["config_digest"] = cfg.digest();
    j["layers"] = rows;
    j["taps"] = taps;
    j["pooled_dim"] = trace.pooled.size();
    return j.dump(2);
}

RunReport run_forward(const std::string& config_path, std::size_t resolution, std::uint64_t seed,
                      std::ostream& out, const std::string& out_path) {
    const BackboneConfig cfg = BackboneConfig::load(config_path);
    if (resolution == 0 || resolution % cfg.patch_size != 0)
        throw ConfigError("resolution " + std::to_string(resolution) +
                          " not divisible by patch size " + std::to_string(cfg.patch_size));
    RunReport report;
    report.command = "forward";
    report.config_digest = cfg.digest();

    const Backbone model = Backbone::build(cfg, seed);
    std::mt19937_64 rng(seed + 1);
    const Tensor image = randn(rng, {resolution, resolution, 3}, 1.0);
    const ForwardTrace trace = model.forward(image);

    out << std::setprecision(15);
    for (const TraceRow& r : trace.rows) {
        switch (r.kind) {
            case 'E': out << "stem        "; break;
            case 'M': out << "merge       "; break;
            case 'H': out << "bridge      "; break;
            case 'F': out << "final       "; break;
            default:
                out << '(' << r.stage << ',' << r.layer << ") " << r.kind << "       ";
        }
        out << r.height << 'x' << r.width << 'x' << r.dim << "  flops " << r.flops << '\n';
    }
    for (const auto& [key, tensor] : trace.taps)
        out << "tap (" << key.first << ',' << key.second << ") " << tensor.extent(0) << 'x'
            << tensor.extent(1) << '\n';
    out << "pooled " << trace.pooled.size() << "-vector\n";

    double pooled_sum = 0.0, pooled_sq = 0.0;
    for (std::size_t i = 0; i < trace.pooled.size(); ++i) {
        pooled_sum += trace.pooled[i];
        pooled_sq += trace.pooled[i] * trace.pooled[i];
    }
    out << "pooled_sum " << pooled_sum << "\npooled_l2 " << std::sqrt(pooled_sq) << '\n';
    report.add_metric("tokens", static_cast<double>((resolution / cfg.patch_size) *
                                                    (resolution / cfg.patch_size)));
    report.add_metric("pooled_dim", static_cast<double>(trace.pooled.size()));
    report.add_metric("pooled_sum", pooled_sum);
    report.add_metric("pooled_l2", std::sqrt(pooled_sq));
    report.add_metric("params", static_cast<double>(count_params(model)));
    report.add_metric("flops", static_cast<double>(count_flops(cfg, resolution)));
    report.print(out);
    write_file(out_path, trace_to_json(trace, cfg));
    return report;
}

namespace {
CheckResult check_wkv_scan(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick_n(1, 128), pick_d(1, 8);
    double worst = 0.0;
    for (int inst = 0; inst < 24; ++inst) {
        const std::size_t n = pick_n(rng), d = pick_d(rng);
        Tensor k = randn(rng, {n, d}, 1.0);
        if (inst % 3 == 0)  // stress the log-max stabilization
            for (std::size_t i = 0; i < k.size(); ++i) k[i] = (k[i] > 0 ? 30.0 : -30.0);
        const Tensor v = randn(rng, {n, d}, 1.0);
        const Tensor w = randn(rng, {d}, 0.5);
        const Tensor u = randn(rng, {d}, 0.5);
        const Tensor naive = wkv_naive(k, v, w, u);
        const Tensor scan = wkv_scan(k, v, w, u);
        worst = std::max(worst, max_abs_diff(naive, scan) / std::max(naive.max_abs(), 1e-9));
    }
    return {"wkv_scan_vs_naive", worst <= 1e-8, "max rel err " + sci(worst)};
}

CheckResult check_kernel_specialization(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    for (int inst = 0; inst < 8; ++inst) {
        const std::size_t n = 1 + static_cast<std::size_t>(rng() % 32);
        AttentionInputs inp{randn(rng, {n, 4}, 0.7), randn(rng, {n, 4}, 0.7),
                            randn(rng, {n, 4}, 1.0)};
        worst = std::max(worst,
                         max_abs_diff(kernel_attention(inp, exp_dot_kernel()),
                                      softmax_attention(inp)));
    }
    return {"kernel_specialization", worst <= 1e-12, "max abs diff " + sci(worst)};
}

CheckResult check_linear_associativity(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    for (int inst = 0; inst < 8; ++inst) {
        AttentionInputs inp{randn(rng, {16, 8}, 1.0), randn(rng, {16, 8}, 1.0),
                            randn(rng, {16, 8}, 1.0)};
        const FeatureMap phi = elu_feature_map();
        const LinearAttentionResult right = linear_attention(inp, phi, phi);
        // left grouping materializes the N x N similarity matrix
        Tensor fq({16, 8}), fk({16, 8});
        for (std::size_t i = 0; i < 16; ++i) {
            const auto q = phi({inp.q.data() + i * 8, 8});
            const auto k = phi({inp.k.data() + i * 8, 8});
            for (std::size_t j = 0; j < 8; ++j) {
                fq.at(i, j) = q[j];
                fk.at(i, j) = k[j];
            }
        }
        const Tensor left = matmul(matmul(fq, transpose(fk)), inp.v);
        worst = std::max(worst, max_abs_diff(left, right.output));
    }
    return {"linear_associativity", worst <= 1e-10, "max abs diff " + sci(worst)};
}

CheckResult check_hsb_noop(const BackboneConfig& cfg, std::uint64_t seed) {
    if (cfg.hsb_routes.empty()) return {"hsb_noop", true, "config has no bridge routes"};
    Backbone bridged = Backbone::build(cfg, seed);
    for (HsbParams& r : bridged.routes()) {
        for (std::size_t i = 0; i < r.bridge.weight.size(); ++i) r.bridge.weight[i] = 0.0;
        if (r.bridge.bias)
            for (std::size_t i = 0; i < r.bridge.bias->size(); ++i) (*r.bridge.bias)[i] = 0.0;
    }
    BackboneConfig routeless_cfg = cfg;
    routeless_cfg.hsb_routes.clear();
    const Backbone routeless = Backbone::build(routeless_cfg, seed);
    std::mt19937_64 rng(seed + 7);
    const Tensor image = randn(rng, {32, 32, 3}, 1.0);
    const ForwardTrace a = bridged.forward(image);
    const ForwardTrace b = routeless.forward(image);
    bool equal = a.pooled.size() == b.pooled.size() &&
                 a.final_grid.tokens.size() == b.final_grid.tokens.size();
    if (equal)
        for (std::size_t i = 0; i < a.pooled.size(); ++i)
            if (a.pooled[i] != b.pooled[i]) equal = false;
    if (equal)
        for (std::size_t i = 0; i < a.final_grid.tokens.size(); ++i)
            if (a.final_grid.tokens[i] != b.final_grid.tokens[i]) equal = false;
    return {"hsb_noop", equal, equal ? "bit-for-bit equal" : "outputs differ"};
}

CheckResult check_gradcheck_micro(std::uint64_t seed) {
    const BackboneConfig cfg = micro_config();
    const Backbone model = Backbone::build(cfg, seed);
    std::mt19937_64 rng(seed + 3);
    const Tensor image = randn(rng, {32, 32, 3}, 1.0);

    Backbone work = model;
    std::vector<Tensor*> param_ptrs;
    work.collect(param_ptrs);
    std::vector<Tensor> inputs;
    for (Tensor* t : param_ptrs) inputs.push_back(*t);

    auto f = [&work, &param_ptrs, &image](const std::vector<Tensor>& values) {
        for (std::size_t i = 0; i < param_ptrs.size(); ++i) *param_ptrs[i] = values[i];
        const Tensor pooled = work.forward_pooled(image, nullptr);
        double s = 0.0;
        for (std::size_t i = 0; i < pooled.size(); ++i) s += pooled[i];
        return s;
    };

    Backbone::Cache cache;
    const Tensor pooled = model.forward_pooled(image, &cache);
    Backbone grad_model = model.zero_clone();
    model.backward(cache, Tensor::full({pooled.size()}, 1.0), grad_model);
    std::vector<Tensor*> grad_ptrs;
    grad_model.collect(grad_ptrs);
    std::vector<Tensor> analytic;
    for (Tensor* t : grad_ptrs) analytic.push_back(*t);

    GradCheckOptions opts;
    opts.max_coords_per_tensor = 6;
    opts.seed = seed + 11;
    const double err = grad_check(f, inputs, analytic, opts);
    return {"gradcheck_micro", err <= 1e-3, "max rel err " + sci(err)};
}
}  // namespace

RunReport run_checks(const std::string& config_path, std::ostream& out,
                     const std::string& out_path) {
    const BackboneConfig cfg = BackboneConfig::load(config_path);
    RunReport report;
    report.command = "check";
    report.config_digest = cfg.digest();
    report.checks.push_back(check_wkv_scan(101));
    report.checks.push_back(check_kernel_specialization(102));
    report.checks.push_back(check_linear_associativity(103));
    report.checks.push_back(check_hsb_noop(cfg, 104));
    report.checks.push_back(check_gradcheck_micro(105));
    report.print(out);
    write_file(out_path, report.to_json_string());
    return report;
}

RunReport run_bench(const std::string& config_path, const std::vector<std::size_t>& resolutions,
                    std::ostream& out, const std::string& out_path) {
    const BackboneConfig cfg = BackboneConfig::load(config_path);
    if (resolutions.empty()) throw ConfigError("bench: need at least one resolution");
    for (std::size_t res : resolutions)
        if (res == 0 || res % cfg.patch_size != 0)
            throw ConfigError("bench: resolution " + std::to_string(res) +
                              " not divisible by patch size " + std::to_string(cfg.patch_size));
    RunReport report;
    report.command = "bench";
    report.config_digest = cfg.digest();

    const std::vector<ScalingPoint> points = scaling_curve(cfg, resolutions);
    std::ostringstream csv;
    csv << std::setprecision(14);
    csv << "variant,resolution,tokens,flops\n";
    for (const ScalingPoint& p : points)
        csv << "config," << p.resolution << ',' << p.tokens << ',' << p.flops_config << '\n';
    for (const ScalingPoint& p : points)
        csv << "full_softmax," << p.resolution << ',' << p.tokens << ','
            << p.flops_full_softmax << '\n';
    out << csv.str();

    if (points.size() >= 2) {
        std::vector<double> tokens, f_cfg, f_soft;
        for (const ScalingPoint& p : points) {
            tokens.push_back(static_cast<double>(p.tokens));
            f_cfg.push_back(static_cast<double>(p.flops_config));
            f_soft.push_back(static_cast<double>(p.flops_full_softmax));
        }
        report.add_metric("exponent_config", fit_loglog_slope(tokens, f_cfg));
        report.add_metric("exponent_full_softmax", fit_loglog_slope(tokens, f_soft));
    }
    report.print(out);
    write_file(out_path, csv.str());
    return report;
}

RunReport run_range(double rate, double eps, std::size_t max_depth, std::ostream& out,
                    const std::string& out_path) {
    if (rate <= 0.0) throw ConfigError("range: decay rate must be positive");
    if (eps <= 0.0 || eps >= 1.0) throw ConfigError("range: epsilon must lie in (0, 1)");
    if (max_depth < 1) throw ConfigError("range: max depth must be >= 1");
    RunReport report;
    report.command = "range";

    const std::vector<RangeRow> rows = range_table(rate, eps, max_depth);
    std::ostringstream csv;
    csv << std::setprecision(14);
    csv << "M,sigma,xi,xi_predicted,gaussian_error\n";
    for (const RangeRow& r : rows)
        csv << r.depth << ',' << r.sigma << ',' << r.xi << ',' << r.xi_predicted << ','
            << r.gaussian_error << '\n';
    out << csv.str();

    std::vector<std::size_t> fit_depths;
    for (const RangeRow& r : rows)
        if (r.depth >= 4) fit_depths.push_back(r.depth);
    if (fit_depths.size() >= 4) {
        const ScalingFit fit = fit_sqrt_scaling(fit_depths, rate, eps);
        report.add_metric("exponent", fit.exponent);
        report.add_metric("r_squared", fit.r_squared);
        report.add_metric("constant", fit.constant);
    }
    report.print(out);
    write_file(out_path, csv.str());
    return report;
}

RunReport run_train_toy(const std::string& config_path, std::size_t steps, double lr,
                        std::uint64_t seed, std::ostream& out, const std::string& out_path) {
    const BackboneConfig cfg = BackboneConfig::load(config_path);
    Backbone model = Backbone::build(cfg, seed);
    const std::size_t params = count_params(model);
    if (params > 500000)
        throw ConfigError("train-toy: config has " + std::to_string(params) +
                          " parameters (limit 500000, desk-scale only)");
    RunReport report;
    report.command = "train-toy";
    report.config_digest = cfg.digest();

    const ToyTask task = make_toy_task(32, seed + 1);
    const ToyTrainResult result = train_toy(model, task, steps, lr);

    out << std::setprecision(15);
    for (std::size_t i = 0; i < result.step_losses.size(); ++i)
        if (i % 20 == 0 || i + 1 == result.step_losses.size())
            out << "step " << i << " batch_loss " << result.step_losses[i] << '\n';
    report.add_metric("params", static_cast<double>(params));
    report.add_metric("initial_loss", result.initial_loss);
    report.add_metric("final_loss", result.final_loss);
    report.add_metric("loss_ratio", result.final_loss / result.initial_loss);
    report.add_metric("train_accuracy", result.train_accuracy);
    report.print(out);
    write_file(out_path, report.to_json_string());
    return report;
}

}  // namespace sola
