// Command-line front end: quantize weight matrices against calibration
// activations, dequantize, evaluate the reconstruction loss, and report bit
// budgets. JSON goes to stdout, logs to stderr.

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "atq/format.hpp"
#include "atq/hessian.hpp"
#include "atq/quantizer.hpp"
#include "atq/tensor_file.hpp"

using json = nlohmann::ordered_json;

namespace {

json bit_report_json(const atq::BitReport& report) {
    json j;
    j["b_c"] = report.b_c;
    j["b_i"] = report.b_i;
    j["b_lr"] = report.b_lr;
    j["b_total"] = report.b_total;
    if (std::isnan(report.file_overhead_bytes)) {
        j["file_overhead_bytes"] = nullptr;
    } else {
        j["file_overhead_bytes"] = report.file_overhead_bytes;
    }
    return j;
}

json config_json(const atq::QuantConfig& cfg) {
    return json{{"d", cfg.d},
                {"n", cfg.n},
                {"k", cfg.k},
                {"damping", cfg.damping_rel},
                {"codebook_int8", cfg.codebook_int8},
                {"lowrank_r", cfg.lowrank_r},
                {"seed", cfg.seed}};
}

struct CommonQuantFlags {
    atq::QuantConfig cfg;
    std::string lowrank_str;
    CLI::Option* lowrank_opt = nullptr;

    void attach(CLI::App* cmd) {
        cmd->add_option("-d", cfg.d, "codebook entry dimension (columns per group)");
        cmd->add_option("-n", cfg.n, "codebook entries");
        cmd->add_option("-k", cfg.k, "rows covered by one codebook block");
        cmd->add_option("--damping", cfg.damping_rel, "relative Hessian damping")
            ->capture_default_str();
        cmd->add_flag("--codebook-int8", cfg.codebook_int8,
                      "sub-quantize codebooks to int8");
        lowrank_opt = cmd->add_option("--lowrank-r", lowrank_str,
                                      "residual low-rank rank (default min(N,M)/100 "
                                      "when given without a value)")
                          ->expected(0, 1);
        cmd->add_option("--seed", cfg.seed, "PRNG seed")->capture_default_str();
        cmd->add_option("--kmeans-iters", cfg.kmeans_max_iters, "Lloyd iteration cap")
            ->capture_default_str();
        cmd->add_option("--flip-passes", cfg.flip_passes, "flip refinement sweeps")
            ->capture_default_str();
    }

    // resolves the optional-value flag against the matrix shape
    void resolve_lowrank(atq::Index rows, atq::Index cols) {
        if (lowrank_opt == nullptr || lowrank_opt->count() == 0) {
            cfg.lowrank_r = 0;
            return;
        }
        if (lowrank_str.empty()) {
            const atq::Index m = std::min(rows, cols);
            cfg.lowrank_r = (m + 99) / 100;
        } else {
            cfg.lowrank_r = std::stoll(lowrank_str);
        }
    }
};

int run_quantize(const std::string& weights_path, const std::string& calib_path,
                 const std::string& out_path, CommonQuantFlags& flags, bool fast_order,
                 const std::string& init_from) {
    const auto t0 = std::chrono::steady_clock::now();
    const atq::Matrix w = atq::load_matrix(weights_path);
    const atq::CalibrationBatch calib = atq::ingest_calibration(calib_path, w.cols());
    flags.resolve_lowrank(w.rows(), w.cols());
    atq::validate_config(flags.cfg, w.rows(), w.cols());

    atq::HessianState hess =
        atq::finalize_hessian(atq::accumulate_hessian(calib), flags.cfg.damping_rel);

    atq::QuantizeOptions opts;
    opts.fast_order = fast_order;
    std::optional<atq::QuantizedLayer> warm;
    if (!init_from.empty()) {
        warm = atq::load_layer(init_from);
        opts.warm_start = &*warm;
    }

    const atq::QuantizeResult result = atq::quantize_matrix(w, hess, flags.cfg, opts);
    atq::save_layer(result.layer, out_path);

    const atq::QuantizedLayer baseline = atq::quantize_rtn(w, flags.cfg);
    const double loss_before = atq::proxy_loss(w, atq::dequantize(baseline), hess);
    const double loss_after = atq::proxy_loss(w, atq::dequantize(result.layer), hess);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    json out;
    out["command"] = "quantize";
    out["rows"] = w.rows();
    out["cols"] = w.cols();
    out["config"] = config_json(flags.cfg);
    out["bpw"] = bit_report_json(atq::bits_per_weight(flags.cfg, w.rows(), w.cols()));
    out["proxy_loss_before"] = loss_before; // round-to-nearest baseline
    out["proxy_loss_after"] = loss_after;
    out["wall_time_s"] = wall;
    out["seed"] = flags.cfg.seed;
    out["output"] = out_path;
    std::cout << out.dump() << "\n";
    return 0;
}

int run_dequant(const std::string& in_path, const std::string& out_path) {
    const atq::QuantizedLayer layer = atq::load_layer(in_path);
    const atq::Matrix what = atq::dequantize(layer);
    atq::store_matrix(what, out_path, atq::Precision::Fp32);
    json out;
    out["command"] = "dequant";
    out["rows"] = what.rows();
    out["cols"] = what.cols();
    out["output"] = out_path;
    std::cout << out.dump() << "\n";
    return 0;
}

int run_eval(const std::string& layer_path, const std::string& weights_path,
             const std::string& calib_path, double damping, const std::string& csv_path,
             std::uint64_t seed) {
    const atq::QuantizedLayer layer = atq::load_layer(layer_path);
    const atq::Matrix w = atq::load_matrix(weights_path);
    if (w.rows() != layer.rows || w.cols() != layer.cols) {
        throw atq::ValidationError("layer is " + std::to_string(layer.rows) + "x" +
                                   std::to_string(layer.cols) + ", weights are " +
                                   std::to_string(w.rows()) + "x" + std::to_string(w.cols()));
    }
    const atq::CalibrationBatch calib = atq::ingest_calibration(calib_path, w.cols());
    const atq::HessianState hess =
        atq::finalize_hessian(atq::accumulate_hessian(calib), damping);
    const atq::Matrix what = atq::dequantize(layer);
    const double loss = atq::proxy_loss(w, what, hess);

    // diagonal-block contribution per column group (cross terms excluded)
    json groups = json::array();
    for (atq::Index g = 0; g < layer.num_groups(); ++g) {
        const atq::Index first = g * layer.config.d;
        const atq::Index width = layer.group_width(g);
        const atq::Matrix delta = w.middleCols(first, width) - what.middleCols(first, width);
        const atq::Matrix hblock = hess.hessian().block(first, first, width, width);
        groups.push_back((delta * hblock).cwiseProduct(delta).sum());
    }

    const atq::BitReport report = atq::bits_per_weight(layer.config, layer.rows, layer.cols);
    json out;
    out["command"] = "eval";
    out["proxy_loss"] = loss;
    out["per_group_loss"] = groups;
    out["bpw"] = bit_report_json(report);
    std::cout << out.dump() << "\n";

    if (!csv_path.empty()) {
        const bool fresh = !std::ifstream(csv_path).good();
        std::ofstream csv(csv_path, std::ios::app);
        if (!csv) {
            throw atq::IoError("cannot open " + csv_path + " for appending");
        }
        if (fresh) {
            csv << "bpw,loss,d,n,k,int8,lowrank_r,seed\n";
        }
        csv << report.b_total << "," << loss << "," << layer.config.d << "," << layer.config.n
            << "," << layer.config.k << "," << (layer.config.codebook_int8 ? 1 : 0) << ","
            << layer.config.lowrank_r << "," << seed << "\n";
        if (!csv) {
            throw atq::IoError("write failed for " + csv_path);
        }
    }
    return 0;
}

int run_report_bits(const std::string& layer_path, CommonQuantFlags& flags, atq::Index rows,
                    atq::Index cols) {
    atq::QuantConfig cfg = flags.cfg;
    if (!layer_path.empty()) {
        // header only; payloads are not decoded for a bit report
        const atq::LayerHeader header = atq::load_layer_header(layer_path);
        cfg = header.config;
        rows = header.rows;
        cols = header.cols;
    } else {
        if (flags.lowrank_opt != nullptr && flags.lowrank_opt->count() > 0) {
            if (rows == 0 || cols == 0) {
                throw atq::ValidationError(
                    "--lowrank-r needs --rows and --cols for bit accounting");
            }
            flags.resolve_lowrank(rows, cols);
            cfg = flags.cfg;
        }
    }
    json out;
    out["command"] = "report-bits";
    out["config"] = config_json(cfg);
    out["bpw"] = bit_report_json(atq::bits_per_weight(cfg, rows, cols));
    std::cout << out.dump() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hessian-guided vector-quantization toolkit for dense weight matrices"};
    app.require_subcommand(1);

    // quantize
    auto* quant = app.add_subcommand("quantize", "quantize a weight matrix");
    std::string weights_path, calib_path, out_path, init_from;
    bool fast_order = false;
    quant->add_option("weights", weights_path, "ATQT weight matrix")->required();
    quant->add_option("calibration", calib_path, "ATQT calibration activations")->required();
    quant->add_option("-o,--output", out_path, "output ATQZ path")->required();
    CommonQuantFlags qflags;
    qflags.attach(quant);
    quant->add_flag("--fast-order", fast_order,
                    "fixed left-to-right group order instead of greedy selection");
    quant->add_option("--init-from", init_from,
                      "warm-start codebooks from a previous ATQZ layer");

    // dequant
    auto* dequant = app.add_subcommand("dequant", "reconstruct a dense matrix");
    std::string dq_in, dq_out;
    dequant->add_option("layer", dq_in, "ATQZ layer")->required();
    dequant->add_option("-o,--output", dq_out, "output ATQT path (fp32)")->required();

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate reconstruction loss");
    std::string ev_layer, ev_weights, ev_calib, ev_csv;
    double ev_damping = 0.01;
    std::uint64_t ev_seed = 0;
    eval->add_option("layer", ev_layer, "ATQZ layer")->required();
    eval->add_option("weights", ev_weights, "original ATQT weights")->required();
    eval->add_option("calibration", ev_calib, "ATQT calibration activations")->required();
    eval->add_option("--damping", ev_damping, "relative Hessian damping")
        ->capture_default_str();
    eval->add_option("--csv", ev_csv, "append a bpw,loss row to this CSV");
    eval->add_option("--seed", ev_seed, "seed recorded in the CSV row")
        ->capture_default_str();

    // report-bits
    auto* report = app.add_subcommand("report-bits", "bit budget for a config or file");
    std::string rb_layer;
    atq::Index rb_rows = 0, rb_cols = 0;
    report->add_option("layer", rb_layer, "ATQZ layer (reads the header only)");
    CommonQuantFlags rflags;
    rflags.attach(report);
    report->add_option("--rows", rb_rows, "matrix rows for shape-dependent terms");
    report->add_option("--cols", rb_cols, "matrix cols for shape-dependent terms");

    try {
        app.parse(argc, argv);
        if (quant->parsed()) {
            return run_quantize(weights_path, calib_path, out_path, qflags, fast_order,
                                init_from);
        }
        if (dequant->parsed()) {
            return run_dequant(dq_in, dq_out);
        }
        if (eval->parsed()) {
            return run_eval(ev_layer, ev_weights, ev_calib, ev_damping, ev_csv, ev_seed);
        }
        if (report->parsed()) {
            return run_report_bits(rb_layer, rflags, rb_rows, rb_cols);
        }
        return 2;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e); // --help
        }
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const atq::ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 2;
    } catch (const atq::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const atq::IoError& e) {
        std::cerr << "io/format error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
