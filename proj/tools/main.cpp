// memdfa command-line tool: train sequential networks with bp/fa/dfa/memdfa,
// compare the four algorithms on one model, and inspect memory-ledger CSVs.
//
// Exit codes: 0 success, 2 usage/model/malformed-input error, 3 missing
// data, 4 numeric divergence.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "memdfa/data.hpp"
#include "memdfa/ledger.hpp"
#include "memdfa/presets.hpp"
#include "memdfa/trainers.hpp"

namespace fs = std::filesystem;
using namespace memdfa;

namespace {

struct Options {
    std::string algo = "bp";
    std::string model = "mnist-fc3";
    double lr = -1.0;  // negative means: use the model's default
    std::size_t batch = 100;
    std::size_t epochs = 1;
    std::uint64_t seed = 1;
    std::string data_dir = "data";
    std::string out_dir = "out";
    std::string feedback_policy = "fixed";
    std::string precision = "f32";
    std::size_t width = 64;
    std::size_t layers = 50;
    std::string config_path;
    std::size_t synth_train = 10000;
    std::size_t synth_test = 1000;
};

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void add_common_options(CLI::App* cmd, Options& o, bool with_algo) {
    if (with_algo)
        cmd->add_option("--algo", o.algo, "Training algorithm: bp|fa|dfa|memdfa");
    cmd->add_option("--model", o.model,
                    "mnist-fc3|mnist-cnn|cifar-cnn2|cifar-cnn3|fc50|custom:PATH");
    cmd->add_option("--lr", o.lr, "Learning rate (default: the model's)");
    cmd->add_option("--batch", o.batch, "Batch size");
    cmd->add_option("--epochs", o.epochs, "Training epochs");
    cmd->add_option("--seed", o.seed, "Seed for all randomness");
    cmd->add_option("--data", o.data_dir, "Dataset directory");
    cmd->add_option("--out", o.out_dir, "Output directory");
    cmd->add_option("--feedback-policy", o.feedback_policy,
                    "fixed|per_iteration|sign_concordant");
    cmd->add_option("--precision", o.precision, "f32|f64");
    cmd->add_option("--width", o.width, "fc50: layer width");
    cmd->add_option("--layers", o.layers, "fc50: hidden layer count");
    cmd->add_option("--synth-train", o.synth_train, "Synthetic dataset: training samples");
    cmd->add_option("--synth-test", o.synth_test, "Synthetic dataset: test samples");
    cmd->add_option("--config", o.config_path,
                    "key=value config file (command-line flags take precedence)");
}

/// Applies config-file values to every option the command line left at its
/// default. Keys are the long option names without the leading dashes.
void apply_config_file(CLI::App* cmd, Options& o) {
    if (o.config_path.empty()) return;
    std::ifstream in(o.config_path);
    if (!in) throw std::invalid_argument("config file not found: " + o.config_path);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line without '=': " + line);
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto take = [&](const char* key, auto&& setter) {
        auto it = kv.find(key);
        if (it == kv.end()) return;
        const CLI::Option* opt = cmd->get_option_no_throw(std::string("--") + key);
        if (opt && opt->count() > 0) return;  // explicit flag wins
        setter(it->second);
    };
    take("algo", [&](const std::string& v) { o.algo = v; });
    take("model", [&](const std::string& v) { o.model = v; });
    take("lr", [&](const std::string& v) { o.lr = std::stod(v); });
    take("batch", [&](const std::string& v) { o.batch = std::stoull(v); });
    take("epochs", [&](const std::string& v) { o.epochs = std::stoull(v); });
    take("seed", [&](const std::string& v) { o.seed = std::stoull(v); });
    take("data", [&](const std::string& v) { o.data_dir = v; });
    take("out", [&](const std::string& v) { o.out_dir = v; });
    take("feedback-policy", [&](const std::string& v) { o.feedback_policy = v; });
    take("precision", [&](const std::string& v) { o.precision = v; });
    take("width", [&](const std::string& v) { o.width = std::stoull(v); });
    take("layers", [&](const std::string& v) { o.layers = std::stoull(v); });
    take("synth-train", [&](const std::string& v) { o.synth_train = std::stoull(v); });
    take("synth-test", [&](const std::string& v) { o.synth_test = std::stoull(v); });
}

void write_manifest(const Options& o, double resolved_lr, bool with_algo,
                    const std::string& path) {
    std::map<std::string, std::string> kv;  // sorted by key
    if (with_algo) kv["algo"] = o.algo;
    kv["batch"] = std::to_string(o.batch);
    kv["data"] = o.data_dir;
    kv["epochs"] = std::to_string(o.epochs);
    kv["feedback-policy"] = o.feedback_policy;
    kv["layers"] = std::to_string(o.layers);
    kv["lr"] = fmt_double(resolved_lr);
    kv["model"] = o.model;
    kv["out"] = o.out_dir;
    kv["precision"] = o.precision;
    kv["seed"] = std::to_string(o.seed);
    kv["synth-test"] = std::to_string(o.synth_test);
    kv["synth-train"] = std::to_string(o.synth_train);
    kv["width"] = std::to_string(o.width);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const auto& [k, v] : kv) out << k << '=' << v << '\n';
}

std::string find_data_file(const std::string& dir, const std::string& base) {
    for (const std::string& cand : {dir + "/" + base, dir + "/" + base + ".gz"})
        if (fs::exists(cand)) return cand;
    throw DataError("missing data file: " + dir + "/" + base + "[.gz]");
}

template <typename T>
struct LoadedData {
    Dataset<T> train, test;
};

template <typename T>
LoadedData<T> load_for(const NamedModel<T>& nm, const Options& o) {
    LoadedData<T> d;
    PhaseScope phase(Phase::Io);
    switch (nm.data) {
        case DataKind::Mnist:
            d.train = load_mnist_idx<T>(find_data_file(o.data_dir, "train-images-idx3-ubyte"),
                                        find_data_file(o.data_dir, "train-labels-idx1-ubyte"));
            d.test = load_mnist_idx<T>(find_data_file(o.data_dir, "t10k-images-idx3-ubyte"),
                                       find_data_file(o.data_dir, "t10k-labels-idx1-ubyte"));
            break;
        case DataKind::Cifar10: {
            std::vector<std::string> train_paths;
            for (int i = 1; i <= 5; ++i)
                train_paths.push_back(
                    find_data_file(o.data_dir, "data_batch_" + std::to_string(i) + ".bin"));
            d.train = load_cifar10_binary<T>(train_paths);
            d.test = load_cifar10_binary<T>({find_data_file(o.data_dir, "test_batch.bin")});
            break;
        }
        case DataKind::Synthetic:
            d.train = make_synthetic_classification<T>(o.seed, o.synth_train,
                                                       nm.model.input_shape,
                                                       nm.model.output_dim(), 1);
            d.test = make_synthetic_classification<T>(o.seed, o.synth_test,
                                                      nm.model.input_shape,
                                                      nm.model.output_dim(), 2);
            break;
    }
    if (nm.model.input_shape.size() > 1) {
        d.train.reshape_images(nm.model.input_shape);
        d.test.reshape_images(nm.model.input_shape);
    } else if (d.train.images.rank() > 2) {
        d.train.reshape_images(nm.model.input_shape);
        d.test.reshape_images(nm.model.input_shape);
    }
    return d;
}

void write_history_csv(const std::vector<EpochStat>& history, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "epoch,train_loss,test_accuracy\n";
    for (const auto& e : history)
        out << e.epoch << ',' << fmt_double(e.train_loss) << ',' << fmt_double(e.test_accuracy)
            << '\n';
}

template <typename T>
TrainConfig make_config(const Options& o, Algorithm algo, double lr) {
    TrainConfig cfg;
    cfg.algorithm = algo;
    cfg.learning_rate = lr;
    cfg.batch_size = o.batch;
    cfg.epochs = o.epochs;
    cfg.seed = o.seed;
    cfg.feedback_policy = parse_feedback_policy(o.feedback_policy);
    cfg.precision = o.precision;
    cfg.validate();
    return cfg;
}

template <typename T>
int run_train(const Options& o) {
    Ledger::instance().reset();
    NamedModel<T> nm = make_named_model<T>(o.model, o.width, o.layers, o.seed);
    const double lr = o.lr < 0 ? nm.default_lr : o.lr;
    fs::create_directories(o.out_dir);
    write_manifest(o, lr, true, o.out_dir + "/manifest");

    LoadedData<T> data = load_for(nm, o);
    TrainConfig cfg = make_config<T>(o, parse_algorithm(o.algo), lr);
    const auto t0 = std::chrono::steady_clock::now();
    TrainResult<T> res = train(nm.model, cfg, data.train, data.test);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    write_history_csv(res.history, o.out_dir + "/history.csv");
    export_csv(Ledger::instance().timeline(), o.out_dir + "/memory.csv");
    for (const auto& e : res.history)
        std::cout << "epoch " << e.epoch << "  loss " << e.train_loss << "  test_acc "
                  << e.test_accuracy << '\n';
    // wall time goes to stdout only; the csv outputs stay run-to-run identical
    std::cout << "wall_time_s " << secs << '\n';
    return 0;
}

template <typename T>
int run_compare(const Options& o) {
    fs::create_directories(o.out_dir);
    std::ofstream out(o.out_dir + "/compare.csv", std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write compare.csv");
    out << "algo,final_accuracy,peak_activation_bytes,forward_matmuls,backward_matmuls\n";

    double lr_used = o.lr;
    for (Algorithm algo : {Algorithm::BP, Algorithm::FA, Algorithm::DFA, Algorithm::MEMDFA}) {
        Ledger::instance().reset();
        NamedModel<T> nm = make_named_model<T>(o.model, o.width, o.layers, o.seed);
        const double lr = o.lr < 0 ? nm.default_lr : o.lr;
        lr_used = lr;
        LoadedData<T> data = load_for(nm, o);
        TrainConfig cfg = make_config<T>(o, algo, lr);
        const auto t0 = std::chrono::steady_clock::now();
        TrainResult<T> res = train(nm.model, cfg, data.train, data.test);
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        const double final_acc =
            res.history.empty() ? evaluate(nm.model, data.test) : res.history.back().test_accuracy;
        // peak taken inside one training step's slice so evaluation-time
        // forwards cannot mask the algorithm's own footprint
        EventFilter act;
        act.tag_prefix = "activation:";
        const std::uint64_t peak =
            res.first_step ? peak_live_bytes_in_range(Ledger::instance().timeline(), act,
                                                      res.first_step->seq_begin,
                                                      res.first_step->seq_end)
                           : peak_live_bytes(Ledger::instance().timeline(), act);
        const std::uint64_t fwd = res.first_step ? res.first_step->op_counts.forward_matmuls : 0;
        const std::uint64_t bwd = res.first_step ? res.first_step->op_counts.backward_matmuls : 0;

        out << algorithm_name(algo) << ',' << fmt_double(final_acc) << ',' << peak << ',' << fwd
            << ',' << bwd << '\n';
        export_csv(Ledger::instance().timeline(),
                   o.out_dir + "/memory_" + algorithm_name(algo) + ".csv");
        std::cout << algorithm_name(algo) << ": final_acc " << final_acc
                  << "  peak_activation_bytes " << peak << "  fwd_matmuls " << fwd
                  << "  bwd_matmuls " << bwd << "  wall_time_s " << secs << '\n';
    }
    write_manifest(o, lr_used, false, o.out_dir + "/manifest");
    return 0;
}

int run_profile(const std::string& csv_path, bool sparkline) {
    CsvTimeline parsed = parse_timeline_csv(csv_path);
    const auto& events = parsed.timeline.events;
    std::uint64_t peak = 0;
    for (std::uint64_t v : parsed.live_column) peak = std::max(peak, v);
    std::cout << "events: " << events.size() << "\npeak live bytes: " << peak << "\n";

    for (Phase p : {Phase::Forward, Phase::Backward, Phase::LocalForward, Phase::LocalBackward,
                    Phase::Update, Phase::Io}) {
        std::uint64_t n = 0, alloc_bytes = 0, phase_peak = 0;
        long double live_sum = 0;
        for (std::size_t i = 0; i < events.size(); ++i) {
            if (events[i].phase != p) continue;
            ++n;
            if (events[i].kind == EventKind::Alloc) alloc_bytes += events[i].bytes;
            phase_peak = std::max(phase_peak, parsed.live_column[i]);
            live_sum += static_cast<long double>(parsed.live_column[i]);
        }
        if (n == 0) continue;
        std::cout << phase_name(p) << ": events " << n << "  allocated " << alloc_bytes
                  << "  peak_live " << phase_peak << "  mean_live "
                  << static_cast<std::uint64_t>(live_sum / n) << "\n";
    }

    if (sparkline && !events.empty()) {
        static const char ramp[] = " .:-=+*#%@";
        const std::size_t cols = 64;
        std::string line(cols, ' ');
        for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t lo = c * events.size() / cols;
            const std::size_t hi = std::max(lo + 1, (c + 1) * events.size() / cols);
            std::uint64_t m = 0;
            for (std::size_t i = lo; i < hi && i < events.size(); ++i)
                m = std::max(m, parsed.live_column[i]);
            line[c] = ramp[peak ? (m * 9) / peak : 0];
        }
        std::cout << "live bytes over time:\n|" << line << "|\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sequential-network training engine with bp/fa/dfa/memdfa and a "
                 "byte-accurate activation-memory ledger"};
    app.require_subcommand(1);

    Options o;
    CLI::App* train_cmd = app.add_subcommand("train", "Train one model with one algorithm");
    add_common_options(train_cmd, o, true);
    CLI::App* compare_cmd =
        app.add_subcommand("compare", "Run bp, fa, dfa and memdfa with identical seeds");
    add_common_options(compare_cmd, o, false);

    std::string profile_csv;
    bool sparkline = false;
    CLI::App* profile_cmd = app.add_subcommand("profile", "Summarize a memory.csv");
    profile_cmd->add_option("csv", profile_csv, "memory.csv path")->required();
    profile_cmd->add_flag("--sparkline", sparkline, "Plain-text live-bytes sparkline");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    try {
        if (profile_cmd->parsed()) return run_profile(profile_csv, sparkline);
        CLI::App* cmd = train_cmd->parsed() ? train_cmd : compare_cmd;
        apply_config_file(cmd, o);
        parse_algorithm(o.algo);  // surface bad names before any work
        parse_feedback_policy(o.feedback_policy);

        int (*runner)(const Options&) = nullptr;
        if (o.precision == "f32")
            runner = train_cmd->parsed() ? &run_train<float> : &run_compare<float>;
        else if (o.precision == "f64")
            runner = train_cmd->parsed() ? &run_train<double> : &run_compare<double>;
        else
            throw std::invalid_argument("unknown precision: " + o.precision);
        return runner(o);
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\nrun with --help for usage\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
