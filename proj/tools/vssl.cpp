// vssl: synthetic-video semi-supervised training harness.
//
// Subcommands: gen-data, train-teacher, train, compare, report.
// Exit codes: 0 success, 2 usage/config error, 3 data I/O error,
// 4 numeric abort.

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>
#include <vector>

#include "vssl/config.hpp"
#include "vssl/data.hpp"
#include "vssl/eval.hpp"
#include "vssl/models.hpp"
#include "vssl/parallel.hpp"
#include "vssl/svg.hpp"
#include "vssl/trainer.hpp"

namespace fs = std::filesystem;
using namespace vssl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

int sweep_workers() {
    if (const char* env = std::getenv("VSSL_THREADS")) {
        const int v = std::atoi(env);
        if (v >= 1) return v;
    }
    return 1;
}

TeacherNet2D load_teacher(const std::string& path, const Dataset& dataset) {
    TeacherConfig cfg;
    cfg.num_outputs = dataset.spec.num_shapes;
    TeacherNet2D teacher(cfg, 0);
    load_params(path, teacher.params());
    teacher.freeze();
    return teacher;
}

void write_summary(const fs::path& dir, const Dataset& dataset,
                   const MetricsRecord& rec) {
    {
        std::ofstream out(dir / "summary.csv", std::ios::binary);
        out << "key,value\n";
        char buf[128];
        std::snprintf(buf, sizeof(buf), "clip_top1,%.10g\n", rec.clip_top1);
        out << buf;
        std::snprintf(buf, sizeof(buf), "video_top1,%.10g\n", rec.video_top1);
        out << buf;
        out << "confident_count," << rec.confident_count << "\n";
        out << "confident_correct," << rec.confident_correct << "\n";
    }
    {
        std::ofstream out(dir / "per_class.csv", std::ios::binary);
        out << "class_id,class_name,top1\n";
        for (size_t c = 0; c < rec.per_class_top1.size(); ++c) {
            char buf[160];
            std::snprintf(buf, sizeof(buf), "%zu,%s,%.10g\n", c,
                          class_name(dataset.spec, static_cast<int64_t>(c)).c_str(),
                          rec.per_class_top1[c]);
            out << buf;
        }
    }
}

// One full training run into `dir`; returns the final metrics.
MetricsRecord run_training(const RunConfig& config, const Dataset& dataset,
                           const TeacherNet2D* teacher, const fs::path& dir) {
    fs::create_directories(dir);
    RunConfig effective = config;
    effective.train.checkpoint_path = (dir / "checkpoint.bin").string();
    save_config((dir / "config.txt").string(), effective);

    TrainState state = make_train_state(effective.train, dataset);
    train(state, dataset, teacher, effective.train);
    write_metrics_csv((dir / "metrics.csv").string(), state.history);
    const MetricsRecord rec = evaluate(state.model, dataset, state.manifest,
                                       effective.train.rule.confidence_threshold);
    write_summary(dir, dataset, rec);
    return rec;
}

struct SweepRow {
    std::string method;
    double fraction;
    uint64_t seed;
    double clip_top1;
    double video_top1;
    double runtime_seconds;
};

std::vector<std::string> split_list(const std::string& csv) {
    std::vector<std::string> out;
    std::stringstream in(csv);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

int cmd_gen_data(const std::string& spec_path, const std::string& out_path,
                 int64_t n_per_class, int64_t n_test) {
    SynthVideoSpec spec;
    if (!spec_path.empty()) spec = load_config(spec_path).data;
    const Dataset dataset = generate_dataset(spec, n_per_class, n_test);
    write_dataset(out_path, dataset);
    std::printf("classes: %lld (%lld shapes x %lld motions)\n",
                static_cast<long long>(dataset.num_classes()),
                static_cast<long long>(spec.num_shapes),
                static_cast<long long>(spec.num_motions));
    std::printf("train videos: %zu  test videos: %zu\n",
                dataset.manifest.labeled_ids.size() +
                    dataset.manifest.unlabeled_ids.size(),
                dataset.manifest.test_ids.size());
    std::printf("channel mean: %.6f %.6f %.6f\n", dataset.manifest.channel_mean[0],
                dataset.manifest.channel_mean[1], dataset.manifest.channel_mean[2]);
    std::printf("channel std:  %.6f %.6f %.6f\n", dataset.manifest.channel_std[0],
                dataset.manifest.channel_std[1], dataset.manifest.channel_std[2]);
    std::printf("wrote %s\n", out_path.c_str());
    return kExitOk;
}

int cmd_train_teacher(const std::string& data_path, const std::string& out_path,
                      int64_t epochs, uint64_t seed) {
    const Dataset dataset = read_dataset(data_path);
    double accuracy = 0.0;
    TeacherNet2D teacher = pretrain_teacher(dataset, epochs, seed, &accuracy);
    save_params(out_path, teacher.params());
    std::printf("held-out frame shape accuracy: %.2f%%\n", accuracy);
    std::printf("wrote %s (checksum %016llx)\n", out_path.c_str(),
                static_cast<unsigned long long>(teacher.checksum()));
    return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& teacher_path, const std::string& out_dir) {
    RunConfig config = load_config(config_path);
    const Dataset dataset = read_dataset(data_path);
    TeacherNet2D teacher(TeacherConfig{}, 0);
    const TeacherNet2D* teacher_ptr = nullptr;
    if (uses_distillation(config.train.method) && config.train.schedule.lambda_d != 0.0) {
        if (teacher_path.empty()) {
            throw ConfigError(std::string("method ") + method_name(config.train.method) +
                              " requires --teacher");
        }
        teacher = load_teacher(teacher_path, dataset);
        teacher_ptr = &teacher;
    }
    const MetricsRecord rec =
        run_training(config, dataset, teacher_ptr, fs::path(out_dir));
    std::printf("final clip top1: %.2f%%  video top1: %.2f%%\n", rec.clip_top1,
                rec.video_top1);
    if (rec.confident_count > 0) {
        std::printf("confident (> %.2f): %lld, correct %lld\n",
                    config.train.rule.confidence_threshold,
                    static_cast<long long>(rec.confident_count),
                    static_cast<long long>(rec.confident_correct));
    } else {
        std::printf("confident (> %.2f): none\n",
                    config.train.rule.confidence_threshold);
    }
    return kExitOk;
}

int cmd_compare(const std::string& config_path, const std::string& data_path,
                const std::string& teacher_path, const std::string& methods_csv,
                const std::string& fractions_csv, const std::string& seeds_csv,
                const std::string& out_dir) {
    const RunConfig base = config_path.empty() ? RunConfig{} : load_config(config_path);
    const Dataset dataset = read_dataset(data_path);

    std::vector<Method> methods;
    for (const std::string& name : split_list(methods_csv)) {
        methods.push_back(method_from_name(name));
    }
    std::vector<double> fractions;
    for (const std::string& f : split_list(fractions_csv)) fractions.push_back(std::stod(f));
    std::vector<uint64_t> seeds;
    for (const std::string& s : split_list(seeds_csv)) seeds.push_back(std::stoull(s));
    if (methods.empty() || fractions.empty() || seeds.empty()) {
        throw ConfigError("compare: --methods, --fractions and --seeds must be non-empty");
    }

    bool needs_teacher = false;
    for (Method m : methods) needs_teacher |= uses_distillation(m);
    TeacherNet2D teacher(TeacherConfig{}, 0);
    const TeacherNet2D* teacher_ptr = nullptr;
    if (needs_teacher && base.train.schedule.lambda_d != 0.0) {
        if (teacher_path.empty()) {
            throw ConfigError("compare: distillation methods require --teacher");
        }
        teacher = load_teacher(teacher_path, dataset);
        teacher_ptr = &teacher;
    }

    struct RunSpec {
        Method method;
        double fraction;
        uint64_t seed;
    };
    std::vector<RunSpec> runs;
    for (Method m : methods) {
        for (double f : fractions) {
            for (uint64_t s : seeds) runs.push_back({m, f, s});
        }
    }

    fs::create_directories(out_dir);
    std::vector<SweepRow> rows(runs.size());
    std::atomic<size_t> cursor{0};
    const int workers = std::min<int>(sweep_workers(), static_cast<int>(runs.size()));
    auto work = [&](bool inline_ops) {
        std::unique_ptr<InlineOpsScope> scope;
        if (inline_ops) scope = std::make_unique<InlineOpsScope>();
        for (;;) {
            const size_t i = cursor.fetch_add(1);
            if (i >= runs.size()) break;
            const RunSpec& spec = runs[i];
            RunConfig config = base;
            config.train.method = spec.method;
            config.train.label_fraction = spec.fraction;
            config.train.seed_data = spec.seed;
            config.train.seed_init = derive_seed(spec.seed, 21);
            config.train.seed_train = derive_seed(spec.seed, 22);
            const TeacherNet2D* run_teacher =
                uses_distillation(spec.method) ? teacher_ptr : nullptr;
            char name[128];
            std::snprintf(name, sizeof(name), "%s_P%g_s%llu", method_name(spec.method),
                          spec.fraction, static_cast<unsigned long long>(spec.seed));
            const auto start = std::chrono::steady_clock::now();
            const MetricsRecord rec =
                run_training(config, dataset, run_teacher, fs::path(out_dir) / name);
            const double secs =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                    .count();
            rows[i] = SweepRow{method_name(spec.method), spec.fraction, spec.seed,
                               rec.clip_top1, rec.video_top1, secs};
            std::printf("[%s] clip %.2f%%  video %.2f%%  (%.0f s)\n", name,
                        rec.clip_top1, rec.video_top1, secs);
            std::fflush(stdout);
        }
    };
    if (workers <= 1) {
        work(false);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(work, true);
        for (auto& t : pool) t.join();
    }

    {
        std::ofstream out(fs::path(out_dir) / "results.csv", std::ios::binary);
        out << "method,label_fraction,seed,clip_top1,video_top1,runtime_seconds\n";
        for (const SweepRow& r : rows) {
            char buf[256];
            std::snprintf(buf, sizeof(buf), "%s,%.10g,%llu,%.10g,%.10g,%.3f\n",
                          r.method.c_str(), r.fraction,
                          static_cast<unsigned long long>(r.seed), r.clip_top1,
                          r.video_top1, r.runtime_seconds);
            out << buf;
        }
    }

    // mean video top1 vs label fraction, one line per method
    std::vector<ChartSeries> series;
    for (Method m : methods) {
        ChartSeries s;
        s.name = method_name(m);
        for (double f : fractions) {
            double sum = 0.0;
            int count = 0;
            for (const SweepRow& r : rows) {
                if (r.method == method_name(m) && r.fraction == f) {
                    sum += r.video_top1;
                    ++count;
                }
            }
            if (count > 0) s.points.emplace_back(f, sum / count);
        }
        series.push_back(std::move(s));
    }
    write_line_chart((fs::path(out_dir) / "video_top1_vs_fraction.svg").string(),
                     "Video Top-1 vs label fraction", "label fraction",
                     "video top-1 (%)", series);
    std::printf("wrote %s/results.csv and video_top1_vs_fraction.svg\n",
                out_dir.c_str());
    return kExitOk;
}

struct RunSummary {
    std::map<std::string, double> keys;
    std::vector<std::tuple<int64_t, std::string, double>> per_class;
};

RunSummary read_run_summary(const fs::path& dir) {
    RunSummary s;
    std::ifstream sum(dir / "summary.csv");
    if (!sum) {
        throw IoError(IoError::Kind::open_failed,
                      "cannot open " + (dir / "summary.csv").string());
    }
    std::string line;
    std::getline(sum, line);  // header
    while (std::getline(sum, line)) {
        const size_t comma = line.find(',');
        if (comma == std::string::npos) continue;
        s.keys[line.substr(0, comma)] = std::stod(line.substr(comma + 1));
    }
    std::ifstream pc(dir / "per_class.csv");
    if (!pc) {
        throw IoError(IoError::Kind::open_failed,
                      "cannot open " + (dir / "per_class.csv").string());
    }
    std::getline(pc, line);  // header
    while (std::getline(pc, line)) {
        const size_t c1 = line.find(',');
        const size_t c2 = line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos) continue;
        s.per_class.emplace_back(std::stoll(line.substr(0, c1)),
                                 line.substr(c1 + 1, c2 - c1 - 1),
                                 std::stod(line.substr(c2 + 1)));
    }
    return s;
}

int cmd_report(const std::string& run_a, const std::string& run_b,
               const std::string& out_path) {
    const RunSummary a = read_run_summary(run_a);
    const RunSummary b = read_run_summary(run_b);
    if (a.per_class.size() != b.per_class.size()) {
        throw ConfigError("report: runs have different class counts");
    }
    struct Row {
        int64_t id;
        std::string name;
        double top1_a, top1_b, delta;
    };
    std::vector<Row> rows;
    for (size_t i = 0; i < a.per_class.size(); ++i) {
        const auto& [id_a, name, va] = a.per_class[i];
        const auto& [id_b, name_b, vb] = b.per_class[i];
        if (id_a != id_b) throw ConfigError("report: class id mismatch");
        rows.push_back(Row{id_a, name, va, vb, vb - va});
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const Row& x, const Row& y) { return x.delta > y.delta; });
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw IoError(IoError::Kind::open_failed, "cannot open " + out_path);
    out << "class_id,class_name,top1_a,top1_b,delta\n";
    for (const Row& r : rows) {
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%lld,%s,%.10g,%.10g,%.10g\n",
                      static_cast<long long>(r.id), r.name.c_str(), r.top1_a, r.top1_b,
                      r.delta);
        out << buf;
    }

    auto confident_line = [](const char* tag, const RunSummary& s) {
        const double count = s.keys.count("confident_count") ? s.keys.at("confident_count") : 0;
        const double correct =
            s.keys.count("confident_correct") ? s.keys.at("confident_correct") : 0;
        if (count >= 1.0) {
            std::printf("%s: confident %.0f, correct %.0f (precision %.1f%%)\n", tag,
                        count, correct, 100.0 * correct / count);
        } else {
            std::printf("%s: confident 0, correct 0 (precision n/a)\n", tag);
        }
    };
    std::printf("confident-prediction table (threshold from each run's config):\n");
    confident_line("run-a", a);
    confident_line("run-b", b);
    std::printf("wrote %s\n", out_path.c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic-video semi-supervised training harness"};
    app.require_subcommand(1);

    std::string spec_path, out_path, data_path, teacher_path, config_path;
    std::string methods_csv, fractions_csv, seeds_csv, run_a, run_b;
    int64_t n_per_class = 100, n_test = 20, epochs = 80;
    uint64_t seed = 1;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    gen->add_option("--spec", spec_path, "config file providing data.* keys");
    gen->add_option("--out", out_path, "output dataset file")->required();
    gen->add_option("--n-per-class", n_per_class, "training videos per class");
    gen->add_option("--n-test", n_test, "test videos per class");

    auto* tt = app.add_subcommand("train-teacher", "pretrain and freeze the teacher");
    tt->add_option("--data", data_path, "dataset file")->required();
    tt->add_option("--out", out_path, "output teacher checkpoint")->required();
    tt->add_option("--epochs", epochs, "training epochs");
    tt->add_option("--seed", seed, "training seed");

    auto* tr = app.add_subcommand("train", "run one training configuration");
    tr->add_option("--config", config_path, "run configuration file")->required();
    tr->add_option("--data", data_path, "dataset file")->required();
    tr->add_option("--teacher", teacher_path, "teacher checkpoint");
    tr->add_option("--out", out_path, "output directory")->required();

    auto* cmp = app.add_subcommand("compare", "method x fraction x seed sweep");
    cmp->add_option("--config", config_path, "base run configuration file");
    cmp->add_option("--data", data_path, "dataset file")->required();
    cmp->add_option("--teacher", teacher_path, "teacher checkpoint");
    cmp->add_option("--methods", methods_csv, "comma-separated methods")->required();
    cmp->add_option("--fractions", fractions_csv, "comma-separated label fractions")
        ->required();
    cmp->add_option("--seeds", seeds_csv, "comma-separated seeds")->required();
    cmp->add_option("--out", out_path, "output directory")->required();

    auto* rep = app.add_subcommand("report", "per-class delta and confident stats");
    rep->add_option("--run-a", run_a, "baseline run directory")->required();
    rep->add_option("--run-b", run_b, "comparison run directory")->required();
    rep->add_option("--out", out_path, "output delta CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return kExitConfig;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(spec_path, out_path, n_per_class, n_test);
        if (tt->parsed()) return cmd_train_teacher(data_path, out_path, epochs, seed);
        if (tr->parsed()) return cmd_train(config_path, data_path, teacher_path, out_path);
        if (cmp->parsed()) {
            return cmd_compare(config_path, data_path, teacher_path, methods_csv,
                               fractions_csv, seeds_csv, out_path);
        }
        if (rep->parsed()) return cmd_report(run_a, run_b, out_path);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericAbort& e) {
        std::cerr << "numeric abort: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitOk;
}
