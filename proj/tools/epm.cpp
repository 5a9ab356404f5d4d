// Command-line front end: dataset tooling, BM25 index, evaluation runs,
// gradient checks and the scoring service.

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "epm/clients.hpp"
#include "epm/epm.hpp"
#include "epm/service.hpp"

namespace {

using epm::json;

json read_json_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw epm::validation_error("cannot open " + path);
    try {
        return json::parse(in, nullptr, true, true);
    } catch (const json::exception& e) {
        throw epm::validation_error(path + ": " + e.what());
    }
}

void write_output(const std::string& path, const std::string& content)
{
    if (path.empty() || path == "-") {
        std::cout << content;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw epm::validation_error("cannot write " + path);
    out << content;
}

std::array<double, 4> parse_ratios(const std::string& s)
{
    std::array<double, 4> r{};
    std::stringstream ss(s);
    std::string part;
    std::size_t i = 0;
    while (std::getline(ss, part, ',')) {
        if (i == 4) throw epm::validation_error("--ratios takes exactly four values");
        // Accepts decimals or fractions such as 1/3.
        if (const auto slash = part.find('/'); slash != std::string::npos)
            r[i++] = std::stod(part.substr(0, slash)) / std::stod(part.substr(slash + 1));
        else
            r[i++] = std::stod(part);
    }
    if (i != 4) throw epm::validation_error("--ratios takes exactly four values");
    // Rounded inputs such as 0.5,0.333,0.083,0.083 are rescaled to sum to 1.
    double sum = 0.0;
    for (double x : r) {
        if (!(x >= 0.0)) throw epm::validation_error("split ratios must be nonnegative");
        sum += x;
    }
    if (!(sum > 0.0)) throw epm::validation_error("split ratios must not all be zero");
    for (auto& x : r) x /= sum;
    return r;
}

std::vector<std::pair<std::string, std::string>> read_corpus(const std::string& path)
{
    if (std::filesystem::path(path).extension() == ".txt") {
        std::ifstream in(path);
        if (!in) throw epm::validation_error("cannot open " + path);
        std::vector<std::pair<std::string, std::string>> corpus;
        std::string line;
        for (std::size_t n = 1; std::getline(in, line); ++n) {
            if (epm::text::trim(line).empty()) continue;
            char id[24];
            std::snprintf(id, sizeof id, "d%06zu", n);
            corpus.emplace_back(id, line);
        }
        return corpus;
    }
    return epm::retrieval::title_corpus(epm::dataset::load_dataset(path));
}

epm::service::Server* running_server = nullptr;

void stop_server(int)
{
    if (running_server != nullptr) running_server->stop();
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Product-mapping training and evaluation toolkit"};
    app.set_version_flag("--version", std::string(epm::version));
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled product-pair dataset (JSONL)");
    epm::dataset::GeneratorConfig gen;
    std::string synth_out;
    synth->add_option("--n", gen.n, "Number of pairs")->capture_default_str();
    synth->add_option("--pos-frac", gen.positive_fraction, "Fraction of matching pairs")->capture_default_str();
    synth->add_option("--brands", gen.brand_count, "Number of distinct brands")->capture_default_str();
    synth->add_option("--seed", gen.seed, "Random seed")->capture_default_str();
    synth->add_option("--out", synth_out, "Output file (default stdout)");

    // stats
    auto* stats = app.add_subcommand("stats", "Dataset statistics as JSON");
    std::vector<std::string> stats_files;
    stats->add_option("--data", stats_files, "Dataset file(s); several files are treated as peft/rl/val/test splits")
        ->required();

    // split
    auto* split = app.add_subcommand("split", "Stratified four-way split (peft/rl/val/test)");
    std::string split_data, split_dir = ".", split_ratios = "1/2,1/3,1/12,1/12";
    std::uint64_t split_seed = 0;
    split->add_option("--data", split_data, "Input dataset (JSONL or CSV)")->required();
    split->add_option("--ratios", split_ratios, "Four comma-separated weights, decimals or a/b; rescaled to sum to 1")->capture_default_str();
    split->add_option("--seed", split_seed, "Random seed")->capture_default_str();
    split->add_option("--out-dir", split_dir, "Directory for peft.jsonl, rl.jsonl, val.jsonl, test.jsonl")
        ->capture_default_str();

    // bm25-build
    auto* bm25_build = app.add_subcommand("bm25-build", "Build a BM25 index from titles or a line-per-document .txt");
    std::string corpus_path, index_out;
    double k1 = 1.2, b = 0.75;
    bm25_build->add_option("--corpus", corpus_path, "Dataset file (titles become documents) or .txt")->required();
    bm25_build->add_option("--out", index_out, "Index file")->required();
    bm25_build->add_option("--k1", k1)->capture_default_str();
    bm25_build->add_option("--b", b)->capture_default_str();

    // bm25-query
    auto* bm25_query = app.add_subcommand("bm25-query", "Query a BM25 index");
    std::string index_path, query;
    std::size_t top_k = 5;
    bm25_query->add_option("--index", index_path)->required();
    bm25_query->add_option("--query", query)->required();
    bm25_query->add_option("--k", top_k)->capture_default_str();

    // eval
    auto* eval = app.add_subcommand("eval", "Run an inference strategy over a dataset and report metrics");
    std::string strategy, eval_data, backend_config, eval_out, eval_index;
    std::size_t eval_k = 5;
    eval->add_option("--strategy", strategy, "zero_shot|cot|entity_attr|reason_label|rag|marag")
        ->required()
        ->check(CLI::IsMember({"zero_shot", "cot", "entity_attr", "reason_label", "rag", "marag"}));
    eval->add_option("--data", eval_data, "Dataset with gold labels")->required();
    eval->add_option("--backend", backend_config, "Backend config JSON")->required();
    eval->add_option("--out", eval_out, "Report file (default stdout)");
    eval->add_option("--index", eval_index, "BM25 index for rag/marag (default: built from --data titles)");
    eval->add_option("--k", eval_k, "Evidence documents for rag/marag")->capture_default_str();

    // trace
    auto* trace = app.add_subcommand("trace", "Attach label-conditioned reasoning traces to a dataset");
    std::string trace_data, trace_backend, trace_out;
    trace->add_option("--data", trace_data)->required();
    trace->add_option("--backend", trace_backend, "Backend config JSON")->required();
    trace->add_option("--out", trace_out, "Output JSONL (default stdout)");

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every analytic loss gradient");
    std::uint64_t gc_seed = 1;
    double gc_h = 1e-5, gc_tol = 1e-4;
    std::string gc_config;
    gradcheck->add_option("--seed", gc_seed)->capture_default_str();
    gradcheck->add_option("--step", gc_h, "Central-difference step")->capture_default_str();
    gradcheck->add_option("--tolerance", gc_tol, "Maximum relative error")->capture_default_str();
    gradcheck->add_option("--config", gc_config, "Service config whose presets are printed");

    // serve
    auto* serve = app.add_subcommand("serve", "Run the HTTP reward scoring service");
    std::string serve_config;
    serve->add_option("--config", serve_config)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            write_output(synth_out, epm::dataset::to_jsonl(epm::dataset::synthesize_dataset(gen)));
        } else if (*stats) {
            if (stats_files.size() == 1) {
                std::cout << epm::dataset::to_json(epm::dataset::dataset_stats(epm::dataset::load_dataset(stats_files[0])))
                                 .dump(2)
                          << "\n";
            } else if (stats_files.size() == 4) {
                epm::dataset::SplitBundle bundle{epm::dataset::load_dataset(stats_files[0]),
                                                 epm::dataset::load_dataset(stats_files[1]),
                                                 epm::dataset::load_dataset(stats_files[2]),
                                                 epm::dataset::load_dataset(stats_files[3])};
                std::cout << epm::dataset::to_json(epm::dataset::dataset_stats(bundle)).dump(2) << "\n";
            } else {
                throw epm::validation_error("--data takes one file or four split files");
            }
        } else if (*split) {
            const auto data = epm::dataset::load_dataset(split_data);
            const auto bundle = epm::dataset::stratified_split(data, parse_ratios(split_ratios), split_seed);
            std::filesystem::create_directories(split_dir);
            const std::array<const std::vector<epm::LabeledPair>*, 4> parts{&bundle.peft, &bundle.rl, &bundle.val,
                                                                           &bundle.test};
            for (std::size_t s = 0; s < 4; ++s)
                epm::dataset::write_jsonl(std::filesystem::path(split_dir) / (std::string(epm::dataset::split_names[s]) + ".jsonl"),
                                          *parts[s]);
            std::cout << epm::dataset::to_json(epm::dataset::dataset_stats(bundle)).dump(2) << "\n";
        } else if (*bm25_build) {
            const auto index = epm::retrieval::build_index(read_corpus(corpus_path), k1, b);
            epm::retrieval::save_index(index, index_out);
            std::cerr << "indexed " << index.size() << " documents, avgdl " << index.average_doc_length() << "\n";
        } else if (*bm25_query) {
            const auto index = epm::retrieval::load_index(index_path);
            json hits = json::array();
            for (const auto& h : epm::retrieval::retrieve_top_k(index, query, top_k))
                hits.push_back({{"doc_id", h.doc_id}, {"score", h.score}, {"text", index.document(h.doc_id).text}});
            std::cout << hits.dump(2) << "\n";
        } else if (*eval) {
            const auto data = epm::dataset::load_dataset(eval_data);
            const auto st = epm::pipelines::strategy_from_name(strategy);
            const auto cfg = read_json_file(backend_config);
            auto client = epm::pipelines::make_chat_client(cfg, data);
            epm::backend::ChatBackend decoding;
            if (cfg.value("type", std::string("http")) == "http") decoding = epm::backend::backend_from_json(cfg);
            std::optional<epm::retrieval::Bm25Index> index;
            if (st == epm::pipelines::Strategy::rag || st == epm::pipelines::Strategy::marag) {
                index = eval_index.empty() ? epm::retrieval::build_index(epm::retrieval::title_corpus(data))
                                           : epm::retrieval::load_index(eval_index);
            }
            const auto run = epm::pipelines::run_evaluation(data, st, *client, index ? &*index : nullptr, decoding, eval_k);
            write_output(eval_out, epm::pipelines::to_json(run).dump(2) + "\n");
        } else if (*trace) {
            auto data = epm::dataset::load_dataset(trace_data);
            const auto cfg = read_json_file(trace_backend);
            auto client = epm::pipelines::make_chat_client(cfg, data);
            epm::backend::ChatBackend decoding;
            if (cfg.value("type", std::string("http")) == "http") decoding = epm::backend::backend_from_json(cfg);
            epm::pipelines::parallel_for(data.size(), client->in_flight_cap(), [&](std::size_t i) {
                data[i].reasoning = epm::pipelines::synthesize_reasoning_trace(data[i].pair, data[i].label, *client, decoding);
            });
            write_output(trace_out, epm::dataset::to_jsonl(data));
        } else if (*gradcheck) {
            const auto report = epm::optim::run_gradient_checks(gc_seed, gc_h);
            json out{{"max_relative_error", epm::optim::to_json(report)}, {"tolerance", gc_tol},
                     {"passed", report.worst() < gc_tol}};
            epm::service::ServiceConfig cfg;
            if (!gc_config.empty()) cfg = epm::service::load_config(gc_config);
            out["presets"] = {{"peft", epm::optim::to_json(cfg.peft_preset)}, {"rl", epm::optim::to_json(cfg.rl_preset)}};
            std::cout << out.dump(2) << "\n";
            return report.worst() < gc_tol ? 0 : 1;
        } else if (*serve) {
            const auto cfg = epm::service::load_config(serve_config);
            epm::service::ScoringService service(cfg);
            epm::service::Server server(service);
            running_server = &server;
            std::signal(SIGINT, stop_server);
            std::signal(SIGTERM, stop_server);
            const auto [host, port] = cfg.host_port();
            std::cerr << "listening on " << host << ":" << port << (cfg.mock_mode ? " (mock judges)" : "") << "\n";
            if (!server.listen(host, port)) throw epm::error("cannot listen on " + cfg.listen_address);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
