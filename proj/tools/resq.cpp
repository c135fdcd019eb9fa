// resq: mixed-precision post-training quantization toolkit for the toy
// decoder. Subcommands: init-model, gen-stream, calibrate, quantize, eval,
// compare, report.
//
// Exit codes: 0 ok, 2 usage/format, 3 shape mismatch, 4 missing calibration,
// 5 incomparable archives.

#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "resq/pipeline.hpp"
#include "resq/stream.hpp"

using namespace resq;

namespace {

std::vector<int32_t> resolve_stream(const std::string& spec, const archive::TensorArchive& a) {
    const model::Model m = pipeline::get_model(a);
    if (spec.rfind("self:", 0) == 0) {
        // self:<seed>:<tokens> samples from the archive's float model
        std::istringstream ss(spec.substr(5));
        std::string seed_s, n_s;
        require(std::getline(ss, seed_s, ':') && std::getline(ss, n_s, ':'),
                "stream: expected self:<seed>:<tokens>, got '" + spec + "'");
        return model::sample_stream(m, std::stoull(seed_s), std::stoi(n_s));
    }
    return stream::resolve_stream(spec, m.cfg.vocab);
}

std::vector<std::vector<int32_t>> calibration_streams(const std::string& spec,
                                                      const archive::TensorArchive& a,
                                                      int samples, int seqlen, uint64_t seed) {
    require(samples >= 1 && seqlen >= 2, "calibrate: need samples >= 1 and seqlen >= 2");
    const model::Model m = pipeline::get_model(a);
    std::vector<std::vector<int32_t>> out;
    if (spec == "self") {
        for (int s = 0; s < samples; ++s)
            out.push_back(model::sample_stream(m, seed * 1000003ull + s, seqlen));
    } else if (spec.rfind("grammar:", 0) == 0) {
        const uint64_t gseed = std::stoull(spec.substr(8));
        for (int s = 0; s < samples; ++s)
            out.push_back(stream::markov_tokens(gseed * 1000003ull + s, seqlen, m.cfg.vocab));
    } else {
        auto tokens = stream::read_tokens(spec, m.cfg.vocab);
        require(static_cast<int>(tokens.size()) >= seqlen,
                "calibrate: stream file shorter than one sample");
        for (int s = 0; s < samples; ++s) {
            const size_t begin = static_cast<size_t>(s) * seqlen % (tokens.size() - seqlen + 1);
            out.emplace_back(tokens.begin() + begin, tokens.begin() + begin + seqlen);
        }
    }
    return out;
}

int run(int argc, char** argv) {
    CLI::App app{"ResQ-style mixed-precision quantization toolkit"};
    app.require_subcommand(1);

    // init-model
    auto* init = app.add_subcommand("init-model", "create a toy decoder archive");
    std::string init_out;
    uint64_t init_seed = 1;
    model::DecoderConfig cfg;
    init->add_option("output", init_out, "output archive")->required();
    init->add_option("--seed", init_seed, "construction seed");
    init->add_option("--dh", cfg.d_h, "hidden dim");
    init->add_option("--heads", cfg.n_heads, "attention heads");
    init->add_option("--kv-heads", cfg.n_kv_heads, "key/value heads");
    init->add_option("--dffn", cfg.d_ffn, "ffn hidden dim");
    init->add_option("--layers", cfg.n_layers, "decoder layers");
    init->add_option("--vocab", cfg.vocab, "vocabulary size");

    // gen-stream
    auto* gen = app.add_subcommand("gen-stream", "sample a token stream from a model archive");
    std::string gen_model, gen_out;
    uint64_t gen_seed = 1;
    int gen_tokens = 4096;
    gen->add_option("model", gen_model, "model archive")->required();
    gen->add_option("-o,--output", gen_out, "output token file")->required();
    gen->add_option("--seed", gen_seed, "sampling seed");
    gen->add_option("--tokens", gen_tokens, "stream length");

    // calibrate
    auto* cal = app.add_subcommand("calibrate", "collect projection stats and Hessians");
    std::string cal_model, cal_out, cal_streams = "self";
    int cal_samples = 512, cal_seqlen = 512, cal_gptq_samples = 128;
    uint64_t cal_seed = 0;
    double cal_rank_frac = 0.125;
    cal->add_option("model", cal_model, "model archive")->required();
    cal->add_option("-o,--output", cal_out, "output archive")->required();
    cal->add_option("--streams", cal_streams, "self | grammar:<seed> | token file");
    cal->add_option("--samples", cal_samples, "number of calibration sequences");
    cal->add_option("--seqlen", cal_seqlen, "tokens per sequence");
    cal->add_option("--gptq-samples", cal_gptq_samples, "sequences used for Hessians");
    cal->add_option("--seed", cal_seed, "seed for streams and rotations");
    cal->add_option("--rank-frac", cal_rank_frac, "high-precision rank fraction");

    // quantize
    auto* qz = app.add_subcommand("quantize", "fuse projections and quantize weights");
    std::string qz_in, qz_out, qz_basis = "resq";
    pipeline::QuantizeOptions qopts;
    bool no_gptq = false;
    qz->add_option("archive", qz_in, "calibrated archive")->required();
    qz->add_option("-o,--output", qz_out, "output archive")->required();
    qz->add_option("--wbits", qopts.wbits, "weight bits (2-8 or 16)");
    qz->add_option("--abits", qopts.abits, "activation bits (2-8 or 16)");
    qz->add_option("--kvbits", qopts.kvbits, "kv-cache bits (2-8 or 16)");
    qz->add_option("--basis", qz_basis, "resq|identity|rotation|outlier|pca");
    qz->add_flag("--no-gptq", no_gptq, "round-to-nearest weights");
    qz->add_option("--block", qopts.gptq_block, "gptq block size");
    qz->add_option("--kv-page", qopts.kv_page_len, "kv cache page length");
    qz->add_flag("--drop-ua", qopts.drop_ua, "ablate the block-boundary projection");
    qz->add_flag("--drop-ud", qopts.drop_ud, "ablate the ffn projection");
    qz->add_flag("--drop-ubc", qopts.drop_ubc, "ablate the kv projections");
    qz->add_flag("--mixed-uc", qopts.mixed_uc, "low/high split on the key projection path");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate an archive on a stream");
    std::string ev_in, ev_stream, ev_metric = "ppl";
    ev->add_option("archive", ev_in, "archive")->required();
    ev->add_option("--stream", ev_stream, "token file | grammar:<seed>:<n> | self:<seed>:<n>")
        ->required();
    ev->add_option("--metric", ev_metric, "ppl|snr|bound");

    // compare
    auto* cmp = app.add_subcommand("compare", "compare archives on one stream");
    std::vector<std::string> cmp_in;
    std::string cmp_stream, cmp_emit = "table";
    cmp->add_option("archives", cmp_in, "two or more archives")->required()->expected(-2);
    cmp->add_option("--stream", cmp_stream, "token file | grammar:<seed>:<n> | self:<seed>:<n>")
        ->required();
    cmp->add_option("--emit", cmp_emit, "table|csv|json");

    // report
    auto* rep = app.add_subcommand("report", "emit figure-analog data");
    std::string rep_kind = "snr", rep_out;
    int rep_dim = 64, rep_rank = 8, rep_seeds = 20, rep_rows = 512;
    rep->add_option("--kind", rep_kind, "snr (synthetic basis comparison)");
    rep->add_option("--dim", rep_dim, "channel count");
    rep->add_option("--rank", rep_rank, "high-precision rank");
    rep->add_option("--seeds", rep_seeds, "seeds to average");
    rep->add_option("--rows", rep_rows, "rows per draw");
    rep->add_option("-o,--output", rep_out, "write csv here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;  // help/version exit clean, usage errors as 2
    }

    if (*init) {
        archive::TensorArchive a;
        pipeline::put_model(a, model::make_toy_model(cfg, init_seed), init_seed);
        a.save(init_out);
        std::printf("wrote %s\n", init_out.c_str());
        return 0;
    }

    if (*gen) {
        auto a = archive::TensorArchive::load(gen_model);
        auto tokens = model::sample_stream(pipeline::get_model(a), gen_seed, gen_tokens);
        stream::write_tokens(gen_out, tokens);
        std::printf("wrote %d tokens to %s\n", gen_tokens, gen_out.c_str());
        return 0;
    }

    if (*cal) {
        auto a = archive::TensorArchive::load(cal_model);
        auto streams = calibration_streams(cal_streams, a, cal_samples, cal_seqlen, cal_seed);
        auto bundle = calib::collect(pipeline::get_model(a), streams, cal_gptq_samples);
        pipeline::put_calibration(a, bundle, cal_seed, cal_rank_frac, cal_samples, cal_seqlen);
        a.save(cal_out);
        const auto ranks = calib::ranks_from_fraction(bundle.cfg, cal_rank_frac);
        std::printf("calibrated over %d x %d tokens; rank %d/%d; wrote %s\n", cal_samples,
                    cal_seqlen, ranks.rank_a, ranks.rank_head, cal_out.c_str());
        return 0;
    }

    if (*qz) {
        auto a = archive::TensorArchive::load(qz_in);
        qopts.basis = proj::basis_kind_from_name(qz_basis);
        qopts.gptq = !no_gptq;
        pipeline::quantize_model(a, qopts);
        a.save(qz_out);
        std::printf("quantized (W/A/KV = %d/%d/%d, basis %s%s); wrote %s\n", qopts.wbits,
                    qopts.abits, qopts.kvbits, qz_basis.c_str(), qopts.gptq ? ", gptq" : ", rtn",
                    qz_out.c_str());
        return 0;
    }

    if (*ev) {
        auto a = archive::TensorArchive::load(ev_in);
        auto tokens = resolve_stream(ev_stream, a);
        auto rec = pipeline::eval_report(a, ev_metric, tokens);
        std::cout << rec.dump(2) << "\n";
        return 0;
    }

    if (*cmp) {
        auto probe = archive::TensorArchive::load(cmp_in[0]);
        auto tokens = resolve_stream(cmp_stream, probe);
        auto table = pipeline::compare_report(cmp_in, tokens);
        if (cmp_emit == "csv") {
            std::cout << pipeline::compare_csv(table);
        } else if (cmp_emit == "json") {
            std::cout << table.dump(2) << "\n";
        } else {
            std::printf("%-28s %-9s %6s %6s %7s %5s %10s %10s\n", "archive", "basis", "wbits",
                        "abits", "kvbits", "rank", "ppl", "delta");
            for (const auto& row : table["rows"])
                std::printf("%-28s %-9s %6d %6d %7d %5d %10.4f %10.4f\n",
                            row["archive"].get<std::string>().c_str(),
                            row["basis"].get<std::string>().c_str(), row["wbits"].get<int>(),
                            row["abits"].get<int>(), row["kvbits"].get<int>(),
                            row["rank"].get<int>(), row["ppl"].get<double>(),
                            row["delta_ppl"].get<double>());
        }
        return 0;
    }

    if (*rep) {
        require(rep_kind == "snr", "report: unknown kind '" + rep_kind + "'");
        auto rec = pipeline::snr_experiment(rep_rows, rep_dim, rep_rank, 4, 8, rep_seeds);
        std::ostringstream os;
        os << "basis,snr_db\n";
        for (const auto& row : rec["rows"])
            os << row["basis"].get<std::string>() << "," << row["snr_db"].get<double>() << "\n";
        if (rep_out.empty()) {
            std::cout << os.str();
        } else {
            std::ofstream f(rep_out, std::ios::trunc);
            f << os.str();
        }
        return 0;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const pipeline::MissingCalibration& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const pipeline::Incomparable& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 5;
    } catch (const pipeline::ShapeError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
