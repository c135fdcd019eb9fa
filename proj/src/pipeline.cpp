#include "resq/pipeline.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include "resq/linalg.hpp"
#include "resq/stream.hpp"

namespace resq::pipeline {

namespace {

std::string layer_key(int l, const std::string& name) {
    return "model.layer." + std::to_string(l) + "." + name;
}

std::string quant_key(int l, const std::string& name) {
    return "quant.layer." + std::to_string(l) + "." + name;
}

}  // namespace

void put_model(archive::TensorArchive& a, const model::Model& m, uint64_t seed) {
    m.cfg.validate();
    a.meta["model"] = {{"d_h", m.cfg.d_h},         {"n_heads", m.cfg.n_heads},
                       {"n_kv_heads", m.cfg.n_kv_heads}, {"d_ffn", m.cfg.d_ffn},
                       {"n_layers", m.cfg.n_layers},     {"vocab", m.cfg.vocab},
                       {"rope_theta", m.cfg.rope_theta}, {"rms_eps", m.cfg.rms_eps},
                       {"seed", seed}};
    a.put_f32("model.embedding", m.embedding);
    a.put_f32("model.head", m.head);
    a.put_vec_f32("model.norm_final", m.norm_final);
    for (int l = 0; l < m.cfg.n_layers; ++l) {
        const auto& w = m.layers[l];
        a.put_f32(layer_key(l, "wq"), w.wq);
        a.put_f32(layer_key(l, "wk"), w.wk);
        a.put_f32(layer_key(l, "wv"), w.wv);
        a.put_f32(layer_key(l, "wo"), w.wo);
        a.put_f32(layer_key(l, "w_up"), w.w_up);
        a.put_f32(layer_key(l, "w_gate"), w.w_gate);
        a.put_f32(layer_key(l, "w_down"), w.w_down);
        a.put_vec_f32(layer_key(l, "norm_attn"), w.norm_attn);
        a.put_vec_f32(layer_key(l, "norm_ffn"), w.norm_ffn);
    }
}

model::Model get_model(const archive::TensorArchive& a) {
    require(a.meta.contains("model"), "archive: no model metadata");
    const auto& j = a.meta["model"];
    model::Model m;
    m.cfg.d_h = j["d_h"].get<int>();
    m.cfg.n_heads = j["n_heads"].get<int>();
    m.cfg.n_kv_heads = j["n_kv_heads"].get<int>();
    m.cfg.d_ffn = j["d_ffn"].get<int>();
    m.cfg.n_layers = j["n_layers"].get<int>();
    m.cfg.vocab = j["vocab"].get<int>();
    m.cfg.rope_theta = j["rope_theta"].get<float>();
    m.cfg.rms_eps = j["rms_eps"].get<float>();
    m.cfg.validate();

    m.embedding = a.get_f32("model.embedding");
    m.head = a.get_f32("model.head");
    m.norm_final = a.get_vec_f32("model.norm_final");
    const int kv = m.cfg.n_kv_heads * m.cfg.d_head();
    m.layers.resize(m.cfg.n_layers);
    for (int l = 0; l < m.cfg.n_layers; ++l) {
        auto& w = m.layers[l];
        w.wq = a.get_f32(layer_key(l, "wq"));
        w.wk = a.get_f32(layer_key(l, "wk"));
        w.wv = a.get_f32(layer_key(l, "wv"));
        w.wo = a.get_f32(layer_key(l, "wo"));
        w.w_up = a.get_f32(layer_key(l, "w_up"));
        w.w_gate = a.get_f32(layer_key(l, "w_gate"));
        w.w_down = a.get_f32(layer_key(l, "w_down"));
        w.norm_attn = a.get_vec_f32(layer_key(l, "norm_attn"));
        w.norm_ffn = a.get_vec_f32(layer_key(l, "norm_ffn"));
        if (w.wq.rows != m.cfg.d_h || w.wq.cols != m.cfg.d_h || w.wk.cols != kv ||
            w.wv.cols != kv || w.w_up.cols != m.cfg.d_ffn || w.w_down.rows != m.cfg.d_ffn)
            throw ShapeError("archive: layer " + std::to_string(l) +
                             " weight shapes disagree with the model config");
    }
    return m;
}

namespace {

void put_stats(archive::TensorArchive& a, const std::string& key, const proj::CalibStats& st,
               nlohmann::ordered_json& counts) {
    a.put_f64(key + ".sum", st.sum_outer);
    MatD mx(1, st.dim);
    std::copy(st.chan_max_abs.begin(), st.chan_max_abs.end(), mx.a.begin());
    a.put_f64(key + ".maxabs", mx);
    counts[key] = st.count;
}

proj::CalibStats get_stats(const archive::TensorArchive& a, const std::string& key) {
    MatD sum = a.get_f64(key + ".sum");
    proj::CalibStats st(sum.rows);
    st.sum_outer = std::move(sum);
    MatD mx = a.get_f64(key + ".maxabs");
    std::copy(mx.a.begin(), mx.a.end(), st.chan_max_abs.begin());
    st.count = a.meta["calib"]["counts"][key].get<uint64_t>();
    return st;
}

}  // namespace

void put_calibration(archive::TensorArchive& a, const calib::CalibBundle& bundle, uint64_t seed,
                     double rank_frac, int samples, int seqlen) {
    nlohmann::ordered_json counts = nlohmann::ordered_json::object();
    put_stats(a, "calib.block_in", bundle.block_in, counts);
    for (int l = 0; l < bundle.cfg.n_layers; ++l) {
        const std::string p = "calib.layer." + std::to_string(l);
        put_stats(a, p + ".key", bundle.key_rope[l], counts);
        put_stats(a, p + ".value", bundle.value[l], counts);
        put_stats(a, p + ".ffn_hidden", bundle.ffn_hidden[l], counts);
        put_stats(a, p + ".h_attn_in", bundle.h_attn_in[l], counts);
        put_stats(a, p + ".h_o_in", bundle.h_o_in[l], counts);
        put_stats(a, p + ".h_ffn_in", bundle.h_ffn_in[l], counts);
        put_stats(a, p + ".h_down_in", bundle.h_down_in[l], counts);
    }
    a.meta["calib"] = {{"seed", seed},
                       {"rank_frac", rank_frac},
                       {"samples", samples},
                       {"seqlen", seqlen},
                       {"streams_seen", bundle.streams_seen},
                       {"counts", counts}};
}

bool has_calibration(const archive::TensorArchive& a) { return a.meta.contains("calib"); }

calib::CalibBundle get_calibration(const archive::TensorArchive& a) {
    require(has_calibration(a), "archive: no calibration data");
    model::Model m = get_model(a);
    calib::CalibBundle b(m.cfg);
    b.block_in = get_stats(a, "calib.block_in");
    for (int l = 0; l < m.cfg.n_layers; ++l) {
        const std::string p = "calib.layer." + std::to_string(l);
        b.key_rope[l] = get_stats(a, p + ".key");
        b.value[l] = get_stats(a, p + ".value");
        b.ffn_hidden[l] = get_stats(a, p + ".ffn_hidden");
        b.h_attn_in[l] = get_stats(a, p + ".h_attn_in");
        b.h_o_in[l] = get_stats(a, p + ".h_o_in");
        b.h_ffn_in[l] = get_stats(a, p + ".h_ffn_in");
        b.h_down_in[l] = get_stats(a, p + ".h_down_in");
    }
    b.streams_seen = a.meta["calib"]["streams_seen"].get<uint64_t>();
    return b;
}

namespace {

void check_bits(int bits, const char* what) {
    require((bits >= 2 && bits <= 8) || bits == 16,
            std::string(what) + " bits must be in [2, 8] or 16");
}

MatD blockdiag(const MatD& block, int copies) {
    const int d = block.rows;
    MatD out(d * copies, d * copies);
    for (int c = 0; c < copies; ++c)
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) out(c * d + i, c * d + j) = block(i, j);
    return out;
}

bool mixed_basis_kind(proj::BasisKind k) {
    return k == proj::BasisKind::Resq || k == proj::BasisKind::PcaOnly ||
           k == proj::BasisKind::OutlierLinf;
}

std::vector<gptq::RowSpan> boundary_spans(int d, int split, int lo, int hi) {
    if (split >= d) return {{0, d, lo}};
    return {{0, split, lo}, {split, d, hi}};
}

std::vector<gptq::RowSpan> per_head_spans(int n_heads, int d_head, int split, int lo, int hi) {
    std::vector<gptq::RowSpan> spans;
    for (int h = 0; h < n_heads; ++h) {
        const int base = h * d_head;
        if (split >= d_head) {
            spans.push_back({base, base + d_head, lo});
        } else {
            spans.push_back({base, base + split, lo});
            spans.push_back({base + split, base + d_head, hi});
        }
    }
    return spans;
}

nlohmann::ordered_json spans_json(const std::vector<gptq::RowSpan>& spans) {
    auto j = nlohmann::ordered_json::array();
    for (const auto& s : spans) j.push_back({s.r0, s.r1, s.bits});
    return j;
}

std::vector<gptq::RowSpan> spans_from_json(const nlohmann::ordered_json& j) {
    std::vector<gptq::RowSpan> spans;
    for (const auto& e : j) spans.push_back({e[0].get<int>(), e[1].get<int>(), e[2].get<int>()});
    return spans;
}

}  // namespace

RuntimeModel quantize_model(archive::TensorArchive& a, const QuantizeOptions& opts) {
    check_bits(opts.wbits, "weight");
    check_bits(opts.abits, "activation");
    check_bits(opts.kvbits, "kv");

    model::Model base = get_model(a);
    const auto& cfg = base.cfg;
    const int dh = cfg.d_head();

    const bool need_calib =
        (opts.basis != proj::BasisKind::Identity) || (opts.wbits < 16 && opts.gptq);
    if (need_calib && !has_calibration(a))
        throw MissingCalibration("quantize: basis '" +
                                 std::string(proj::basis_kind_name(opts.basis)) +
                                 "' needs a calibrated archive (run calibrate first)");

    calib::CalibBundle bundle(cfg);
    uint64_t seed = 0;
    double rank_frac = 0.125;
    if (has_calibration(a)) {
        bundle = get_calibration(a);
        seed = a.meta["calib"]["seed"].get<uint64_t>();
        rank_frac = a.meta["calib"]["rank_frac"].get<double>();
    }
    const calib::RankSpec ranks = calib::ranks_from_fraction(cfg, rank_frac);

    model::ProjectionSet p = calib::derive(bundle, opts.basis, ranks, seed);
    if (opts.drop_ua)
        p.u_a = proj::build_baseline_basis(proj::BasisKind::Identity, nullptr, cfg.d_h,
                                           ranks.rank_a, 0);
    if (opts.drop_ubc)
        for (int l = 0; l < cfg.n_layers; ++l) {
            p.u_b[l] = proj::build_baseline_basis(proj::BasisKind::Identity, nullptr, dh,
                                                  ranks.rank_head, 0);
            p.u_c[l] = p.u_b[l];
        }
    if (opts.drop_ud)
        for (int l = 0; l < cfg.n_layers; ++l) {
            p.u_d[l] = MatD::identity(cfg.d_ffn);
            p.u_d_fht[l] = 0;
        }

    model::Model fused = base;
    model::fold_norm_gains(fused);
    model::fuse_projections(fused, p);

    const bool mixed = mixed_basis_kind(opts.basis);
    const int split_a = mixed ? cfg.d_h - ranks.rank_a : cfg.d_h;
    const int split_head = mixed ? dh - ranks.rank_head : dh;
    const int hi_bits = 8;

    // export the bases (rank recorded in the metadata)
    a.put_f64("U_A", p.u_a.u);
    for (int l = 0; l < cfg.n_layers; ++l) {
        a.put_f64("layer." + std::to_string(l) + ".U_B", p.u_b[l].u);
        a.put_f64("layer." + std::to_string(l) + ".U_C", p.u_c[l].u);
        a.put_f64("layer." + std::to_string(l) + ".U_D", p.u_d[l]);
    }

    // weight quantization
    nlohmann::ordered_json span_meta = nlohmann::ordered_json::object();
    if (opts.wbits < 16) {
        const auto bspans = boundary_spans(cfg.d_h, split_a, opts.wbits, hi_bits);
        const auto ospans = per_head_spans(cfg.n_heads, dh, split_head, opts.wbits, hi_bits);
        const std::vector<gptq::RowSpan> dspans{{0, cfg.d_ffn, opts.wbits}};
        span_meta["boundary"] = spans_json(bspans);
        span_meta["o_proj"] = spans_json(ospans);
        span_meta["down_proj"] = spans_json(dspans);

        for (int l = 0; l < cfg.n_layers; ++l) {
            auto& w = fused.layers[l];
            MatD bd_b = blockdiag(p.u_b[l].u, cfg.n_heads);

            auto quantize_weight = [&](const std::string& name, MatF& wm,
                                       const proj::CalibStats& stats, const MatD* conj,
                                       const std::vector<gptq::RowSpan>& spans) {
                std::vector<quant::QuantizedTensor> parts;
                if (opts.gptq) {
                    gptq::HessianEstimate h = gptq::HessianEstimate::from_stats(stats);
                    h.damping = opts.damping;
                    if (conj) h = h.conjugated(*conj);
                    parts = gptq::gptq_quantize_spans(wm, h, spans, opts.gptq_block);
                } else {
                    parts = gptq::rtn_quantize_spans(wm, spans);
                }
                for (size_t k = 0; k < parts.size(); ++k)
                    a.put_quantized(quant_key(l, name) + ".s" + std::to_string(k), parts[k]);
                wm = gptq::stack_spans(parts);
            };

            const bool ua_identity = opts.drop_ua || opts.basis == proj::BasisKind::Identity;
            const MatD* ua = ua_identity ? nullptr : &p.u_a.u;
            quantize_weight("wq", w.wq, bundle.h_attn_in[l], ua, bspans);
            quantize_weight("wk", w.wk, bundle.h_attn_in[l], ua, bspans);
            quantize_weight("wv", w.wv, bundle.h_attn_in[l], ua, bspans);
            quantize_weight("w_up", w.w_up, bundle.h_ffn_in[l], ua, bspans);
            quantize_weight("w_gate", w.w_gate, bundle.h_ffn_in[l], ua, bspans);
            quantize_weight("wo", w.wo, bundle.h_o_in[l],
                            (opts.drop_ubc || opts.basis == proj::BasisKind::Identity) ? nullptr
                                                                                       : &bd_b,
                            ospans);
            const bool ud_identity = opts.drop_ud || opts.basis == proj::BasisKind::Identity;
            quantize_weight("w_down", w.w_down, bundle.h_down_in[l],
                            ud_identity ? nullptr : &p.u_d[l], dspans);
        }
    } else {
        for (int l = 0; l < cfg.n_layers; ++l) {
            const auto& w = fused.layers[l];
            a.put_f32(quant_key(l, "wq"), w.wq);
            a.put_f32(quant_key(l, "wk"), w.wk);
            a.put_f32(quant_key(l, "wv"), w.wv);
            a.put_f32(quant_key(l, "wo"), w.wo);
            a.put_f32(quant_key(l, "w_up"), w.w_up);
            a.put_f32(quant_key(l, "w_gate"), w.w_gate);
            a.put_f32(quant_key(l, "w_down"), w.w_down);
        }
    }
    a.put_f32("quant.embedding", fused.embedding);
    a.put_f32("quant.head", fused.head);

    // runtime projections: U_C stays explicit; its matrix runs at 8 bit when
    // activations are quantized
    RuntimeModel rm;
    rm.m = std::move(fused);
    rm.rp.active = (opts.basis != proj::BasisKind::Identity);
    quant::QuantConfig uc_cfg{8, true, quant::Granularity::PerChannel, 0};
    for (int l = 0; l < cfg.n_layers; ++l) {
        MatF uc = p.u_c[l].u.cast<float>();
        if (rm.rp.active && opts.abits < 16 && !opts.drop_ubc) {
            quant::QuantizedTensor ucq = quant::quantize(uc, uc_cfg);
            a.put_quantized(quant_key(l, "U_C_q8"), ucq);
            uc = quant::dequantize(ucq);
        }
        a.put_f32(quant_key(l, "U_C_eff"), uc);
        rm.rp.u_c.push_back(std::move(uc));
        const bool ud_skip = opts.drop_ud || opts.basis == proj::BasisKind::Identity;
        rm.rp.u_d_fht.push_back((!ud_skip && p.u_d_fht[l]) ? 1 : 0);
        if (!ud_skip && !p.u_d_fht[l])
            rm.rp.u_d_dense.push_back(p.u_d[l].cast<float>());
        else
            rm.rp.u_d_dense.emplace_back();
    }

    rm.aq.enabled = opts.abits < 16 || opts.kvbits < 16;
    rm.aq.abits = opts.abits;
    rm.aq.kvbits = opts.kvbits;
    rm.aq.high_bits = hi_bits;
    rm.aq.split_a = split_a;
    rm.aq.split_head = split_head;
    rm.aq.kv_page_len = opts.kv_page_len;
    rm.aq.uc_mixed = opts.mixed_uc;

    a.meta["quant"] = {{"wbits", opts.wbits},
                       {"abits", opts.abits},
                       {"kvbits", opts.kvbits},
                       {"basis", proj::basis_kind_name(opts.basis)},
                       {"gptq", opts.gptq},
                       {"gptq_block", opts.gptq_block},
                       {"damping", opts.damping},
                       {"seed", seed},
                       {"rank_frac", rank_frac},
                       {"rank_a", ranks.rank_a},
                       {"rank_head", ranks.rank_head},
                       {"split_a", split_a},
                       {"split_head", split_head},
                       {"kv_page_len", opts.kv_page_len},
                       {"mixed_uc", opts.mixed_uc},
                       {"rp_active", rm.rp.active},
                       {"u_d_fht", rm.rp.u_d_fht},
                       {"drop_ua", opts.drop_ua},
                       {"drop_ud", opts.drop_ud},
                       {"drop_ubc", opts.drop_ubc},
                       {"spans", span_meta}};
    return rm;
}

RuntimeModel load_runtime(const archive::TensorArchive& a) {
    RuntimeModel rm;
    if (!a.meta.contains("quant")) {
        rm.m = get_model(a);
        return rm;
    }
    const auto& q = a.meta["quant"];
    model::Model shell = get_model(a);  // config + shape validation
    const auto cfg = shell.cfg;
    rm.m.cfg = cfg;
    rm.m.embedding = a.get_f32("quant.embedding");
    rm.m.head = a.get_f32("quant.head");
    rm.m.norm_final.assign(cfg.d_h, 1.0f);
    rm.m.layers.resize(cfg.n_layers);

    const int wbits = q["wbits"].get<int>();
    for (int l = 0; l < cfg.n_layers; ++l) {
        auto& w = rm.m.layers[l];
        auto load_weight = [&](const std::string& name, const std::string& span_key) {
            if (wbits >= 16) return a.get_f32(quant_key(l, name));
            const auto spans = spans_from_json(q["spans"][span_key]);
            std::vector<quant::QuantizedTensor> parts;
            for (size_t k = 0; k < spans.size(); ++k)
                parts.push_back(a.get_quantized(quant_key(l, name) + ".s" + std::to_string(k)));
            return gptq::stack_spans(parts);
        };
        w.wq = load_weight("wq", "boundary");
        w.wk = load_weight("wk", "boundary");
        w.wv = load_weight("wv", "boundary");
        w.wo = load_weight("wo", "o_proj");
        w.w_up = load_weight("w_up", "boundary");
        w.w_gate = load_weight("w_gate", "boundary");
        w.w_down = load_weight("w_down", "down_proj");
        w.norm_attn.assign(cfg.d_h, 1.0f);
        w.norm_ffn.assign(cfg.d_h, 1.0f);
    }

    rm.rp.active = q["rp_active"].get<bool>();
    rm.rp.u_d_fht = q["u_d_fht"].get<std::vector<uint8_t>>();
    for (int l = 0; l < cfg.n_layers; ++l) {
        rm.rp.u_c.push_back(a.get_f32(quant_key(l, "U_C_eff")));
        if (rm.rp.active && !rm.rp.u_d_fht[l] && !q["drop_ud"].get<bool>() &&
            q["basis"].get<std::string>() != "identity")
            rm.rp.u_d_dense.push_back(a.get_f64("layer." + std::to_string(l) + ".U_D").cast<float>());
        else
            rm.rp.u_d_dense.emplace_back();
    }

    rm.aq.enabled = q["abits"].get<int>() < 16 || q["kvbits"].get<int>() < 16;
    rm.aq.abits = q["abits"].get<int>();
    rm.aq.kvbits = q["kvbits"].get<int>();
    rm.aq.high_bits = 8;
    rm.aq.split_a = q["split_a"].get<int>();
    rm.aq.split_head = q["split_head"].get<int>();
    rm.aq.kv_page_len = q["kv_page_len"].get<int>();
    rm.aq.uc_mixed = q["mixed_uc"].get<bool>();
    return rm;
}

double eval_ppl(const RuntimeModel& rm, const std::vector<int32_t>& tokens) {
    return model::perplexity(rm.m, tokens, rm.rp, rm.aq);
}

namespace {

double snr_capped(double snr) { return std::isfinite(snr) ? snr : -300.0; }

// capture per-site activations of the float model over a stream
struct SiteCapture {
    std::vector<MatF> attn_in, ffn_in, hidden;      // per layer
    std::vector<MatF> key, value;                   // per layer, rows pooled over heads
};

SiteCapture capture_sites(const model::Model& m, const std::vector<int32_t>& tokens) {
    SiteCapture cap;
    cap.attn_in.resize(m.cfg.n_layers);
    cap.ffn_in.resize(m.cfg.n_layers);
    cap.hidden.resize(m.cfg.n_layers);
    cap.key.resize(m.cfg.n_layers);
    cap.value.resize(m.cfg.n_layers);
    auto stack = [](MatF& dst, const MatF& x) {
        if (dst.rows == 0) {
            dst = x;
            return;
        }
        MatF merged(dst.rows + x.rows, x.cols);
        std::copy(dst.a.begin(), dst.a.end(), merged.a.begin());
        std::copy(x.a.begin(), x.a.end(), merged.a.begin() + dst.size());
        dst = std::move(merged);
    };
    model::ForwardHooks<float> hooks;
    hooks.attn_in = [&](int l, const MatF& x) { stack(cap.attn_in[l], x); };
    hooks.ffn_in = [&](int l, const MatF& x) { stack(cap.ffn_in[l], x); };
    hooks.down_in = [&](int l, const MatF& x) { stack(cap.hidden[l], x); };
    hooks.kv = [&](int l, int, const MatF& k, const MatF& v) {
        stack(cap.key[l], k);
        stack(cap.value[l], v);
    };
    model::Decoder<float> dec(&m);
    dec.process(tokens, &hooks);
    return cap;
}

proj::ProjectionBasis basis_from_archive(const archive::TensorArchive& a, const std::string& name,
                                         int rank) {
    proj::ProjectionBasis b;
    b.u = a.get_f64(name);
    b.rank_high = rank;
    b.kind = proj::basis_kind_from_name(a.meta["quant"]["basis"].get<std::string>());
    return b;
}

}  // namespace

nlohmann::ordered_json eval_report(const archive::TensorArchive& a, const std::string& metric,
                                   const std::vector<int32_t>& tokens) {
    nlohmann::ordered_json rec;
    rec["schema"] = 1;
    rec["metric"] = metric;
    rec["tokens"] = tokens.size();
    rec["config"] = a.meta.contains("quant") ? a.meta["quant"] : nlohmann::ordered_json("float");

    if (metric == "ppl") {
        const double ppl = eval_ppl(load_runtime(a), tokens);
        rec["value"] = std::isfinite(ppl) ? ppl : 1e300;  // record fields stay finite
        return rec;
    }

    if (metric != "snr" && metric != "bound")
        throw FormatError("unknown metric '" + metric + "' (want ppl|snr|bound)");
    require(a.meta.contains("quant"),
            "metric '" + metric + "' needs a quantized archive with exported bases");
    const auto& q = a.meta["quant"];
    const int abits = q["abits"].get<int>();
    const int kvbits = q["kvbits"].get<int>();
    const int rank_a = q["rank_a"].get<int>();
    const int rank_head = q["rank_head"].get<int>();
    const bool mixed = mixed_basis_kind(proj::basis_kind_from_name(q["basis"].get<std::string>()));

    model::Model m = get_model(a);
    SiteCapture cap = capture_sites(m, tokens);
    quant::QuantConfig tok_asym{4, false, quant::Granularity::PerToken, 0};

    auto rows = nlohmann::ordered_json::array();
    double snr_sum = 0.0;
    int snr_count = 0;
    bool all_within = true;

    for (int l = 0; l < m.cfg.n_layers; ++l) {
        const std::string ln = "layer." + std::to_string(l);
        proj::ProjectionBasis ua = basis_from_archive(a, "U_A", rank_a);
        proj::ProjectionBasis ub = basis_from_archive(a, ln + ".U_B", rank_head);
        proj::ProjectionBasis uc = basis_from_archive(a, ln + ".U_C", rank_head);

        struct Site {
            const char* name;
            const MatF* x;
            const proj::ProjectionBasis* basis;
            int lo_bits;
        };
        const Site sites[] = {{"attn_in", &cap.attn_in[l], &ua, abits},
                              {"ffn_in", &cap.ffn_in[l], &ua, abits},
                              {"key", &cap.key[l], &uc, kvbits},
                              {"value", &cap.value[l], &ub, kvbits}};

        for (const auto& s : sites) {
            if (s.lo_bits >= 16) continue;
            nlohmann::ordered_json row;
            row["site"] = ln + "." + s.name;
            MatF projd = proj::project(*s.x, *s.basis);
            MatF xq = mixed ? proj::mixed_fake_quant(*s.x, *s.basis, s.lo_bits, 8, tok_asym)
                            : quant::fake_quant(projd, tok_asym.with_bits(s.lo_bits));
            if (metric == "snr") {
                const double snr = snr_capped(quant::quant_snr(projd, xq));
                row["snr_db"] = snr;
                snr_sum += snr;
                ++snr_count;
            } else {
                require(mixed, "bound metric needs a mixed-precision basis (resq|pca|outlier)");
                const double bound = proj::mixed_quant_error_bound(*s.x, *s.basis, s.lo_bits, 8);
                const double measured = linalg::fro_norm(projd - xq);
                row["bound"] = bound;
                row["measured"] = measured;
                row["within_bound"] = measured <= bound;
                all_within = all_within && measured <= bound;
            }
            rows.push_back(row);
        }

        if (metric == "snr" && abits < 16) {
            // the down path is uniformly quantized; report its SNR too
            nlohmann::ordered_json row;
            row["site"] = ln + ".ffn_hidden";
            MatF x = cap.hidden[l];
            proj::ProjectionBasis ud;
            ud.u = a.get_f64(ln + ".U_D");
            ud.rank_high = 1;
            MatF projd = (q["basis"].get<std::string>() == "identity")
                             ? x
                             : matmul(x, ud.u.cast<float>());
            const double snr =
                snr_capped(quant::quant_snr(projd, quant::fake_quant(projd, tok_asym.with_bits(abits))));
            row["snr_db"] = snr;
            snr_sum += snr;
            ++snr_count;
            rows.push_back(row);
        }
    }

    rec["sites"] = rows;
    if (metric == "snr") {
        require(snr_count > 0, "snr metric: nothing to quantize at 16-bit settings");
        rec["mean_snr_db"] = snr_sum / snr_count;
    } else {
        rec["all_within_bound"] = all_within;
    }
    return rec;
}

nlohmann::ordered_json compare_report(const std::vector<std::string>& paths,
                                      const std::vector<int32_t>& tokens) {
    require(paths.size() >= 2, "compare: need at least two archives");
    std::vector<archive::TensorArchive> archives;
    for (const auto& p : paths) archives.push_back(archive::TensorArchive::load(p));

    // all model configs must agree; report the differing keys otherwise
    const auto& ref = archives[0].meta["model"];
    for (size_t i = 1; i < archives.size(); ++i) {
        std::vector<std::string> diff;
        for (auto& [k, v] : ref.items()) {
            if (k == "seed") continue;
            if (!archives[i].meta["model"].contains(k) || archives[i].meta["model"][k] != v)
                diff.push_back(k);
        }
        if (!diff.empty()) {
            std::ostringstream os;
            os << "archives are incomparable; differing model keys:";
            for (const auto& k : diff) os << " " << k;
            throw Incomparable(os.str());
        }
    }

    nlohmann::ordered_json table;
    table["schema"] = 1;
    auto rows = nlohmann::ordered_json::array();
    double first_ppl = 0.0;
    for (size_t i = 0; i < paths.size(); ++i) {
        nlohmann::ordered_json row;
        row["archive"] = paths[i];
        const bool quantized = archives[i].meta.contains("quant");
        row["basis"] = quantized ? archives[i].meta["quant"]["basis"]
                                 : nlohmann::ordered_json("float");
        row["wbits"] = quantized ? archives[i].meta["quant"]["wbits"].get<int>() : 16;
        row["abits"] = quantized ? archives[i].meta["quant"]["abits"].get<int>() : 16;
        row["kvbits"] = quantized ? archives[i].meta["quant"]["kvbits"].get<int>() : 16;
        row["rank"] = quantized ? archives[i].meta["quant"]["rank_a"].get<int>() : 0;
        double ppl = eval_ppl(load_runtime(archives[i]), tokens);
        if (!std::isfinite(ppl)) ppl = 1e300;
        row["ppl"] = ppl;
        if (i == 0) first_ppl = ppl;
        row["delta_ppl"] = ppl - first_ppl;
        rows.push_back(row);
    }
    table["rows"] = rows;
    return table;
}

std::string compare_csv(const nlohmann::ordered_json& table) {
    std::ostringstream os;
    os << "archive,basis,wbits,abits,kvbits,rank,ppl,delta_ppl\n";
    for (const auto& row : table["rows"]) {
        os << row["archive"].get<std::string>() << "," << row["basis"].get<std::string>() << ","
           << row["wbits"].get<int>() << "," << row["abits"].get<int>() << ","
           << row["kvbits"].get<int>() << "," << row["rank"].get<int>() << "," << row["ppl"].get<double>()
           << "," << row["delta_ppl"].get<double>() << "\n";
    }
    return os.str();
}

nlohmann::ordered_json snr_experiment(int n, int dim, int rank, int bits_low, int bits_high,
                                      int seeds) {
    require(dim >= 16 && rank >= 2 && rank < dim, "snr_experiment: bad shape");
    quant::QuantConfig tok_asym{4, false, quant::Granularity::PerToken, 0};
    const char* kinds[] = {"resq", "rotation", "identity", "outlier"};
    std::map<std::string, double> sum;

    for (int s = 0; s < seeds; ++s) {
        Rng rng(1000 + s);
        // two heavy axis channels plus two heavy directions spread over six
        // channels each, all scaled by 20
        MatF x = gaussian_matrix<float>(n, dim, rng);
        std::vector<bool> taken(dim, false);
        auto pick = [&](int count) {
            std::vector<int> out;
            while (static_cast<int>(out.size()) < count) {
                int c = static_cast<int>(rng.below(dim));
                if (!taken[c]) {
                    taken[c] = true;
                    out.push_back(c);
                }
            }
            return out;
        };
        for (int c : pick(2))
            for (int i = 0; i < n; ++i) x(i, c) *= 20.0f;
        for (int k = 0; k < 2; ++k) {
            auto cols = pick(6);
            const double unit = 20.0 / std::sqrt(6.0);
            for (int i = 0; i < n; ++i) {
                const double g = rng.gaussian() * unit;
                for (int c : cols) x(i, c) += static_cast<float>(g);
            }
        }

        proj::CalibStats st(dim);
        st.accumulate(x);
        for (const char* kind : kinds) {
            proj::BasisKind k = proj::basis_kind_from_name(kind);
            proj::ProjectionBasis b =
                proj::build_baseline_basis(k, &st, dim, rank, 7000 + 31 * s);
            MatF projd = proj::project(x, b);
            MatF xq = (k == proj::BasisKind::RotationOnly)
                          ? quant::fake_quant(projd, tok_asym.with_bits(bits_low))
                          : proj::mixed_fake_quant(x, b, bits_low, bits_high, tok_asym);
            sum[kind] += quant::quant_snr(projd, xq);
        }
    }

    nlohmann::ordered_json rec;
    rec["schema"] = 1;
    rec["experiment"] = "snr_bases";
    rec["n"] = n;
    rec["dim"] = dim;
    rec["rank"] = rank;
    rec["bits_low"] = bits_low;
    rec["bits_high"] = bits_high;
    rec["seeds"] = seeds;
    auto rows = nlohmann::ordered_json::array();
    for (const char* kind : kinds)
        rows.push_back({{"basis", kind}, {"snr_db", sum[kind] / seeds}});
    rec["rows"] = rows;
    return rec;
}

}  // namespace resq::pipeline
