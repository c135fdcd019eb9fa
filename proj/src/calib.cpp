#include "resq/calib.hpp"

#include <cmath>
#include <cstdio>

#include "resq/linalg.hpp"
#include "resq/rng.hpp"

namespace resq::calib {

CalibBundle::CalibBundle(const model::DecoderConfig& c)
    : cfg(c), block_in(c.d_h) {
    for (int l = 0; l < c.n_layers; ++l) {
        key_rope.emplace_back(c.d_head());
        value.emplace_back(c.d_head());
        ffn_hidden.emplace_back(c.d_ffn);
        h_attn_in.emplace_back(c.d_h);
        h_o_in.emplace_back(c.d_h);
        h_ffn_in.emplace_back(c.d_h);
        h_down_in.emplace_back(c.d_ffn);
    }
}

void CalibBundle::merge(const CalibBundle& other) {
    block_in.merge(other.block_in);
    for (size_t l = 0; l < key_rope.size(); ++l) {
        key_rope[l].merge(other.key_rope[l]);
        value[l].merge(other.value[l]);
        ffn_hidden[l].merge(other.ffn_hidden[l]);
        h_attn_in[l].merge(other.h_attn_in[l]);
        h_o_in[l].merge(other.h_o_in[l]);
        h_ffn_in[l].merge(other.h_ffn_in[l]);
        h_down_in[l].merge(other.h_down_in[l]);
    }
    streams_seen += other.streams_seen;
}

CalibBundle collect(const model::Model& m, const std::vector<std::vector<int32_t>>& streams,
                    int gptq_streams) {
    require(!streams.empty(), "calibrate: no calibration streams");
    CalibBundle bundle(m.cfg);

    bool hessians_active = true;
    model::ForwardHooks<float> hooks;
    hooks.attn_in = [&](int l, const MatF& x) {
        bundle.block_in.accumulate(x);
        if (hessians_active) bundle.h_attn_in[l].accumulate(x);
    };
    hooks.ffn_in = [&](int l, const MatF& x) {
        bundle.block_in.accumulate(x);
        if (hessians_active) bundle.h_ffn_in[l].accumulate(x);
    };
    hooks.o_in = [&](int l, const MatF& x) {
        if (hessians_active) bundle.h_o_in[l].accumulate(x);
    };
    hooks.down_in = [&](int l, const MatF& x) {
        bundle.ffn_hidden[l].accumulate(x);
        if (hessians_active) bundle.h_down_in[l].accumulate(x);
    };
    hooks.kv = [&](int l, int /*head*/, const MatF& k_rope, const MatF& v) {
        bundle.key_rope[l].accumulate(k_rope);
        bundle.value[l].accumulate(v);
    };

    model::Decoder<float> dec(&m);
    for (size_t s = 0; s < streams.size(); ++s) {
        hessians_active = static_cast<int>(s) < gptq_streams;
        require(!streams[s].empty(), "calibrate: empty stream at index " + std::to_string(s));
        dec.reset();
        dec.process(streams[s], &hooks);
        ++bundle.streams_seen;
    }
    return bundle;
}

RankSpec ranks_from_fraction(const model::DecoderConfig& cfg, double frac) {
    require(frac > 0.0 && frac < 1.0, "rank fraction must be in (0, 1)");
    auto pick = [&](int dim) {
        int r = static_cast<int>(std::lround(dim * frac));
        return std::clamp(r, 1, dim - 1);
    };
    return {pick(cfg.d_h), pick(cfg.d_head())};
}

model::ProjectionSet derive(const CalibBundle& bundle, proj::BasisKind kind,
                            const RankSpec& ranks, uint64_t seed) {
    const auto& cfg = bundle.cfg;
    if (kind == proj::BasisKind::Identity)
        return model::ProjectionSet::identity(cfg, ranks.rank_a, ranks.rank_head);

    if (kind != proj::BasisKind::RotationOnly) {
        require(bundle.block_in.count > 0, "derive: missing stats for site block_in");
        for (int l = 0; l < cfg.n_layers; ++l) {
            const std::string ln = "layer." + std::to_string(l);
            require(bundle.key_rope[l].count > 0, "derive: missing stats for site " + ln + ".key");
            require(bundle.value[l].count > 0, "derive: missing stats for site " + ln + ".value");
        }
    }

    Rng rng(seed);
    model::ProjectionSet p;
    const proj::CalibStats* a_stats =
        (kind == proj::BasisKind::RotationOnly) ? nullptr : &bundle.block_in;
    p.u_a = proj::build_baseline_basis(kind, a_stats, cfg.d_h, ranks.rank_a, rng.next_u64());

    const bool ffn_hadamard = linalg::hadamard_supported(cfg.d_ffn);
    // the fast transform applies only to the pure Sylvester (power-of-two) sizes
    const bool ffn_pow2 = (cfg.d_ffn & (cfg.d_ffn - 1)) == 0;
    if (!ffn_hadamard)
        std::fprintf(stderr,
                     "warning: no Hadamard matrix at d_ffn=%d; U_D falls back to a dense random "
                     "rotation\n",
                     cfg.d_ffn);
    for (int l = 0; l < cfg.n_layers; ++l) {
        const proj::CalibStats* b_stats =
            (kind == proj::BasisKind::RotationOnly) ? nullptr : &bundle.value[l];
        const proj::CalibStats* c_stats =
            (kind == proj::BasisKind::RotationOnly) ? nullptr : &bundle.key_rope[l];
        p.u_b.push_back(
            proj::build_baseline_basis(kind, b_stats, cfg.d_head(), ranks.rank_head, rng.next_u64()));
        p.u_c.push_back(
            proj::build_baseline_basis(kind, c_stats, cfg.d_head(), ranks.rank_head, rng.next_u64()));
        if (ffn_hadamard) {
            p.u_d.push_back(linalg::hadamard(cfg.d_ffn));
            p.u_d_fht.push_back(ffn_pow2 ? 1 : 0);
            rng.next_u64();  // keep the seed schedule layer-aligned
        } else {
            p.u_d.push_back(linalg::random_orthogonal(cfg.d_ffn, rng.next_u64()));
            p.u_d_fht.push_back(0);
        }
    }
    return p;
}

}  // namespace resq::calib
