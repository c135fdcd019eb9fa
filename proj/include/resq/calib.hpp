#pragma once

#include <cstdint>
#include <vector>

#include "resq/model.hpp"
#include "resq/projection.hpp"

namespace resq::calib {

// Everything the float calibration pass produces: covariance stats per
// projection site plus raw second moments per linear-layer input, from which
// the projected GPTQ Hessians are obtained by conjugation.
struct CalibBundle {
    model::DecoderConfig cfg;
    proj::CalibStats block_in;                 // pooled over attention+ffn inputs (U_A)
    std::vector<proj::CalibStats> key_rope;    // per layer, post-RoPE keys (U_C)
    std::vector<proj::CalibStats> value;       // per layer, values (U_B)
    std::vector<proj::CalibStats> ffn_hidden;  // per layer (U_D stats; kept for the dense fallback)
    std::vector<proj::CalibStats> h_attn_in, h_o_in, h_ffn_in, h_down_in;
    uint64_t streams_seen = 0;

    CalibBundle() = default;
    explicit CalibBundle(const model::DecoderConfig& c);
    void merge(const CalibBundle& other);
};

// Run the float model over the calibration streams in index order. Hessian
// stats only accumulate over the first gptq_streams streams.
CalibBundle collect(const model::Model& m, const std::vector<std::vector<int32_t>>& streams,
                    int gptq_streams = 128);

struct RankSpec {
    int rank_a = 0;
    int rank_head = 0;
};

RankSpec ranks_from_fraction(const model::DecoderConfig& cfg, double frac);

// Build the per-site projection set of the requested kind. U_D is the
// Hadamard matrix when d_ffn supports one, otherwise a seeded random rotation
// (with a warning). identity gets no projections at all.
model::ProjectionSet derive(const CalibBundle& bundle, proj::BasisKind kind,
                            const RankSpec& ranks, uint64_t seed);

}  // namespace resq::calib
