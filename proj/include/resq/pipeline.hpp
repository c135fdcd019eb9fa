#pragma once

#include <optional>
#include <string>

#include "resq/archive.hpp"
#include "resq/calib.hpp"
#include "resq/gptq.hpp"
#include "resq/model.hpp"

namespace resq::pipeline {

// CLI exit-code classes
struct FormatError : Error {
    using Error::Error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct MissingCalibration : Error {
    using Error::Error;
};
struct Incomparable : Error {
    using Error::Error;
};

// ---- archive schema ----

void put_model(archive::TensorArchive& a, const model::Model& m, uint64_t seed);
model::Model get_model(const archive::TensorArchive& a);

void put_calibration(archive::TensorArchive& a, const calib::CalibBundle& bundle, uint64_t seed,
                     double rank_frac, int samples, int seqlen);
calib::CalibBundle get_calibration(const archive::TensorArchive& a);
bool has_calibration(const archive::TensorArchive& a);

struct QuantizeOptions {
    int wbits = 4, abits = 4, kvbits = 4;
    proj::BasisKind basis = proj::BasisKind::Resq;
    bool gptq = true;
    int gptq_block = 128;
    double damping = 0.01;
    int kv_page_len = 64;
    // ablation hooks: replace individual projections by the identity
    bool drop_ua = false, drop_ud = false, drop_ubc = false;
    // off-by-default: apply the mixed low/high split to the U_C key path
    // instead of the uniform 8-bit treatment
    bool mixed_uc = false;
};

// Everything needed to run the quantized model.
struct RuntimeModel {
    model::Model m;  // fused, weights already dequantized
    model::RuntimeProjection<float> rp;
    model::ActQuantSpec aq;
};

// Fuse + quantize per the options; records the full runtime into `a`
// (alongside the float model and calibration already there) and returns it.
RuntimeModel quantize_model(archive::TensorArchive& a, const QuantizeOptions& opts);

// Load whatever the archive holds: quantized runtime if present, otherwise
// the float model.
RuntimeModel load_runtime(const archive::TensorArchive& a);

double eval_ppl(const RuntimeModel& rm, const std::vector<int32_t>& tokens);

// ---- reports (json records with stable field order) ----

nlohmann::ordered_json eval_report(const archive::TensorArchive& a, const std::string& metric,
                                   const std::vector<int32_t>& tokens);

nlohmann::ordered_json compare_report(const std::vector<std::string>& paths,
                                      const std::vector<int32_t>& tokens);

std::string compare_csv(const nlohmann::ordered_json& table);

// Fig. 1(d,e)-style synthetic experiment: mean SNR per basis kind over the
// given seeds, on Gaussian data with two heavy channels and two heavy spread
// directions (x20).
nlohmann::ordered_json snr_experiment(int n, int dim, int rank, int bits_low, int bits_high,
                                      int seeds);

}  // namespace resq::pipeline
