#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "resq/matrix.hpp"
#include "resq/projection.hpp"

namespace resq::model {

struct DecoderConfig {
    int d_h = 128;
    int n_heads = 4;
    int n_kv_heads = 2;
    int d_ffn = 512;
    int n_layers = 2;
    int vocab = 256;
    float rope_theta = 10000.0f;
    float rms_eps = 1e-5f;

    int d_head() const { return d_h / n_heads; }
    int group_size() const { return n_heads / n_kv_heads; }
    void validate() const;
};

template <class T>
struct LayerWeightsT {
    Mat<T> wq, wk, wv, wo;        // attn: [d_h x d_h], [d_h x kv], [d_h x kv], [d_h x d_h]
    Mat<T> w_up, w_gate, w_down;  // ffn: [d_h x d_ffn] x2, [d_ffn x d_h]
    std::vector<T> norm_attn, norm_ffn;  // RMS-norm gains
};

template <class T>
struct ModelT {
    DecoderConfig cfg;
    Mat<T> embedding;  // [vocab x d_h]
    std::vector<LayerWeightsT<T>> layers;
    std::vector<T> norm_final;
    Mat<T> head;  // [d_h x vocab]

    template <class U>
    ModelT<U> cast() const;
};

using Model = ModelT<float>;
using ModelD = ModelT<double>;

// One U_A shared across layers; U_B/U_C per layer on head dims; U_D per layer
// on the FFN hidden dim, flagged when the fast Hadamard path applies.
struct ProjectionSet {
    proj::ProjectionBasis u_a;
    std::vector<proj::ProjectionBasis> u_b, u_c;  // per layer, d_head x d_head
    std::vector<MatD> u_d;                        // per layer, d_ffn x d_ffn
    std::vector<uint8_t> u_d_fht;                 // per layer, Hadamard fast path

    static ProjectionSet identity(const DecoderConfig& cfg, int rank_a, int rank_head);
};

// Fold RMS-norm gains into the following linear layers; all gains become 1.
template <class T>
void fold_norm_gains(ModelT<T>& m);

// Absorb U_A (block boundaries, embedding, head), U_B (value path) and U_D
// (down projection) into the weights. U_C stays a runtime projection.
// Rejects non-orthogonal bases and unfolded norm gains.
template <class T>
void fuse_projections(ModelT<T>& m, const ProjectionSet& p);

// Runtime pieces the fused model still needs at inference.
template <class T>
struct RuntimeProjection {
    bool active = false;
    std::vector<Mat<T>> u_c;        // per layer; effective (possibly fake-quantized) matrix
    std::vector<Mat<T>> u_d_dense;  // per layer; empty when the fht flag is set
    std::vector<uint8_t> u_d_fht;

    static RuntimeProjection from_set(const ProjectionSet& p);
};

// Activation and KV quantization applied during a quantized forward pass.
// Splits follow the basis convention: columns >= split are high precision.
struct ActQuantSpec {
    bool enabled = false;
    int abits = 4;
    int kvbits = 4;
    int high_bits = 8;
    int split_a = 0;     // within d_h; == d_h means uniform low
    int split_head = 0;  // within each head block; == d_head means uniform low
    int kv_page_len = 64;
    // keys feeding the U_C projection run at a uniform 8 bit by default;
    // this switches them to the low/high split instead
    bool uc_mixed = false;
};

// Paged KV storage in the projected domain. Each appended row is quantized
// once, per (token, head, precision segment), and never touched again, so
// earlier positions are independent of later writes.
template <class T>
class KVCacheT {
  public:
    KVCacheT() = default;
    KVCacheT(const DecoderConfig& cfg, const ActQuantSpec& aq);

    void append(int layer, int kv_head, const T* k_row, const T* v_row);
    Mat<T> keys(int layer, int kv_head) const;
    Mat<T> values(int layer, int kv_head) const;
    int rows(int layer, int kv_head) const;
    void reset();

  private:
    struct Page {
        int used = 0;
        std::vector<T> k_raw, v_raw;          // pass-through storage
        std::vector<int16_t> k_codes, v_codes;
        std::vector<float> k_s, k_z, v_s, v_z;  // per row: [lo, hi] pairs
    };
    Mat<T> gather(int layer, int kv_head, bool want_values) const;

    int d_head_ = 0, n_kv_ = 0, page_len_ = 64;
    bool quantized_ = false;
    ActQuantSpec aq_;
    std::vector<std::vector<Page>> pages_;  // [layer * n_kv + head] -> page list
};

// Calibration taps. Activations arrive exactly as the adjacent linear layer
// consumes them in float mode (post-norm, post-RoPE, post-activation).
template <class T>
struct ForwardHooks {
    std::function<void(int layer, const Mat<T>&)> attn_in, o_in, ffn_in, down_in;
    std::function<void(int layer, int kv_head, const Mat<T>& k_rope, const Mat<T>& v)> kv;
};

// Stateful decoder: process() appends tokens to the cache and returns their
// logits, so both teacher-forced evaluation and stepwise sampling share one
// path.
template <class T>
class Decoder {
  public:
    Decoder(const ModelT<T>* m, RuntimeProjection<T> rp = {}, ActQuantSpec aq = {});

    void reset();
    Mat<T> process(const std::vector<int32_t>& tokens, ForwardHooks<T>* hooks = nullptr);
    int position() const { return pos_; }

  private:
    const ModelT<T>* m_;
    RuntimeProjection<T> rp_;
    ActQuantSpec aq_;
    KVCacheT<T> cache_;
    int pos_ = 0;
};

// exp(mean next-token NLL), teacher-forced over the whole stream
template <class T>
double perplexity(const ModelT<T>& m, const std::vector<int32_t>& tokens,
                  const RuntimeProjection<T>& rp = {}, const ActQuantSpec& aq = {});

double perplexity_from_logits(const MatF& logits, const std::vector<int32_t>& tokens);

// Structured random decoder whose activations carry realistic outliers:
// a few heavy residual channels, heavy directions spread over several
// channels, and heavy FFN and KV channels. Predictions are sharp enough that
// quantization damage shows up in perplexity.
Model make_toy_model(const DecoderConfig& cfg, uint64_t seed);

// autoregressive sampling from the model's own distribution
std::vector<int32_t> sample_stream(const Model& m, uint64_t seed, int n);

extern template struct ModelT<float>;
extern template struct ModelT<double>;
extern template class Decoder<float>;
extern template class Decoder<double>;
extern template class KVCacheT<float>;
extern template class KVCacheT<double>;
extern template struct RuntimeProjection<float>;
extern template struct RuntimeProjection<double>;
extern template void fold_norm_gains<float>(ModelT<float>&);
extern template void fold_norm_gains<double>(ModelT<double>&);
extern template void fuse_projections<float>(ModelT<float>&, const ProjectionSet&);
extern template void fuse_projections<double>(ModelT<double>&, const ProjectionSet&);
extern template double perplexity<float>(const ModelT<float>&, const std::vector<int32_t>&,
                                         const RuntimeProjection<float>&, const ActQuantSpec&);
extern template double perplexity<double>(const ModelT<double>&, const std::vector<int32_t>&,
                                          const RuntimeProjection<double>&, const ActQuantSpec&);

}  // namespace resq::model
