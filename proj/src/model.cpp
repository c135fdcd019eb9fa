#include "resq/model.hpp"

#include <algorithm>
#include <cmath>

#include "resq/kernels.hpp"
#include "resq/linalg.hpp"
#include "resq/quant.hpp"

namespace resq::model {

void DecoderConfig::validate() const {
    require(d_h > 0 && n_heads > 0 && n_kv_heads > 0 && d_ffn > 0 && n_layers > 0 && vocab > 1,
            "DecoderConfig: all dimensions must be positive");
    require(d_h % n_heads == 0, "DecoderConfig: d_h must divide into n_heads");
    require(n_heads % n_kv_heads == 0, "DecoderConfig: n_heads must divide into n_kv_heads");
}

template <class T>
template <class U>
ModelT<U> ModelT<T>::cast() const {
    ModelT<U> o;
    o.cfg = cfg;
    o.embedding = embedding.template cast<U>();
    o.head = head.template cast<U>();
    o.norm_final.assign(norm_final.begin(), norm_final.end());
    o.layers.resize(layers.size());
    for (size_t l = 0; l < layers.size(); ++l) {
        const auto& s = layers[l];
        auto& d = o.layers[l];
        d.wq = s.wq.template cast<U>();
        d.wk = s.wk.template cast<U>();
        d.wv = s.wv.template cast<U>();
        d.wo = s.wo.template cast<U>();
        d.w_up = s.w_up.template cast<U>();
        d.w_gate = s.w_gate.template cast<U>();
        d.w_down = s.w_down.template cast<U>();
        d.norm_attn.assign(s.norm_attn.begin(), s.norm_attn.end());
        d.norm_ffn.assign(s.norm_ffn.begin(), s.norm_ffn.end());
    }
    return o;
}

ProjectionSet ProjectionSet::identity(const DecoderConfig& cfg, int rank_a, int rank_head) {
    ProjectionSet p;
    p.u_a = proj::build_baseline_basis(proj::BasisKind::Identity, nullptr, cfg.d_h, rank_a, 0);
    for (int l = 0; l < cfg.n_layers; ++l) {
        p.u_b.push_back(proj::build_baseline_basis(proj::BasisKind::Identity, nullptr,
                                                   cfg.d_head(), rank_head, 0));
        p.u_c.push_back(p.u_b.back());
        p.u_d.push_back(MatD::identity(cfg.d_ffn));
        p.u_d_fht.push_back(0);
    }
    return p;
}

template <class T>
void fold_norm_gains(ModelT<T>& m) {
    auto scale_rows = [](Mat<T>& w, const std::vector<T>& g) {
        for (int i = 0; i < w.rows; ++i) {
            T* row = w.row(i);
            for (int j = 0; j < w.cols; ++j) row[j] *= g[i];
        }
    };
    for (auto& l : m.layers) {
        scale_rows(l.wq, l.norm_attn);
        scale_rows(l.wk, l.norm_attn);
        scale_rows(l.wv, l.norm_attn);
        scale_rows(l.w_up, l.norm_ffn);
        scale_rows(l.w_gate, l.norm_ffn);
        std::fill(l.norm_attn.begin(), l.norm_attn.end(), T(1));
        std::fill(l.norm_ffn.begin(), l.norm_ffn.end(), T(1));
    }
    scale_rows(m.head, m.norm_final);
    std::fill(m.norm_final.begin(), m.norm_final.end(), T(1));
}

namespace {

template <class T>
MatD to_f64(const Mat<T>& m) {
    return m.template cast<double>();
}

template <class T>
void check_gains_unit(const std::vector<T>& g, const char* where) {
    for (T v : g)
        require(std::fabs(static_cast<double>(v) - 1.0) <= 1e-6,
                std::string("fuse_projections: ") + where +
                    " RMS-norm gain is not unit; fold gains into the weights first");
}

void check_basis(const proj::ProjectionBasis& b, int want_dim, const char* name) {
    require(b.dim() == want_dim, std::string("fuse_projections: ") + name + " has dim " +
                                     std::to_string(b.dim()) + ", expected " +
                                     std::to_string(want_dim));
    require(linalg::orthogonality_error(b.u) <= 1e-8,
            std::string("fuse_projections: ") + name + " is not orthogonal");
}

}  // namespace

template <class T>
void fuse_projections(ModelT<T>& m, const ProjectionSet& p) {
    const auto& cfg = m.cfg;
    const int dh = cfg.d_head();
    check_basis(p.u_a, cfg.d_h, "U_A");
    require(static_cast<int>(p.u_b.size()) == cfg.n_layers &&
                static_cast<int>(p.u_c.size()) == cfg.n_layers &&
                static_cast<int>(p.u_d.size()) == cfg.n_layers,
            "fuse_projections: per-layer basis count mismatch");
    for (int l = 0; l < cfg.n_layers; ++l) {
        check_basis(p.u_b[l], dh, "U_B");
        check_basis(p.u_c[l], dh, "U_C");
        require(p.u_d[l].rows == cfg.d_ffn && linalg::orthogonality_error(p.u_d[l]) <= 1e-8,
                "fuse_projections: U_D is not an orthogonal d_ffn matrix");
    }
    check_gains_unit(m.norm_final, "final");
    for (auto& l : m.layers) {
        check_gains_unit(l.norm_attn, "attention");
        check_gains_unit(l.norm_ffn, "ffn");
    }

    // all fusion arithmetic in double, cast back to the model's precision
    const MatD ua = p.u_a.u;
    const MatD uat = ua.transposed();

    m.embedding = matmul(to_f64(m.embedding), ua).template cast<T>();
    m.head = matmul(uat, to_f64(m.head)).template cast<T>();

    for (int l = 0; l < cfg.n_layers; ++l) {
        auto& w = m.layers[l];
        w.wq = matmul(uat, to_f64(w.wq)).template cast<T>();
        w.wk = matmul(uat, to_f64(w.wk)).template cast<T>();
        w.wv = matmul(uat, to_f64(w.wv)).template cast<T>();
        w.w_up = matmul(uat, to_f64(w.w_up)).template cast<T>();
        w.w_gate = matmul(uat, to_f64(w.w_gate)).template cast<T>();
        w.wo = matmul(to_f64(w.wo), ua).template cast<T>();
        w.w_down = matmul(to_f64(w.w_down), ua).template cast<T>();

        // value path: W_v per-kv-head right-multiplied by U_B, o_proj rows
        // per-query-head left-multiplied by U_B^T
        const MatD& ub = p.u_b[l].u;
        MatD wv = to_f64(w.wv);
        for (int h = 0; h < cfg.n_kv_heads; ++h) {
            MatD block = wv.col_slice(h * dh, (h + 1) * dh);
            block = matmul(block, ub);
            for (int i = 0; i < wv.rows; ++i)
                std::copy(block.row(i), block.row(i) + dh, wv.row(i) + h * dh);
        }
        w.wv = wv.template cast<T>();

        const MatD ubt = ub.transposed();
        MatD wo = to_f64(w.wo);
        for (int h = 0; h < cfg.n_heads; ++h) {
            MatD block = matmul(ubt, wo.row_slice(h * dh, (h + 1) * dh));
            std::copy(block.a.begin(), block.a.end(), wo.row(h * dh));
        }
        w.wo = wo.template cast<T>();

        // down path: U_D^T from the left; Hadamard U_D is symmetric so the
        // fast transform on columns applies
        if (p.u_d_fht[l]) {
            MatD wd = to_f64(w.w_down);
            linalg::fast_hadamard_transform(wd, 0);
            w.w_down = wd.template cast<T>();
        } else {
            w.w_down = matmul(p.u_d[l].transposed(), to_f64(w.w_down)).template cast<T>();
        }
    }
}

template <class T>
RuntimeProjection<T> RuntimeProjection<T>::from_set(const ProjectionSet& p) {
    RuntimeProjection<T> rp;
    rp.active = true;
    for (const auto& b : p.u_c) rp.u_c.push_back(b.u.template cast<T>());
    rp.u_d_fht = p.u_d_fht;
    for (size_t l = 0; l < p.u_d.size(); ++l) {
        if (p.u_d_fht[l])
            rp.u_d_dense.emplace_back();
        else
            rp.u_d_dense.push_back(p.u_d[l].template cast<T>());
    }
    return rp;
}

// ---- activation quantization helpers (float path) ----

namespace {

// fake-quantize a column span of each row in place, per-token asymmetric
void fq_rows_span(MatF& x, int c0, int c1, int bits) {
    if (bits >= 16 || c1 <= c0) return;
    const auto& k = kern::ops();
    const int n = c1 - c0;
    const int cmax = (1 << bits) - 1;
    std::vector<int16_t> codes(n);
    for (int i = 0; i < x.rows; ++i) {
        float* row = x.row(i) + c0;
        float lo, hi;
        k.minmax_f32(row, n, &lo, &hi);
        lo += 0.0f;
        float s = (hi > lo) ? (hi - lo) / static_cast<float>(cmax) : 1.0f;
        k.encode_f32(row, n, 1.0f / s, lo, 0, cmax, codes.data());
        k.decode_f32(codes.data(), n, s, lo, row);
    }
}

void fq_rows_mixed(MatF& x, int split, int lo_bits, int hi_bits) {
    fq_rows_span(x, 0, split, lo_bits);
    fq_rows_span(x, split, x.cols, hi_bits);
}

void fq_rows_mixed_heads(MatF& x, int d_head, int split_head, int lo_bits, int hi_bits) {
    for (int h = 0; h * d_head < x.cols; ++h) {
        fq_rows_span(x, h * d_head, h * d_head + split_head, lo_bits);
        fq_rows_span(x, h * d_head + split_head, (h + 1) * d_head, hi_bits);
    }
}

template <class T>
void rmsnorm_rows(const Mat<T>& x, const std::vector<T>& gain, float eps, Mat<T>& out) {
    for (int i = 0; i < x.rows; ++i) {
        const T* r = x.row(i);
        double ss = 0.0;
        for (int j = 0; j < x.cols; ++j) ss += static_cast<double>(r[j]) * r[j];
        const T inv = static_cast<T>(1.0 / std::sqrt(ss / x.cols + static_cast<double>(eps)));
        T* o = out.row(i);
        for (int j = 0; j < x.cols; ++j) o[j] = r[j] * inv * gain[j];
    }
}

template <class T>
void apply_rope(Mat<T>& heads, int n_heads, int d_head, int pos0, float theta) {
    std::vector<double> freq(d_head / 2);
    for (int j = 0; 2 * j < d_head - 1; ++j)
        freq[j] = std::pow(static_cast<double>(theta), -2.0 * j / d_head);
    for (int i = 0; i < heads.rows; ++i) {
        const double pos = pos0 + i;
        T* row = heads.row(i);
        for (int h = 0; h < n_heads; ++h) {
            T* v = row + h * d_head;
            for (int j = 0; j + 1 < d_head; j += 2) {
                const double ang = pos * freq[j / 2];
                const double c = std::cos(ang), s = std::sin(ang);
                const double a = v[j], b = v[j + 1];
                v[j] = static_cast<T>(a * c - b * s);
                v[j + 1] = static_cast<T>(a * s + b * c);
            }
        }
    }
}

template <class T>
T silu(T x) {
    return static_cast<T>(x / (T(1) + std::exp(-x)));
}

}  // namespace

// ---- KV cache ----

template <class T>
KVCacheT<T>::KVCacheT(const DecoderConfig& cfg, const ActQuantSpec& aq)
    : d_head_(cfg.d_head()),
      n_kv_(cfg.n_kv_heads),
      page_len_(aq.kv_page_len > 0 ? aq.kv_page_len : 64),
      quantized_(aq.enabled && aq.kvbits < 16),
      aq_(aq),
      pages_(static_cast<size_t>(cfg.n_layers) * cfg.n_kv_heads) {
    if constexpr (!std::is_same_v<T, float>)
        require(!quantized_, "KVCache: quantized storage is a float-mode feature");
}

namespace {

void kv_quantize_span(const float* x, int n, int bits, int16_t* codes, float* s, float* z) {
    const auto& k = kern::ops();
    const int cmax = (1 << bits) - 1;
    float lo, hi;
    k.minmax_f32(x, n, &lo, &hi);
    lo += 0.0f;
    *s = (hi > lo) ? (hi - lo) / static_cast<float>(cmax) : 1.0f;
    *z = lo;
    k.encode_f32(x, n, 1.0f / *s, lo, 0, cmax, codes);
}

}  // namespace

template <class T>
void KVCacheT<T>::append(int layer, int kv_head, const T* k_row, const T* v_row) {
    auto& list = pages_[static_cast<size_t>(layer) * n_kv_ + kv_head];
    if (list.empty() || list.back().used == page_len_) {
        list.emplace_back();
        Page& p = list.back();
        if (quantized_) {
            p.k_codes.resize(static_cast<size_t>(page_len_) * d_head_);
            p.v_codes.resize(p.k_codes.size());
            p.k_s.resize(static_cast<size_t>(page_len_) * 2);
            p.k_z.resize(p.k_s.size());
            p.v_s.resize(p.k_s.size());
            p.v_z.resize(p.k_s.size());
        } else {
            p.k_raw.resize(static_cast<size_t>(page_len_) * d_head_);
            p.v_raw.resize(p.k_raw.size());
        }
    }
    Page& p = list.back();
    const int r = p.used;
    if (!quantized_) {
        std::copy(k_row, k_row + d_head_, p.k_raw.begin() + static_cast<size_t>(r) * d_head_);
        std::copy(v_row, v_row + d_head_, p.v_raw.begin() + static_cast<size_t>(r) * d_head_);
    } else if constexpr (std::is_same_v<T, float>) {
        const int split = aq_.split_head;
        int16_t* kc = p.k_codes.data() + static_cast<size_t>(r) * d_head_;
        int16_t* vc = p.v_codes.data() + static_cast<size_t>(r) * d_head_;
        kv_quantize_span(k_row, split, aq_.kvbits, kc, &p.k_s[2 * r], &p.k_z[2 * r]);
        kv_quantize_span(v_row, split, aq_.kvbits, vc, &p.v_s[2 * r], &p.v_z[2 * r]);
        if (split < d_head_) {
            kv_quantize_span(k_row + split, d_head_ - split, aq_.high_bits, kc + split,
                             &p.k_s[2 * r + 1], &p.k_z[2 * r + 1]);
            kv_quantize_span(v_row + split, d_head_ - split, aq_.high_bits, vc + split,
                             &p.v_s[2 * r + 1], &p.v_z[2 * r + 1]);
        }
    }
    ++p.used;
}

template <class T>
Mat<T> KVCacheT<T>::gather(int layer, int kv_head, bool want_values) const {
    const auto& list = pages_[static_cast<size_t>(layer) * n_kv_ + kv_head];
    int rows = 0;
    for (const auto& p : list) rows += p.used;
    Mat<T> out(rows, d_head_);
    int at = 0;
    const auto& k = kern::ops();
    for (const auto& p : list) {
        for (int r = 0; r < p.used; ++r, ++at) {
            T* dst = out.row(at);
            if (!quantized_) {
                const auto& raw = want_values ? p.v_raw : p.k_raw;
                std::copy(raw.begin() + static_cast<size_t>(r) * d_head_,
                          raw.begin() + static_cast<size_t>(r + 1) * d_head_, dst);
            } else if constexpr (std::is_same_v<T, float>) {
                const auto& codes = want_values ? p.v_codes : p.k_codes;
                const auto& ss = want_values ? p.v_s : p.k_s;
                const auto& zz = want_values ? p.v_z : p.k_z;
                const int split = aq_.split_head;
                k.decode_f32(codes.data() + static_cast<size_t>(r) * d_head_, split, ss[2 * r],
                             zz[2 * r], dst);
                if (split < d_head_)
                    k.decode_f32(codes.data() + static_cast<size_t>(r) * d_head_ + split,
                                 d_head_ - split, ss[2 * r + 1], zz[2 * r + 1], dst + split);
            }
        }
    }
    return out;
}

template <class T>
Mat<T> KVCacheT<T>::keys(int layer, int kv_head) const {
    return gather(layer, kv_head, false);
}

template <class T>
Mat<T> KVCacheT<T>::values(int layer, int kv_head) const {
    return gather(layer, kv_head, true);
}

template <class T>
int KVCacheT<T>::rows(int layer, int kv_head) const {
    const auto& list = pages_[static_cast<size_t>(layer) * n_kv_ + kv_head];
    int n = 0;
    for (const auto& p : list) n += p.used;
    return n;
}

template <class T>
void KVCacheT<T>::reset() {
    for (auto& list : pages_) list.clear();
}

// ---- decoder ----

template <class T>
Decoder<T>::Decoder(const ModelT<T>* m, RuntimeProjection<T> rp, ActQuantSpec aq)
    : m_(m), rp_(std::move(rp)), aq_(aq), cache_(m->cfg, aq) {
    m->cfg.validate();
    if constexpr (!std::is_same_v<T, float>)
        require(!aq_.enabled, "Decoder: quantized execution is a float-mode feature");
    if (rp_.active) {
        require(static_cast<int>(rp_.u_c.size()) == m->cfg.n_layers,
                "Decoder: runtime U_C count mismatch");
        require(static_cast<int>(rp_.u_d_fht.size()) == m->cfg.n_layers,
                "Decoder: runtime U_D count mismatch");
    }
}

template <class T>
void Decoder<T>::reset() {
    cache_.reset();
    pos_ = 0;
}

template <class T>
Mat<T> Decoder<T>::process(const std::vector<int32_t>& tokens, ForwardHooks<T>* hooks) {
    const auto& cfg = m_->cfg;
    const int n = static_cast<int>(tokens.size());
    const int dh = cfg.d_head();
    const int group = cfg.group_size();
    require(n >= 1, "Decoder: empty token block");

    Mat<T> x(n, cfg.d_h);
    for (int i = 0; i < n; ++i) {
        require(tokens[i] >= 0 && tokens[i] < cfg.vocab, "Decoder: token outside vocab");
        std::copy(m_->embedding.row(tokens[i]), m_->embedding.row(tokens[i]) + cfg.d_h, x.row(i));
    }

    Mat<T> norm(n, cfg.d_h);
    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto& w = m_->layers[l];

        // attention
        rmsnorm_rows(x, w.norm_attn, cfg.rms_eps, norm);
        if (hooks && hooks->attn_in) hooks->attn_in(l, norm);
        if constexpr (std::is_same_v<T, float>) {
            if (aq_.enabled) fq_rows_mixed(norm, aq_.split_a, aq_.abits, aq_.high_bits);
        }
        Mat<T> q = matmul(norm, w.wq);
        Mat<T> kx = matmul(norm, w.wk);
        Mat<T> vx = matmul(norm, w.wv);
        apply_rope(q, cfg.n_heads, dh, pos_, cfg.rope_theta);
        apply_rope(kx, cfg.n_kv_heads, dh, pos_, cfg.rope_theta);

        for (int h = 0; h < cfg.n_kv_heads; ++h) {
            Mat<T> k_h = kx.col_slice(h * dh, (h + 1) * dh);
            Mat<T> v_h = vx.col_slice(h * dh, (h + 1) * dh);
            if (hooks && hooks->kv) hooks->kv(l, h, k_h, v_h);
            if (rp_.active) {
                if constexpr (std::is_same_v<T, float>) {
                    // the key side of the U_C projection runs at a uniform
                    // 8 bit unless the mixed split was requested
                    if (aq_.enabled && aq_.abits < 16) {
                        if (aq_.uc_mixed)
                            fq_rows_mixed(k_h, aq_.split_head, aq_.abits, aq_.high_bits);
                        else
                            fq_rows_span(k_h, 0, dh, 8);
                    }
                }
                k_h = matmul(k_h, rp_.u_c[l]);
            }
            for (int i = 0; i < n; ++i) cache_.append(l, h, k_h.row(i), v_h.row(i));
        }

        Mat<T> attn_out(n, cfg.d_h);
        const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
        for (int qh = 0; qh < cfg.n_heads; ++qh) {
            const int kvh = qh / group;
            Mat<T> keys = cache_.keys(l, kvh);
            Mat<T> values = cache_.values(l, kvh);
            Mat<T> q_h = q.col_slice(qh * dh, (qh + 1) * dh);
            if (rp_.active) q_h = matmul(q_h, rp_.u_c[l]);  // query stays 16-bit

            // chunk the query rows to bound the score-matrix footprint
            const int chunk = 256;
            for (int b0 = 0; b0 < n; b0 += chunk) {
                const int b1 = std::min(n, b0 + chunk);
                Mat<T> qb = q_h.row_slice(b0, b1);
                Mat<T> scores = matmul_nt(qb, keys);
                for (int i = 0; i < scores.rows; ++i) {
                    T* srow = scores.row(i);
                    const int visible = pos_ + b0 + i + 1;  // causal
                    double mx = -1e300;
                    for (int j = 0; j < visible; ++j) {
                        srow[j] *= inv_sqrt;
                        mx = std::max(mx, static_cast<double>(srow[j]));
                    }
                    double denom = 0.0;
                    for (int j = 0; j < visible; ++j) {
                        const double e = std::exp(static_cast<double>(srow[j]) - mx);
                        srow[j] = static_cast<T>(e);
                        denom += e;
                    }
                    const T inv = static_cast<T>(1.0 / denom);
                    for (int j = 0; j < visible; ++j) srow[j] *= inv;
                    for (int j = visible; j < scores.cols; ++j) srow[j] = T(0);
                }
                Mat<T> ob = matmul(scores, values);
                for (int i = b0; i < b1; ++i)
                    std::copy(ob.row(i - b0), ob.row(i - b0) + dh, attn_out.row(i) + qh * dh);
            }
        }

        if (hooks && hooks->o_in) hooks->o_in(l, attn_out);
        if constexpr (std::is_same_v<T, float>) {
            if (aq_.enabled)
                fq_rows_mixed_heads(attn_out, dh, aq_.split_head, aq_.abits, aq_.high_bits);
        }
        Mat<T> attn_proj = matmul(attn_out, w.wo);
        for (size_t i = 0; i < x.size(); ++i) x.a[i] += attn_proj.a[i];

        // ffn
        rmsnorm_rows(x, w.norm_ffn, cfg.rms_eps, norm);
        if (hooks && hooks->ffn_in) hooks->ffn_in(l, norm);
        if constexpr (std::is_same_v<T, float>) {
            if (aq_.enabled) fq_rows_mixed(norm, aq_.split_a, aq_.abits, aq_.high_bits);
        }
        Mat<T> up = matmul(norm, w.w_up);
        Mat<T> gate = matmul(norm, w.w_gate);
        Mat<T> hidden(n, cfg.d_ffn);
        for (size_t i = 0; i < hidden.size(); ++i) hidden.a[i] = silu(gate.a[i]) * up.a[i];
        if (hooks && hooks->down_in) hooks->down_in(l, hidden);
        if (rp_.active) {
            if (rp_.u_d_fht[l])
                linalg::fast_hadamard_transform(hidden, 1);
            else if (rp_.u_d_dense[l].rows > 0)
                hidden = matmul(hidden, rp_.u_d_dense[l]);
        }
        if constexpr (std::is_same_v<T, float>) {
            // the whole down path is uniformly low precision
            if (aq_.enabled) fq_rows_span(hidden, 0, cfg.d_ffn, aq_.abits);
        }
        Mat<T> ffn_out = matmul(hidden, w.w_down);
        for (size_t i = 0; i < x.size(); ++i) x.a[i] += ffn_out.a[i];
    }

    rmsnorm_rows(x, m_->norm_final, cfg.rms_eps, norm);
    Mat<T> logits = matmul(norm, m_->head);
    pos_ += n;
    return logits;
}

double perplexity_from_logits(const MatF& logits, const std::vector<int32_t>& tokens) {
    require(tokens.size() >= 2, "perplexity: stream must have at least 2 tokens");
    require(logits.rows == static_cast<int>(tokens.size()), "perplexity: logits/token mismatch");
    double nll = 0.0;
    for (size_t t = 0; t + 1 < tokens.size(); ++t) {
        const float* row = logits.row(static_cast<int>(t));
        double mx = row[0];
        for (int j = 1; j < logits.cols; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double denom = 0.0;
        for (int j = 0; j < logits.cols; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
        nll -= (static_cast<double>(row[tokens[t + 1]]) - mx - std::log(denom));
    }
    return std::exp(nll / static_cast<double>(tokens.size() - 1));
}

template <class T>
double perplexity(const ModelT<T>& m, const std::vector<int32_t>& tokens,
                  const RuntimeProjection<T>& rp, const ActQuantSpec& aq) {
    require(tokens.size() >= 2, "perplexity: stream must have at least 2 tokens");
    Decoder<T> dec(&m, rp, aq);
    Mat<T> logits = dec.process(tokens);
    MatF lf = logits.template cast<float>();
    return perplexity_from_logits(lf, tokens);
}

// ---- toy model construction ----

namespace {

MatF gaussian_scaled(int rows, int cols, double scale, Rng& rng) {
    MatF m(rows, cols);
    for (auto& v : m.a) v = static_cast<float>(rng.gaussian() * scale);
    return m;
}

void scale_column(MatF& w, int col, float g) {
    for (int i = 0; i < w.rows; ++i) w(i, col) *= g;
}

// add a heavy direction spread over `width` output channels
void add_spread_direction(MatF& w, const std::vector<int>& cols, double gain, Rng& rng) {
    std::vector<double> u(w.rows);
    for (auto& v : u) v = rng.gaussian() / std::sqrt(static_cast<double>(w.rows));
    const double unit = 1.0 / std::sqrt(static_cast<double>(cols.size()));
    for (int i = 0; i < w.rows; ++i)
        for (int c : cols) w(i, c) += static_cast<float>(gain * u[i] * unit);
}

std::vector<int> pick_channels(Rng& rng, int dim, int count, std::vector<bool>& taken) {
    std::vector<int> out;
    while (static_cast<int>(out.size()) < count) {
        int c = static_cast<int>(rng.below(dim));
        if (taken[c]) continue;
        taken[c] = true;
        out.push_back(c);
    }
    return out;
}

}  // namespace

Model make_toy_model(const DecoderConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    const int d = cfg.d_h, dh = cfg.d_head(), kv = cfg.n_kv_heads * dh;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    const double inv_sqrt_f = 1.0 / std::sqrt(static_cast<double>(cfg.d_ffn));

    Model m;
    m.cfg = cfg;
    m.embedding = gaussian_scaled(cfg.vocab, d, 1.0, rng);
    m.head = gaussian_scaled(d, cfg.vocab, 4.0 * inv_sqrt_d, rng);
    m.norm_final.resize(d);
    for (auto& g : m.norm_final) g = static_cast<float>(1.0 + 0.1 * rng.gaussian());

    m.layers.resize(cfg.n_layers);
    for (auto& l : m.layers) {
        l.wq = gaussian_scaled(d, d, inv_sqrt_d, rng);
        l.wk = gaussian_scaled(d, kv, inv_sqrt_d, rng);
        l.wv = gaussian_scaled(d, kv, inv_sqrt_d, rng);
        l.wo = gaussian_scaled(d, d, inv_sqrt_d, rng);
        l.w_up = gaussian_scaled(d, cfg.d_ffn, inv_sqrt_d, rng);
        l.w_gate = gaussian_scaled(d, cfg.d_ffn, inv_sqrt_d, rng);
        l.w_down = gaussian_scaled(cfg.d_ffn, d, inv_sqrt_f, rng);
        l.norm_attn.resize(d);
        l.norm_ffn.resize(d);
        for (auto& g : l.norm_attn) g = static_cast<float>(1.0 + 0.1 * rng.gaussian());
        for (auto& g : l.norm_ffn) g = static_cast<float>(1.0 + 0.1 * rng.gaussian());
    }

    // Residual-stream outliers: two heavy axis channels plus two heavy
    // directions spread over six channels each, written consistently by the
    // embedding and by every residual writer.
    const float g_res = 12.0f;
    std::vector<bool> taken(d, false);
    auto axis = pick_channels(rng, d, 2, taken);
    for (int c : axis) {
        scale_column(m.embedding, c, g_res);
        for (auto& l : m.layers) {
            scale_column(l.wo, c, g_res);
            scale_column(l.w_down, c, g_res);
        }
    }
    for (int k = 0; k < 2; ++k) {
        auto cols = pick_channels(rng, d, 6, taken);
        add_spread_direction(m.embedding, cols, g_res, rng);
        for (auto& l : m.layers) {
            add_spread_direction(l.wo, cols, g_res, rng);
            add_spread_direction(l.w_down, cols, g_res, rng);
        }
    }

    // FFN-hidden outliers (heavy up-projection channels) and KV outliers
    // (heavy key/value channels per head)
    for (auto& l : m.layers) {
        std::vector<bool> ftaken(cfg.d_ffn, false);
        for (int c : pick_channels(rng, cfg.d_ffn, 6, ftaken))
            scale_column(l.w_up, c, 10.0f);
        std::vector<bool> ktaken(kv, false);
        for (int c : pick_channels(rng, kv, 2 * cfg.n_kv_heads, ktaken)) {
            scale_column(l.wk, c, 8.0f);
        }
        std::vector<bool> vtaken(kv, false);
        for (int c : pick_channels(rng, kv, 2 * cfg.n_kv_heads, vtaken)) {
            scale_column(l.wv, c, 8.0f);
        }
    }
    return m;
}

std::vector<int32_t> sample_stream(const Model& m, uint64_t seed, int n) {
    require(n >= 1, "sample_stream: need n >= 1");
    Rng rng(seed);
    Decoder<float> dec(&m);
    std::vector<int32_t> out;
    out.reserve(n);
    int32_t tok = static_cast<int32_t>(rng.below(m.cfg.vocab));
    out.push_back(tok);
    std::vector<double> probs(m.cfg.vocab);
    while (static_cast<int>(out.size()) < n) {
        MatF logits = dec.process({tok});
        const float* row = logits.row(0);
        double mx = row[0];
        for (int j = 1; j < m.cfg.vocab; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double denom = 0.0;
        for (int j = 0; j < m.cfg.vocab; ++j) {
            probs[j] = std::exp(static_cast<double>(row[j]) - mx);
            denom += probs[j];
        }
        double u = rng.uniform() * denom, acc = 0.0;
        int pick = m.cfg.vocab - 1;
        for (int j = 0; j < m.cfg.vocab; ++j) {
            acc += probs[j];
            if (u < acc) {
                pick = j;
                break;
            }
        }
        tok = pick;
        out.push_back(tok);
    }
    return out;
}

template struct ModelT<float>;
template struct ModelT<double>;
template ModelT<double> ModelT<float>::cast<double>() const;
template ModelT<float> ModelT<double>::cast<float>() const;
template ModelT<float> ModelT<float>::cast<float>() const;
template class Decoder<float>;
template class Decoder<double>;
template class KVCacheT<float>;
template class KVCacheT<double>;
template struct RuntimeProjection<float>;
template struct RuntimeProjection<double>;
template void fold_norm_gains<float>(ModelT<float>&);
template void fold_norm_gains<double>(ModelT<double>&);
template void fuse_projections<float>(ModelT<float>&, const ProjectionSet&);
template void fuse_projections<double>(ModelT<double>&, const ProjectionSet&);
template double perplexity<float>(const ModelT<float>&, const std::vector<int32_t>&,
                                  const RuntimeProjection<float>&, const ActQuantSpec&);
template double perplexity<double>(const ModelT<double>&, const std::vector<int32_t>&,
                                   const RuntimeProjection<double>&, const ActQuantSpec&);

}  // namespace resq::model
