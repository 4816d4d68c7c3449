#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sg/backend.hpp"
#include "sg/rng.hpp"

namespace sg {

// Byte-level autoregressive transformer with frozen seeded weights:
// 2 pre-norm blocks, width 64, 4 heads, GELU MLP, untied unembedding,
// vocabulary 258 (256 bytes + begin + end). Everything runs in double
// precision so finite-difference probes of the one-hot gradient are clean.
//
// Weight draw order from the seeded stream: token embeddings, positional
// embeddings, then per block (wq, wk, wv, wo, w1, w2), then the unembedding.
class TinyTransformerBackend final : public Backend {
public:
    static constexpr std::size_t kWidth = 64;
    static constexpr std::size_t kHeads = 4;
    static constexpr std::size_t kHeadDim = kWidth / kHeads;
    static constexpr std::size_t kHidden = 2 * kWidth;
    static constexpr std::size_t kBlocks = 2;

    explicit TinyTransformerBackend(std::uint64_t seed, std::size_t context_limit = 512)
        : seed_(seed),
          context_limit_(context_limit),
          vocab_(byte_vocabulary()),
          tokenizer_(vocab_) {
        Rng rng(seed);
        const auto v = static_cast<std::size_t>(vocab_.size());
        wte_ = random_matrix(rng, v, kWidth, 0.1);
        wpe_ = random_matrix(rng, context_limit_, kWidth, 0.1);
        const double attn_scale = 1.0 / std::sqrt(static_cast<double>(kWidth));
        const double mlp_scale = 1.0 / std::sqrt(static_cast<double>(kHidden));
        for (std::size_t b = 0; b < kBlocks; ++b) {
            blocks_[b].wq = random_matrix(rng, kWidth, kWidth, attn_scale);
            blocks_[b].wk = random_matrix(rng, kWidth, kWidth, attn_scale);
            blocks_[b].wv = random_matrix(rng, kWidth, kWidth, attn_scale);
            blocks_[b].wo = random_matrix(rng, kWidth, kWidth, attn_scale);
            blocks_[b].w1 = random_matrix(rng, kWidth, kHidden, attn_scale);
            blocks_[b].w2 = random_matrix(rng, kHidden, kWidth, mlp_scale);
        }
        wu_ = random_matrix(rng, kWidth, v, attn_scale);
    }

    const Vocabulary& vocabulary() const override { return vocab_; }

    std::string id() const override {
        std::string s = "tiny-transformer:" + std::to_string(seed_);
        if (context_limit_ != 512) s += ":ctx=" + std::to_string(context_limit_);
        return s;
    }

    std::size_t context_limit() const override { return context_limit_; }

    TokenSequence encode(std::string_view text) const override { return tokenizer_.encode(text); }
    std::string decode(const TokenSequence& seq) const override { return tokenizer_.decode(seq); }

    Vec next_token_logits(const TokenSequence& seq) const override {
        check_sequence(seq);
        Cache cache;
        return forward(embed(seq), cache);
    }

    LossAndGradient loss_and_onehot_gradient(const TokenSequence& seq,
                                             TokenId target_id) const override {
        check_sequence(seq);
        check_target(target_id);
        Cache cache;
        const Vec logits = forward(embed(seq), cache);
        const auto v = static_cast<std::size_t>(vocab_.size());
        const auto target = static_cast<std::size_t>(target_id);
        const double lse = log_sum_exp(logits);

        LossAndGradient out;
        out.loss = lse - logits[target];

        // dloss/dlogits = softmax(logits) - onehot(target)
        Vec dlogits(v);
        for (std::size_t j = 0; j < v; ++j) dlogits[j] = std::exp(logits[j] - lse);
        dlogits[target] -= 1.0;

        const Mat d_embed = backward(cache, dlogits);
        // h[i][j] = -dloss/dv_i[j] = -(dloss/dE_i) . wte[j]
        out.h = Mat(d_embed.rows(), v);
        for (std::size_t i = 0; i < d_embed.rows(); ++i) {
            const auto de = d_embed.row(i);
            for (std::size_t j = 0; j < v; ++j) out.h(i, j) = -dot(de, wte_.row(j));
        }
        if (!std::isfinite(out.loss) || !out.h.all_finite())
            throw NonFiniteGradient("tiny transformer produced non-finite values");
        return out;
    }

    const Mat& embedding_table() const override { return wte_; }

    // Loss over relaxed one-hot rows (len x V); probing hook for
    // finite-difference oracles. Linear embedding lookup, then the same
    // forward as the id path.
    double loss_from_onehot_rows(const Mat& onehots, TokenId target_id) const {
        check_target(target_id);
        if (onehots.rows() > context_limit_)
            throw ContextOverflow("relaxed input longer than context limit");
        Mat x(onehots.rows(), kWidth);
        for (std::size_t i = 0; i < onehots.rows(); ++i) {
            auto xi = x.row(i);
            for (std::size_t j = 0; j < onehots.cols(); ++j) {
                const double vj = onehots(i, j);
                if (vj == 0.0) continue;
                const auto wj = wte_.row(j);
                for (std::size_t c = 0; c < kWidth; ++c) xi[c] += vj * wj[c];
            }
            const auto pe = wpe_.row(i);
            for (std::size_t c = 0; c < kWidth; ++c) xi[c] += pe[c];
        }
        Cache cache;
        const Vec logits = forward(std::move(x), cache);
        return log_sum_exp(logits) - logits[static_cast<std::size_t>(target_id)];
    }

private:
    struct BlockWeights {
        Mat wq, wk, wv, wo, w1, w2;
    };

    struct BlockCache {
        Mat ln1_out, ln2_out;     // normalized inputs to attention / MLP
        Vec inv_sigma1, inv_sigma2;
        Mat q, k, v;              // n x width
        std::vector<Mat> attn;    // per head, n x n row-softmax weights
        Mat mlp_pre;              // n x hidden, pre-activation
        Mat res1;                 // after attention residual
    };

    struct Cache {
        Mat input;                // token+position embeddings
        BlockCache blocks[kBlocks];
        Mat final_norm;           // lnf output
        Vec inv_sigma_final;
    };

    static Mat random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
        Mat m(rows, cols);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) m(r, c) = scale * rng.normal();
        return m;
    }

    Mat embed(const TokenSequence& seq) const {
        Mat x(seq.size(), kWidth);
        for (std::size_t i = 0; i < seq.size(); ++i) {
            const auto te = wte_.row(static_cast<std::size_t>(seq[i]));
            const auto pe = wpe_.row(i);
            auto xi = x.row(i);
            for (std::size_t c = 0; c < kWidth; ++c) xi[c] = te[c] + pe[c];
        }
        return x;
    }

    // Per-row layer norm without affine parameters. Returns normalized rows
    // and stores 1/sigma per row for the backward pass.
    static Mat layer_norm(const Mat& x, Vec& inv_sigma) {
        constexpr double eps = 1e-5;
        Mat y(x.rows(), x.cols());
        inv_sigma.assign(x.rows(), 0.0);
        const double d = static_cast<double>(x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i) {
            const auto xi = x.row(i);
            double mean = 0.0;
            for (double v : xi) mean += v;
            mean /= d;
            double var = 0.0;
            for (double v : xi) var += (v - mean) * (v - mean);
            var /= d;
            const double is = 1.0 / std::sqrt(var + eps);
            inv_sigma[i] = is;
            auto yi = y.row(i);
            for (std::size_t c = 0; c < x.cols(); ++c) yi[c] = (xi[c] - mean) * is;
        }
        return y;
    }

    // Given dL/dy for y = layer_norm(x), accumulate dL/dx into dx.
    static void layer_norm_backward(const Mat& y, const Vec& inv_sigma, const Mat& dy, Mat& dx) {
        const double d = static_cast<double>(y.cols());
        for (std::size_t i = 0; i < y.rows(); ++i) {
            const auto yi = y.row(i);
            const auto dyi = dy.row(i);
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t c = 0; c < y.cols(); ++c) {
                m1 += dyi[c];
                m2 += dyi[c] * yi[c];
            }
            m1 /= d;
            m2 /= d;
            auto dxi = dx.row(i);
            for (std::size_t c = 0; c < y.cols(); ++c)
                dxi[c] += inv_sigma[i] * (dyi[c] - m1 - yi[c] * m2);
        }
    }

    static double gelu(double x) {
        return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865476));
    }

    static double gelu_prime(double x) {
        const double phi = 0.5 * (1.0 + std::erf(x * 0.7071067811865476));
        const double density = std::exp(-0.5 * x * x) * 0.3989422804014327;
        return phi + x * density;
    }

    // Runs the model over the input embeddings; returns next-token logits at
    // the last position and fills the activation cache for backward().
    Vec forward(Mat x, Cache& cache) const {
        const std::size_t n = x.rows();
        const double attn_scale = 1.0 / std::sqrt(static_cast<double>(kHeadDim));
        cache.input = x;
        for (std::size_t b = 0; b < kBlocks; ++b) {
            const BlockWeights& w = blocks_[b];
            BlockCache& bc = cache.blocks[b];

            bc.ln1_out = layer_norm(x, bc.inv_sigma1);
            bc.q = matmul(bc.ln1_out, w.wq);
            bc.k = matmul(bc.ln1_out, w.wk);
            bc.v = matmul(bc.ln1_out, w.wv);

            Mat heads_out(n, kWidth);
            bc.attn.assign(kHeads, Mat());
            for (std::size_t h = 0; h < kHeads; ++h) {
                const std::size_t off = h * kHeadDim;
                Mat& a = bc.attn[h];
                a = Mat(n, n);
                for (std::size_t i = 0; i < n; ++i) {
                    // causal: position i attends to j <= i
                    double row_max = -1e300;
                    for (std::size_t j = 0; j <= i; ++j) {
                        double s = 0.0;
                        for (std::size_t c = 0; c < kHeadDim; ++c)
                            s += bc.q(i, off + c) * bc.k(j, off + c);
                        s *= attn_scale;
                        a(i, j) = s;
                        row_max = std::max(row_max, s);
                    }
                    double denom = 0.0;
                    for (std::size_t j = 0; j <= i; ++j) {
                        a(i, j) = std::exp(a(i, j) - row_max);
                        denom += a(i, j);
                    }
                    for (std::size_t j = 0; j <= i; ++j) a(i, j) /= denom;
                    for (std::size_t c = 0; c < kHeadDim; ++c) {
                        double s = 0.0;
                        for (std::size_t j = 0; j <= i; ++j) s += a(i, j) * bc.v(j, off + c);
                        heads_out(i, off + c) = s;
                    }
                }
            }
            const Mat attn_out = matmul(heads_out, w.wo);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t c = 0; c < kWidth; ++c) x(i, c) += attn_out(i, c);
            bc.res1 = x;

            bc.ln2_out = layer_norm(x, bc.inv_sigma2);
            bc.mlp_pre = matmul(bc.ln2_out, w.w1);
            Mat act(n, kHidden);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t c = 0; c < kHidden; ++c) act(i, c) = gelu(bc.mlp_pre(i, c));
            const Mat mlp_out = matmul(act, w.w2);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t c = 0; c < kWidth; ++c) x(i, c) += mlp_out(i, c);
        }
        cache.final_norm = layer_norm(x, cache.inv_sigma_final);

        const auto v = static_cast<std::size_t>(vocab_.size());
        Vec logits(v, 0.0);
        const auto last = cache.final_norm.row(n - 1);
        for (std::size_t c = 0; c < kWidth; ++c) {
            const double xc = last[c];
            const auto wu_row = wu_.row(c);
            for (std::size_t j = 0; j < v; ++j) logits[j] += xc * wu_row[j];
        }
        return logits;
    }

    // Backpropagates dL/dlogits to the input embeddings. Weight gradients are
    // never needed (the model is frozen), which keeps this pass small.
    Mat backward(const Cache& cache, const Vec& dlogits) const {
        const std::size_t n = cache.input.rows();
        const double attn_scale = 1.0 / std::sqrt(static_cast<double>(kHeadDim));

        Mat d_final(n, kWidth);
        {
            auto drow = d_final.row(n - 1);
            for (std::size_t c = 0; c < kWidth; ++c) drow[c] = dot(wu_.row(c), dlogits);
        }
        Mat dx(n, kWidth);
        layer_norm_backward(cache.final_norm, cache.inv_sigma_final, d_final, dx);

        for (std::size_t b = kBlocks; b-- > 0;) {
            const BlockWeights& w = blocks_[b];
            const BlockCache& bc = cache.blocks[b];

            // MLP sub-layer: x_out = res1' + gelu(ln2(x_out') W1) W2
            Mat d_act = matmul_bt(dx, w.w2); // n x hidden
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t c = 0; c < kHidden; ++c)
                    d_act(i, c) *= gelu_prime(bc.mlp_pre(i, c));
            const Mat d_ln2 = matmul_bt(d_act, w.w1);
            layer_norm_backward(bc.ln2_out, bc.inv_sigma2, d_ln2, dx);

            // Attention sub-layer
            const Mat d_heads = matmul_bt(dx, w.wo); // d of concatenated head outputs
            Mat dq(n, kWidth), dk(n, kWidth), dv(n, kWidth);
            for (std::size_t h = 0; h < kHeads; ++h) {
                const std::size_t off = h * kHeadDim;
                const Mat& a = bc.attn[h];
                for (std::size_t i = 0; i < n; ++i) {
                    // d attention weights, then softmax backward per row
                    double weighted = 0.0;
                    Vec da(i + 1);
                    for (std::size_t j = 0; j <= i; ++j) {
                        double s = 0.0;
                        for (std::size_t c = 0; c < kHeadDim; ++c)
                            s += d_heads(i, off + c) * bc.v(j, off + c);
                        da[j] = s;
                        weighted += a(i, j) * s;
                    }
                    for (std::size_t j = 0; j <= i; ++j) {
                        const double ds = a(i, j) * (da[j] - weighted) * attn_scale;
                        for (std::size_t c = 0; c < kHeadDim; ++c) {
                            dq(i, off + c) += ds * bc.k(j, off + c);
                            dk(j, off + c) += ds * bc.q(i, off + c);
                            dv(j, off + c) += a(i, j) * d_heads(i, off + c);
                        }
                    }
                }
            }
            Mat d_ln1 = matmul_bt(dq, w.wq);
            const Mat d_ln1_k = matmul_bt(dk, w.wk);
            const Mat d_ln1_v = matmul_bt(dv, w.wv);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t c = 0; c < kWidth; ++c)
                    d_ln1(i, c) += d_ln1_k(i, c) + d_ln1_v(i, c);
            layer_norm_backward(bc.ln1_out, bc.inv_sigma1, d_ln1, dx);
        }
        return dx;
    }

    std::uint64_t seed_;
    std::size_t context_limit_;
    Vocabulary vocab_;
    CharTokenizer tokenizer_;
    Mat wte_, wpe_, wu_;
    BlockWeights blocks_[kBlocks];
};

} // namespace sg
