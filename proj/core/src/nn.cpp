#include <cfgloco/errors.hpp>
#include <cfgloco/nn.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace cfgloco::nn {

std::size_t ParamLayout::add(std::string name, std::string group, Eigen::Index rows, Eigen::Index cols) {
    TensorSpec spec{std::move(name), std::move(group), rows, cols, total_};
    total_ += spec.size();
    specs_.push_back(std::move(spec));
    return specs_.size() - 1;
}

std::vector<std::string> ParamLayout::groups() const {
    std::vector<std::string> out;
    for (const auto& s : specs_)
        if (std::find(out.begin(), out.end(), s.group) == out.end()) out.push_back(s.group);
    return out;
}

std::size_t ParamLayout::find(const std::string& name) const {
    for (std::size_t i = 0; i < specs_.size(); ++i)
        if (specs_[i].name == name) return i;
    throw InvalidArgument("no parameter tensor named '" + name + "'");
}

template <typename S>
MatT<S> linear_forward(const MatT<S>& x, const Eigen::Map<const MatT<S>>& w, const Eigen::Map<const MatT<S>>& b) {
    if (x.cols() != w.rows()) throw InvalidArgument("linear: input width does not match weight rows");
    MatT<S> y(x.rows(), w.cols());
    y.noalias() = x * w;
    y.rowwise() += b.row(0);
    return y;
}

template <typename S>
MatT<S> linear_backward(const MatT<S>& x, const Eigen::Map<const MatT<S>>& w, const MatT<S>& dy,
                        Eigen::Map<MatT<S>> dw, Eigen::Map<MatT<S>> db, bool want_dx) {
    dw.noalias() += x.transpose() * dy;
    db.row(0) += dy.colwise().sum();
    if (!want_dx) return {};
    MatT<S> dx(dy.rows(), w.rows());
    dx.noalias() = dy * w.transpose();
    return dx;
}

namespace {
template <typename S>
constexpr S kLayerNormEps = S(1e-5);
}

template <typename S>
MatT<S> layernorm_forward(const MatT<S>& x, const Eigen::Map<const MatT<S>>& gamma,
                          const Eigen::Map<const MatT<S>>& beta, LayerNormCache<S>* cache) {
    const Eigen::Index n = x.cols();
    MatT<S> xhat(x.rows(), n);
    Eigen::Matrix<S, Eigen::Dynamic, 1> rstd(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const S mean = x.row(r).mean();
        const auto centered = (x.row(r).array() - mean);
        const S var = centered.square().sum() / S(n);
        rstd(r) = S(1) / std::sqrt(var + kLayerNormEps<S>);
        xhat.row(r) = centered * rstd(r);
    }
    MatT<S> y = (xhat.array().rowwise() * gamma.row(0).array()).matrix();
    y.rowwise() += beta.row(0);
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->rstd = std::move(rstd);
    }
    return y;
}

template <typename S>
MatT<S> layernorm_backward(const LayerNormCache<S>& cache, const Eigen::Map<const MatT<S>>& gamma,
                           const MatT<S>& dy, Eigen::Map<MatT<S>> dgamma, Eigen::Map<MatT<S>> dbeta) {
    const Eigen::Index n = dy.cols();
    dgamma.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
    dbeta.row(0) += dy.colwise().sum();
    MatT<S> dx(dy.rows(), n);
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const auto dxhat = (dy.row(r).array() * gamma.row(0).array()).eval();
        const S sum_d = dxhat.sum();
        const S sum_dx = (dxhat * cache.xhat.row(r).array()).sum();
        dx.row(r) = (cache.rstd(r) / S(n)) *
                    (S(n) * dxhat - sum_d - cache.xhat.row(r).array() * sum_dx).matrix();
    }
    return dx;
}

namespace {
template <typename S>
constexpr S kGeluC = S(0.7978845608028654);  // sqrt(2/pi)
template <typename S>
constexpr S kGeluA = S(0.044715);
}  // namespace

template <typename S>
MatT<S> gelu_forward(const MatT<S>& x) {
    const auto v = x.array();
    const auto t = (kGeluC<S> * (v + kGeluA<S> * v.cube())).tanh();
    return (S(0.5) * v * (S(1) + t)).matrix();
}

template <typename S>
MatT<S> gelu_backward(const MatT<S>& x, const MatT<S>& dy) {
    const auto v = x.array();
    const auto t = (kGeluC<S> * (v + kGeluA<S> * v.cube())).tanh().eval();
    const auto dinner = kGeluC<S> * (S(1) + S(3) * kGeluA<S> * v.square());
    return (dy.array() * (S(0.5) * (S(1) + t) + S(0.5) * v * (S(1) - t.square()) * dinner)).matrix();
}

template <typename S>
MatT<S> attention_forward(const MatT<S>& q, const MatT<S>& k, const MatT<S>& v, const AttentionShape& sh,
                          AttentionCache<S>* cache) {
    const Eigen::Index d = q.cols();
    if (d % sh.heads != 0) throw InvalidArgument("attention: width not divisible by heads");
    if (q.rows() != sh.batch * sh.q_tokens || k.rows() != sh.batch * sh.kv_tokens || v.rows() != k.rows())
        throw InvalidArgument("attention: token counts do not match shape");
    if (sh.causal && sh.kv_tokens != sh.q_tokens) throw InvalidArgument("attention: causal mask needs square blocks");
    const Eigen::Index dh = d / sh.heads;
    const S scale = S(1) / std::sqrt(S(dh));

    MatT<S> out(q.rows(), d);
    if (cache) cache->probs.resize(sh.batch * sh.heads * sh.q_tokens, sh.kv_tokens);
    MatT<S> scores(sh.q_tokens, sh.kv_tokens);
    for (Eigen::Index b = 0; b < sh.batch; ++b) {
        for (Eigen::Index h = 0; h < sh.heads; ++h) {
            const auto qh = q.block(b * sh.q_tokens, h * dh, sh.q_tokens, dh);
            const auto kh = k.block(b * sh.kv_tokens, h * dh, sh.kv_tokens, dh);
            const auto vh = v.block(b * sh.kv_tokens, h * dh, sh.kv_tokens, dh);
            scores.noalias() = qh.lazyProduct(kh.transpose()) * scale;
            for (Eigen::Index i = 0; i < sh.q_tokens; ++i) {
                const Eigen::Index valid = sh.causal ? i + 1 : sh.kv_tokens;
                const S mx = scores.row(i).head(valid).maxCoeff();
                S total = S(0);
                for (Eigen::Index j = 0; j < valid; ++j) {
                    const S e = std::exp(scores(i, j) - mx);
                    scores(i, j) = e;
                    total += e;
                }
                for (Eigen::Index j = 0; j < valid; ++j) scores(i, j) /= total;
                for (Eigen::Index j = valid; j < sh.kv_tokens; ++j) scores(i, j) = S(0);
            }
            out.block(b * sh.q_tokens, h * dh, sh.q_tokens, dh).noalias() = scores.lazyProduct(vh);
            if (cache) cache->probs.block((b * sh.heads + h) * sh.q_tokens, 0, sh.q_tokens, sh.kv_tokens) = scores;
        }
    }
    return out;
}

template <typename S>
void attention_backward(const MatT<S>& q, const MatT<S>& k, const MatT<S>& v, const AttentionShape& sh,
                        const AttentionCache<S>& cache, const MatT<S>& d_out, MatT<S>& dq, MatT<S>& dk,
                        MatT<S>& dv) {
    const Eigen::Index d = q.cols();
    const Eigen::Index dh = d / sh.heads;
    const S scale = S(1) / std::sqrt(S(dh));
    dq.setZero(q.rows(), d);
    dk.setZero(k.rows(), d);
    dv.setZero(v.rows(), d);
    MatT<S> dp(sh.q_tokens, sh.kv_tokens);
    for (Eigen::Index b = 0; b < sh.batch; ++b) {
        for (Eigen::Index h = 0; h < sh.heads; ++h) {
            const auto p = cache.probs.block((b * sh.heads + h) * sh.q_tokens, 0, sh.q_tokens, sh.kv_tokens);
            const auto qh = q.block(b * sh.q_tokens, h * dh, sh.q_tokens, dh);
            const auto kh = k.block(b * sh.kv_tokens, h * dh, sh.kv_tokens, dh);
            const auto vh = v.block(b * sh.kv_tokens, h * dh, sh.kv_tokens, dh);
            const auto doh = d_out.block(b * sh.q_tokens, h * dh, sh.q_tokens, dh);

            dv.block(b * sh.kv_tokens, h * dh, sh.kv_tokens, dh).noalias() += p.transpose().lazyProduct(doh);
            dp.noalias() = doh.lazyProduct(vh.transpose());
            // softmax Jacobian: dS = P o (dP - rowsum(dP o P))
            const auto row_dot = (dp.array() * p.array()).rowwise().sum().eval();
            MatT<S> ds = (p.array() * (dp.array().colwise() - row_dot)).matrix() * scale;
            dq.block(b * sh.q_tokens, h * dh, sh.q_tokens, dh).noalias() += ds.lazyProduct(kh);
            dk.block(b * sh.kv_tokens, h * dh, sh.kv_tokens, dh).noalias() += ds.transpose().lazyProduct(qh);
        }
    }
}

#define CFGLOCO_NN_INSTANTIATE(S)                                                                              \
    template MatT<S> linear_forward<S>(const MatT<S>&, const Eigen::Map<const MatT<S>>&,                      \
                                       const Eigen::Map<const MatT<S>>&);                                     \
    template MatT<S> linear_backward<S>(const MatT<S>&, const Eigen::Map<const MatT<S>>&, const MatT<S>&,     \
                                        Eigen::Map<MatT<S>>, Eigen::Map<MatT<S>>, bool);                      \
    template MatT<S> layernorm_forward<S>(const MatT<S>&, const Eigen::Map<const MatT<S>>&,                   \
                                          const Eigen::Map<const MatT<S>>&, LayerNormCache<S>*);              \
    template MatT<S> layernorm_backward<S>(const LayerNormCache<S>&, const Eigen::Map<const MatT<S>>&,        \
                                           const MatT<S>&, Eigen::Map<MatT<S>>, Eigen::Map<MatT<S>>);         \
    template MatT<S> gelu_forward<S>(const MatT<S>&);                                                         \
    template MatT<S> gelu_backward<S>(const MatT<S>&, const MatT<S>&);                                        \
    template MatT<S> attention_forward<S>(const MatT<S>&, const MatT<S>&, const MatT<S>&,                     \
                                          const AttentionShape&, AttentionCache<S>*);                         \
    template void attention_backward<S>(const MatT<S>&, const MatT<S>&, const MatT<S>&, const AttentionShape&, \
                                        const AttentionCache<S>&, const MatT<S>&, MatT<S>&, MatT<S>&, MatT<S>&);

CFGLOCO_NN_INSTANTIATE(float)
CFGLOCO_NN_INSTANTIATE(double)

#undef CFGLOCO_NN_INSTANTIATE

}  // namespace cfgloco::nn
