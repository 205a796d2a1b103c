#pragma once

// Layer primitives with explicit forward caches and reverse-mode backward
// passes. Only the blocks the conditioned decoder needs are implemented.
// Tokens for a batch are stacked along rows: sample b owns rows
// [b * tokens, (b + 1) * tokens).

#include <cfgloco/linalg.hpp>

#include <cstddef>
#include <cstdint>
#include <new>
#include <string>
#include <vector>

namespace cfgloco::nn {

struct TensorSpec {
    std::string name;
    std::string group;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    std::size_t offset = 0;

    std::size_t size() const { return static_cast<std::size_t>(rows * cols); }
};

/// Names, shapes and flat offsets of every trainable tensor.
class ParamLayout {
public:
    std::size_t add(std::string name, std::string group, Eigen::Index rows, Eigen::Index cols);

    const TensorSpec& operator[](std::size_t i) const { return specs_[i]; }
    std::size_t count() const { return specs_.size(); }
    std::size_t total() const { return total_; }
    const std::vector<TensorSpec>& specs() const { return specs_; }
    /// Distinct group names in registration order.
    std::vector<std::string> groups() const;
    std::size_t find(const std::string& name) const;

private:
    std::vector<TensorSpec> specs_;
    std::size_t total_ = 0;
};

/// Cache-line aligned storage, so vectorised reductions over tensor views
/// split the same way on every allocation.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

/// Flat parameter (or gradient) storage addressed through a ParamLayout.
template <typename S>
struct ParamBuffer {
    std::vector<S, AlignedAllocator<S>> data;

    ParamBuffer() = default;
    explicit ParamBuffer(const ParamLayout& layout) : data(layout.total(), S(0)) {}

    Eigen::Map<MatT<S>> view(const TensorSpec& t) {
        return Eigen::Map<MatT<S>>(data.data() + t.offset, t.rows, t.cols);
    }
    Eigen::Map<const MatT<S>> view(const TensorSpec& t) const {
        return Eigen::Map<const MatT<S>>(data.data() + t.offset, t.rows, t.cols);
    }
    void zero() { std::fill(data.begin(), data.end(), S(0)); }
};

template <typename To, typename From>
ParamBuffer<To> cast_params(const ParamBuffer<From>& p) {
    ParamBuffer<To> out;
    out.data.assign(p.data.begin(), p.data.end());
    return out;
}

// Linear: Y = X W + b, W is (in x out).
template <typename S>
MatT<S> linear_forward(const MatT<S>& x, const Eigen::Map<const MatT<S>>& w, const Eigen::Map<const MatT<S>>& b);

/// Accumulates into dw/db and returns dX (skipped when want_dx is false).
template <typename S>
MatT<S> linear_backward(const MatT<S>& x, const Eigen::Map<const MatT<S>>& w, const MatT<S>& dy,
                        Eigen::Map<MatT<S>> dw, Eigen::Map<MatT<S>> db, bool want_dx = true);

template <typename S>
struct LayerNormCache {
    MatT<S> xhat;
    Eigen::Matrix<S, Eigen::Dynamic, 1> rstd;
};

template <typename S>
MatT<S> layernorm_forward(const MatT<S>& x, const Eigen::Map<const MatT<S>>& gamma,
                          const Eigen::Map<const MatT<S>>& beta, LayerNormCache<S>* cache);

template <typename S>
MatT<S> layernorm_backward(const LayerNormCache<S>& cache, const Eigen::Map<const MatT<S>>& gamma,
                           const MatT<S>& dy, Eigen::Map<MatT<S>> dgamma, Eigen::Map<MatT<S>> dbeta);

// tanh-approximated GELU
template <typename S>
MatT<S> gelu_forward(const MatT<S>& x);
template <typename S>
MatT<S> gelu_backward(const MatT<S>& x, const MatT<S>& dy);

struct AttentionShape {
    Eigen::Index batch = 1;
    Eigen::Index q_tokens = 1;
    Eigen::Index kv_tokens = 1;
    Eigen::Index heads = 1;
    bool causal = false;
};

template <typename S>
struct AttentionCache {
    /// Softmax probabilities, one (q_tokens x kv_tokens) block per (batch, head),
    /// stacked along rows in (b * heads + h) order.
    MatT<S> probs;
};

/// Scaled dot-product attention over already-projected Q (B*Tq x d), K and V
/// (B*Tk x d). With `causal`, query row i only attends to key rows <= i.
template <typename S>
MatT<S> attention_forward(const MatT<S>& q, const MatT<S>& k, const MatT<S>& v, const AttentionShape& shape,
                          AttentionCache<S>* cache);

template <typename S>
void attention_backward(const MatT<S>& q, const MatT<S>& k, const MatT<S>& v, const AttentionShape& shape,
                        const AttentionCache<S>& cache, const MatT<S>& d_out, MatT<S>& dq, MatT<S>& dk,
                        MatT<S>& dv);

}  // namespace cfgloco::nn
