#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "sdtn/error.hpp"

namespace sdtn {

enum class Precision { f32, f64 };

// Process-wide storage precision for newly created tensors. Gradient and
// oracle suites run in f64; training runs may switch to f32.
Precision default_precision();
void set_default_precision(Precision p);

class PrecisionScope {
public:
    explicit PrecisionScope(Precision p) : saved_(default_precision()) { set_default_precision(p); }
    ~PrecisionScope() { set_default_precision(saved_); }
    PrecisionScope(const PrecisionScope&) = delete;
    PrecisionScope& operator=(const PrecisionScope&) = delete;

private:
    Precision saved_;
};

template <class T>
constexpr Precision precision_of() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? Precision::f32 : Precision::f64;
}

// Calls f with a value-initialised float or double matching p.
template <class F>
decltype(auto) dispatch(Precision p, F&& f) {
    if (p == Precision::f32) return f(float{});
    return f(double{});
}

struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t numel() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    std::size_t offset(int in, int ic, int ih, int iw) const {
        return ((static_cast<std::size_t>(in) * c + ic) * h + ih) * w + iw;
    }
    std::string str() const;
    friend bool operator==(const Shape&, const Shape&) = default;
};

class Tensor;

// Receives the gradient of the op's output; accumulates into captured inputs.
using BackwardFn = std::function<void(const Tensor& grad_output)>;

namespace detail {
struct TensorImpl;
}

// Dense NCHW tensor handle. Copies share storage; the autograd graph is the
// set of producer nodes reachable from a tensor.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, Precision p = default_precision());
    static Tensor full(Shape shape, double value, Precision p = default_precision());
    static Tensor from_values(Shape shape, std::span<const double> values,
                              Precision p = default_precision());

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    Precision precision() const;
    std::size_t numel() const { return shape().numel(); }

    double at(std::size_t i) const;
    double at(int n, int c, int h, int w) const { return at(shape().offset(n, c, h, w)); }
    std::vector<double> to_vector() const;

    template <class T>
    std::span<const T> data() const;
    // Writable view; only legal on leaves (no producer op).
    template <class T>
    std::span<T> mutable_data();
    void set(std::size_t i, double v);
    // Writable view of an op output, used by op implementations to fill a
    // tensor returned from make_result before it is handed out.
    template <class T>
    std::span<T> result_data();

    bool requires_grad() const;
    Tensor& set_requires_grad(bool flag);
    bool is_leaf() const;
    const std::string& op_name() const;

    bool has_grad() const;
    // Gradient as a detached tensor (copy).
    Tensor grad() const;
    double grad_at(std::size_t i) const;
    template <class T>
    std::span<const T> grad_data() const;
    // Zero-initialised on first use; used by backward functions to accumulate.
    template <class T>
    std::span<T> grad_buffer() const;
    void zero_grad();

    // Reverse-mode pass from this scalar. Leaf gradients accumulate across
    // calls; intermediate gradients are recomputed each call.
    void backward() const;

    Tensor detach() const;
    const detail::TensorImpl* id() const { return impl_.get(); }

    // Creates the output of a differentiable op. A null backward function
    // marks the op as forward-only: backward through it raises
    // UnsupportedOpError.
    static Tensor make_result(Shape shape, Precision p, std::string op,
                              std::vector<Tensor> inputs, BackwardFn backward);

private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    detail::TensorImpl& impl() const;

    std::shared_ptr<detail::TensorImpl> impl_;
};

bool all_finite(const Tensor& t);

}  // namespace sdtn
