#include "sdtn/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace sdtn {

namespace {
std::atomic<Precision> g_precision{Precision::f64};
}

Precision default_precision() { return g_precision.load(std::memory_order_relaxed); }
void set_default_precision(Precision p) { g_precision.store(p, std::memory_order_relaxed); }

std::string Shape::str() const {
    std::ostringstream os;
    os << n << "x" << c << "x" << h << "x" << w;
    return os.str();
}

namespace detail {

using Storage = std::variant<std::vector<float>, std::vector<double>>;

struct Node {
    std::string op;
    std::vector<Tensor> inputs;
    BackwardFn backward;
};

struct TensorImpl {
    Shape shape;
    Storage storage;
    bool requires_grad = false;
    std::shared_ptr<TensorImpl> grad;
    std::shared_ptr<Node> node;

    Precision precision() const {
        return std::holds_alternative<std::vector<float>>(storage) ? Precision::f32 : Precision::f64;
    }
};

namespace {
Storage make_storage(Precision p, std::size_t n) {
    if (p == Precision::f32) return std::vector<float>(n, 0.0f);
    return std::vector<double>(n, 0.0);
}

std::shared_ptr<TensorImpl> make_impl(Shape shape, Precision p) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0)
        throw ShapeError("negative tensor dimension " + shape.str());
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->storage = make_storage(p, shape.numel());
    return impl;
}

const std::string kLeafName = "leaf";
}  // namespace

}  // namespace detail

using detail::TensorImpl;

detail::TensorImpl& Tensor::impl() const {
    if (!impl_) throw ContractError("use of undefined tensor");
    return *impl_;
}

Tensor Tensor::zeros(Shape shape, Precision p) { return Tensor(detail::make_impl(shape, p)); }

Tensor Tensor::full(Shape shape, double value, Precision p) {
    Tensor t = zeros(shape, p);
    std::visit([value](auto& v) {
        using T = typename std::decay_t<decltype(v)>::value_type;
        std::fill(v.begin(), v.end(), static_cast<T>(value));
    }, t.impl().storage);
    return t;
}

Tensor Tensor::from_values(Shape shape, std::span<const double> values, Precision p) {
    if (values.size() != shape.numel())
        throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape.str());
    Tensor t = zeros(shape, p);
    std::visit([&](auto& v) {
        using T = typename std::decay_t<decltype(v)>::value_type;
        std::transform(values.begin(), values.end(), v.begin(),
                       [](double x) { return static_cast<T>(x); });
    }, t.impl().storage);
    return t;
}

const Shape& Tensor::shape() const { return impl().shape; }
Precision Tensor::precision() const { return impl().precision(); }

double Tensor::at(std::size_t i) const {
    return std::visit([i](const auto& v) { return static_cast<double>(v.at(i)); }, impl().storage);
}

std::vector<double> Tensor::to_vector() const {
    return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); },
                      impl().storage);
}

template <class T>
std::span<const T> Tensor::data() const {
    auto* v = std::get_if<std::vector<T>>(&impl().storage);
    if (!v) throw ContractError("tensor precision mismatch on data access");
    return {v->data(), v->size()};
}

template <class T>
std::span<T> Tensor::mutable_data() {
    if (impl().node) throw ContractError("cannot mutate the output of op '" + impl().node->op + "'");
    auto* v = std::get_if<std::vector<T>>(&impl().storage);
    if (!v) throw ContractError("tensor precision mismatch on data access");
    return {v->data(), v->size()};
}

template <class T>
std::span<T> Tensor::result_data() {
    auto* v = std::get_if<std::vector<T>>(&impl().storage);
    if (!v) throw ContractError("tensor precision mismatch on data access");
    return {v->data(), v->size()};
}

void Tensor::set(std::size_t i, double value) {
    dispatch(precision(), [&](auto tag) {
        using T = decltype(tag);
        mutable_data<T>()[i] = static_cast<T>(value);
    });
}

bool Tensor::requires_grad() const { return impl().requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
    if (!is_leaf() && !flag) throw ContractError("cannot clear requires_grad on a non-leaf tensor");
    impl().requires_grad = flag;
    return *this;
}

bool Tensor::is_leaf() const { return impl().node == nullptr; }

const std::string& Tensor::op_name() const {
    return impl().node ? impl().node->op : detail::kLeafName;
}

bool Tensor::has_grad() const { return impl().grad != nullptr; }

Tensor Tensor::grad() const {
    if (!impl().grad) throw ContractError("tensor has no gradient");
    Tensor g(impl().grad);
    return g.detach();
}

double Tensor::grad_at(std::size_t i) const {
    if (!impl().grad) return 0.0;
    return Tensor(impl().grad).at(i);
}

template <class T>
std::span<const T> Tensor::grad_data() const {
    if (!impl().grad) throw ContractError("tensor has no gradient");
    return Tensor(impl().grad).data<T>();
}

template <class T>
std::span<T> Tensor::grad_buffer() const {
    auto& self = impl();
    if (!self.grad) self.grad = detail::make_impl(self.shape, self.precision());
    auto* v = std::get_if<std::vector<T>>(&self.grad->storage);
    if (!v) throw ContractError("gradient precision mismatch");
    return {v->data(), v->size()};
}

void Tensor::zero_grad() { impl().grad.reset(); }

Tensor Tensor::detach() const {
    auto copy = std::make_shared<TensorImpl>();
    copy->shape = impl().shape;
    copy->storage = impl().storage;
    return Tensor(copy);
}

Tensor Tensor::make_result(Shape shape, Precision p, std::string op, std::vector<Tensor> inputs,
                           BackwardFn backward) {
    auto impl = detail::make_impl(shape, p);
    const bool needs_grad = std::any_of(inputs.begin(), inputs.end(),
                                        [](const Tensor& t) { return t.requires_grad(); });
    if (needs_grad) {
        impl->requires_grad = true;
        auto node = std::make_shared<detail::Node>();
        node->op = std::move(op);
        node->inputs = std::move(inputs);
        node->backward = std::move(backward);
        impl->node = std::move(node);
    }
    return Tensor(impl);
}

void Tensor::backward() const {
    auto& root = impl();
    if (root.shape.numel() != 1) throw ContractError("backward requires a scalar loss, got " + root.shape.str());
    if (!root.requires_grad) throw ContractError("loss does not depend on any tensor requiring grad");
    if (!all_finite(*this)) throw NumericalError("backward from a non-finite loss");

    // Iterative post-order DFS restricted to grad-requiring tensors.
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> seen;
    std::vector<std::pair<TensorImpl*, std::size_t>> stack;
    stack.emplace_back(&root, 0);
    seen.insert(&root);
    while (!stack.empty()) {
        auto& [node_impl, next] = stack.back();
        const auto* node = node_impl->node.get();
        if (node && next < node->inputs.size()) {
            TensorImpl* child = node->inputs[next++].impl_.get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
            continue;
        }
        order.push_back(node_impl);
        stack.pop_back();
    }

    for (TensorImpl* t : order)
        if (t->node) t->grad.reset();

    Tensor root_handle = *this;
    dispatch(root.precision(), [&](auto tag) {
        using T = decltype(tag);
        root_handle.grad_buffer<T>()[0] += T(1);
    });

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* t = *it;
        if (!t->node || !t->grad) continue;
        if (!t->node->backward)
            throw UnsupportedOpError("backward through unsupported op '" + t->node->op + "'");
        t->node->backward(Tensor(t->grad));
    }
}

bool all_finite(const Tensor& t) {
    return dispatch(t.precision(), [&](auto tag) {
        using T = decltype(tag);
        for (T v : t.data<T>())
            if (!std::isfinite(v)) return false;
        return true;
    });
}

template std::span<const float> Tensor::data<float>() const;
template std::span<const double> Tensor::data<double>() const;
template std::span<float> Tensor::mutable_data<float>();
template std::span<double> Tensor::mutable_data<double>();
template std::span<float> Tensor::result_data<float>();
template std::span<double> Tensor::result_data<double>();
template std::span<const float> Tensor::grad_data<float>() const;
template std::span<const double> Tensor::grad_data<double>() const;
template std::span<float> Tensor::grad_buffer<float>() const;
template std::span<double> Tensor::grad_buffer<double>() const;

}  // namespace sdtn
