#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace statalign {

class TensorError : public std::runtime_error {
public:
    explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

/// Dense row-major tensor handle. Copies share storage; the values are
/// treated as immutable once a forward pass has consumed them. The gradient
/// buffer exists iff requires_grad is set and is zero-initialized.
template <typename T>
class Tensor {
public:
    Tensor() : s_(std::make_shared<Storage>()) {}

    explicit Tensor(std::vector<int> shape, T fill = T(0), bool requires_grad = false)
        : s_(std::make_shared<Storage>()) {
        s_->shape = std::move(shape);
        s_->x.assign(count(s_->shape), fill);
        set_requires_grad(requires_grad);
    }

    static Tensor from_data(std::vector<int> shape, std::vector<T> data, bool requires_grad = false) {
        if (count(shape) != data.size())
            throw TensorError("tensor data size " + std::to_string(data.size()) +
                              " does not match shape " + shape_str(shape));
        Tensor t;
        t.s_->shape = std::move(shape);
        t.s_->x = std::move(data);
        t.set_requires_grad(requires_grad);
        return t;
    }

    const std::vector<int>& shape() const { return s_->shape; }
    int dim(int i) const { return s_->shape.at(static_cast<size_t>(i)); }
    size_t size() const { return s_->x.size(); }

    T* data() { return s_->x.data(); }
    const T* data() const { return s_->x.data(); }
    std::vector<T>& values() { return s_->x; }
    const std::vector<T>& values() const { return s_->x; }

    bool requires_grad() const { return s_->requires_grad; }
    void set_requires_grad(bool rg) {
        s_->requires_grad = rg;
        if (rg)
            s_->g.assign(s_->x.size(), T(0));
        else
            s_->g.clear();
    }

    T* grad() {
        if (!s_->requires_grad) throw TensorError("grad() on tensor without requires_grad");
        return s_->g.data();
    }
    const T* grad() const {
        if (!s_->requires_grad) throw TensorError("grad() on tensor without requires_grad");
        return s_->g.data();
    }
    void zero_grad() {
        if (s_->requires_grad) std::fill(s_->g.begin(), s_->g.end(), T(0));
    }

    T item() const {
        if (s_->x.size() != 1) throw TensorError("item() on non-scalar tensor " + shape_str(s_->shape));
        return s_->x[0];
    }

    // Deep copy; the clone owns fresh storage.
    Tensor clone() const {
        Tensor t;
        t.s_->shape = s_->shape;
        t.s_->x = s_->x;
        t.set_requires_grad(s_->requires_grad);
        return t;
    }

    bool same_storage(const Tensor& o) const { return s_ == o.s_; }

    void check_finite(const char* where) const {
        for (const T& v : s_->x)
            if (!std::isfinite(static_cast<double>(v)))
                throw TensorError(std::string("non-finite value after ") + where);
    }

    static size_t count(const std::vector<int>& shape) {
        size_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw TensorError("non-positive dimension in shape " + shape_str(shape));
            n *= static_cast<size_t>(d);
        }
        return n;
    }

private:
    struct Storage {
        std::vector<int> shape;
        std::vector<T> x, g;
        bool requires_grad = false;
    };
    std::shared_ptr<Storage> s_;
};

/// Records backward closures in forward order; backward() replays them in
/// exact reverse. clear() drops the closures and with them every saved
/// activation they captured.
template <typename T>
class Tape {
public:
    void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

    void backward(Tensor<T>& loss) {
        if (loss.size() != 1) throw TensorError("backward() expects a scalar loss");
        if (!loss.requires_grad()) throw TensorError("backward() on a loss with no grad path");
        loss.grad()[0] += T(1);
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    }

    void clear() { ops_.clear(); }
    size_t size() const { return ops_.size(); }

private:
    std::vector<std::function<void()>> ops_;
};

}  // namespace statalign
