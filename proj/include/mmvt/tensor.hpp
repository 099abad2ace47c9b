#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmvt {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

inline const char* dtype_name(DType dt) { return dt == DType::f32 ? "f32" : "f64"; }

std::size_t numel(const std::vector<std::size_t>& dims);
std::string dims_to_string(const std::vector<std::size_t>& dims);

// Dense row-major n-d array. Scalars are dims {1}. A default-constructed
// Tensor is the empty placeholder (no dims, no data); every op rejects it.
// Tensors are never mutated by ops; the optimizer and file loaders write
// through data<T>() as the single-writer exceptions.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::vector<std::size_t> dims, DType dtype);

    static Tensor zeros(std::vector<std::size_t> dims, DType dtype = DType::f32);
    static Tensor full(std::vector<std::size_t> dims, double value, DType dtype = DType::f32);
    static Tensor scalar(double value, DType dtype = DType::f32);
    static Tensor from_values(std::vector<std::size_t> dims, const std::vector<double>& values,
                              DType dtype = DType::f32);

    bool empty() const { return dims_.empty(); }
    const std::vector<std::size_t>& dims() const { return dims_; }
    std::size_t dim(std::size_t i) const { return dims_.at(i); }
    std::size_t ndim() const { return dims_.size(); }
    std::size_t size() const;
    DType dtype() const { return dtype_; }

    template <class T> std::span<T> data();
    template <class T> std::span<const T> data() const;

    // dtype-erased element access; slow path, for tests and glue code
    double at(std::size_t i) const;
    void set(std::size_t i, double v);

    Tensor astype(DType dt) const;

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool b) { requires_grad_ = b; }

    // tape bookkeeping (see tape.hpp); node ids are only meaningful while
    // the tape that issued them is alive
    int node() const { return node_; }
    std::uint64_t tape_id() const { return tape_id_; }
    void set_node(std::uint64_t tape_id, int node) {
        tape_id_ = tape_id;
        node_ = node;
    }
    void clear_node() {
        tape_id_ = 0;
        node_ = -1;
    }

    bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

private:
    std::vector<std::size_t> dims_;
    DType dtype_ = DType::f32;
    std::vector<float> f32_;
    std::vector<double> f64_;
    bool requires_grad_ = false;
    std::uint64_t tape_id_ = 0;
    int node_ = -1;
};

template <> inline std::span<float> Tensor::data<float>() {
    if (dtype_ != DType::f32) throw std::runtime_error("tensor: f32 access on f64 tensor");
    return {f32_.data(), f32_.size()};
}
template <> inline std::span<double> Tensor::data<double>() {
    if (dtype_ != DType::f64) throw std::runtime_error("tensor: f64 access on f32 tensor");
    return {f64_.data(), f64_.size()};
}
template <> inline std::span<const float> Tensor::data<float>() const {
    if (dtype_ != DType::f32) throw std::runtime_error("tensor: f32 access on f64 tensor");
    return {f32_.data(), f32_.size()};
}
template <> inline std::span<const double> Tensor::data<double>() const {
    if (dtype_ != DType::f64) throw std::runtime_error("tensor: f64 access on f32 tensor");
    return {f64_.data(), f64_.size()};
}

// NaN/Inf detection toggle. On by default in tests and the gradcheck CLI,
// off in plain release runs.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();
void check_finite(const Tensor& t, const char* op);

// .mmt tensor container: magic "MMT1", u8 dtype (0=f32, 1=f64), u8 ndim,
// ndim x u64 little-endian dims, raw little-endian values.
void write_mmt(std::ostream& os, const Tensor& t);
Tensor read_mmt(std::istream& is);
void save_mmt(const Tensor& t, const std::string& path);
Tensor load_mmt(const std::string& path);

}  // namespace mmvt
