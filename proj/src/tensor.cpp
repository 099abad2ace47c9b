#include "mmvt/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mmvt {

std::size_t numel(const std::vector<std::size_t>& dims) {
    std::size_t n = 1;
    for (const std::size_t d : dims) n *= d;
    return n;
}

std::string dims_to_string(const std::vector<std::size_t>& dims) {
    std::string s = "[";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(dims[i]);
    }
    return s + "]";
}

Tensor::Tensor(std::vector<std::size_t> dims, DType dtype) : dims_(std::move(dims)), dtype_(dtype) {
    if (dims_.empty()) throw std::invalid_argument("tensor: dims must be non-empty");
    for (const std::size_t d : dims_) {
        if (d == 0) throw std::invalid_argument("tensor: zero dim in " + dims_to_string(dims_));
    }
    const std::size_t n = numel(dims_);
    if (dtype_ == DType::f32)
        f32_.assign(n, 0.0f);
    else
        f64_.assign(n, 0.0);
}

Tensor Tensor::zeros(std::vector<std::size_t> dims, DType dtype) {
    return Tensor(std::move(dims), dtype);
}

Tensor Tensor::full(std::vector<std::size_t> dims, double value, DType dtype) {
    Tensor t(std::move(dims), dtype);
    const std::size_t n = t.size();
    for (std::size_t i = 0; i < n; ++i) t.set(i, value);
    return t;
}

Tensor Tensor::scalar(double value, DType dtype) { return full({1}, value, dtype); }

Tensor Tensor::from_values(std::vector<std::size_t> dims, const std::vector<double>& values,
                           DType dtype) {
    Tensor t(std::move(dims), dtype);
    if (values.size() != t.size())
        throw std::invalid_argument("tensor: value count " + std::to_string(values.size()) +
                                    " does not match dims " + dims_to_string(t.dims()));
    for (std::size_t i = 0; i < values.size(); ++i) t.set(i, values[i]);
    return t;
}

std::size_t Tensor::size() const { return dtype_ == DType::f32 ? f32_.size() : f64_.size(); }

double Tensor::at(std::size_t i) const {
    return dtype_ == DType::f32 ? static_cast<double>(f32_[i]) : f64_[i];
}

void Tensor::set(std::size_t i, double v) {
    if (dtype_ == DType::f32)
        f32_[i] = static_cast<float>(v);
    else
        f64_[i] = v;
}

Tensor Tensor::astype(DType dt) const {
    if (empty()) throw std::runtime_error("tensor: astype on empty tensor");
    if (dt == dtype_) {
        Tensor t = *this;
        t.clear_node();
        t.set_requires_grad(false);
        return t;
    }
    Tensor t(dims_, dt);
    const std::size_t n = size();
    for (std::size_t i = 0; i < n; ++i) t.set(i, at(i));
    return t;
}

namespace {
#ifdef NDEBUG
std::atomic<bool> g_finite_checks{false};
#else
std::atomic<bool> g_finite_checks{true};
#endif
}  // namespace

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled); }
bool finite_checks_enabled() { return g_finite_checks.load(); }

void check_finite(const Tensor& t, const char* op) {
    if (!g_finite_checks.load()) return;
    const std::size_t n = t.size();
    if (t.dtype() == DType::f32) {
        const auto d = t.data<float>();
        for (std::size_t i = 0; i < n; ++i)
            if (!std::isfinite(d[i]))
                throw std::runtime_error(std::string("non-finite value produced by ") + op);
    } else {
        const auto d = t.data<double>();
        for (std::size_t i = 0; i < n; ++i)
            if (!std::isfinite(d[i]))
                throw std::runtime_error(std::string("non-finite value produced by ") + op);
    }
}

// ---------------------------------------------------------------- .mmt i/o

namespace {

void put_u64le(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64le(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw std::runtime_error("mmt: truncated header");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

template <class T, class U>
void put_values_le(std::ostream& os, std::span<const T> vals) {
    static_assert(sizeof(T) == sizeof(U));
    std::vector<unsigned char> buf(vals.size() * sizeof(T));
    for (std::size_t i = 0; i < vals.size(); ++i) {
        U bits;
        std::memcpy(&bits, &vals[i], sizeof(T));
        for (std::size_t k = 0; k < sizeof(T); ++k)
            buf[i * sizeof(T) + k] = static_cast<unsigned char>((bits >> (8 * k)) & 0xff);
    }
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

template <class T, class U>
void get_values_le(std::istream& is, std::span<T> vals) {
    static_assert(sizeof(T) == sizeof(U));
    std::vector<unsigned char> buf(vals.size() * sizeof(T));
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!is) throw std::runtime_error("mmt: truncated data");
    for (std::size_t i = 0; i < vals.size(); ++i) {
        U bits = 0;
        for (std::size_t k = 0; k < sizeof(T); ++k)
            bits |= static_cast<U>(buf[i * sizeof(T) + k]) << (8 * k);
        std::memcpy(&vals[i], &bits, sizeof(T));
    }
}

}  // namespace

void write_mmt(std::ostream& os, const Tensor& t) {
    if (t.empty()) throw std::runtime_error("mmt: cannot write empty tensor");
    os.write("MMT1", 4);
    const unsigned char dt = static_cast<unsigned char>(t.dtype());
    const unsigned char nd = static_cast<unsigned char>(t.ndim());
    os.put(static_cast<char>(dt));
    os.put(static_cast<char>(nd));
    for (const std::size_t d : t.dims()) put_u64le(os, d);
    if (t.dtype() == DType::f32)
        put_values_le<float, std::uint32_t>(os, t.data<float>());
    else
        put_values_le<double, std::uint64_t>(os, t.data<double>());
    if (!os) throw std::runtime_error("mmt: write failed");
}

Tensor read_mmt(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "MMT1", 4) != 0)
        throw std::runtime_error("mmt: bad magic bytes");
    const int dt = is.get();
    const int nd = is.get();
    if (!is || (dt != 0 && dt != 1) || nd <= 0)
        throw std::runtime_error("mmt: bad dtype/ndim");
    std::vector<std::size_t> dims(static_cast<std::size_t>(nd));
    for (auto& d : dims) {
        d = static_cast<std::size_t>(get_u64le(is));
        if (d == 0) throw std::runtime_error("mmt: zero dim");
    }
    Tensor t(dims, static_cast<DType>(dt));
    if (t.dtype() == DType::f32)
        get_values_le<float, std::uint32_t>(is, t.data<float>());
    else
        get_values_le<double, std::uint64_t>(is, t.data<double>());
    return t;
}

void save_mmt(const Tensor& t, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("mmt: cannot open " + path + " for writing");
    write_mmt(os, t);
}

Tensor load_mmt(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("mmt: cannot open " + path);
    return read_mmt(is);
}

}  // namespace mmvt
