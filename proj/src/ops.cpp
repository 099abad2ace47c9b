#include "mmvt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace mmvt {

namespace {

template <class T> struct Tag { using type = T; };

template <class F>
auto dispatch(DType dt, F&& f) {
    return dt == DType::f32 ? f(Tag<float>{}) : f(Tag<double>{});
}

struct OpCtx {
    Tape* tp = nullptr;
    std::vector<int> parents;
    bool any = false;

    void input(const Tensor& t) {
        const int n = (tp && tp->tracked(t)) ? t.node() : -1;
        parents.push_back(n);
        any = any || n >= 0;
    }
};

OpCtx ctx_for(std::initializer_list<const Tensor*> ins) {
    OpCtx c;
    c.tp = Tape::active();
    if (!c.tp) return c;
    for (const Tensor* t : ins) c.input(*t);
    return c;
}

// the backward closure is only materialized into a std::function when the op
// is actually recorded
template <class F>
void finish(Tensor& out, const char* op, OpCtx& ctx, F&& fn) {
    check_finite(out, op);
    if (ctx.tp && ctx.any) {
        out.set_node(ctx.tp->id(),
                     ctx.tp->record(op, std::move(ctx.parents), Tape::BackwardFn(std::forward<F>(fn))));
        out.set_requires_grad(true);
    }
}

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// dtype-preserving flat copy
void copy_values(const Tensor& src, Tensor& dst, std::size_t src_off, std::size_t dst_off,
                 std::size_t count) {
    dispatch(src.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        std::memcpy(dst.data<T>().data() + dst_off, src.data<T>().data() + src_off,
                    count * sizeof(T));
    });
}

void check_binary(const Tensor& a, const Tensor& b, const char* op) {
    require(!a.empty() && !b.empty(), std::string(op) + ": empty tensor");
    require(a.dtype() == b.dtype(), std::string(op) + ": dtype mismatch (" +
                                        dtype_name(a.dtype()) + " vs " + dtype_name(b.dtype()) + ")");
    require(a.dims() == b.dims(), std::string(op) + ": shape mismatch " +
                                      dims_to_string(a.dims()) + " vs " + dims_to_string(b.dims()));
}

// ---------------------------------------------------------- raw kernels

// c[m,n] = a[m,k] * b[k,n]; c must be zeroed
template <class T>
void mm_nn(const T* __restrict__ a, const T* __restrict__ b, T* __restrict__ c, std::size_t m,
           std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        T* __restrict__ crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            const T* __restrict__ brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[m,n] = a[m,k] * b[n,k]^T; four accumulators break the dependency chain,
// summation order is fixed so results stay run-to-run identical
template <class T>
void mm_nt(const T* __restrict__ a, const T* __restrict__ b, T* __restrict__ c, std::size_t m,
           std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* __restrict__ arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const T* __restrict__ brow = b + j * k;
            T a0 = 0, a1 = 0, a2 = 0, a3 = 0;
            std::size_t p = 0;
            for (; p + 4 <= k; p += 4) {
                a0 += arow[p] * brow[p];
                a1 += arow[p + 1] * brow[p + 1];
                a2 += arow[p + 2] * brow[p + 2];
                a3 += arow[p + 3] * brow[p + 3];
            }
            T acc = (a0 + a1) + (a2 + a3);
            for (; p < k; ++p) acc += arow[p] * brow[p];
            c[i * n + j] = acc;
        }
    }
}

// c[m,n] += a[r,m]^T * b[r,n]
template <class T>
void mm_tn(const T* __restrict__ a, const T* __restrict__ b, T* __restrict__ c, std::size_t r,
           std::size_t m, std::size_t n) {
    for (std::size_t p = 0; p < r; ++p) {
        const T* __restrict__ brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T av = a[p * m + i];
            T* __restrict__ crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

struct MatShape {
    std::size_t batch, m, k, n;
    bool shared_rhs;  // rhs is 2-d, reused across the batch
};

MatShape matmul_shape(const Tensor& a, const Tensor& b) {
    require(a.dtype() == b.dtype(), "matmul: dtype mismatch (" + std::string(dtype_name(a.dtype())) +
                                        " vs " + dtype_name(b.dtype()) + ")");
    if (a.ndim() == 2 && b.ndim() == 2) {
        require(a.dim(1) == b.dim(0), "matmul: inner dims disagree " + dims_to_string(a.dims()) +
                                          " x " + dims_to_string(b.dims()));
        return {1, a.dim(0), a.dim(1), b.dim(1), false};
    }
    if (a.ndim() == 3 && b.ndim() == 3) {
        require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(1),
                "matmul: batched dims disagree " + dims_to_string(a.dims()) + " x " +
                    dims_to_string(b.dims()));
        return {a.dim(0), a.dim(1), a.dim(2), b.dim(2), false};
    }
    if (a.ndim() == 3 && b.ndim() == 2) {
        require(a.dim(2) == b.dim(0), "matmul: inner dims disagree " + dims_to_string(a.dims()) +
                                          " x " + dims_to_string(b.dims()));
        return {a.dim(0), a.dim(1), a.dim(2), b.dim(1), true};
    }
    throw std::invalid_argument("matmul: unsupported ranks " + dims_to_string(a.dims()) + " x " +
                                dims_to_string(b.dims()));
}

Tensor matmul_raw(const Tensor& a, const Tensor& b) {
    const MatShape s = matmul_shape(a, b);
    std::vector<std::size_t> od = s.batch == 1 && a.ndim() == 2
                                      ? std::vector<std::size_t>{s.m, s.n}
                                      : std::vector<std::size_t>{s.batch, s.m, s.n};
    Tensor out(od, a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        const T* pa = a.data<T>().data();
        const T* pb = b.data<T>().data();
        T* pc = out.data<T>().data();
        for (std::size_t bi = 0; bi < s.batch; ++bi) {
            const T* bp = s.shared_rhs ? pb : pb + bi * s.k * s.n;
            mm_nn(pa + bi * s.m * s.k, bp, pc + bi * s.m * s.n, s.m, s.k, s.n);
        }
    });
    return out;
}

// grad wrt a: g * b^T, batch-wise
Tensor matmul_grad_a(const Tensor& g, const Tensor& b, const MatShape& s,
                     const std::vector<std::size_t>& a_dims) {
    Tensor ga(a_dims, g.dtype());
    dispatch(g.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        const T* pg = g.data<T>().data();
        const T* pb = b.data<T>().data();
        T* pa = ga.data<T>().data();
        for (std::size_t bi = 0; bi < s.batch; ++bi) {
            const T* bp = s.shared_rhs ? pb : pb + bi * s.k * s.n;
            // ga[m,k] = g[m,n] * b[k,n]^T
            mm_nt(pg + bi * s.m * s.n, bp, pa + bi * s.m * s.k, s.m, s.n, s.k);
        }
    });
    return ga;
}

// grad wrt b: a^T * g, summed over the batch when rhs is shared
Tensor matmul_grad_b(const Tensor& a, const Tensor& g, const MatShape& s,
                     const std::vector<std::size_t>& b_dims) {
    Tensor gb(b_dims, g.dtype());
    dispatch(g.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        const T* pa = a.data<T>().data();
        const T* pg = g.data<T>().data();
        T* pb = gb.data<T>().data();
        for (std::size_t bi = 0; bi < s.batch; ++bi) {
            T* bp = s.shared_rhs ? pb : pb + bi * s.k * s.n;
            mm_tn(pa + bi * s.m * s.k, pg + bi * s.m * s.n, bp, s.m, s.k, s.n);
        }
    });
    return gb;
}

struct AxisSplit {
    std::size_t outer, len, inner;
};

AxisSplit split_axis(const Tensor& x, std::size_t axis, const char* op) {
    require(axis < x.ndim(), std::string(op) + ": axis " + std::to_string(axis) +
                                 " out of range for " + dims_to_string(x.dims()));
    AxisSplit s{1, x.dim(axis), 1};
    for (std::size_t i = 0; i < axis; ++i) s.outer *= x.dim(i);
    for (std::size_t i = axis + 1; i < x.ndim(); ++i) s.inner *= x.dim(i);
    return s;
}

}  // namespace

// ------------------------------------------------------------ elementwise

Tensor add(const Tensor& a, const Tensor& b) {
    check_binary(a, b, "add");
    Tensor out(a.dims(), a.dtype());
    const std::size_t n = out.size();
    dispatch(a.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        const T* pa = a.data<T>().data();
        const T* pb = b.data<T>().data();
        T* pc = out.data<T>().data();
        for (std::size_t i = 0; i < n; ++i) pc[i] = pa[i] + pb[i];
    });
    OpCtx ctx = ctx_for({&a, &b});
    finish(out, "add", ctx, [](const Tensor& g) { return std::vector<Tensor>{g, g}; });
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_binary(a, b, "sub");
    Tensor out(a.dims(), a.dtype());
    const std::size_t n = out.size();
    dispatch(a.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        const T* pa = a.data<T>().data();
        const T* pb = b.data<T>().data();
        T* pc = out.data<T>().data();
        for (std::size_t i = 0; i < n; ++i) pc[i] = pa[i] - pb[i];
    });
    OpCtx ctx = ctx_for({&a, &b});
    finish(out, "sub", ctx, [](const Tensor& g) {
        Tensor ng(g.dims(), g.dtype());
        const std::size_t m = g.size();
        for (std::size_t i = 0; i < m; ++i) ng.set(i, -g.at(i));
        return std::vector<Tensor>{g, ng};
    });
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_binary(a, b, "mul");
    Tensor out(a.dims(), a.dtype());
    const std::size_t n = out.size();
    dispatch(a.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        const T* pa = a.data<T>().data();
        const T* pb = b.data<T>().data();
        T* pc = out.data<T>().data();
        for (std::size_t i = 0; i < n; ++i) pc[i] = pa[i] * pb[i];
    });
    OpCtx ctx = ctx_for({&a, &b});
    const bool na = ctx.parents.size() == 2 && ctx.parents[0] >= 0;
    const bool nb = ctx.parents.size() == 2 && ctx.parents[1] >= 0;
    Tensor as = na || nb ? a : Tensor{};
    Tensor bs = na || nb ? b : Tensor{};
    finish(out, "mul", ctx, [as, bs, na, nb](const Tensor& g) {
        std::vector<Tensor> gs(2);
        const std::size_t m = g.size();
        if (na) {
            Tensor ga(g.dims(), g.dtype());
            for (std::size_t i = 0; i < m; ++i) ga.set(i, g.at(i) * bs.at(i));
            gs[0] = std::move(ga);
        }
        if (nb) {
            Tensor gb(g.dims(), g.dtype());
            for (std::size_t i = 0; i < m; ++i) gb.set(i, g.at(i) * as.at(i));
            gs[1] = std::move(gb);
        }
        return gs;
    });
    return out;
}

Tensor scale(const Tensor& x, double c) {
    require(!x.empty(), "scale: empty tensor");
    Tensor out(x.dims(), x.dtype());
    const std::size_t n = out.size();
    dispatch(x.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        const T* px = x.data<T>().data();
        T* pc = out.data<T>().data();
        const T cv = static_cast<T>(c);
        for (std::size_t i = 0; i < n; ++i) pc[i] = px[i] * cv;
    });
    OpCtx ctx = ctx_for({&x});
    finish(out, "scale", ctx, [c](const Tensor& g) {
        Tensor gx(g.dims(), g.dtype());
        const std::size_t m = g.size();
        for (std::size_t i = 0; i < m; ++i) gx.set(i, g.at(i) * c);
        return std::vector<Tensor>{std::move(gx)};
    });
    return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    require(!x.empty() && !bias.empty(), "add_bias: empty tensor");
    require(x.dtype() == bias.dtype(), "add_bias: dtype mismatch");
    require(bias.ndim() == 1 && bias.dim(0) == x.dim(x.ndim() - 1),
            "add_bias: bias " + dims_to_string(bias.dims()) + " does not match last axis of " +
                dims_to_string(x.dims()));
    const std::size_t w = bias.dim(0);
    const std::size_t rows = x.size() / w;
    Tensor out(x.dims(), x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        const T* px = x.data<T>().data();
        const T* pb = bias.data<T>().data();
        T* pc = out.data<T>().data();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < w; ++j) pc[r * w + j] = px[r * w + j] + pb[j];
    });
    OpCtx ctx = ctx_for({&x, &bias});
    finish(out, "add_bias", ctx, [w, rows](const Tensor& g) {
        Tensor gb({w}, g.dtype());
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < w; ++j) gb.set(j, gb.at(j) + g.at(r * w + j));
        return std::vector<Tensor>{g, std::move(gb)};
    });
    return out;
}

// ------------------------------------------------------------------ matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
    const MatShape s = matmul_shape(a, b);
    Tensor out = matmul_raw(a, b);
    OpCtx ctx = ctx_for({&a, &b});
    const bool na = ctx.parents.size() == 2 && ctx.parents[0] >= 0;
    const bool nb = ctx.parents.size() == 2 && ctx.parents[1] >= 0;
    Tensor as = nb ? a : Tensor{};
    Tensor bs = na ? b : Tensor{};
    std::vector<std::size_t> ad = a.dims(), bd = b.dims();
    finish(out, "matmul", ctx, [=](const Tensor& g) {
        std::vector<Tensor> gs(2);
        if (na) gs[0] = matmul_grad_a(g, bs, s, ad);
        if (nb) gs[1] = matmul_grad_b(as, g, s, bd);
        return gs;
    });
    return out;
}

// a [m,k] x b [n,k] -> a * b^T [m,n]; the row-major dot layout avoids
// materializing a transposed copy of b
Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(1),
            "matmul_nt: want [m,k] x [n,k], got " + dims_to_string(a.dims()) + " x " +
                dims_to_string(b.dims()));
    require(a.dtype() == b.dtype(), "matmul_nt: dtype mismatch");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor out({m, n}, a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        mm_nt(a.data<T>().data(), b.data<T>().data(), out.data<T>().data(), m, k, n);
    });
    OpCtx ctx = ctx_for({&a, &b});
    const bool na = ctx.parents.size() == 2 && ctx.parents[0] >= 0;
    const bool nb = ctx.parents.size() == 2 && ctx.parents[1] >= 0;
    Tensor as = nb ? a : Tensor{};
    Tensor bs = na ? b : Tensor{};
    finish(out, "matmul_nt", ctx, [as, bs, na, nb, m, k, n](const Tensor& g) {
        std::vector<Tensor> gs(2);
        dispatch(g.dtype(), [&](auto tag) {
            using T = typename decltype(tag)::type;
            if (na) {
                Tensor ga({m, k}, g.dtype());
                mm_nn(g.data<T>().data(), bs.data<T>().data(), ga.data<T>().data(), m, n, k);
                gs[0] = std::move(ga);
            }
            if (nb) {
                Tensor gb({n, k}, g.dtype());
                mm_tn(g.data<T>().data(), as.data<T>().data(), gb.data<T>().data(), m, n, k);
                gs[1] = std::move(gb);
            }
        });
        return gs;
    });
    return out;
}

// non-overlapping t x ph x pw patches of [F,H,W,C], flattened row-major as
// (dt, y, x, c) -> [T*S, t*ph*pw*C]; the inverse scatter is the gradient
Tensor patch_gather(const Tensor& x, std::size_t t, std::size_t ph, std::size_t pw) {
    require(x.ndim() == 4, "patch_gather: expects [F,H,W,C], got " + dims_to_string(x.dims()));
    const std::size_t F = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    require(t > 0 && F % t == 0 && ph > 0 && H % ph == 0 && pw > 0 && W % pw == 0,
            "patch_gather: input " + dims_to_string(x.dims()) + " not divisible by patch " +
                std::to_string(t) + "x" + std::to_string(ph) + "x" + std::to_string(pw));
    const std::size_t T = F / t, Hp = H / ph, Wp = W / pw;
    const std::size_t patch = t * ph * pw * C;
    const std::size_t run = pw * C;  // contiguous span per (frame, row) pair

    Tensor out({T * Hp * Wp, patch}, x.dtype());
    // scalars captured by value: the closure outlives this frame on the tape
    const auto gather = [T, Hp, Wp, t, ph, pw, patch, run, H, W, C](const Tensor& src, Tensor& dst,
                                                                    bool forward_dir) {
        dispatch(src.dtype(), [&](auto tag) {
            using T2 = typename decltype(tag)::type;
            const T2* ps = src.data<T2>().data();
            T2* pd = dst.data<T2>().data();
            for (std::size_t ti = 0; ti < T; ++ti)
                for (std::size_t hp = 0; hp < Hp; ++hp)
                    for (std::size_t wp = 0; wp < Wp; ++wp) {
                        const std::size_t row = (ti * Hp + hp) * Wp + wp;
                        for (std::size_t dt = 0; dt < t; ++dt) {
                            const std::size_t f = ti * t + dt;
                            for (std::size_t u = 0; u < ph; ++u) {
                                const std::size_t img = ((f * H + hp * ph + u) * W + wp * pw) * C;
                                const std::size_t flat = row * patch + (dt * ph + u) * run;
                                if (forward_dir)
                                    std::memcpy(pd + flat, ps + img, run * sizeof(T2));
                                else
                                    std::memcpy(pd + img, ps + flat, run * sizeof(T2));
                            }
                        }
                    }
        });
    };
    gather(x, out, true);

    std::vector<std::size_t> xd = x.dims();
    OpCtx ctx = ctx_for({&x});
    finish(out, "patch_gather", ctx, [xd, gather](const Tensor& g) {
        Tensor gx(xd, g.dtype());
        gather(g, gx, false);
        return std::vector<Tensor>{std::move(gx)};
    });
    return out;
}

// --------------------------------------------------------------- reshaping

Tensor reshape(const Tensor& x, const std::vector<std::size_t>& dims) {
    require(!x.empty(), "reshape: empty tensor");
    require(numel(dims) == x.size() && !dims.empty(),
            "reshape: cannot view " + dims_to_string(x.dims()) + " as " + dims_to_string(dims));
    Tensor out(dims, x.dtype());
    copy_values(x, out, 0, 0, x.size());
    std::vector<std::size_t> orig = x.dims();
    OpCtx ctx = ctx_for({&x});
    finish(out, "reshape", ctx, [orig](const Tensor& g) {
        Tensor gx(orig, g.dtype());
        copy_values(g, gx, 0, 0, g.size());
        return std::vector<Tensor>{std::move(gx)};
    });
    return out;
}

namespace {

std::vector<std::size_t> strides_of(const std::vector<std::size_t>& dims) {
    std::vector<std::size_t> st(dims.size(), 1);
    for (int i = static_cast<int>(dims.size()) - 2; i >= 0; --i)
        st[static_cast<std::size_t>(i)] = st[static_cast<std::size_t>(i) + 1] * dims[static_cast<std::size_t>(i) + 1];
    return st;
}

Tensor permute_raw(const Tensor& x, const std::vector<std::size_t>& perm) {
    std::vector<std::size_t> od(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) od[i] = x.dim(perm[i]);
    Tensor out(od, x.dtype());
    const std::vector<std::size_t> in_strides = strides_of(x.dims());
    // stride of output axis i in the input layout
    std::vector<std::size_t> walk(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) walk[i] = in_strides[perm[i]];
    const std::size_t n = x.size();
    const std::size_t nd = od.size();
    std::vector<std::size_t> idx(nd, 0);
    dispatch(x.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        const T* px = x.data<T>().data();
        T* pc = out.data<T>().data();
        std::size_t src = 0;
        for (std::size_t i = 0; i < n; ++i) {
            pc[i] = px[src];
            for (std::size_t d = nd; d-- > 0;) {
                if (++idx[d] < od[d]) {
                    src += walk[d];
                    break;
                }
                idx[d] = 0;
                src -= walk[d] * (od[d] - 1);
            }
        }
    });
    return out;
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
    require(!x.empty(), "permute: empty tensor");
    require(perm.size() == x.ndim(), "permute: rank mismatch");
    std::vector<bool> seen(perm.size(), false);
    for (const std::size_t p : perm) {
        require(p < perm.size() && !seen[p], "permute: invalid permutation");
        seen[p] = true;
    }
    Tensor out = permute_raw(x, perm);
    std::vector<std::size_t> inv(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
    OpCtx ctx = ctx_for({&x});
    finish(out, "permute", ctx, [inv](const Tensor& g) {
        return std::vector<Tensor>{permute_raw(g, inv)};
    });
    return out;
}

Tensor transpose(const Tensor& x) {
    require(x.ndim() == 2, "transpose: expects a 2-d tensor, got " + dims_to_string(x.dims()));
    return permute(x, {1, 0});
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    require(!parts.empty(), "concat: no inputs");
    const Tensor& first = parts.front();
    require(!first.empty(), "concat: empty tensor");
    require(axis < first.ndim(), "concat: axis out of range");
    std::size_t axis_total = 0;
    for (const Tensor& p : parts) {
        require(p.ndim() == first.ndim() && p.dtype() == first.dtype(),
                "concat: rank/dtype mismatch");
        for (std::size_t d = 0; d < first.ndim(); ++d)
            require(d == axis || p.dim(d) == first.dim(d),
                    "concat: dims disagree off the concat axis");
        axis_total += p.dim(axis);
    }
    std::vector<std::size_t> od = first.dims();
    od[axis] = axis_total;
    Tensor out(od, first.dtype());

    const AxisSplit s = split_axis(out, axis, "concat");
    std::size_t written = 0;
    std::vector<std::size_t> part_lens;
    for (const Tensor& p : parts) {
        const std::size_t plen = p.dim(axis);
        part_lens.push_back(plen);
        for (std::size_t o = 0; o < s.outer; ++o)
            copy_values(p, out, o * plen * s.inner, (o * s.len + written) * s.inner,
                        plen * s.inner);
        written += plen;
    }

    OpCtx ctx;
    ctx.tp = Tape::active();
    if (ctx.tp)
        for (const Tensor& p : parts) ctx.input(p);
    finish(out, "concat", ctx, [part_lens, s, axis](const Tensor& g) {
        std::vector<Tensor> gs;
        gs.reserve(part_lens.size());
        std::size_t off = 0;
        for (const std::size_t plen : part_lens) {
            std::vector<std::size_t> pdims = g.dims();
            pdims[axis] = plen;
            Tensor slab(pdims, g.dtype());
            for (std::size_t o = 0; o < s.outer; ++o)
                copy_values(g, slab, (o * s.len + off) * s.inner, o * plen * s.inner,
                            plen * s.inner);
            gs.push_back(std::move(slab));
            off += plen;
        }
        return gs;
    });
    return out;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len) {
    require(!x.empty(), "slice: empty tensor");
    const AxisSplit s = split_axis(x, axis, "slice");
    require(len > 0 && start + len <= s.len, "slice: range [" + std::to_string(start) + "," +
                                                 std::to_string(start + len) + ") exceeds axis of " +
                                                 std::to_string(s.len));
    std::vector<std::size_t> od = x.dims();
    od[axis] = len;
    Tensor out(od, x.dtype());
    for (std::size_t o = 0; o < s.outer; ++o)
        copy_values(x, out, (o * s.len + start) * s.inner, o * len * s.inner, len * s.inner);
    std::vector<std::size_t> xd = x.dims();
    OpCtx ctx = ctx_for({&x});
    finish(out, "slice", ctx, [xd, s, start, len](const Tensor& g) {
        Tensor gx(xd, g.dtype());
        for (std::size_t o = 0; o < s.outer; ++o)
            copy_values(g, gx, o * len * s.inner, (o * s.len + start) * s.inner, len * s.inner);
        return std::vector<Tensor>{std::move(gx)};
    });
    return out;
}

Tensor tile_leading(const Tensor& x, std::size_t n) {
    require(!x.empty() && n > 0, "tile_leading: empty tensor or zero count");
    std::vector<std::size_t> od;
    od.push_back(n);
    for (const std::size_t d : x.dims()) od.push_back(d);
    Tensor out(od, x.dtype());
    const std::size_t m = x.size();
    for (std::size_t r = 0; r < n; ++r) copy_values(x, out, 0, r * m, m);
    std::vector<std::size_t> xd = x.dims();
    OpCtx ctx = ctx_for({&x});
    finish(out, "tile_leading", ctx, [xd, n, m](const Tensor& g) {
        Tensor gx(xd, g.dtype());
        dispatch(g.dtype(), [&](auto tag) {
            using T = typename decltype(tag)::type;
            const T* pg = g.data<T>().data();
            T* px = gx.data<T>().data();
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t i = 0; i < m; ++i) px[i] += pg[r * m + i];
        });
        return std::vector<Tensor>{std::move(gx)};
    });
    return out;
}

// ----------------------------------------------------------- activations

Tensor softmax(const Tensor& x, std::size_t axis) {
    require(!x.empty(), "softmax: empty tensor");
    const AxisSplit s = split_axis(x, axis, "softmax");
    Tensor out(x.dims(), x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        const T* px = x.data<T>().data();
        T* pc = out.data<T>().data();
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t in = 0; in < s.inner; ++in) {
                const std::size_t base = o * s.len * s.inner + in;
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < s.len; ++j)
                    mx = std::max(mx, static_cast<double>(px[base + j * s.inner]));
                double total = 0.0;
                for (std::size_t j = 0; j < s.len; ++j) {
                    const double e = std::exp(static_cast<double>(px[base + j * s.inner]) - mx);
                    pc[base + j * s.inner] = static_cast<T>(e);
                    total += e;
                }
                const double inv = 1.0 / total;
                for (std::size_t j = 0; j < s.len; ++j)
                    pc[base + j * s.inner] = static_cast<T>(static_cast<double>(pc[base + j * s.inner]) * inv);
            }
        }
    });
    Tensor saved = out;
    saved.clear_node();
    OpCtx ctx = ctx_for({&x});
    finish(out, "softmax", ctx, [saved, s](const Tensor& g) {
        Tensor gx(g.dims(), g.dtype());
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t in = 0; in < s.inner; ++in) {
                const std::size_t base = o * s.len * s.inner + in;
                double dot = 0.0;
                for (std::size_t j = 0; j < s.len; ++j) {
                    const std::size_t k = base + j * s.inner;
                    dot += g.at(k) * saved.at(k);
                }
                for (std::size_t j = 0; j < s.len; ++j) {
                    const std::size_t k = base + j * s.inner;
                    gx.set(k, saved.at(k) * (g.at(k) - dot));
                }
            }
        }
        return std::vector<Tensor>{std::move(gx)};
    });
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require(!x.empty(), "layer_norm: empty tensor");
    const std::size_t w = x.dim(x.ndim() - 1);
    require(gamma.ndim() == 1 && gamma.dim(0) == w && beta.ndim() == 1 && beta.dim(0) == w,
            "layer_norm: gamma/beta must be [" + std::to_string(w) + "]");
    require(x.dtype() == gamma.dtype() && x.dtype() == beta.dtype(), "layer_norm: dtype mismatch");
    const std::size_t rows = x.size() / w;

    Tensor out(x.dims(), x.dtype());
    Tensor xhat(x.dims(), x.dtype());
    std::vector<double> inv_std(rows);
    dispatch(x.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        const T* px = x.data<T>().data();
        const T* pg = gamma.data<T>().data();
        const T* pb = beta.data<T>().data();
        T* po = out.data<T>().data();
        T* ph = xhat.data<T>().data();
        for (std::size_t r = 0; r < rows; ++r) {
            double mean = 0.0;
            for (std::size_t j = 0; j < w; ++j) mean += px[r * w + j];
            mean /= static_cast<double>(w);
            double var = 0.0;
            for (std::size_t j = 0; j < w; ++j) {
                const double d = px[r * w + j] - mean;
                var += d * d;
            }
            var /= static_cast<double>(w);
            const double inv = 1.0 / std::sqrt(var + eps);
            inv_std[r] = inv;
            for (std::size_t j = 0; j < w; ++j) {
                const double xn = (px[r * w + j] - mean) * inv;
                ph[r * w + j] = static_cast<T>(xn);
                po[r * w + j] = static_cast<T>(pg[j] * xn + pb[j]);
            }
        }
    });

    OpCtx ctx = ctx_for({&x, &gamma, &beta});
    const bool nx = ctx.parents.size() == 3 && ctx.parents[0] >= 0;
    const bool ng = ctx.parents.size() == 3 && ctx.parents[1] >= 0;
    const bool nb = ctx.parents.size() == 3 && ctx.parents[2] >= 0;
    Tensor gamma_s = gamma;
    gamma_s.clear_node();
    Tensor xhat_s = xhat;
    finish(out, "layer_norm", ctx, [=](const Tensor& g) {
        std::vector<Tensor> gs(3);
        dispatch(g.dtype(), [&](auto tag) {
            using T = typename decltype(tag)::type;
            const T* pg = g.data<T>().data();
            const T* ph = xhat_s.data<T>().data();
            const T* pgam = gamma_s.data<T>().data();
            if (ng) {
                Tensor gg({w}, g.dtype());
                T* p = gg.data<T>().data();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < w; ++j) p[j] += pg[r * w + j] * ph[r * w + j];
                gs[1] = std::move(gg);
            }
            if (nb) {
                Tensor gb({w}, g.dtype());
                T* p = gb.data<T>().data();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < w; ++j) p[j] += pg[r * w + j];
                gs[2] = std::move(gb);
            }
            if (nx) {
                Tensor gx(g.dims(), g.dtype());
                T* p = gx.data<T>().data();
                for (std::size_t r = 0; r < rows; ++r) {
                    double mean_gy = 0.0, mean_gyx = 0.0;
                    for (std::size_t j = 0; j < w; ++j) {
                        const double gy = static_cast<double>(pg[r * w + j]) * pgam[j];
                        mean_gy += gy;
                        mean_gyx += gy * ph[r * w + j];
                    }
                    mean_gy /= static_cast<double>(w);
                    mean_gyx /= static_cast<double>(w);
                    for (std::size_t j = 0; j < w; ++j) {
                        const double gy = static_cast<double>(pg[r * w + j]) * pgam[j];
                        p[r * w + j] = static_cast<T>(
                            inv_std[r] * (gy - mean_gy - ph[r * w + j] * mean_gyx));
                    }
                }
                gs[0] = std::move(gx);
            }
        });
        return gs;
    });
    return out;
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475;
constexpr double kInvSqrt2Pi = 0.3989422804014327;
}  // namespace

Tensor gelu(const Tensor& x) {
    require(!x.empty(), "gelu: empty tensor");
    Tensor out(x.dims(), x.dtype());
    const std::size_t n = x.size();
    dispatch(x.dtype(), [&](auto tag) {
        using T = typename decltype(tag)::type;
        const T* px = x.data<T>().data();
        T* po = out.data<T>().data();
        for (std::size_t i = 0; i < n; ++i) {
            const double v = px[i];
            po[i] = static_cast<T>(v * 0.5 * (1.0 + std::erf(v * kInvSqrt2)));
        }
    });
    Tensor xs = x;
    xs.clear_node();
    OpCtx ctx = ctx_for({&x});
    finish(out, "gelu", ctx, [xs, n](const Tensor& g) {
        Tensor gx(g.dims(), g.dtype());
        dispatch(g.dtype(), [&](auto tag) {
            using T = typename decltype(tag)::type;
            const T* px = xs.data<T>().data();
            const T* pg = g.data<T>().data();
            T* po = gx.data<T>().data();
            for (std::size_t i = 0; i < n; ++i) {
                const double v = px[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                po[i] = static_cast<T>(pg[i] * (cdf + v * pdf));
            }
        });
        return std::vector<Tensor>{std::move(gx)};
    });
    return out;
}

Tensor sum_all(const Tensor& x) {
    require(!x.empty(), "sum: empty tensor");
    double total = 0.0;
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) total += x.at(i);
    Tensor out = Tensor::scalar(total, x.dtype());
    std::vector<std::size_t> xd = x.dims();
    OpCtx ctx = ctx_for({&x});
    finish(out, "sum", ctx, [xd](const Tensor& g) {
        return std::vector<Tensor>{Tensor::full(xd, g.at(0), g.dtype())};
    });
    return out;
}

Tensor cross_entropy_smoothed(const Tensor& logits, const std::vector<int>& targets,
                              double smoothing) {
    require(logits.ndim() == 2, "cross_entropy: logits must be [B,C], got " +
                                    dims_to_string(logits.dims()));
    const std::size_t B = logits.dim(0);
    const std::size_t C = logits.dim(1);
    require(targets.size() == B, "cross_entropy: target count mismatch");
    require(smoothing >= 0.0 && smoothing < 1.0, "cross_entropy: smoothing must be in [0,1)");
    require(C >= 2 || smoothing == 0.0, "cross_entropy: smoothing needs at least 2 classes");
    for (const int t : targets)
        require(t >= 0 && static_cast<std::size_t>(t) < C,
                "cross_entropy: class index " + std::to_string(t) + " out of range [0," +
                    std::to_string(C) + ")");

    const double off = C > 1 ? smoothing / static_cast<double>(C - 1) : 0.0;
    const double on = 1.0 - smoothing;

    // softmax probabilities saved for the gradient
    Tensor probs(logits.dims(), logits.dtype());
    double loss = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, logits.at(b * C + c));
        double total = 0.0;
        for (std::size_t c = 0; c < C; ++c) total += std::exp(logits.at(b * C + c) - mx);
        const double lse = mx + std::log(total);
        double row = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            const double logp = logits.at(b * C + c) - lse;
            probs.set(b * C + c, std::exp(logp));
            const double q = c == static_cast<std::size_t>(targets[b]) ? on : off;
            row -= q * logp;
        }
        loss += row;
    }
    loss /= static_cast<double>(B);

    Tensor out = Tensor::scalar(loss, logits.dtype());
    std::vector<int> ts = targets;
    OpCtx ctx = ctx_for({&logits});
    finish(out, "cross_entropy", ctx, [probs, ts, B, C, on, off](const Tensor& g) {
        Tensor gx(probs.dims(), probs.dtype());
        const double gs = g.at(0) / static_cast<double>(B);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c) {
                const double q = c == static_cast<std::size_t>(ts[b]) ? on : off;
                gx.set(b * C + c, gs * (probs.at(b * C + c) - q));
            }
        return std::vector<Tensor>{std::move(gx)};
    });
    return out;
}

std::size_t argmax(const Tensor& x) {
    require(!x.empty(), "argmax: empty tensor");
    std::size_t best = 0;
    double bv = x.at(0);
    const std::size_t n = x.size();
    for (std::size_t i = 1; i < n; ++i) {
        if (x.at(i) > bv) {
            bv = x.at(i);
            best = i;
        }
    }
    return best;
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
    require(!x.empty(), "finite_diff_grad: empty tensor");
    Tensor probe = x;
    probe.clear_node();
    probe.set_requires_grad(false);
    Tensor grad(x.dims(), x.dtype());
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double orig = probe.at(i);
        probe.set(i, orig + h);
        const double fp = f(probe);
        probe.set(i, orig - h);
        const double fm = f(probe);
        probe.set(i, orig);
        grad.set(i, (fp - fm) / (2.0 * h));
    }
    return grad;
}

}  // namespace mmvt
