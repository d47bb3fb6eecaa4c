#pragma once

#include <vector>

#include "flume/core.hpp"

namespace flume {

template <int D>
using IVec = std::array<int, D>;

// Dense cell/node field over a D-dimensional box of indices.
template <typename T, int D>
struct Grid {
    IVec<D> dims{};
    std::vector<T> data;

    Grid() = default;
    explicit Grid(const IVec<D>& n) { resize(n); }

    void resize(const IVec<D>& n) {
        dims = n;
        size_t total = 1;
        for (int a = 0; a < D; a++) total *= size_t(n[a]);
        data.assign(total, T{});
    }

    void fill(const T& v) { std::fill(data.begin(), data.end(), v); }

    size_t size() const { return data.size(); }

    size_t flat(const IVec<D>& c) const {
        size_t idx = 0;
        for (int a = 0; a < D; a++) idx = idx * size_t(dims[a]) + size_t(c[a]);
        return idx;
    }

    IVec<D> unflat(size_t idx) const {
        IVec<D> c{};
        for (int a = D - 1; a >= 0; a--) {
            c[a] = int(idx % size_t(dims[a]));
            idx /= size_t(dims[a]);
        }
        return c;
    }

    T& at(const IVec<D>& c) { return data[flat(c)]; }
    const T& at(const IVec<D>& c) const { return data[flat(c)]; }

    bool in_bounds(const IVec<D>& c) const {
        for (int a = 0; a < D; a++)
            if (c[a] < 0 || c[a] >= dims[a]) return false;
        return true;
    }

    template <typename F>
    void for_each(F&& f) const {
        IVec<D> c{};
        for (size_t i = 0; i < data.size(); i++) {
            f(unflat(i), data[i]);
        }
        (void)c;
    }
};

// Multilinear interpolation over samples located at (c + 0.5) * h, clamped to
// the sample hull. `interp_weights` exposes the stencil so callers can build
// the adjoint scatter and the spatial gradient.
template <int D>
struct InterpStencil {
    IVec<D> base{};           // lower corner sample
    Vec<D> frac;              // fractional position in [0, 1]^D
    std::array<bool, D> clamped{};  // axis was clamped at the hull

    static constexpr int corner_count() { return 1 << D; }

    IVec<D> corner(int k) const {
        IVec<D> c = base;
        for (int a = 0; a < D; a++) c[a] += (k >> a) & 1;
        return c;
    }

    Real weight(int k) const {
        Real w = 1;
        for (int a = 0; a < D; a++) {
            Real f = frac[a];
            w *= ((k >> a) & 1) ? f : (1 - f);
        }
        return w;
    }

    // d(weight_k)/d(position_axis) given sample spacing h.
    Real weight_grad(int k, int axis, Real h) const {
        if (clamped[axis]) return 0;
        Real g = 1;
        for (int a = 0; a < D; a++) {
            Real f = frac[a];
            if (a == axis) {
                g *= ((k >> a) & 1) ? Real(1) : Real(-1);
            } else {
                g *= ((k >> a) & 1) ? f : (1 - f);
            }
        }
        return g / h;
    }
};

template <int D>
inline InterpStencil<D> interp_stencil(const IVec<D>& dims, Real h, const Vec<D>& pos) {
    InterpStencil<D> st;
    for (int a = 0; a < D; a++) {
        Real x = pos[a] / h - 0.5;
        Real lo = 0, hi = Real(dims[a] - 1);
        bool cl = false;
        if (x <= lo) {
            x = lo;
            cl = true;
        } else if (x >= hi) {
            x = hi;
            cl = true;
        }
        int b = int(std::floor(x));
        if (b > dims[a] - 2) b = dims[a] - 2;
        if (b < 0) b = 0;
        st.base[a] = b;
        st.frac[a] = x - b;
        st.clamped[a] = cl;
    }
    return st;
}

template <int D>
inline Real interp(const Grid<Real, D>& g, Real h, const Vec<D>& pos) {
    InterpStencil<D> st = interp_stencil<D>(g.dims, h, pos);
    Real v = 0;
    for (int k = 0; k < InterpStencil<D>::corner_count(); k++)
        v += st.weight(k) * g.at(st.corner(k));
    return v;
}

template <int D>
inline Vec<D> interp(const Grid<Vec<D>, D>& g, Real h, const Vec<D>& pos) {
    InterpStencil<D> st = interp_stencil<D>(g.dims, h, pos);
    Vec<D> v;
    for (int k = 0; k < InterpStencil<D>::corner_count(); k++)
        v += g.at(st.corner(k)) * st.weight(k);
    return v;
}

// Spatial gradient of the interpolant (zero along clamped axes).
template <int D>
inline Vec<D> interp_grad(const Grid<Real, D>& g, Real h, const Vec<D>& pos) {
    InterpStencil<D> st = interp_stencil<D>(g.dims, h, pos);
    Vec<D> grad;
    for (int k = 0; k < InterpStencil<D>::corner_count(); k++) {
        Real gv = g.at(st.corner(k));
        for (int a = 0; a < D; a++) grad[a] += gv * st.weight_grad(k, a, h);
    }
    return grad;
}

}  // namespace flume
