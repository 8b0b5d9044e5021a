"""Finite-range decomposition of (-Δ + m2)^{-1} on Z^d and on the discrete torus.

The construction starts from an even profile f on R whose Fourier transform
f̂ is supported in [-1, 1] and which satisfies ∫_0^∞ u f(u) du = 1, so that
1/ζ = ∫_0^∞ t^2 P_t(ζ) dt/t with

    P_t(ζ) = (2π)^{-1} Σ_{|p| ≤ t} t^{-1} f̂(p/t) T_p(1 - ζ/2).

With M2 = 2d + m2 and ζ = (λ(k) + m2)/M2, the scale-j covariance is the
t-integral of w(t, x) over [0, L/2] (j = 1) or [L^{j-1}/2, L^j/2].  Because
the p-sum is finite, the t-integral is done exactly coefficient by
coefficient:

    C_j = (2π M2)^{-1} Σ_p α_{j,p} T_p(A) δ_0,   A = 1 - (-Δ + m2)/(2 M2),

with α_{j,0} = f̂(0)(b - a) and α_{j,p} = 2p (K(p/b) - K(min(1, p/a))) for
p ≥ 1, where K(s) = ∫_s^1 f̂(u)/u^2 du.  T_p(A)δ_0 is generated by the
Chebyshev recurrence, a discrete wave equation whose support grows by one
lattice step per iteration, which makes the finite range exact.
"""

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.polynomial import chebyshev as npcheb

# ---------------------------------------------------------------------------
# profile


def _bump(s, half_width):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    m = np.abs(s) < half_width
    out[m] = np.exp(-1.0 / (1.0 - (s[m] / half_width) ** 2))
    return out


def _bump_dd(s, half_width):
    """Second derivative of :func:`_bump`."""
    x = np.asarray(s, dtype=float) / half_width
    out = np.zeros_like(x)
    m = np.abs(x) < 1
    q = 1.0 / (1.0 - x[m] ** 2)
    out[m] = np.exp(-q) * ((2 * x[m] * q * q) ** 2 - 2 * q * q - 8 * x[m] ** 2 * q ** 3) / half_width ** 2
    return out


def _clenshaw(c, x):
    """Evaluate Chebyshev series with per-point coefficient rows c[i] at x[i]."""
    b1 = np.zeros_like(x)
    b2 = np.zeros_like(x)
    for k in range(c.shape[1] - 1, 0, -1):
        b1, b2 = 2 * x * b1 - b2 + c[:, k], b1
    return x * b1 - b2 + c[:, 0]


class _Panels:
    """Piecewise Chebyshev interpolant with exact panel integrals."""

    def __init__(self, fn, edges, deg):
        self.edges = np.asarray(edges, dtype=float)
        x = np.cos(np.pi * (np.arange(deg + 1) + 0.5) / (deg + 1))
        lo, hi = self.edges[:-1], self.edges[1:]
        pts = 0.5 * np.outer(hi - lo, x) + 0.5 * (hi + lo)[:, None]
        vals = np.asarray(fn(pts.ravel()), dtype=float).reshape(pts.shape)
        self.coefs = npcheb.chebfit(x, vals.T, deg).T
        self.icoefs = np.array([npcheb.chebint(c, lbnd=-1) for c in self.coefs])
        self.half = 0.5 * (hi - lo)
        self.panel_int = self.half * _clenshaw(self.icoefs, np.ones(len(lo)))
        # integral from the right end of panel i to the right end of the domain
        self.above = np.concatenate([np.cumsum(self.panel_int[::-1])[::-1][1:], [0.0]])
        self.below = np.concatenate([[0.0], np.cumsum(self.panel_int)[:-1]])

    def _local(self, u):
        u = np.asarray(u, dtype=float)
        i = np.clip(np.searchsorted(self.edges, u, side="right") - 1, 0, len(self.edges) - 2)
        x = (2 * u - self.edges[i] - self.edges[i + 1]) / (self.edges[i + 1] - self.edges[i])
        return i, x

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        i, x = self._local(u.ravel())
        return _clenshaw(self.coefs[i], x).reshape(u.shape)

    def integral_from_start(self, u):
        """∫_{start}^u of the interpolant."""
        u = np.asarray(u, dtype=float)
        i, x = self._local(u.ravel())
        return (self.below[i] + self.half[i] * _clenshaw(self.icoefs[i], x)).reshape(u.shape)

    def integral_to_end(self, u):
        """∫_u^{end} of the interpolant (u inside the domain)."""
        u = np.asarray(u, dtype=float)
        i, x = self._local(u.ravel())
        part = self.panel_int[i] - self.half[i] * _clenshaw(self.icoefs[i], x)
        return (part + self.above[i]).reshape(u.shape)


class BumpProfile:
    """Even profile with f̂ supported in [-1, 1] and ∫_0^∞ u f(u) du = 1.

    ``kind="selfconv"`` (default) takes f̂ ∝ g * g with the bump
    g(s) = exp(-1/(1 - 4 s^2)) on (-1/2, 1/2); then f ∝ ĝ^2 ≥ 0, so P_t ≥ 0.
    ``kind="bump"`` takes f̂ ∝ exp(-1/(1 - s^2)) directly; its f changes
    sign and the profile fails :meth:`validate`.
    """

    U_MAX = 2500.0

    def __init__(self, kind="selfconv"):
        if kind not in ("selfconv", "bump"):
            raise ValueError(f"unknown profile kind {kind!r}")
        self.kind = kind
        self._gx, self._gw = np.polynomial.legendre.leggauss(400)
        edges = np.concatenate([np.linspace(0, 0.8, 9), [0.85, 0.9, 0.94, 0.97, 0.985, 0.995, 1.0]])
        raw = _Panels(self._fhat_raw_unnormalised, edges, 40)
        f0 = float(self._fhat_raw_unnormalised(np.array([0.0]))[0])
        self._f0 = f0
        # h(u) = (f̂(u) - f̂(0))/u^2 = ∫_0^1 (1 - τ) f̂''(uτ) dτ avoids cancellation near 0
        self._split = 0.2
        tx, tw = np.polynomial.legendre.leggauss(40)
        tau, tw = 0.5 * (tx + 1), 0.5 * tw * (1 - 0.5 * (tx + 1))

        def h(u):
            u = np.asarray(u, dtype=float)
            out = np.empty_like(u)
            small = u < self._split
            if np.any(small):
                out[small] = [tw @ self._fhat2_raw(ui * tau) for ui in u[small]]
            big = ~small
            if np.any(big):
                out[big] = (raw(u[big]) - f0) / u[big] ** 2
            return out

        hedges = np.concatenate([[0.0, 0.1], edges[edges >= self._split]])
        self._hraw = _Panels(h, hedges, 40)
        H0 = float(self._hraw.integral_to_end(0.0))
        self.scale = math.pi / (f0 - H0)
        self._raw = raw

    # f̂ -----------------------------------------------------------------
    def _fhat_raw_unnormalised(self, s):
        s = np.abs(np.asarray(s, dtype=float))
        if self.kind == "bump":
            return _bump(s, 1.0)
        out = np.zeros_like(s)
        for k, si in enumerate(np.ravel(s)):
            lo, hi = max(-0.5, si - 0.5), min(0.5, si + 0.5)
            if hi <= lo:
                continue
            r = 0.5 * (hi - lo) * self._gx + 0.5 * (hi + lo)
            out.flat[k] = 0.5 * (hi - lo) * np.sum(self._gw * _bump(r, 0.5) * _bump(si - r, 0.5))
        return out

    def _fhat2_raw(self, s):
        """Second derivative of the unnormalised f̂."""
        s = np.abs(np.asarray(s, dtype=float))
        if self.kind == "bump":
            return _bump_dd(s, 1.0)
        out = np.zeros_like(s)
        for k, si in enumerate(np.ravel(s)):
            lo, hi = max(-0.5, si - 0.5), min(0.5, si + 0.5)
            if hi <= lo:
                continue
            r = 0.5 * (hi - lo) * self._gx + 0.5 * (hi + lo)
            out.flat[k] = 0.5 * (hi - lo) * np.sum(self._gw * _bump(r, 0.5) * _bump_dd(si - r, 0.5))
        return out

    def fhat_direct(self, s):
        """f̂ by direct quadrature (slow; used as a reference)."""
        return self.scale * self._fhat_raw_unnormalised(s)

    def fhat(self, s):
        s = np.abs(np.asarray(s, dtype=float))
        out = np.zeros_like(s)
        m = s < 1
        if np.any(m):
            out[m] = self.scale * self._raw(s[m])
        return out

    @property
    def fhat0(self):
        return self.scale * self._f0

    def K(self, s):
        """K(s) = ∫_s^1 f̂(u)/u^2 du for s > 0 (zero for s ≥ 1)."""
        s = np.asarray(s, dtype=float)
        if np.any(s <= 0):
            raise ValueError("K needs s > 0")
        out = np.zeros_like(s)
        m = s < 1
        H = self._hraw.integral_to_end(s[m])
        out[m] = self.scale * (H + self._f0 * (1 / s[m] - 1))
        return out

    # real-space f ------------------------------------------------------
    @cached_property
    def _cos_rule(self):
        x, w = np.polynomial.legendre.leggauss(3000)
        if self.kind == "selfconv":
            s = 0.25 * (x + 1)
            return s, 0.25 * w * _bump(s, 0.5)
        s = 0.5 * (x + 1)
        return s, 0.5 * w * self.fhat(s)

    def f(self, u):
        """Real-space profile f(u) = (2π)^{-1} ∫ f̂(ξ) e^{iξu} dξ."""
        u = np.atleast_1d(np.abs(np.asarray(u, dtype=float)))
        s, w = self._cos_rule
        out = np.empty(u.shape)
        for a in range(0, u.size, 4096):
            uu = u.flat[a:a + 4096]
            out.flat[a:a + 4096] = np.cos(np.outer(uu, s)) @ w
        if self.kind == "selfconv":
            # f = scale (2π)^{-1} G^2 with G(u) = 2 ∫_0^{1/2} g(s) cos(su) ds
            return self.scale * (2 * out) ** 2 / (2 * math.pi)
        return out / math.pi

    @cached_property
    def _uf_panels(self):
        edges = np.linspace(0, self.U_MAX, int(self.U_MAX / 4) + 1)
        return _Panels(lambda u: u * self.f(u), edges, 32)

    def tail(self, U):
        """∫_U^∞ u f(u) du (the region beyond U_MAX is negligible)."""
        U = np.asarray(U, dtype=float)
        out = np.zeros_like(U)
        m = U < self.U_MAX
        if np.any(m):
            out[m] = self._uf_panels.integral_to_end(U[m])
        return out

    @cached_property
    def _even_moments(self):
        """(2π)^{-1} ∫ s^{2k} f̂(s) ds for k = 0..4, the Taylor data of f at 0."""
        x, w = np.polynomial.legendre.leggauss(200)
        s = 0.5 * (x + 1)
        fh = self.fhat(s)
        return np.array([np.sum(w * s ** (2 * k) * fh) / (2 * math.pi) for k in range(5)])

    def F1(self, U):
        """∫_0^U u f(u) du."""
        U = np.asarray(U, dtype=float)
        out = np.full(U.shape, float(self._uf_panels.integral_to_end(0.0)))
        m = U < self.U_MAX
        if np.any(m):
            out[m] = self._uf_panels.integral_from_start(U[m])
        small = U < 0.02
        if np.any(small):
            # Taylor series avoids cancellation in the panel integral
            x = U[small]
            k = np.arange(5)
            c = (-1.0) ** k * self._even_moments / np.array([math.factorial(2 * i) for i in k]) / (2 * k + 2)
            out[small] = np.sum(c * x[:, None] ** (2 * k + 2), axis=1)
        return out

    def validate(self, t_grid=None, zeta_grid=None, tol=1e-10):
        """Check P_t(ζ) ≥ -tol on a sampled grid; raise if the profile fails."""
        if t_grid is None:
            t_grid = np.concatenate([np.linspace(0.5, 10, 39), [15, 25, 40, 64]])
        if zeta_grid is None:
            zeta_grid = np.linspace(0, 4, 81)
        worst = min(float(np.min(p_t(t, zeta_grid, self))) for t in t_grid)
        if worst < -tol:
            raise ValueError(f"profile gives negative P_t (min {worst:.3e})")
        return worst


_DEFAULT = None


def default_profile():
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = BumpProfile()
    return _DEFAULT


# ---------------------------------------------------------------------------
# symbols and P_t


def lattice_symbol(k):
    """λ(k) = 4 Σ sin^2(k_j / 2)."""
    k = np.asarray(k, dtype=float)
    return 4 * np.sum(np.sin(k / 2) ** 2, axis=-1)


def _angle(zeta):
    """θ in [0, π] with 1 - ζ/2 = cos θ, i.e. ζ = 4 sin^2(θ/2) (accurate for small ζ)."""
    zeta = np.clip(np.asarray(zeta, dtype=float), 0, 4)
    return 2 * np.arcsin(np.minimum(1.0, np.sqrt(zeta) / 2))


def p_t(t, zeta, profile=None):
    """P_t(ζ) as the finite Chebyshev sum over |p| ≤ t."""
    profile = profile or default_profile()
    if t <= 0:
        raise ValueError("t must be positive")
    zeta = np.asarray(zeta, dtype=float)
    pmax = int(math.floor(t))
    p = np.arange(pmax + 1)
    coef = profile.fhat(p / t) / t
    coef[1:] *= 2
    T = np.cos(np.multiply.outer(_angle(zeta), p))
    return (T @ coef) / (2 * math.pi)


def p_t_poisson(t, zeta, profile=None, nmax=40):
    """P_t(ζ) = Σ_n f(t(θ - 2πn)) with θ = arccos(1 - ζ/2) (cross-check)."""
    profile = profile or default_profile()
    th = _angle(zeta)
    n = np.arange(-nmax, nmax + 1)
    return np.sum(profile.f(t * np.abs(np.add.outer(th, -2 * np.pi * n))).reshape(np.shape(th) + (len(n),)),
                  axis=-1)


def _scale_range(j, L):
    if j < 1:
        raise ValueError("scales start at j = 1")
    a = 0.0 if j == 1 else 0.5 * L ** (j - 1)
    return a, 0.5 * L ** j


def chebyshev_coefficients(a, b, profile=None):
    """α_p for p = 0..⌊b⌋ so that ∫_a^b t P_t(ζ) dt = (2π)^{-1} Σ_p α_p T_p(1 - ζ/2)."""
    profile = profile or default_profile()
    pmax = int(math.floor(b))
    alpha = np.zeros(pmax + 1)
    alpha[0] = profile.fhat0 * (b - a)
    if pmax >= 1:
        p = np.arange(1, pmax + 1, dtype=float)
        upper = np.minimum(1.0, p / a) if a > 0 else np.ones_like(p)
        Kb = profile.K(p / b)
        Ka = np.where(upper < 1, profile.K(np.minimum(upper, 1 - 1e-300)), 0.0)
        alpha[1:] = 2 * p * (Kb - Ka)
    return alpha


def symbol_scale(j, k, d, L, m2, profile=None, method="closed"):
    """Fourier symbol Ĉ_j(k) (k of shape (..., d)).

    ``closed`` uses the real-space profile: Ĉ_j = M2^{-1} Σ_n θ_n^{-2}
    [F1(b|θ_n|) - F1(a|θ_n|)] with θ_n = θ - 2πn, θ = arccos(1 - ζ/2).
    ``chebyshev`` sums α_p T_p(1 - ζ/2) directly (cost grows like L^j).
    ``j`` may be ("tail", J) for Σ_{i≥J} Ĉ_i.
    """
    profile = profile or default_profile()
    k = np.asarray(k, dtype=float)
    single = k.ndim == 1
    k = np.atleast_2d(k)
    M2 = 2 * d + m2
    zeta = (lattice_symbol(k) + m2) / M2
    if isinstance(j, tuple):
        a, b = _scale_range(j[1], L)[0], math.inf
        if j[1] == 1:
            a = 0.0
    else:
        a, b = _scale_range(j, L)
    if method == "chebyshev":
        if b == math.inf:
            raise ValueError("tail symbol needs the closed method")
        alpha = chebyshev_coefficients(a, b, profile)
        th = _angle(zeta)
        T = np.cos(np.multiply.outer(th, np.arange(len(alpha))))
        out = (T @ alpha) / (2 * math.pi * M2)
    else:
        th = _angle(zeta)
        if b == math.inf and np.any(th == 0):
            raise ValueError("the scale tail diverges at zero mass and zero momentum")
        out = _closed_sum(th, a, b, profile) / M2
    return float(out[0]) if single else out


def _closed_sum(theta, a, b, profile):
    """Σ_n θ_n^{-2} ∫_{a|θ_n|}^{b|θ_n|} u f(u) du for an array of θ in [0, π]."""
    U = profile.U_MAX
    theta = np.asarray(theta, dtype=float)
    safe = np.where(theta > 0, theta, 1.0)
    # n = 0; the θ → 0 limit is f(0)(b^2 - a^2)/2
    if b < math.inf and a * np.max(theta, initial=0) < 50:
        lead = (profile.F1(b * theta) - profile.F1(a * theta)) / safe ** 2
    else:
        hi = profile.tail(b * theta) if b < math.inf else 0.0
        lead = (profile.tail(a * theta) - hi) / safe ** 2
    if b < math.inf:
        lead = np.where(theta > 0, lead, float(profile.f(0.0)[0]) * (b * b - a * a) / 2)
    # n ≠ 0
    edge = b if a == 0 else a
    nmax = int(math.ceil((U / edge + math.pi) / (2 * math.pi))) + 1
    n = np.arange(1, nmax + 1) * 2 * math.pi
    tn = np.abs(np.concatenate([theta[:, None] - n, theta[:, None] + n], axis=1))
    if a == 0:
        # Σ θ_n^{-2} (1 - tail(b|θ_n|)) with Σ_{n≠0} θ_n^{-2} = 1/(4 sin^2(θ/2)) - θ^{-2}
        small = theta < 1e-3
        full = np.where(small, 1 / 12 + theta ** 2 / 240,
                        1 / (4 * np.sin(safe / 2) ** 2) - 1 / safe ** 2)
        return lead + full - np.sum(profile.tail(b * tn) / tn ** 2, axis=1)
    hi = profile.tail(b * tn) if b < math.inf else 0.0
    return lead + np.sum((profile.tail(a * tn) - hi) / tn ** 2, axis=1)


# ---------------------------------------------------------------------------
# real-space kernels by the Chebyshev recurrence


def _octant_apply(u, d, M2):
    """A u on the nonnegative octant of a reflection-symmetric field, A = 1/2 + Σ_nbrs/(2 M2)."""
    s = np.zeros_like(u)
    for ax in range(d):
        up = np.zeros_like(u)
        dn = np.zeros_like(u)
        sl = [slice(None)] * d
        # neighbour at x + e
        src = list(sl)
        dst = list(sl)
        src[ax] = slice(1, None)
        dst[ax] = slice(0, -1)
        up[tuple(dst)] = u[tuple(src)]
        # neighbour at x - e, reflecting at 0
        src[ax] = slice(0, -1)
        dst[ax] = slice(1, None)
        dn[tuple(dst)] = u[tuple(src)]
        src[ax] = slice(1, 2)
        dst[ax] = slice(0, 1)
        dn[tuple(dst)] = u[tuple(src)]
        s += up + dn
    return 0.5 * u + s / (2 * M2)


def _torus_apply(u, d, M2):
    s = np.zeros_like(u)
    for ax in range(d):
        s += np.roll(u, 1, axis=ax) + np.roll(u, -1, axis=ax)
    return 0.5 * u + s / (2 * M2)


def chebyshev_kernel(alpha, d, m2, torus_side=None):
    """(2π M2)^{-1} Σ_p α_p (T_p(A) δ_0)(x) on the octant x ≥ 0 of Z^d or on a torus."""
    M2 = 2 * d + m2
    P = len(alpha) - 1
    if torus_side is None:
        R = P + 2
        shape = (R,) * d
        apply = lambda v: _octant_apply(v, d, M2)
    else:
        shape = (int(torus_side),) * d
        apply = lambda v: _torus_apply(v, d, M2)
    prev = np.zeros(shape)
    prev[(0,) * d] = 1.0
    out = alpha[0] * prev
    if P >= 1:
        cur = apply(prev)
        out = out + alpha[1] * cur
        for p in range(2, P + 1):
            prev, cur = cur, 2 * apply(cur) - prev
            out = out + alpha[p] * cur
    return out / (2 * math.pi * M2)


def w_kernel(t, x, m2, profile=None, d=None):
    """w(t, x) = (2π)^{-d} ∫ (t^2/M2) P_t(ζ(k)) e^{ik·x} dk, evaluated exactly.

    The k-integral of the Chebyshev sum is the lattice kernel of T_p(A),
    generated by the recurrence; it vanishes identically for |x|_1 > t.
    """
    profile = profile or default_profile()
    x = np.atleast_1d(np.abs(np.asarray(x, dtype=int)))
    d = len(x) if d is None else d
    if t <= 0:
        raise ValueError("t must be positive")
    if np.sum(x) > t:
        return 0.0
    P = int(math.floor(t))
    p = np.arange(P + 1)
    alpha = profile.fhat(p / t) * t  # t^2 · t^{-1} f̂(p/t)
    alpha[1:] *= 2
    ker = chebyshev_kernel(alpha, d, m2)
    return float(ker[tuple(x)])


def w_kernel_quadrature(t, x, m2, profile=None, nodes=10000):
    """Reference w(t, x) for d = 1 by an n-point midpoint rule in k."""
    profile = profile or default_profile()
    k = -np.pi + 2 * np.pi * (np.arange(nodes) + 0.5) / nodes
    M2 = 2 + m2
    vals = t * t / M2 * p_t(t, (lattice_symbol(k[:, None]) + m2) / M2, profile)
    return float(np.mean(vals * np.cos(k * x)))


@dataclass
class FrdSlice:
    j: int
    d: int
    L: int
    m2: float
    octant: np.ndarray = field(repr=False)
    profile: BumpProfile = field(repr=False, default=None)

    @property
    def range_bound(self):
        return 0.5 * self.L ** self.j

    def kernel(self, x):
        """C_{j;0x}; zero (by construction) for |x|_1 ≥ L^j/2."""
        x = np.abs(np.atleast_1d(np.asarray(x, dtype=int)))
        if np.sum(x) >= self.range_bound or np.any(x >= self.octant.shape[0]):
            return 0.0
        return float(self.octant[tuple(x)])

    def full(self):
        """Kernel on the box [-R, R]^d by reflection."""
        a = self.octant
        for ax in range(self.d):
            rev = np.flip(np.take(a, np.arange(1, a.shape[ax]), axis=ax), axis=ax)
            a = np.concatenate([rev, a], axis=ax)
        return a

    def symbol(self, k, method="closed"):
        return symbol_scale(self.j, k, self.d, self.L, self.m2, self.profile, method=method)

    def max_outside_range(self):
        """Largest |C_{j;0x}| over tabulated x with |x|_1 ≥ L^j/2."""
        idx = np.indices(self.octant.shape).sum(axis=0)
        m = idx >= self.range_bound
        return float(np.max(np.abs(self.octant[m]))) if m.any() else 0.0


def frd_slice(j, d, L, m2, profile=None):
    """Scale-j covariance C_j on Z^d, tabulated on the octant."""
    profile = profile or default_profile()
    if d < 1 or L < 2:
        raise ValueError("need d >= 1 and L >= 2")
    if m2 < 0:
        raise ValueError("m2 must be nonnegative")
    a, b = _scale_range(j, L)
    alpha = chebyshev_coefficients(a, b, profile)
    return FrdSlice(j, d, L, m2, chebyshev_kernel(alpha, d, m2), profile)


def c0_part(d, m2, profile=None):
    """∫_0^1 w(t, 0) dt/t = f̂(0) / (2π (2d + m2))."""
    profile = profile or default_profile()
    return profile.fhat0 / (2 * math.pi * (2 * d + m2))


def torus_slice(j, N, d, L, m2, profile=None):
    """Torus kernel C_{N,j;0x} on the torus of side L^N.

    For j < N the Chebyshev recurrence runs on the torus, which yields the
    periodised Z^d kernel Σ_z C_{j;0,x+zL^N}.  For j = N the kernel collects
    all scales j ≥ N and is obtained from the tail symbol by inverse DFT over
    the torus momenta.
    """
    profile = profile or default_profile()
    side = L ** N
    if j < N:
        a, b = _scale_range(j, L)
        return chebyshev_kernel(chebyshev_coefficients(a, b, profile), d, m2, torus_side=side)
    if j != N:
        raise ValueError("torus scales run over 1..N")
    if m2 <= 0:
        raise ValueError("torus tail needs positive mass")
    ks = 2 * np.pi * np.arange(side) / side
    grid = np.stack(np.meshgrid(*([ks] * d), indexing="ij"), axis=-1).reshape(-1, d)
    sym = symbol_scale(("tail", N), grid, d, L, m2, profile).reshape((side,) * d)
    return np.real(np.fft.ifftn(sym))


def torus_matrix(kernel):
    """Dense covariance matrix of a translation-invariant torus kernel (d = 1 or 2)."""
    shape = kernel.shape
    d = len(shape)
    pts = np.array(np.unravel_index(np.arange(kernel.size), shape)).T
    diff = (pts[None, :, :] - pts[:, None, :]) % np.array(shape)
    return kernel[tuple(diff[..., i] for i in range(d))]


def frd_vartheta(t, m2, d, s):
    """ϑ(t, m2; s) = (2d + m2)^{-1} (1 + m2 t^2/(2d + m2))^{-s}."""
    M2 = 2 * d + m2
    return (1 + m2 * t * t / M2) ** (-s) / M2


def scaling_check(sl, alpha=(), s=0.0):
    """max_x |∇^α C_{j;0x}| L^{(d-2+|α|_1)(j-1)} / ϑ_{j-1}(m2; s).

    ``alpha`` is a sequence of signed unit directions, +i / -i for ±e_i
    (1-based axis numbers).
    """
    arr = sl.octant if not alpha else sl.full()
    for e in alpha:
        ax = abs(int(e)) - 1
        if not 0 <= ax < sl.d:
            raise ValueError("direction out of range")
        pad = [(1, 1) if i == ax else (0, 0) for i in range(sl.d)]
        a = np.pad(arr, pad)
        arr = np.roll(a, -1 if e > 0 else 1, axis=ax) - a
    na = len(alpha)
    th = frd_vartheta(sl.L ** (sl.j - 1), sl.m2, sl.d, s)
    return float(np.max(np.abs(arr))) * float(sl.L) ** ((sl.d - 2 + na) * (sl.j - 1)) / th
