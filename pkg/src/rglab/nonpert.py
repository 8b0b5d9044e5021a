"""Exact block recursion for the hierarchical model on functions of a constant field.

A block function F_j(φ) depends on the constant value φ ∈ R^n of the field on
a j-block and is O(n)-invariant, so it is stored as ln F_j(r) on a grid in
r = |φ|.  One step reads

    F_{j+1}(φ) = E Π_{b=1}^{B} F_j(φ + ζ_b),   B = L^d,

with ζ a zero-sum Gaussian vector of per-site variance σ^2 = γ_{j+1} L^{-dj}
and covariance σ^2 (δ_{bb'} - 1/B).  After N steps the last covariance
m^{-2} L^{-dN} gives Z_N̂, from which the susceptibility and the truncated
four-point coupling follow.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import interpolate, linalg, special

from .hierarchical import HierGeometry, gamma_j, hier_laplacian_entry, moments
from .params import ModelParams

GRID_NODES = 513
HERMITE_ORDER = 80
TAIL_TOL = 1e-8


def _hermite(order):
    """Gauss-Hermite nodes x and log weights for E f(Z), Z ~ N(0, 1/2) scaled to N(0,1) by √2 x."""
    x, w = special.roots_hermite(order)
    return x, np.log(w) - 0.5 * math.log(math.pi)


@dataclass
class RadialFunction:
    """ln F(r) on nodes 0 = r_0 < ... < r_M, spline in r^2, quartic tail beyond r_M.

    ``tail`` holds (a, b, c) with -ln F ≈ a + b r^2 + c r^4 for r > r_M.
    ``se`` carries per-node relative standard errors for Monte Carlo output.
    """

    j: int
    n: int
    grid: np.ndarray
    logf: np.ndarray
    tail: tuple = None
    se: np.ndarray = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.logf = np.asarray(self.logf, dtype=float)
        if self.grid[0] != 0 or np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must start at 0 and increase strictly")
        if not np.all(np.isfinite(self.logf)):
            raise ValueError("ln F must be finite at every node")
        v = self.grid ** 2
        self._spline = interpolate.CubicSpline(v, self.logf)
        if self.tail is None:
            A = np.column_stack([np.ones(5), v[-5:], v[-5:] ** 2])
            self.tail = tuple(np.linalg.lstsq(A, -self.logf[-5:], rcond=None)[0])

    @classmethod
    def from_potential(cls, j, n, grid, u=0.0, nu=0.0, g=0.0, volume=1.0):
        """F = exp(-volume (g r^4/4 + ν r^2/2 + u))."""
        r = np.asarray(grid, dtype=float)
        logf = -volume * (g * r ** 4 / 4 + nu * r ** 2 / 2 + u)
        return cls(j, n, r, logf, tail=(volume * u, volume * nu / 2, volume * g / 4))

    @property
    def R(self):
        return float(self.grid[-1])

    def log_value(self, r):
        r = np.abs(np.asarray(r, dtype=float))
        v = r * r
        a, b, c = self.tail
        inside = r <= self.R
        out = np.empty_like(v)
        out[inside] = self._spline(v[inside])
        out[~inside] = -(a + b * v[~inside] + c * v[~inside] ** 2)
        return out

    def __call__(self, r):
        return np.exp(self.log_value(r))

    def taylor(self, degree=12, frac=0.25):
        """Coefficients a_k of -ln F(r) = Σ_k a_k r^{2k} from an even least-squares fit near 0."""
        rfit = frac * self.R
        m = self.grid <= rfit
        if m.sum() < degree + 4:
            raise ValueError("grid too coarse near 0 for the Taylor fit")
        v = (self.grid[m] / rfit) ** 2
        V = np.vander(v, degree + 1, increasing=True)
        coef, *_ = np.linalg.lstsq(V, -self.logf[m], rcond=None)
        cond = np.linalg.cond(V)
        if cond > 1e12:
            raise ValueError(f"Taylor fit ill-conditioned (cond {cond:.2e})")
        return coef / rfit ** (2 * np.arange(degree + 1))


@dataclass(frozen=True)
class ZeroSumGaussian:
    """Exchangeable Gaussian vector (ζ_1..ζ_B) with covariance σ^2 (δ_{bb'} - 1/B)."""

    B: int
    sigma2: float

    @property
    def c(self):
        return self.sigma2 * (1 - 1 / self.B)

    def sample(self, rng, size, n=1):
        xi = rng.standard_normal((size, self.B, n)) * math.sqrt(self.sigma2)
        return xi - xi.mean(axis=1, keepdims=True)

    def basis(self):
        """Orthonormal basis (B × (B-1)) of the zero-sum subspace."""
        q, _ = np.linalg.qr(np.eye(self.B) - 1.0 / self.B)
        return q[:, : self.B - 1]


def step_gaussian(j, params):
    """Zero-sum fluctuation law of the step j -> j+1."""
    L, d = params.L, params.d
    s2 = float(gamma_j(j + 1, params.m2, L)) * float(L) ** (-d * j)
    return ZeroSumGaussian(L ** d, s2)


def grid_for(j, params, g_est=None, nodes=GRID_NODES, nu_est=None):
    """Nodes on [0, R_j], R_j = 12 max(ℓ_j, min(h_j, s_j)).

    ℓ_j = L^{-j(d-2)/2} (1 + m2 L^{2j})^{-1/2} is the fluctuation scale including the mass.
    h_j is the width on which the block potential confines the field: (L^{dj} g)^{-1/4},
    capped by the Gaussian width (L^{dj} ν)^{-1/2} when ν > 0.  s_j = (m2 L^{dj})^{-1/2}
    bounds the standard deviation of the block field under all remaining covariances,
    so a nearly flat F is never tabulated far beyond where it is probed.
    """
    d, L = params.d, params.L
    g = params.g0 if g_est is None else g_est
    ell = float(L) ** (-j * (d - 2) / 2) / math.sqrt(1 + params.m2 * float(L) ** (2 * j))
    vol = float(L) ** (d * j)
    nu = params.nu0 + params.m2 if nu_est is None else nu_est
    scales = [(vol * g) ** -0.25] if g > 0 else []
    if nu > 0:
        scales.append((vol * nu) ** -0.5)
    if params.m2 > 0:
        scales.append((vol * params.m2) ** -0.5)
    h = min(scales) if scales else ell
    return np.linspace(0.0, 12 * max(ell, h), nodes)


def initial_function(params, nodes=GRID_NODES):
    """F_0 = exp(-(g_0 r^4/4 + ν_0 r^2/2))."""
    return RadialFunction.from_potential(0, params.n, grid_for(0, params, nodes=nodes),
                                         nu=params.nu0, g=params.g0)


def _next_grid(F, params, nodes):
    try:
        _, nu, g = extract_couplings(F, F.j, params)
    except ValueError:
        nu, g = params.nu0, params.g0
    return grid_for(F.j + 1, params, max(g, 0.0), nodes, nu_est=nu)


def _quad_log_step(F, r, law, order):
    """ln E Π_b F(r + ζ_b) by tensor Gauss-Hermite over the zero-sum subspace (n = 1)."""
    x, lw = _hermite(order)
    k = law.B - 1
    if k == 1:
        pts = x[:, None]
        lws = lw
    else:
        mesh = np.meshgrid(*([x] * k), indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        lws = sum(np.meshgrid(*([lw] * k), indexing="ij")).ravel()
    zeta = math.sqrt(2 * law.sigma2) * pts @ law.basis().T  # (P, B)
    out = np.empty(len(r))
    tail_frac = np.zeros(len(r))
    for i, ri in enumerate(r):
        arg = ri + zeta
        terms = lws + F.log_value(arg).sum(axis=1)
        out[i] = special.logsumexp(terms)
        outside = np.any(np.abs(arg) > F.R, axis=1)
        if outside.any():
            tail_frac[i] = math.exp(special.logsumexp(terms[outside]) - out[i])
    return out, tail_frac


def rg_step_quadrature(F, j, params, order=HERMITE_ORDER, nodes=GRID_NODES, gate=True):
    """F_{j+1} by Gauss-Hermite quadrature (n = 1; B = L^d ≤ 4, tensor over B-1 dims).

    With ``gate`` the step is repeated at twice the order and the largest
    change in ln F over the inner half of the grid is stored in
    ``info["gate"]``; a warning is issued above 1e-9.
    """
    if params.n != 1:
        raise ValueError("the quadrature engine handles n = 1 only")
    law = step_gaussian(j, params)
    if law.B > 4:
        raise ValueError("the quadrature engine handles B = L^d ≤ 4; use rg_step_mc")
    if law.B > 2 and order == HERMITE_ORDER:
        order = 24
    grid = _next_grid(F, params, nodes)
    logf, tail_frac = _quad_log_step(F, grid, law, order)
    inner = grid <= 0.5 * grid[-1]
    info = {"order": order, "tail_fraction": float(tail_frac[inner].max())}
    if info["tail_fraction"] > TAIL_TOL:
        warnings.warn(f"tail model carries {info['tail_fraction']:.1e} of the step integral", RuntimeWarning)
    if gate:
        fine, _ = _quad_log_step(F, grid[inner], law, 2 * order)
        info["gate"] = float(np.max(np.abs(fine - logf[inner])))
        if info["gate"] > 1e-9:
            warnings.warn(f"Gauss-Hermite order doubling changed ln F by {info['gate']:.1e}", RuntimeWarning)
    return RadialFunction(j + 1, 1, grid, logf, info=info)


def rg_step_mc(F, j, params, seed, samples=20000, nodes=GRID_NODES, envelope=3.0):
    """F_{j+1} by Monte Carlo with antithetic zero-sum samples (any n, L, d).

    Node k uses the stream seeded by (seed, j, k).  ``se`` holds relative
    standard errors; nodes with r ≤ envelope·√c_j and relative s.e. above
    1e-3 are listed in ``info["flagged"]``.
    """
    law = step_gaussian(j, params)
    n = params.n
    grid = _next_grid(F, params, nodes)
    half = max(samples // 2, 1)
    logf = np.empty(len(grid))
    se = np.empty(len(grid))
    for k, r in enumerate(grid):
        rng = np.random.default_rng([int(seed), int(j), k])
        z = law.sample(rng, half, n)
        phi = np.zeros(n)
        phi[0] = r
        lp = F.log_value(np.linalg.norm(phi + z, axis=2)).sum(axis=1)
        lm = F.log_value(np.linalg.norm(phi - z, axis=2)).sum(axis=1)
        top = max(lp.max(), lm.max())
        pair = 0.5 * (np.exp(lp - top) + np.exp(lm - top))
        mean = pair.mean()
        logf[k] = top + math.log(mean)
        se[k] = pair.std(ddof=1) / math.sqrt(half) / mean if half > 1 else math.inf
    inner = grid <= envelope * math.sqrt(law.c)
    flagged = [int(k) for k in np.nonzero(inner & (se > 1e-3))[0]]
    return RadialFunction(j + 1, n, grid, logf, se=se, info={"flagged": flagged, "samples": 2 * half})


def progressive_flow(params, engine="quadrature", seed=0, samples=20000, order=HERMITE_ORDER,
                     nodes=GRID_NODES, gate=False):
    """[F_0, ..., F_N] for the model in ``params``."""
    F = initial_function(params, nodes)
    out = [F]
    for j in range(params.N):
        if engine == "quadrature":
            F = rg_step_quadrature(F, j, params, order=order, nodes=nodes, gate=gate)
        elif engine == "mc":
            F = rg_step_mc(F, j, params, seed, samples, nodes)
        else:
            raise ValueError(f"unknown engine {engine!r}")
        out.append(F)
    return out


def extract_couplings(F, j, params):
    """Per-site (u_j, ν_j, g_j) from the Taylor expansion of -ln F_j at 0."""
    a = F.taylor()
    vol = float(params.L) ** (params.d * j)
    return a[0] / vol, 2 * a[1] / vol, 4 * a[2] / vol


def _final_moments(F, m2, params, panels=400, per_panel=16):
    """ln Z, Z''/Z and Z''''/Z of Z_N̂(s) = E F_N(s e_1 + ζ), ζ ~ N(0, v I_n), v = 1/(m2 L^{dN}).

    The derivatives are Gaussian expectations of F(ζ) against Hermite
    polynomials of ζ_1/√v.  By O(n) invariance they reduce to radial
    integrals, done by composite Gauss-Legendre in r = |ζ|.
    """
    if m2 <= 0:
        raise ValueError("the last covariance needs m2 > 0")
    v = 1.0 / (m2 * float(params.L) ** (params.d * params.N))
    n = F.n
    rmax = 1.5 * max(F.R, 12 * math.sqrt(v))
    x, w = np.polynomial.legendre.leggauss(per_panel)
    edges = np.linspace(0, rmax, panels + 1)
    h = 0.5 * np.diff(edges)
    r = (h[:, None] * x + (edges[:-1] + h)[:, None]).ravel()
    lt = np.log(np.outer(h, w).ravel()) + F.log_value(r) + (n - 1) * np.log(r) - r * r / (2 * v)
    top = lt.max()
    wt = np.exp(lt - top)
    Z = wt.sum()
    y2 = r * r / v
    # sphere averages: <ζ_1^2> = r^2/n, <ζ_1^4> = 3 r^4/(n(n+2))
    m2y = y2 / n
    m4y = 3 * y2 * y2 / (n * (n + 2))
    r2 = float(wt @ (m2y - 1)) / Z / v
    r4 = float(wt @ (m4y - 6 * m2y + 3)) / Z / v ** 2
    return top + math.log(Z), r2, r4


def chi_finite_volume(traj, m2, params):
    """χ_N = 1/m2 + (m2^2 |Λ|)^{-1} Z_N̂''(0)/Z_N̂(0)."""
    F = traj[-1] if isinstance(traj, (list, tuple)) else traj
    _, r2, _ = _final_moments(F, m2, params)
    vol = float(params.L) ** (params.d * params.N)
    return 1 / m2 + r2 / (m2 ** 2 * vol)


def u4bar(F_N, m2, params, convolve=True):
    """(ū_4, g̃_ren) with ū_4 = (m2^4 |Λ|)^{-1} (Z''''/Z - 3 (Z''/Z)^2) and g̃_ren = -m2^4 ū_4 / 6.

    With ``convolve=False`` the function is taken to be Z_N̂ itself and its
    derivatives at 0 come from the Taylor fit of its logarithm.
    """
    vol = float(params.L) ** (params.d * params.N)
    if convolve:
        _, r2, r4 = _final_moments(F_N, m2, params)
        k4 = r4 - 3 * r2 * r2
    else:
        a = F_N.taylor()
        # ln Z = -Σ a_k s^{2k}: the fourth derivative of ln Z at 0 is -24 a_2
        k4 = -24 * a[2]
    u4 = k4 / (m2 ** 4 * vol)
    return u4, -m2 ** 4 * u4 / 6


@dataclass
class OracleChi:
    direct: float
    progressive: float

    @property
    def rel_diff(self):
        return abs(self.direct - self.progressive) / abs(self.direct)


def _hier_precision(params):
    """-Δ_H + m2 on the box as a dense matrix."""
    geom = HierGeometry(params.d, params.L, params.N)
    V = geom.volume
    S = [tuple(x) for x in geom.sites()]
    lap = np.array([[float(hier_laplacian_entry(x, y, geom)) for y in S] for x in S])
    return -lap + params.m2 * np.eye(V)


def _direct_moments(params, order, ref):
    """Second-moment matrix of the field by tensor Gauss-Hermite against the reference N(0, ref)."""
    A = _hier_precision(params)
    V = len(A)
    S = linalg.sqrtm(ref).real
    D = A - np.linalg.inv(ref)
    x, lw = _hermite(order)
    rest = np.stack([m.ravel() for m in np.meshgrid(*([x] * (V - 1)), indexing="ij")], axis=1)
    lrest = sum(np.meshgrid(*([lw] * (V - 1)), indexing="ij")).ravel()
    parts = []
    # loop over the first coordinate to bound memory
    for x0, l0 in zip(x, lw):
        z = math.sqrt(2) * np.column_stack([np.full(len(rest), x0), rest])
        phi = z @ S.T
        expo = (l0 + lrest - 0.5 * np.einsum("ij,jk,ik->i", phi, D, phi)
                - np.sum(params.g0 * phi ** 4 / 4 + params.nu0 * phi ** 2 / 2, axis=1))
        parts.append((expo, phi))
    top = max(e.max() for e, _ in parts)
    Z = 0.0
    M = np.zeros((V, V))
    for e, phi in parts:
        w = np.exp(e - top)
        Z += w.sum()
        M += (phi * w[:, None]).T @ phi
    return M / Z


def direct_chi(params, order=60, pilot=24):
    """χ_N = |Λ|^{-1} Σ_{xy} <φ_x φ_y> by tensor Gauss-Hermite over all sites.

    A pilot run against N(0, (-Δ_H + m2)^{-1}) supplies the second-moment
    matrix, which then serves as the reference Gaussian so that the Hermite
    rule integrates a ratio of order one.
    """
    if params.volume > 4:
        raise ValueError("direct integration refuses volumes above 4 sites")
    C = np.linalg.inv(_hier_precision(params))
    M = _direct_moments(params, pilot, C)
    M = _direct_moments(params, order, 0.5 * (M + M.T))
    return float(M.sum()) / len(M)


def oracle_chi(params, order=60, flow_order=HERMITE_ORDER):
    """χ_N on at most 4 sites by direct tensor quadrature and by the block recursion."""
    if params.n != 1:
        raise ValueError("the oracle handles n = 1")
    if params.volume > 4:
        raise ValueError("the oracle refuses volumes above 4 sites")
    if params.m2 <= 0:
        raise ValueError("the oracle needs m2 > 0")
    direct = direct_chi(params, order)
    traj = progressive_flow(params, order=flow_order)
    return OracleChi(float(direct), float(chi_finite_volume(traj, params.m2, params)))


def gaussian_chi(params):
    """Σ_x (-Δ_H + ν)^{-1}_{0x} with ν = ν_0 + m2 by a dense solve."""
    A = _hier_precision(params) + params.nu0 * np.eye(params.volume)
    return float(np.linalg.solve(A, np.ones(params.volume))[0])


def step_defects(params, steps=10, order=HERMITE_ORDER, nodes=GRID_NODES):
    """g_{j+1} - (g_j - β'_j g_j^2) for the extracted couplings along a quadrature flow."""
    p = params.with_(N=steps)
    F = initial_function(p, nodes)
    out = []
    for j in range(steps):
        _, _, g = extract_couplings(F, j, p)
        F = rg_step_quadrature(F, j, p, order=order, nodes=nodes, gate=False)
        _, _, g_next = extract_couplings(F, j + 1, p)
        mt = moments(j, p.m2, p.d, p.L)
        beta_p = (p.n + 8) * mt.c2
        out.append(g_next - (g - beta_p * g * g))
    return np.array(out)
