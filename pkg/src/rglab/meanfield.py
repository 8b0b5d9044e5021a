"""Mean-field O(n) model: renormalised potential, magnetisation and susceptibility.

Spins live on the unit sphere S^{n-1} with normalised uniform measure and the
external field h points along the first axis.  The renormalised potential is

    V(φ) = β|φ|^2/2 + β/2 - log ∫ exp((βφ + h)·σ) μ(dσ)

and its critical points solve φ = G(φ) with G the mean spin in the tilted
single-site measure.  The critical inverse temperature is β_c = n.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, special

SPHERE_NODES = 256


@dataclass(frozen=True)
class MeanFieldState:
    n: int
    beta: float
    h: float = 0.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("n must be a positive integer")
        if not self.beta > 0:
            raise ValueError("beta must be positive")

    @property
    def beta_c(self):
        return float(self.n)


def _polar_rule(n, nodes=SPHERE_NODES):
    """Gauss-Legendre rule in the polar angle with log weights sin^{n-2}θ, normalised."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    theta = 0.5 * math.pi * (x + 1)
    logw = np.log(w) + (n - 2) * np.log(np.sin(theta))
    logw -= special.logsumexp(logw)
    return np.cos(theta), logw


def _log_partition(a, n, nodes=SPHERE_NODES):
    """log ∫ exp(a σ_1) μ(dσ) for a ≥ 0 by polar quadrature (n ≥ 2) or the two-point sum."""
    a = np.asarray(a, dtype=float)
    if n == 1:
        return np.logaddexp(a, -a) - math.log(2)
    c, logw = _polar_rule(n, nodes)
    return special.logsumexp(a[..., None] * c + logw, axis=-1)


def _cos_moments(a, n, nodes=SPHERE_NODES):
    """Mean and variance of σ_1 in the measure ∝ exp(a σ_1) μ(dσ)."""
    a = float(a)
    if n == 1:
        t = math.tanh(a)
        return t, 1 - t * t
    if abs(a) < 1e-4:
        # cumulant series log Z = a^2/(2n) - a^4/(4 n^2 (n+2)); quadrature cancels badly here
        k = n * n * (n + 2)
        return a / n - a ** 3 / k, 1 / n - 3 * a * a / k
    c, logw = _polar_rule(n, nodes)
    lw = a * c + logw
    p = np.exp(lw - special.logsumexp(lw))
    m1 = float(p @ c)
    return m1, float(p @ (c * c)) - m1 * m1


def _field_vector(phi, n):
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    if phi.shape[-1] == 1 and n > 1:
        out = np.zeros(phi.shape[:-1] + (n,))
        out[..., 0] = phi[..., 0]
        return out
    if phi.shape[-1] != n:
        raise ValueError(f"field must have {n} components")
    return phi


def renorm_potential(phi, state, quadrature=False):
    """Renormalised potential V(φ).

    n = 1 uses βφ^2/2 - log cosh(βφ + h), normalised so that V(0) = 0 at h = 0;
    n = 3 uses the closed form with the sinh kernel; other n (or
    ``quadrature=True``) evaluate the defining sphere integral.  A scalar φ is
    placed along the field axis.
    """
    n, beta, h = state.n, state.beta, state.h
    if n == 1 and not quadrature:
        phi = float(np.squeeze(phi))
        z = beta * phi + h
        return beta * phi * phi / 2 - (abs(z) + math.log1p(math.exp(-2 * abs(z))) - math.log(2))
    v = _field_vector(phi, n)
    z = beta * v
    z[..., 0] += h
    a = np.linalg.norm(z, axis=-1)
    quad = beta * np.sum(v * v, axis=-1) / 2 + beta / 2
    if n == 3 and not quadrature:
        # log(sinh a / a) computed stably
        with np.errstate(divide="ignore", invalid="ignore"):
            ls = np.where(a > 1e-4, a + np.log1p(-np.exp(-2 * a)) - math.log(2) - np.log(a),
                          a * a / 6)
        out = quad - ls
    else:
        out = quad - _log_partition(a, n)
    return float(out) if np.ndim(out) == 0 else out


def mean_spin(a, n):
    """Mean of σ_1 in the measure ∝ exp(a σ_1) μ(dσ); tanh a for n = 1."""
    if n == 1:
        return math.tanh(a)
    s = math.copysign(1.0, a)
    return s * _cos_moments(abs(a), n)[0]


def solve_magnetisation(state):
    """Global minimiser φ_0 of V along the field axis.

    Solves φ = G(βφ + h) by bracketing on [0, 1) and polishing with Newton.
    For h = 0 and β > β_c the positive root (the h↓0 limit) is returned.
    """
    n, beta, h = state.n, state.beta, state.h
    sign = -1.0 if h < 0 else 1.0
    ha = abs(h)

    def f(p):
        return p - mean_spin(beta * p + ha, n)

    if ha == 0 and beta <= n:
        return 0.0
    lo = 0.0
    if ha == 0:
        # f < 0 between the trivial root and φ_0 when β > n; search downward
        lo = 0.5
        while f(lo) >= 0:
            lo *= 0.5
            if lo < 1e-300:
                return 0.0
    hi = 1.0 - 1e-16
    if f(hi) < 0:
        return sign * 1.0
    p = optimize.brentq(f, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    # Newton polish
    for _ in range(3):
        m1, var = _cos_moments(beta * p + ha, n)
        fp = 1 - beta * var
        if fp == 0:
            break
        step = (p - m1) / fp
        if not np.isfinite(step) or abs(step) > 1e-6:
            break
        p -= step
    return sign * p


def fixed_point_residual(phi0, state):
    return abs(phi0 - mean_spin(state.beta * phi0 + state.h, state.n))


def _stiffness(a, beta, n):
    """1 - β Var(σ_1) at tilt a, written to avoid cancellation near criticality."""
    if n == 1:
        t = math.tanh(a)
        return (1 - beta) + beta * t * t
    if abs(a) < 1e-4:
        return (1 - beta / n) + 3 * beta * a * a / (n * n * (n + 2))
    return 1 - beta * _cos_moments(a, n)[1]


def susceptibility(state):
    """χ = dφ_0/dh = 1 / (-β + 1/G'), which is 1/(-β + (1 - φ_0^2)^{-1}) for n = 1."""
    phi0 = solve_magnetisation(state)
    a = state.beta * phi0 + state.h
    _, var = _cos_moments(a, state.n)
    k = _stiffness(abs(a), state.beta, state.n)
    return var / k if k != 0 else math.inf


def potential_hessian_min(phi, state):
    """Smallest Hessian eigenvalue of V at φ (a scalar φ lies on the field axis)."""
    n, beta, h = state.n, state.beta, state.h
    v = _field_vector(phi, n)
    z = beta * v
    z[0] += h
    a = float(np.linalg.norm(z))
    m1, var = _cos_moments(a, n)
    if n == 1:
        return beta - beta * beta * var
    tang = 1.0 / n if a < 1e-8 else m1 / a
    return beta - beta * beta * max(var, tang)


def laplace_ratio_demo(g, V, N_list, bounds=(-6.0, 6.0)):
    """∫ g e^{-NV} / ∫ e^{-NV} on a bounded interval for each N.

    ``V`` is a callable of one real variable or a :class:`MeanFieldState`
    with n = 1.  Returns (values, φ_0) where φ_0 is the minimiser of V.
    """
    if isinstance(V, MeanFieldState):
        state = V
        V = lambda p: renorm_potential(p, state)
    a, b = bounds
    xs = np.linspace(a, b, 2001)
    vs = np.array([V(x) for x in xs])
    k = int(np.argmin(vs))
    res = optimize.minimize_scalar(V, bracket=(xs[max(k - 1, 0)], xs[k], xs[min(k + 1, len(xs) - 1)]))
    phi0 = float(res.x) if xs[max(k - 1, 0)] < res.x < xs[min(k + 1, len(xs) - 1)] else float(xs[k])
    v0 = V(phi0)
    out = []
    for N in N_list:
        w = lambda x: math.exp(-N * (V(x) - v0))
        opts = dict(points=[phi0], limit=500, epsabs=0, epsrel=1e-12)
        num = integrate.quad(lambda x: g(x) * w(x), a, b, **opts)[0]
        den = integrate.quad(w, a, b, **opts)[0]
        out.append(num / den)
    return np.array(out), phi0
