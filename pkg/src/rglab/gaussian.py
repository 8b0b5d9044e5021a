"""Gaussian measures on finite index sets and the Wick calculus of polynomials.

Polynomials are sparse maps from exponent tuples to coefficients.  When all
inputs are ``int``/``Fraction`` every operation stays in exact rational
arithmetic, so identities such as the semigroup property are tested exactly.
"""

import math
from fractions import Fraction
from itertools import product

import numpy as np


def _zero(c):
    return c == 0


class Polynomial:
    """Multivariate polynomial in ``nvars`` real variables.

    Variable k usually stands for a field component phi_{x,i} with
    k = x * n + i (see :func:`var_index`).
    """

    __slots__ = ("nvars", "terms")

    def __init__(self, nvars, terms=None):
        self.nvars = int(nvars)
        self.terms = {}
        for mono, c in (terms or {}).items():
            mono = tuple(int(e) for e in mono)
            if len(mono) != self.nvars:
                raise ValueError("exponent tuple has wrong length")
            if not _zero(c):
                self.terms[mono] = self.terms.get(mono, 0) + c
        self.terms = {m: c for m, c in self.terms.items() if not _zero(c)}

    @classmethod
    def constant(cls, nvars, c):
        return cls(nvars, {(0,) * nvars: c})

    @classmethod
    def variable(cls, nvars, k, coeff=1):
        e = [0] * nvars
        e[k] = 1
        return cls(nvars, {tuple(e): coeff})

    @classmethod
    def monomial(cls, nvars, powers, coeff=1):
        """``powers`` maps variable index to exponent."""
        e = [0] * nvars
        for k, p in powers.items():
            e[k] += p
        return cls(nvars, {tuple(e): coeff})

    def copy(self):
        return Polynomial(self.nvars, dict(self.terms))

    @property
    def degree(self):
        return max((sum(m) for m in self.terms), default=0)

    def is_zero(self):
        return not self.terms

    def constant_term(self):
        return self.terms.get((0,) * self.nvars, 0)

    def _check(self, other):
        if isinstance(other, Polynomial):
            if other.nvars != self.nvars:
                raise ValueError("polynomials over different variable sets")
            return other
        return Polynomial.constant(self.nvars, other)

    def __add__(self, other):
        other = self._check(other)
        out = dict(self.terms)
        for m, c in other.terms.items():
            out[m] = out.get(m, 0) + c
        return Polynomial(self.nvars, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.nvars, {m: -c for m, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._check(other))

    def __rsub__(self, other):
        return self._check(other) - self

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            return Polynomial(self.nvars, {m: c * other for m, c in self.terms.items()})
        other = self._check(other)
        out = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                m = tuple(a + b for a, b in zip(m1, m2))
                out[m] = out.get(m, 0) + c1 * c2
        return Polynomial(self.nvars, out)

    __rmul__ = __mul__

    def __pow__(self, k):
        out = Polynomial.constant(self.nvars, 1)
        for _ in range(k):
            out = out * self
        return out

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            other = Polynomial.constant(self.nvars, other)
        return self.nvars == other.nvars and self.terms == other.terms

    def __repr__(self):
        return f"Polynomial({self.nvars}, {self.terms})"

    def diff(self, k):
        out = {}
        for m, c in self.terms.items():
            if m[k]:
                e = list(m)
                e[k] -= 1
                out[tuple(e)] = out.get(tuple(e), 0) + c * m[k]
        return Polynomial(self.nvars, out)

    def __call__(self, x):
        """Evaluate at a point, or at an array of points of shape (..., nvars)."""
        x = np.asarray(x, dtype=float) if not isinstance(x, (list, tuple)) else x
        if isinstance(x, np.ndarray) and x.ndim > 1:
            out = np.zeros(x.shape[:-1])
            for m, c in self.terms.items():
                t = np.full(x.shape[:-1], float(c))
                for k, e in enumerate(m):
                    if e:
                        t = t * x[..., k] ** e
                out += t
            return out
        total = 0
        for m, c in self.terms.items():
            t = c
            for k, e in enumerate(m):
                if e:
                    t = t * x[k] ** e
            total += t
        return total

    def max_abs_diff(self, other):
        diff = self - other
        return max((abs(c) for c in diff.terms.values()), default=0)


def var_index(x, i=0, n=1):
    """Flat variable index of component i at site x for an n-component field."""
    return x * n + i


def tau_poly(nvars, sites, n):
    """tau_x = |phi_x|^2 / 2 summed into one polynomial per site; returns a list."""
    out = []
    for x in sites:
        p = Polynomial(nvars)
        for i in range(n):
            k = var_index(x, i, n)
            p = p + Polynomial.monomial(nvars, {k: 2}, Fraction(1, 2))
        out.append(p)
    return out


class Covariance:
    """Symmetric positive semi-definite covariance matrix.

    ``matrix`` may hold Fractions (object dtype) for exact calculus; the
    eigendecomposition is always computed in binary64 and cached.
    """

    def __init__(self, matrix, tol=1e-12):
        exact = isinstance(matrix, np.ndarray) and matrix.dtype == object
        if not exact and not isinstance(matrix, np.ndarray):
            flat = [c for row in matrix for c in row]
            exact = all(isinstance(c, (int, Fraction)) for c in flat)
            matrix = np.array(matrix, dtype=object if exact else float)
        self.exact = exact
        self.matrix = matrix
        M = matrix.shape[0]
        if matrix.shape != (M, M):
            raise ValueError("covariance must be square")
        Cf = np.array(matrix, dtype=float)
        if not np.allclose(Cf, Cf.T, atol=1e-14, rtol=0):
            raise ValueError("covariance must be symmetric")
        if exact and any(matrix[i, j] != matrix[j, i] for i in range(M) for j in range(M)):
            raise ValueError("covariance must be symmetric")
        self.M = M
        evals, evecs = np.linalg.eigh(Cf) if M else (np.zeros(0), np.zeros((0, 0)))
        scale = max(float(np.max(np.abs(np.diag(Cf)))) if M else 0.0, 1e-300)
        self.tol = tol * scale
        if M and evals.min() < -self.tol:
            raise ValueError(f"covariance not positive semi-definite (eigenvalue {evals.min():.3e})")
        self.kernel_dim = int(np.sum(evals < self.tol))
        self.evals = np.where(evals < self.tol, 0.0, evals)
        self.evecs = evecs

    def __getitem__(self, idx):
        return self.matrix[idx]

    def __add__(self, other):
        return Covariance(self.matrix + other.matrix)

    def as_float(self):
        return np.array(self.matrix, dtype=float)


def laplacian_c(A, C):
    """Δ_C A = sum_{xy} C_{xy} ∂_x ∂_y A."""
    out = Polynomial(A.nvars)
    derivs = [A.diff(x) for x in range(A.nvars)]
    for x in range(A.nvars):
        if derivs[x].is_zero():
            continue
        for y in range(A.nvars):
            c = C[x, y]
            if c != 0:
                out = out + derivs[x].diff(y) * c
    return out


def _exp_half_laplacian(A, C, sign):
    _check_dims(A, C)
    half = Fraction(1, 2) if C.exact else 0.5
    out = A.copy()
    term = A
    k = 0
    while True:
        k += 1
        term = laplacian_c(term, C) * (sign * half / k)
        if term.is_zero():
            return out
        out = out + term


def _check_dims(A, C):
    if A.nvars != C.M:
        raise ValueError(f"polynomial has {A.nvars} variables, covariance is {C.M}x{C.M}")


def heat_convolve(A, C):
    """E_C θA = e^{Δ_C/2} A as a polynomial in the background field."""
    return _exp_half_laplacian(A, C, 1)


def wick_order(A, C):
    """Wick ordering :A:_C = e^{-Δ_C/2} A."""
    return _exp_half_laplacian(A, C, -1)


def wick_expect(A, C):
    """Exact Gaussian expectation of the polynomial A."""
    return heat_convolve(A, C).constant_term()


def f_c_pairing(A, B, C):
    """F_C(A, B) = sum_{n>=1} (1/n!) sum C_{x1y1}...C_{xnyn} ∂^n_x A ∂^n_y B."""
    _check_dims(A, C)
    _check_dims(B, C)
    out = Polynomial(A.nvars)
    pairs = [(A, B)]
    n = 0
    fact = 1
    while pairs:
        n += 1
        fact *= n
        nxt = []
        for a, b in pairs:
            for x in range(A.nvars):
                da = a.diff(x)
                if da.is_zero():
                    continue
                mixed = Polynomial(A.nvars)
                for y in range(A.nvars):
                    c = C[x, y]
                    if c != 0:
                        mixed = mixed + b.diff(y) * c
                if mixed.is_zero():
                    continue
                nxt.append((da, mixed))
        pairs = nxt
        level = Polynomial(A.nvars)
        for a, b in pairs:
            level = level + a * b
        if C.exact:
            out = out + level * Fraction(1, fact)
        else:
            out = out + level * (1.0 / fact)
    return out


def integration_by_parts_check(F, C, x):
    """|E(F φ_x) - sum_y C_{xy} E(∂F/∂φ_y)|, which vanishes identically."""
    lhs = wick_expect(F * Polynomial.variable(F.nvars, x), C)
    rhs = 0
    for y in range(F.nvars):
        c = C[x, y]
        if c != 0:
            rhs = rhs + c * wick_expect(F.diff(y), C)
    return abs(lhs - rhs)


def sample(C, seed, count):
    """Draw ``count`` samples of the centred Gaussian with covariance C.

    Uses the eigendecomposition, so kernel directions carry zero variance
    (degenerate Gaussians are supported).
    """
    if not isinstance(C, Covariance):
        C = Covariance(np.asarray(C, dtype=float))
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((count, C.M))
    return (z * np.sqrt(C.evals)) @ C.evecs.T


# ---------------------------------------------------------------------------
# cumulants

PARTITION_CAP = 8


def set_partitions(items):
    """All set partitions of ``items`` via restricted-growth strings."""
    items = list(items)
    k = len(items)
    if k > PARTITION_CAP:
        raise ValueError("partition enumeration cap")
    if k == 0:
        yield []
        return
    a = [0] * k

    def emit():
        blocks = [[] for _ in range(max(a) + 1)]
        for it, b in zip(items, a):
            blocks[b].append(it)
        return [tuple(b) for b in blocks]

    def rec(i, mx):
        if i == k:
            yield emit()
            return
        for b in range(mx + 2):
            a[i] = b
            yield from rec(i + 1, max(mx, b))

    a[0] = 0
    yield from rec(1, 0)


def _subsets(k):
    for r in range(1, k + 1):
        for mask in range(1 << k):
            if bin(mask).count("1") == r:
                yield tuple(i for i in range(k) if mask >> i & 1)


def cumulants_from_moments(moments):
    """Joint cumulants κ_I from joint moments μ_I.

    ``moments`` maps sorted index tuples I ⊆ {0..k-1} to E[prod_{i∈I} X_i].
    Uses the Möbius inversion κ_I = sum_π (-1)^{|π|-1} (|π|-1)! prod_B μ_B.
    """
    k = 1 + max(max(I) for I in moments)
    if k > PARTITION_CAP:
        raise ValueError("partition enumeration cap")
    out = {}
    for I in _subsets(k):
        if I not in moments:
            continue
        total = 0
        for pi in set_partitions(I):
            r = len(pi)
            t = (-1) ** (r - 1) * math.factorial(r - 1)
            for B in pi:
                t = t * moments[B]
            total = total + t
        out[I] = total
    return out


def moments_from_cumulants(cumulants):
    """Joint moments μ_I = sum_π prod_{J∈π} κ_J."""
    k = 1 + max(max(I) for I in cumulants)
    if k > PARTITION_CAP:
        raise ValueError("partition enumeration cap")
    out = {}
    for I in _subsets(k):
        if I not in cumulants:
            continue
        total = 0
        for pi in set_partitions(I):
            t = 1
            for B in pi:
                t = t * cumulants[B]
            total = total + t
        out[I] = total
    return out


def univariate_moment_table(raw, k):
    """Expand raw moments m_r = E[X^r] (list, raw[0] = 1) into the joint table of k copies of X."""
    return {I: raw[len(I)] for I in _subsets(k)}


def gaussian_moment_table(C):
    """Joint moment table of the Gaussian vector with covariance C (all subsets)."""
    C = C if isinstance(C, Covariance) else Covariance(C)
    table = {}
    for I in _subsets(C.M):
        poly = Polynomial.constant(C.M, 1)
        for i in I:
            poly = poly * Polynomial.variable(C.M, i)
        table[I] = wick_expect(poly, C)
    return table


def gaussian_moment_table_repeated(C, index):
    """Joint moments of X_a = φ_{index[a]} for a Gaussian φ (indices may repeat)."""
    C = C if isinstance(C, Covariance) else Covariance(C)
    table = {}
    for I in _subsets(len(index)):
        poly = Polynomial.constant(C.M, 1)
        for a in I:
            poly = poly * Polynomial.variable(C.M, index[a])
        table[I] = wick_expect(poly, C)
    return table


def gauss_hermite_expect(func, C, order=20):
    """Tensor-product Gauss-Hermite expectation of ``func`` (vectorised on (..., M))."""
    Cf = C.as_float() if isinstance(C, Covariance) else np.asarray(C, dtype=float)
    M = Cf.shape[0]
    x, w = np.polynomial.hermite_e.hermegauss(order)
    w = w / w.sum()
    Lc = np.linalg.cholesky(Cf + 0.0 * np.eye(M))
    grid = np.array(list(product(range(order), repeat=M)))
    z = x[grid]
    weight = np.prod(w[grid], axis=1)
    pts = z @ Lc.T
    return float(np.sum(weight * func(pts)))
