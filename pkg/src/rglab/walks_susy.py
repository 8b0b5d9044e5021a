"""Random-walk representations and a Grassmann-forms engine for supersymmetric integrals.

Walk side: resolvent walk sums, continuous-time Feynman-Kac Monte Carlo, the
lattice bubble diagram and self-avoiding walk enumeration.

Forms side: forms over a vertex set of size V are polynomials in the fermion
generators ψ̄_x, ψ_x whose coefficients are polynomials in φ_x, φ̄_x.  The
generator ψ̄_x has index 2x and ψ_x has index 2x+1, so the canonical top
monomial is ψ̄_0 ψ_0 ψ̄_1 ψ_1 ... .  Boson variable x stands for φ_x and
V + x for φ̄_x.  The integral of a form against e^{-S_A} is
(det A)^{-1} times the complex Gaussian expectation of the top coefficient of
e^{-ψAψ̄} ∧ K, with E φ_a φ̄_b = (A^{-1})_{ba}.
"""

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations, product

import numpy as np
from scipy import integrate, special

from .gaussian import Covariance, Polynomial, wick_expect

# ---------------------------------------------------------------------------
# weighted graphs and walk sums


@dataclass
class WeightedGraph:
    """Symmetric nonnegative edge weights beta and killing rates v on V ≤ 8 vertices."""

    beta: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        V = self.beta.shape[0]
        if self.beta.shape != (V, V) or V > 8:
            raise ValueError("beta must be a square matrix with V <= 8")
        if not np.allclose(self.beta, self.beta.T) or np.any(self.beta < 0):
            raise ValueError("beta must be symmetric and nonnegative")
        self.beta = self.beta.copy()
        np.fill_diagonal(self.beta, 0.0)
        v = np.asarray(self.v)
        self.v = np.broadcast_to(v, (V,)).astype(np.result_type(v, float)).copy()

    @property
    def V(self):
        return self.beta.shape[0]

    @property
    def beta_bar(self):
        return self.beta.sum(axis=1)

    def laplacian(self):
        """Δ_β with (Δ_β f)_x = Σ_y β_xy (f_y - f_x)."""
        return self.beta - np.diag(self.beta_bar)

    def operator(self):
        return -self.laplacian() + np.diag(self.v)

    def dense_inverse(self):
        return np.linalg.inv(self.operator())

    @classmethod
    def complete(cls, V, w=1.0, v=1.0):
        b = np.full((V, V), float(w))
        np.fill_diagonal(b, 0.0)
        return cls(b, v)

    @classmethod
    def cycle(cls, V, w=1.0, v=1.0):
        b = np.zeros((V, V))
        for x in range(V):
            b[x, (x + 1) % V] = b[(x + 1) % V, x] = w
        return cls(b, v)


def _check_walkable(graph):
    if np.any(graph.beta_bar <= 0):
        raise ValueError("every vertex needs positive total edge weight")


def resolvent_walk_sum(graph, tol=1e-14, max_steps=100000):
    """(-Δ_β + V)^{-1} as the sum over walks with weights Π β / Π (β̄ + v).

    Walks of n steps are summed by the n-th power of the one-step kernel
    β_xy / (β̄_x + v_x).  Returns (matrix, tail_bound) where the tail bound is
    the geometric remainder after truncation.
    """
    _check_walkable(graph)
    D = graph.beta_bar + graph.v
    q = float(np.max(np.abs(graph.beta_bar / D)))
    if q >= 1:
        raise ValueError("walk sum does not converge: max |β̄/(β̄+v)| >= 1")
    P = graph.beta / D[:, None]
    dinv = np.diag(1 / D)
    term = dinv.copy()
    total = term.copy()
    scale = float(np.max(np.abs(1 / D)))
    for n in range(1, max_steps):
        term = P @ term
        total = total + term
        tail = scale * q ** (n + 1) / (1 - q)
        if tail < tol * float(np.max(np.abs(total))):
            return total, tail
    return total, scale * q ** max_steps / (1 - q)


def _jump_tables(graph):
    cum = np.cumsum(graph.beta / graph.beta_bar[:, None], axis=1)
    cum[:, -1] = 1.0
    return cum


def ctrw_feynman_kac(graph, x, y=None, v=None, seed=0, samples=100000, cutoff=40.0):
    """Monte Carlo estimate of ∫_0^∞ E_x(e^{-Σ_u v_u L_{T,u}} 1_{X(T)=y}) dT.

    The walk jumps x → z at rate β_xz.  Each sojourn contributes its exact
    time integral e^{-a}(1 - e^{-v σ})/v, so the only randomness is the path.
    ``y=None`` sums over all endpoints.  Returns (mean, standard error).
    """
    _check_walkable(graph)
    v = graph.v if v is None else np.broadcast_to(np.asarray(v, dtype=float), (graph.V,))
    v = np.real(np.asarray(v, dtype=float))
    if np.any(v <= 0):
        raise ValueError("killing rates must be positive")
    rng = np.random.default_rng(seed)
    cum = _jump_tables(graph)
    rate = graph.beta_bar
    pos = np.full(samples, int(x))
    a = np.zeros(samples)
    acc = np.zeros(samples)
    alive = np.ones(samples, dtype=bool)
    while alive.any():
        idx = np.nonzero(alive)[0]
        p = pos[idx]
        sigma = rng.exponential(1.0, len(idx)) / rate[p]
        vp = v[p]
        seg = np.exp(-a[idx]) * -np.expm1(-vp * sigma) / vp
        if y is None:
            acc[idx] += seg
        else:
            acc[idx] += np.where(p == y, seg, 0.0)
        a[idx] += vp * sigma
        u = rng.random(len(idx))
        pos[idx] = (u[:, None] > cum[p]).sum(axis=1)
        alive[idx] = a[idx] < cutoff
    return float(acc.mean()), float(acc.std(ddof=1) / math.sqrt(samples))


# ---------------------------------------------------------------------------
# lattice bubble


@dataclass(frozen=True)
class EuclidBubble:
    value: float
    scaled: float
    asymptote: float


def _ive0(x):
    """e^{-x} I_0(x), with the asymptotic series where scipy loses accuracy."""
    if x < 1e5:
        return float(special.ive(0, x))
    return (1 + 1 / (8 * x) + 9 / (128 * x * x) + 225 / (3072 * x ** 3)) / math.sqrt(2 * math.pi * x)


def bubble_constant(d):
    """b_d = (4π)^{-d/2} Γ(2 - d/2) for d < 4 and 1/(16π^2) for d = 4."""
    if d == 4:
        return 1 / (16 * math.pi ** 2)
    if d > 4:
        return math.nan
    return (4 * math.pi) ** (-d / 2) * math.gamma(2 - d / 2)


def euclid_bubble(m2, d, method="heat", nodes=200):
    """B = ∫_{[-π,π]^d} (λ(k) + m2)^{-2} dk/(2π)^d with λ(k) = Σ 2(1 - cos k_i).

    ``heat`` writes (λ+m2)^{-2} = ∫ t e^{-t(λ+m2)} dt so that
    B = ∫_0^∞ t e^{-t m2} (e^{-2t} I_0(2t))^d dt, a 1-d integral accurate at
    tiny m2.  ``tensor`` is a composite Gauss-Legendre product rule in k
    (d ≤ 4), usable at moderate m2.  Returns the value, B m^{4-d} (d < 4) or
    B / log m^{-2} (d = 4), and the limiting constant.
    """
    if d < 1:
        raise ValueError("d must be positive")
    if m2 <= 0 and d <= 4:
        raise ValueError("bubble diverges for d <= 4 at m2 = 0")
    m2 = float(m2)
    if method == "heat":
        def f(s):
            t = math.exp(s)
            return math.exp(2 * s - t * m2 + d * math.log(_ive0(2 * t)))

        hi = math.log(60 / m2) if m2 > 0 else 60.0
        pts = np.linspace(-30.0, hi, 300)
        parts = [integrate.quad(f, lo_, hi_, epsabs=0, epsrel=1e-12, limit=200)[0]
                 for lo_, hi_ in zip(pts[:-1], pts[1:])]
        if m2 == 0:
            # tail t > e^60 behaves like (4π)^{-d/2} t^{1-d/2}
            T = math.exp(hi)
            parts.append((4 * math.pi) ** (-d / 2) * T ** (2 - d / 2) / (d / 2 - 2))
        val = math.fsum(parts)
    elif method == "tensor":
        if d > 4:
            raise ValueError("tensor rule limited to d <= 4")
        # panels graded towards k = 0 where the integrand peaks
        m = math.sqrt(m2)
        edges = [0.0] + [min(math.pi, m * 4.0 ** i) for i in range(-1, 40) if m * 4.0 ** i < math.pi] + [math.pi]
        x, w = np.polynomial.legendre.leggauss(max(4, nodes // max(1, len(edges) - 1)))
        ks, ws = [], []
        for lo_, hi_ in zip(edges[:-1], edges[1:]):
            ks.append(0.5 * (hi_ - lo_) * x + 0.5 * (hi_ + lo_))
            ws.append(0.5 * (hi_ - lo_) * w)
        k1 = np.concatenate(ks)
        w1 = np.concatenate(ws) / math.pi  # symmetric half line, /(2π) per axis times 2
        lam1 = 2 * (1 - np.cos(k1))
        lam = np.zeros(())
        wt = np.ones(())
        for _ in range(d):
            lam = lam[..., None] + lam1
            wt = wt[..., None] * w1
        val = float(np.sum(wt / (lam + m2) ** 2))
    else:
        raise ValueError(f"unknown method {method!r}")
    if d < 4:
        scaled = val * m2 ** ((4 - d) / 2)
    elif d == 4:
        scaled = val / math.log(1 / m2) if 0 < m2 < 1 else math.nan
    else:
        scaled = val
    return EuclidBubble(val, scaled, bubble_constant(d))


# ---------------------------------------------------------------------------
# self-avoiding walks


def _unit_steps(d):
    steps = []
    for i in range(d):
        for s in (1, -1):
            e = [0] * d
            e[i] = s
            steps.append(tuple(e))
    return steps


def _saw_hashset(d, nmax):
    steps = _unit_steps(d)
    counts = [0] * (nmax + 1)
    origin = (0,) * d
    first = steps[0]
    visited = {origin, first}

    def rec(x, n):
        counts[n] += 1
        if n == nmax:
            return
        for s in steps:
            y = tuple(a + b for a, b in zip(x, s))
            if y not in visited:
                visited.add(y)
                rec(y, n + 1)
                visited.remove(y)

    if nmax >= 1:
        rec(first, 1)
    # every walk is a rotation/reflection of one with the first step along +e_1
    return [1] + [2 * d * c for c in counts[1:]]


def _saw_bitmask(d, nmax):
    side = 2 * nmax + 3
    strides = [side ** i for i in range(d)]
    offs = []
    for i in range(d):
        offs += [strides[i], -strides[i]]
    centre = sum(nmax + 1 for _ in range(d))
    centre = sum((nmax + 1) * s for s in strides)
    counts = [0] * (nmax + 1)
    counts[0] = 1
    if nmax == 0:
        return counts
    start = centre + offs[0]
    stack = [(start, (1 << centre) | (1 << start), 1)]
    while stack:
        x, occ, n = stack.pop()
        counts[n] += 1
        if n == nmax:
            continue
        for o in offs:
            y = x + o
            bit = 1 << y
            if not occ & bit:
                stack.append((y, occ | bit, n + 1))
    return [1] + [2 * d * c for c in counts[1:]]


def saw_count(d, nmax, method="hashset"):
    """Numbers c_0..c_nmax of self-avoiding walks on Z^d starting at the origin.

    Two independent enumerators are available: recursive backtracking over a
    hash set of visited sites and an iterative search with a bitmask
    occupancy word.
    """
    if d < 1 or nmax < 0:
        raise ValueError("need d >= 1 and nmax >= 0")
    if d == 2 and nmax > 14:
        raise ValueError("nmax limited to 14 for d = 2")
    if method == "hashset":
        return _saw_hashset(d, nmax)
    if method == "bitmask":
        return _saw_bitmask(d, nmax)
    raise ValueError(f"unknown method {method!r}")


def saw_endpoint_counts(d, n):
    """c_n(x): n-step self-avoiding walks from 0 ending at x, as a dict."""
    steps = _unit_steps(d)
    out = {}
    origin = (0,) * d
    visited = {origin}

    def rec(x, k):
        if k == n:
            out[x] = out.get(x, 0) + 1
            return
        for s in steps:
            y = tuple(a + b for a, b in zip(x, s))
            if y not in visited:
                visited.add(y)
                rec(y, k + 1)
                visited.remove(y)

    rec(origin, 0)
    return out


def saw_bounds_check(counts, d):
    """Per-n checks d^n ≤ c_n ≤ 2d(2d-1)^{n-1} and c_{m+n} ≤ c_m c_n."""
    N = len(counts) - 1
    lower = all(d ** n <= counts[n] for n in range(1, N + 1))
    upper = all(counts[n] <= 2 * d * (2 * d - 1) ** (n - 1) for n in range(1, N + 1))
    sub = all(counts[m + n] <= counts[m] * counts[n]
              for m in range(1, N + 1) for n in range(1, N + 1 - m))
    return {"lower": lower, "upper": upper, "submultiplicative": sub}


# ---------------------------------------------------------------------------
# forms


def _merge_sign(I, J):
    """Sign of sorting the concatenation I + J of two sorted index tuples."""
    inv = 0
    j = 0
    for a in I:
        while j < len(J) and J[j] < a:
            j += 1
        inv += j
    return -1 if inv % 2 else 1


def psibar_index(x):
    return 2 * x


def psi_index(x):
    return 2 * x + 1


class FormPolynomial:
    """Polynomial in Grassmann generators with boson-polynomial coefficients."""

    __slots__ = ("V", "terms")

    def __init__(self, V, terms=None):
        self.V = int(V)
        self.terms = {}
        for mono, c in (terms or {}).items():
            if not isinstance(c, Polynomial):
                c = Polynomial.constant(2 * self.V, c)
            mono = tuple(mono)
            if list(mono) != sorted(set(mono)):
                raise ValueError("fermion monomial must be strictly increasing")
            if mono in self.terms:
                c = self.terms[mono] + c
            if not c.is_zero():
                self.terms[mono] = c
            else:
                self.terms.pop(mono, None)

    # constructors
    @classmethod
    def constant(cls, V, c):
        return cls(V, {(): c})

    @classmethod
    def boson(cls, V, poly):
        return cls(V, {(): poly})

    @classmethod
    def phi(cls, V, x):
        return cls(V, {(): Polynomial.variable(2 * V, x)})

    @classmethod
    def phibar(cls, V, x):
        return cls(V, {(): Polynomial.variable(2 * V, V + x)})

    @classmethod
    def psi(cls, V, x):
        return cls(V, {(psi_index(x),): 1})

    @classmethod
    def psibar(cls, V, x):
        return cls(V, {(psibar_index(x),): 1})

    # arithmetic
    def _coerce(self, other):
        if isinstance(other, FormPolynomial):
            if other.V != self.V:
                raise ValueError("forms over different vertex sets")
            return other
        if isinstance(other, Polynomial):
            return FormPolynomial.boson(self.V, other)
        return FormPolynomial.constant(self.V, other)

    def __add__(self, other):
        other = self._coerce(other)
        out = dict(self.terms)
        for m, c in other.terms.items():
            out[m] = out[m] + c if m in out else c
        return FormPolynomial(self.V, out)

    __radd__ = __add__

    def __neg__(self):
        return FormPolynomial(self.V, {m: -c for m, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def wedge(self, other):
        other = self._coerce(other)
        out = {}
        for m1, c1 in self.terms.items():
            s1 = set(m1)
            for m2, c2 in other.terms.items():
                if s1.intersection(m2):
                    continue
                m = tuple(sorted(m1 + m2))
                c = c1 * c2 if _merge_sign(m1, m2) > 0 else -(c1 * c2)
                out[m] = out[m] + c if m in out else c
        return FormPolynomial(self.V, out)

    def __mul__(self, other):
        if isinstance(other, FormPolynomial):
            return self.wedge(other)
        return self.wedge(self._coerce(other))

    def __rmul__(self, other):
        return self._coerce(other).wedge(self)

    def __pow__(self, k):
        out = FormPolynomial.constant(self.V, 1)
        for _ in range(k):
            out = out.wedge(self)
        return out

    def __eq__(self, other):
        other = self._coerce(other)
        return (self - other).is_zero()

    def __repr__(self):
        return f"FormPolynomial({self.V}, {self.terms})"

    def is_zero(self):
        return not self.terms

    @property
    def degree(self):
        return max((len(m) for m in self.terms), default=0)

    def is_even(self):
        return all(len(m) % 2 == 0 for m in self.terms)

    def degree_zero(self):
        return self.terms.get((), Polynomial(2 * self.V))

    def top_coefficient(self):
        return self.terms.get(tuple(range(2 * self.V)), Polynomial(2 * self.V))

    def map_coefficients(self, fn):
        return FormPolynomial(self.V, {m: fn(c) for m, c in self.terms.items()})

    def diff_phi(self, x):
        return self.map_coefficients(lambda c: c.diff(x))

    def diff_phibar(self, x):
        return self.map_coefficients(lambda c: c.diff(self.V + x))


def wedge(a, b):
    return a.wedge(b)


def q_operator(K):
    """Supersymmetry generator Q as an anti-derivation.

    Qφ = ψ, Qφ̄ = ψ̄, Qψ = -φ, Qψ̄ = φ̄.
    """
    V = K.V
    out = FormPolynomial(V)
    for mono, c in K.terms.items():
        f = FormPolynomial(V, {mono: 1})
        # boson derivative part: Σ_x (ψ_x ∂_{φ_x} + ψ̄_x ∂_{φ̄_x}) c, then ∧ ψ^mono
        for x in range(V):
            dc = c.diff(x)
            if not dc.is_zero():
                out = out + FormPolynomial.psi(V, x).wedge(FormPolynomial.boson(V, dc)).wedge(f)
            dc = c.diff(V + x)
            if not dc.is_zero():
                out = out + FormPolynomial.psibar(V, x).wedge(FormPolynomial.boson(V, dc)).wedge(f)
        # fermion part: Q(g_1...g_k) = Σ_i (-1)^{i} g_1..Q(g_i)..g_k
        for i, gen in enumerate(mono):
            x, is_psi = divmod(gen, 2)
            qg = Polynomial.variable(2 * V, x) * -1 if is_psi else Polynomial.variable(2 * V, V + x)
            rest = mono[:i] + mono[i + 1:]
            coeff = c * qg
            if i % 2:
                coeff = -coeff
            out = out + FormPolynomial(V, {rest: coeff})
    return out


def tau_form(V, x):
    """τ_x = φ_x φ̄_x + ψ_x ∧ ψ̄_x."""
    F = FormPolynomial
    return F.phi(V, x).wedge(F.phibar(V, x)) + F.psi(V, x).wedge(F.psibar(V, x))


def tau_pair_form(V, x, y):
    """τ_xy = (φ_x φ̄_y + ψ_x ψ̄_y + φ_y φ̄_x + ψ_y ψ̄_x) / 2."""
    F = FormPolynomial
    s = (F.phi(V, x) * F.phibar(V, y) + F.psi(V, x) * F.psibar(V, y)
         + F.phi(V, y) * F.phibar(V, x) + F.psi(V, y) * F.psibar(V, x))
    return s * Fraction(1, 2)


def lambda_pair_form(V, x, y):
    """λ_xy = (φ_x ψ̄_y + φ_y ψ̄_x) / 2, so that Qλ_xy = τ_xy."""
    F = FormPolynomial
    return (F.phi(V, x) * F.psibar(V, y) + F.phi(V, y) * F.psibar(V, x)) * Fraction(1, 2)


def s_a_form(A):
    """S_A = Σ_xy A_xy (φ_x φ̄_y + ψ_x ∧ ψ̄_y)."""
    V = len(A)
    F = FormPolynomial
    out = F(V)
    for x in range(V):
        for y in range(V):
            if A[x][y] != 0:
                out = out + (F.phi(V, x) * F.phibar(V, y) + F.psi(V, x) * F.psibar(V, y)) * A[x][y]
    return out


def fermion_exp(N):
    """exp of a nilpotent even form (zero degree-zero part); the series terminates."""
    if not N.degree_zero().is_zero():
        raise ValueError("form must have vanishing degree-zero part")
    out = FormPolynomial.constant(N.V, 1)
    term = FormPolynomial.constant(N.V, 1)
    k = 0
    while True:
        k += 1
        term = term.wedge(N) * Fraction(1, k)
        if term.is_zero():
            return out
        out = out + term


def form_polyval(coeffs, K):
    """Σ_k coeffs[k] K^k for an even form K (the Taylor definition for polynomial F)."""
    out = FormPolynomial(K.V)
    power = FormPolynomial.constant(K.V, 1)
    for k, a in enumerate(coeffs):
        if k:
            power = power.wedge(K)
        if a != 0:
            out = out + power * a
    return out


def apply_function(derivs, K):
    """F(K) = Σ_k F^{(k)}(K^0) (K - K^0)^k / k! for a form K with constant K^0.

    ``derivs[k]`` is F^{(k)} evaluated at the (numeric) degree-zero part of K.
    """
    K0 = K.degree_zero()
    if any(sum(m) for m in K0.terms):
        raise ValueError("degree-zero part must be a constant")
    N = K - FormPolynomial.boson(K.V, K0)
    out = FormPolynomial(K.V)
    power = FormPolynomial.constant(K.V, 1)
    for k, dk in enumerate(derivs):
        if k:
            power = power.wedge(N)
            if power.is_zero():
                break
        out = out + power * (dk / math.factorial(k) if not isinstance(dk, (int, Fraction))
                             else Fraction(dk, math.factorial(k)))
    return out


# exact / numeric linear algebra for super-expectations


def _is_exact_matrix(A):
    return all(isinstance(a, (int, Fraction)) and not isinstance(a, bool) for row in A for a in row)


def _exact_inverse_det(A):
    n = len(A)
    M = [[Fraction(A[i][j]) for j in range(n)] + [Fraction(int(i == j)) for j in range(n)]
         for i in range(n)]
    det = Fraction(1)
    for c in range(n):
        p = next((r for r in range(c, n) if M[r][c] != 0), None)
        if p is None:
            raise ValueError("matrix is singular")
        if p != c:
            M[c], M[p] = M[p], M[c]
            det = -det
        piv = M[c][c]
        det *= piv
        M[c] = [v / piv for v in M[c]]
        for r in range(n):
            if r != c and M[r][c] != 0:
                f = M[r][c]
                M[r] = [a - f * b for a, b in zip(M[r], M[c])]
    return [row[n:] for row in M], det


def _permanent(M):
    """Ryser's formula; exact for Fraction entries."""
    n = len(M)
    if n == 0:
        return 1
    total = 0
    for k in range(1, n + 1):
        for cols in combinations(range(n), k):
            prod = 1
            for i in range(n):
                s = 0
                for j in cols:
                    s += M[i][j]
                prod *= s
                if prod == 0:
                    break
            total += (-1) ** k * prod
    return (-1) ** n * total


def _check_hermitian_pd(A):
    Af = np.array([[complex(a) for a in row] for row in A])
    H = (Af + Af.conj().T) / 2
    if np.linalg.eigvalsh(H).min() <= 0:
        raise ValueError("A must have positive-definite Hermitian part")


def boson_expectation(poly, C):
    """Complex Gaussian expectation with E φ_a φ̄_b = C_{ba}, via permanents."""
    V = len(C)
    total = 0
    cache = {}
    for mono, coeff in poly.terms.items():
        X = [x for x in range(V) for _ in range(mono[x])]
        Y = [y for y in range(V) for _ in range(mono[V + y])]
        if len(X) != len(Y):
            continue
        key = (tuple(X), tuple(Y))
        if key not in cache:
            cache[key] = _permanent([[C[y][x] for y in Y] for x in X])
        total += coeff * cache[key]
    return total


def boson_expectation_wick(poly, C):
    """Same expectation through a 2-component real Gaussian field with covariance C.

    φ_x = (φ^1_x + i φ^2_x)/√2 with φ^1, φ^2 independent N(0, C); requires C
    real symmetric.  Floating point; used as a cross-check.
    """
    C = np.asarray(C, dtype=float)
    if not np.allclose(C, C.T):
        raise ValueError("two-component route needs a symmetric covariance")
    V = len(C)
    n2 = 2 * V
    # real variables: index x -> φ^1_x, V + x -> φ^2_x
    sub_phi = [Polynomial.variable(n2, x) + Polynomial.variable(n2, V + x) * 1j for x in range(V)]
    sub_bar = [Polynomial.variable(n2, x) + Polynomial.variable(n2, V + x) * -1j for x in range(V)]
    real = Polynomial(n2)
    for mono, coeff in poly.terms.items():
        deg = sum(mono)
        if deg % 2:
            continue
        t = Polynomial.constant(n2, complex(coeff) / 2 ** (deg // 2))
        for x in range(V):
            t = t * sub_phi[x] ** mono[x] * sub_bar[x] ** mono[V + x]
        real = real + t
    cov = Covariance(np.kron(np.eye(2), C))
    re = Polynomial(n2, {m: c.real for m, c in real.terms.items()})
    im = Polynomial(n2, {m: c.imag for m, c in real.terms.items()})
    return complex(wick_expect(re, cov), wick_expect(im, cov))


def super_expectation(K, C=None, A=None):
    """∫ K e^{-S_A} with A = C^{-1}.

    Exact in rational arithmetic when the matrix entries and the coefficients
    of K are rational.  The top-degree coefficient of e^{-ψAψ̄} ∧ K is
    integrated against the boson Gaussian and divided by det A.
    """
    if (C is None) == (A is None):
        raise ValueError("give exactly one of C and A")
    M = C if C is not None else A
    V = len(M)
    if V != K.V:
        raise ValueError("matrix size does not match the form")
    exact = _is_exact_matrix(M)
    if exact:
        inv, det = _exact_inverse_det(M)
        if C is not None:
            Amat, Cmat = inv, [[Fraction(c) for c in row] for row in M]
            detA = 1 / det
        else:
            Amat, Cmat, detA = [[Fraction(a) for a in row] for row in M], inv, det
    else:
        Mf = np.array(M, dtype=complex if np.iscomplexobj(np.asarray(M)) else float)
        inv = np.linalg.inv(Mf)
        Amat, Cmat = (inv, Mf) if C is not None else (Mf, inv)
        detA = np.linalg.det(Amat)
        Amat, Cmat = Amat.tolist(), Cmat.tolist()
    _check_hermitian_pd(Amat)
    P = fermion_exp(-_psi_a_psibar(Amat))
    top = (P.wedge(K)).top_coefficient()
    val = boson_expectation(top, Cmat) / detA
    if not exact and abs(np.imag(val)) < 1e-13 * max(1.0, abs(val)):
        val = float(np.real(val))
    return val


def _psi_a_psibar(A):
    V = len(A)
    F = FormPolynomial
    out = F(V)
    for x in range(V):
        for y in range(V):
            if A[x][y] != 0:
                out = out + F.psi(V, x).wedge(F.psibar(V, y)) * A[x][y]
    return out


def super_ibp_residual(K, C, x):
    """E_C(φ̄_x K) - Σ_y C_xy E_C(∂K/∂φ_y)."""
    V = K.V
    lhs = super_expectation(FormPolynomial.phibar(V, x).wedge(K), C=C)
    rhs = sum(C[x][y] * super_expectation(K.diff_phi(y), C=C) for y in range(V))
    return lhs - rhs


def localisation_residual(coeffs_by_multi, C):
    """super_expectation(F(τ)) - F(0) for F = Σ a_α τ^α given as {α: a_α}."""
    V = len(C)
    taus = [tau_form(V, x) for x in range(V)]
    K = FormPolynomial(V)
    for alpha, a in coeffs_by_multi.items():
        t = FormPolynomial.constant(V, a)
        for x, k in enumerate(alpha):
            t = t.wedge(taus[x] ** k)
        K = K + t
    f0 = coeffs_by_multi.get((0,) * V, 0)
    return super_expectation(K, C=C) - f0


# walk enumerations on complete graphs


def strict_saw_sum(W, x, y):
    """Σ over strictly self-avoiding walks from x to y of Π W along the steps."""
    V = len(W)
    total = 0
    stack = [(x, (x,), 1)]
    while stack:
        u, path, w = stack.pop()
        if u == y:
            total += w
            continue
        for z in range(V):
            if z not in path:
                stack.append((z, path + (z,), w * W[u][z]))
    return total


def trail_sum(W, x, y):
    """Σ over self-avoiding trails (no repeated undirected edge) of Π W, complete graph."""
    V = len(W)
    total = 0
    stack = [(x, frozenset(), 1)]
    while stack:
        u, used, w = stack.pop()
        if u == y:
            total += w
        for z in range(V):
            if z == u:
                continue
            e = frozenset((u, z))
            if e not in used:
                stack.append((z, used | {e}, w * W[u][z]))
    return total


@dataclass(frozen=True)
class RepresentationCheck:
    forms: object
    enumeration: object
    residual: float


def saw_representation_check(C, x, y):
    """Compare ∫ φ̄_x φ_y Π_{z≠x,y} (1+τ_z) e^{-S_A} with Σ_{ω∈S(x,y)} C^ω."""
    V = len(C)
    if x == y:
        raise ValueError("need x != y")
    K = FormPolynomial.phibar(V, x).wedge(FormPolynomial.phi(V, y))
    for z in range(V):
        if z not in (x, y):
            K = K.wedge(1 + tau_form(V, z))
    lhs = super_expectation(K, C=C)
    rhs = strict_saw_sum(C, x, y)
    return RepresentationCheck(lhs, rhs, abs(complex(lhs - rhs)))


def trail_representation_check(beta, x, y):
    """Compare ∫ φ̄_x φ_y Π_{edges}(1 + 2β_uv τ_uv) Π_w e^{-τ_w} with Σ_{ω∈T(x,y)} β^ω."""
    V = len(beta)
    K = FormPolynomial.phibar(V, x).wedge(FormPolynomial.phi(V, y))
    for u, v in combinations(range(V), 2):
        if beta[u][v] != 0:
            K = K.wedge(1 + tau_pair_form(V, u, v) * (2 * beta[u][v]))
    ident = [[int(i == j) for j in range(V)] for i in range(V)]
    lhs = super_expectation(K, A=ident)
    rhs = trail_sum(beta, x, y)
    return RepresentationCheck(lhs, rhs, abs(complex(lhs - rhs)))


# ---------------------------------------------------------------------------
# weakly self-avoiding walk two-point function


def _sojourn_integral(b, g, sigma):
    """∫_0^σ exp(-b s - g s^2) ds for g > 0, vectorised and overflow-safe."""
    sg = math.sqrt(g)
    z0 = b / (2 * sg)
    z1 = sg * sigma + z0
    pref = math.sqrt(math.pi) / (2 * sg)
    pos = z0 >= 0
    out = np.empty_like(z0)
    # z0 ≥ 0: e^{z0^2}(erfc z0 - erfc z1) = erfcx z0 - erfcx z1 e^{z0^2 - z1^2}
    zp0, zp1 = z0[pos], z1[pos]
    out[pos] = special.erfcx(zp0) - special.erfcx(zp1) * np.exp((zp0 - zp1) * (zp0 + zp1))
    zn0, zn1 = z0[~pos], z1[~pos]
    out[~pos] = np.exp(zn0 * zn0) * (special.erfc(zn0) - special.erfc(zn1))
    return pref * out


def wsaw_two_point_mc(graph, x, g, nu, seed=0, samples=100000, cutoff=45.0):
    """G_x = ∫_0^∞ E_0(e^{-g I(T)} 1_{X(T)=x}) e^{-νT} dT by continuous-time walk Monte Carlo.

    I(T) = Σ_y L_{T,y}^2 is accumulated exactly from the sojourn times and each
    sojourn contributes its exact time integral.  Returns (mean, s.e.).
    """
    if g <= 0:
        raise ValueError("g must be positive")
    _check_walkable(graph)
    V = graph.V
    rng = np.random.default_rng(seed)
    cum = _jump_tables(graph)
    rate = graph.beta_bar
    pos = np.zeros(samples, dtype=np.int64)
    ell = np.zeros((samples, V))
    T = np.zeros(samples)
    I = np.zeros(samples)
    acc = np.zeros(samples)
    alive = np.ones(samples, dtype=bool)
    t_min = max(0.0, -nu * V / (2 * g))
    while alive.any():
        idx = np.nonzero(alive)[0]
        p = pos[idx]
        sigma = rng.exponential(1.0, len(idx)) / rate[p]
        lp = ell[idx, p]
        hit = p == x
        if hit.any():
            h = idx[hit]
            J = _sojourn_integral(2 * g * lp[hit] + nu, g, sigma[hit])
            acc[h] += np.exp(-g * I[h] - nu * T[h]) * J
        I[idx] += 2 * lp * sigma + sigma * sigma
        ell[idx, p] = lp + sigma
        T[idx] += sigma
        u = rng.random(len(idx))
        pos[idx] = (u[:, None] > cum[p]).sum(axis=1)
        Ti = T[idx]
        alive[idx] = ~((Ti > t_min) & (g * Ti * Ti / V + nu * Ti > cutoff))
    return float(acc.mean()), float(acc.std(ddof=1) / math.sqrt(samples))


def wsaw_fermion_factor(A, t, g, nu0):
    """Top fermion coefficient of e^{-ψAψ̄} ∧ Π_y e^{-(g τ_y^2 + ν_0 τ_y)} at |φ_y|^2 = t_y.

    Computed with the forms engine: each factor is expanded about its
    degree-zero part, which terminates after the linear term.  Equals
    e^{-Σ(g t^2 + ν_0 t)} det(A + diag(2 g t + ν_0)).
    """
    V = len(A)
    F = FormPolynomial
    K = fermion_exp(-_psi_a_psibar([[float(a) for a in row] for row in A]))
    for y in range(V):
        eta = F.psi(V, y).wedge(F.psibar(V, y))
        ty = float(t[y])
        f = math.exp(-(g * ty * ty + nu0 * ty))
        K = K.wedge(apply_function([f, -(2 * g * ty + nu0) * f], F.constant(V, ty) + eta))
    return K.top_coefficient().constant_term()


def wsaw_two_point_quadrature(graph, x, g, nu, m2=1.0, nr=64, na=None):
    """G_x = E_C(e^{-Σ(g τ^2 + ν_0 τ)} φ̄_0 φ_x) with C = (-Δ_β + m2)^{-1}, ν_0 = ν - m2.

    The fermion part of the expansion of e^{-g τ^2} contributes
    det(A + diag(2 g |φ|^2 + ν_0)); the boson integral is done in polar
    coordinates with Gauss-Legendre in each radius and the trapezoid rule in
    the relative phases (the global phase integrates out).  V ≤ 3.
    """
    if g <= 0:
        raise ValueError("g must be positive")
    V = graph.V
    if V > 3:
        raise ValueError("quadrature route limited to V <= 3")
    if na is None:
        na = 96 if V == 2 else 40
    A = -graph.laplacian() + m2 * np.eye(V)
    nu0 = nu - m2
    c = abs(nu) + 2 * float(graph.beta_bar.max())
    R = math.sqrt((c + math.sqrt(c * c + 4 * g * 60)) / (2 * g))
    xs, ws = np.polynomial.legendre.leggauss(nr)
    r = 0.5 * R * (xs + 1)
    wr = 0.5 * R * ws * r  # polar Jacobian r dr
    grids = np.meshgrid(*([r] * V), indexing="ij")
    rr = np.stack(grids, axis=-1)  # (nr,)*V + (V,)
    t = rr ** 2
    wts = np.ones(())
    for _ in range(V):
        wts = wts[..., None] * wr
    Md = A[None] + np.zeros(t.shape[:-1] + (V, V))
    Md = Md + np.einsum("...i,ij->...ij", 2 * g * t + nu0, np.eye(V))
    det = np.linalg.det(Md)
    diag = np.sum(-(np.diag(A) + nu0) * t - g * t * t, axis=-1)
    # relative phases α_y = θ_y - θ_0, y ≥ 1
    alpha = 2 * np.pi * np.arange(na) / na
    ang = np.meshgrid(*([alpha] * (V - 1)), indexing="ij")
    theta = np.stack([np.zeros_like(ang[0])] + list(ang), axis=-1) if V > 1 else np.zeros((1, 1))
    theta = theta.reshape(-1, V)
    wa = (2 * np.pi / na) ** (V - 1)
    obs_phase = np.cos(theta[:, x] - theta[:, 0])
    flat_r = rr.reshape(-1, V)
    base = (det * np.exp(diag) * wts).reshape(-1)
    obs_r = flat_r[:, 0] * flat_r[:, x]
    total = 0.0
    chunk = max(1, 2_000_000 // max(1, len(theta)))
    for s in range(0, len(flat_r), chunk):
        rs = flat_r[s:s + chunk]
        cross = np.zeros((len(rs), len(theta)))
        for y in range(V):
            for z in range(y + 1, V):
                if A[y, z] != 0:
                    cross += 2 * A[y, z] * np.outer(rs[:, y] * rs[:, z], np.cos(theta[:, y] - theta[:, z]))
        angular = np.exp(-cross) @ obs_phase * wa
        total += float(np.sum(base[s:s + chunk] * obs_r[s:s + chunk] * angular))
    # global phase 2π, measure π^{-V} du dv
    return total * 2 * np.pi / np.pi ** V


@dataclass(frozen=True)
class WsawComparison:
    mc: float
    mc_se: float
    quadrature: float

    @property
    def z_score(self):
        return abs(self.mc - self.quadrature) / self.mc_se


def wsaw_two_point(graph, x, g, nu, seed=0, samples=100000, m2=1.0):
    """Two-point function of the weakly self-avoiding walk by both representations."""
    mc, se = wsaw_two_point_mc(graph, x, g, nu, seed=seed, samples=samples)
    q = wsaw_two_point_quadrature(graph, x, g, nu, m2=m2)
    return WsawComparison(mc, se, q)


# ---------------------------------------------------------------------------
# identity suite


def _random_positive_matrix(rng, V):
    """Complex matrix with positive-definite Hermitian part."""
    X = rng.standard_normal((V, V)) + 1j * rng.standard_normal((V, V))
    S = rng.standard_normal((V, V))
    return X @ X.conj().T / V + np.eye(V) + 1j * (S - S.T) / 2


def identity_suite(seed=0, matrices=20):
    """Residuals of the supersymmetric identities.

    ``normalisation``: max |∫ e^{-S_A} - 1| over random complex A (V = 1..3);
    ``localisation``: exact rational residual of ∫ F(τ) e^{-S_A} = F(0);
    ``two_point``: max |∫ φ̄_x φ_y e^{-S_A} - C_xy| over random A;
    ``saw`` and ``trail``: representation residuals on K3 and K4.
    """
    rng = np.random.default_rng(seed)
    norm = 0.0
    two = 0.0
    for k in range(matrices):
        V = 1 + k % 3
        A = _random_positive_matrix(rng, V)
        one = FormPolynomial.constant(V, 1)
        norm = max(norm, abs(super_expectation(one, A=A) - 1))
        C = np.linalg.inv(A)
        for x in range(V):
            for y in range(V):
                K = FormPolynomial.phibar(V, x).wedge(FormPolynomial.phi(V, y))
                two = max(two, abs(super_expectation(K, A=A) - C[x][y]))
    Cq = [[Fraction(3), Fraction(1), Fraction(0)],
          [Fraction(1), Fraction(2), Fraction(1, 2)],
          [Fraction(0), Fraction(1, 2), Fraction(1)]]
    loc = localisation_residual({(0, 0, 0): Fraction(2), (1, 0, 0): Fraction(-1),
                                 (0, 2, 1): Fraction(3, 4), (1, 1, 1): Fraction(1, 5)}, Cq)
    K3 = [[Fraction(1, 2) if i != j else Fraction(2) for j in range(3)] for i in range(3)]
    saw = saw_representation_check(K3, 0, 1).residual
    b4 = [[Fraction(0) if i == j else Fraction(1, 3 + i + j) for j in range(4)] for i in range(4)]
    trail = trail_representation_check(b4, 0, 2).residual
    return {"normalisation": float(norm), "localisation": float(abs(loc)),
            "two_point": float(two), "saw": float(saw), "trail": float(trail)}
