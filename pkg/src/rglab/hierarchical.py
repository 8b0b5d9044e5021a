"""Hierarchical block geometry, projections, Laplacian and covariance decomposition.

Sites of the box [0, L^N)^d are integer vectors whose base-L digits are read
little-endian.  The j-block of x is x with the low j digits of every
coordinate cleared, so two sites share a j-block iff ``x // L**j == y // L**j``
coordinatewise.

Quantities that are rational when m2 is rational (int or Fraction) are
computed exactly with :class:`fractions.Fraction`; binary64 is used otherwise.
"""

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

FINAL = "final"


def _exact(*vals):
    return all(isinstance(v, (int, Fraction)) and not isinstance(v, bool) for v in vals)


def _num(v, exact):
    return Fraction(v) if exact else float(v)


def _pow(L, e, exact):
    """L**e with a negative integer exponent allowed."""
    if exact:
        return Fraction(L) ** e
    return float(L) ** e


@dataclass(frozen=True)
class HierGeometry:
    d: int
    L: int
    N: int

    def __post_init__(self):
        if self.d < 1 or self.L < 2 or self.N < 1:
            raise ValueError("need d >= 1, L >= 2, N >= 1")

    @property
    def side(self):
        return self.L ** self.N

    @property
    def volume(self):
        return self.L ** (self.d * self.N)

    def site(self, x):
        """Normalise a site to a tuple of d integers and validate it."""
        if np.ndim(x) == 0:
            x = (int(x),)
        x = tuple(int(c) for c in x)
        if len(x) != self.d:
            raise ValueError(f"site {x} has wrong dimension (d={self.d})")
        if any(c < 0 or c >= self.side for c in x):
            raise ValueError(f"site {x} outside [0, {self.side})^{self.d}")
        return x

    def block(self, x, j):
        """Index of the j-block containing x."""
        x = self.site(x)
        s = self.L ** j
        return tuple(c // s for c in x)

    def sites(self):
        """All sites as an array of shape (|Λ|, d), first coordinate fastest."""
        grids = np.indices((self.side,) * self.d).reshape(self.d, -1).T
        return grids[:, ::-1].copy()

    def block_labels(self, j):
        """Integer label of the j-block of every site, in ``sites()`` order."""
        s = self.L ** j
        b = self.sites() // s
        nb = self.side // s
        lab = np.zeros(len(b), dtype=np.int64)
        for i in range(self.d):
            lab = lab * nb + b[:, i]
        return lab


def coalescence_scale(x, y, geom):
    """Smallest j such that x and y lie in the same j-block."""
    x, y = geom.site(x), geom.site(y)
    if x == y:
        raise ValueError("coalescence undefined for equal sites")
    j = 0
    while any(a // geom.L ** j != b // geom.L ** j for a, b in zip(x, y)):
        j += 1
    return j


def _jxy(x, y, geom):
    return 0 if geom.site(x) == geom.site(y) else coalescence_scale(x, y, geom)


def hier_laplacian_entry(x, y, geom, exact=False):
    """Matrix element of the hierarchical Laplacian on the box.

    Uses the closed form in terms of the coalescence scale.  The result
    agrees with -sum_j L^{-2(j-1)} P_j assembled from block projections.
    """
    d, L, N = geom.d, geom.L, geom.N
    one = Fraction(1) if exact else 1.0
    a = _pow(L, -d, exact)
    b = _pow(L, -(d + 2), exact)
    jx = _jxy(x, y, geom)
    if jx == 0:
        return -(one - a) * (one - b ** N) / (one - b)
    return ((L * L - 1) * b ** jx + (one - a) * b ** N) / (one - b)


def gamma_j(j, m2, L):
    """Scalar gamma_j = L^{2(j-1)} / (1 + m2 L^{2(j-1)})."""
    exact = _exact(m2)
    s = _num(L, exact) ** (2 * (j - 1))
    return s / (1 + s * m2)


def covariance_entry(j, x, y, m2, geom):
    """Entry C_{j;xy}(m2) of the hierarchical covariance decomposition.

    ``j`` is a scale 1..N or :data:`FINAL` for the last covariance m2^{-1} Q_N.
    """
    exact = _exact(m2)
    d, L = geom.d, geom.L
    x, y = geom.site(x), geom.site(y)
    if j == FINAL:
        if m2 <= 0:
            raise ValueError("final covariance needs positive mass")
        return 1 / (_num(m2, exact) * _num(L, exact) ** (d * geom.N))
    if not 1 <= j <= geom.N:
        raise ValueError(f"scale {j} outside 1..{geom.N}")
    if m2 < 0:
        raise ValueError("m2 must be non-negative")
    jx = _jxy(x, y, geom)
    if jx > j:
        return _num(0, exact)
    g = gamma_j(j, m2, L)
    q_prev = _pow(L, -d * (j - 1), exact) if jx <= j - 1 else 0
    return g * (q_prev - _pow(L, -d * j, exact))


def covariance_block_matrix(j, m2, d, L):
    """Covariance of the L^d values that C_j assigns to the (j-1)-blocks of one j-block.

    Entry (b, b') is gamma_j L^{-d(j-1)} (delta_{bb'} - L^{-d}); it has a single
    zero eigenvalue along the constant vector.
    """
    B = L ** d
    s2 = float(gamma_j(j, m2, L)) * float(L) ** (-d * (j - 1))
    return s2 * (np.eye(B) - np.full((B, B), 1.0 / B))


@dataclass(frozen=True)
class MomentTable:
    j: int
    c: object
    c1: object
    c2: object
    c3: object
    c4: object


def mass_factor(j, m2, L):
    """M_j = (1 + m2 L^{2j})^{-1}."""
    exact = _exact(m2)
    return 1 / (1 + _num(m2, exact) * _num(L, exact) ** (2 * j))


def moments(j, m2, d, L, N=None):
    """Diagonal c_j and moment sums c_j^{(n)} = sum_x C_{j+1;0x}^n for n = 1..4.

    ``c1`` vanishes for j < N.  If ``N`` is given and j = N the first moment is
    replaced by the final-scale value m2^{-1}, which is what the last step of
    the flow needs.
    """
    exact = _exact(m2)
    Lq = _num(L, exact)
    eps = 1 / Lq ** d
    M = mass_factor(j, m2, L)
    c = Lq ** (-(d - 2) * j) * M * (1 - eps)
    c2 = Lq ** (-(d - 4) * j) * M ** 2 * (1 - eps)
    c3 = Lq ** (-(2 * d - 6) * j) * M ** 3 * (1 - 3 * eps + 2 * eps ** 2)
    c4 = Lq ** (-(3 * d - 8) * j) * M ** 4 * (1 - 4 * eps + 6 * eps ** 2 - 3 * eps ** 3)
    c1 = _num(0, exact)
    if N is not None and j >= N:
        if m2 <= 0:
            raise ValueError("final covariance needs positive mass")
        c1 = 1 / _num(m2, exact)
    return MomentTable(j, c, c1, c2, c3, c4)


def mass_scale(m2, L):
    """j_m = max{j : L^j m <= 1}; infinity when m2 = 0."""
    if m2 <= 0:
        return math.inf
    m = math.sqrt(float(m2))
    if m > 1:
        return 0
    j = int(math.floor(-math.log(m) / math.log(L)))
    while L ** (j + 1) * m <= 1:
        j += 1
    while j > 0 and L ** j * m > 1:
        j -= 1
    return j


def vartheta(j, m2, L):
    """Mass decay factor 2^{-(j - j_m)_+}."""
    jm = mass_scale(m2, L)
    if jm == math.inf or j <= jm:
        return 1.0
    return 2.0 ** (-(j - jm))


def green_diag(m2, d, L, jmax=200, N=None):
    """Diagonal Green function (-Δ_H + m2)^{-1}_{00}.

    With ``N`` given this is the exact finite-volume value
    sum_{j<N} c_j + m2^{-1} L^{-dN}.  Otherwise the infinite-volume series
    sum_{j>=0} c_j is truncated at ``jmax`` terms.  Returns (value, tail_bound).
    """
    if N is not None:
        if m2 <= 0:
            raise ValueError("finite volume needs positive mass")
        val = sum(moments(j, m2, d, L).c for j in range(N))
        return val + 1 / (m2 * _num(L, _exact(m2)) ** (d * N)), 0.0
    if d <= 2 and m2 <= 0:
        raise ValueError("Green function diverges for d <= 2 at m2 = 0")
    val = float(sum(float(moments(j, m2, d, L).c) for j in range(jmax)))
    eps = float(L) ** (-d)
    bounds = []
    if d > 2:
        r = float(L) ** (-(d - 2))
        bounds.append(r ** jmax * (1 - eps) / (1 - r))
    if m2 > 0:
        bounds.append(eps ** jmax / float(m2))
    return val, min(bounds)


@dataclass(frozen=True)
class BubbleReport:
    value: float
    tail_bound: float
    log_ratio: float
    asymptote: float


def hier_bubble(m2, d, L, jmax=200):
    """Infinite-volume hierarchical bubble sum_j c_j^{(2)}.

    For d = 4 also reports B / log(1/m) and the limiting constant
    (1 - L^{-d}) / log L.
    """
    if d <= 4 and m2 <= 0:
        raise ValueError("bubble diverges")
    m2f = float(m2)
    eps = float(L) ** (-d)
    j = np.arange(jmax, dtype=float)
    with np.errstate(over="ignore"):
        M = 1.0 / (1.0 + m2f * float(L) ** (2 * j))
    terms = float(L) ** (-(d - 4) * j) * M ** 2 * (1 - eps)
    val = float(np.sum(terms))
    bounds = []
    if d > 4:
        r = float(L) ** (-(d - 4))
        bounds.append(r ** jmax * (1 - eps) / (1 - r))
    if m2f > 0:
        r = float(L) ** (-d)
        bounds.append(r ** jmax * (1 - eps) / (m2f ** 2 * (1 - r)))
    tail = min(bounds)
    ratio = asym = math.nan
    if d == 4 and 0 < m2f < 1:
        ratio = val / math.log(m2f ** -0.5)
        asym = (1 - eps) / math.log(L)
    return BubbleReport(val, tail, ratio, asym)


def gff_sample_tree(geom, m2, seed, count=1):
    """Sample the hierarchical GFF with covariance sum_j C_j + C_final.

    One independent Gaussian is drawn per (j-1)-block for each scale j and the
    mean over each j-block is subtracted, which realises gamma_j P_j exactly.
    A single Gaussian of variance m2^{-1} L^{-dN} is added for the final scale.
    Returns an array of shape (count, |Λ|) in ``geom.sites()`` order.
    """
    if m2 <= 0:
        raise ValueError("sampling needs positive mass")
    rng = np.random.default_rng(seed)
    d, L, N = geom.d, geom.L, geom.N
    V = geom.volume
    phi = np.zeros((count, V))
    for j in range(1, N + 1):
        fine = geom.block_labels(j - 1)
        coarse = geom.block_labels(j)
        nfine = V // L ** (d * (j - 1))
        s2 = float(gamma_j(j, m2, L)) * float(L) ** (-d * (j - 1))
        w = rng.standard_normal((count, nfine)) * math.sqrt(s2)
        # mean over the (j-1)-blocks inside each j-block
        parent = np.zeros(nfine, dtype=np.int64)
        parent[fine] = coarse
        ncoarse = V // L ** (d * j)
        sums = np.zeros((count, ncoarse))
        np.add.at(sums.T, parent, w.T)
        means = sums / L ** d
        phi += w[:, fine] - means[:, coarse]
    phi += rng.standard_normal((count, 1)) * math.sqrt(1.0 / (float(m2) * V))
    return phi
