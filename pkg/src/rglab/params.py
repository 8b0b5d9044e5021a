"""Model parameters shared by the hierarchical, flow and recursion code."""

from dataclasses import dataclass, asdict, replace


@dataclass(frozen=True)
class ModelParams:
    """Dimension, block side, volume exponent, components, mass and couplings.

    The volume is the box [0, L^N)^d.  ``nu0`` is the bare quadratic
    coupling measured from the mass, i.e. the model quadratic coefficient
    is ``nu0 + m2``.
    """

    d: int = 4
    L: int = 2
    N: int = 3
    n: int = 1
    m2: float = 0.0
    g0: float = 0.0
    nu0: float = 0.0

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError("d must be a positive integer")
        if int(self.L) != self.L or self.L < 2:
            raise ValueError("L must be an integer >= 2")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("N must be a positive integer")
        if int(self.n) != self.n or self.n < 0:
            raise ValueError("n must be a non-negative integer")
        if self.m2 < 0:
            raise ValueError("m2 must be non-negative")

    @property
    def volume(self):
        return self.L ** (self.d * self.N)

    def with_(self, **kw):
        return replace(self, **kw)

    def as_dict(self):
        return asdict(self)
