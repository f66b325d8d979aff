"""Local mass and stiffness blocks of the P^k-LDG scheme with alternating fluxes.

Each cell carries the monomial basis ``((x - x_j) / (h/2))**l`` for
``l = 0..k``.  All basis integrals are rational numbers; they are evaluated
exactly with :class:`fractions.Fraction` and rounded once at the end, so the
blocks are reproducible to the last bit.

The second-order semi-discrete system reads::

    M u_j'' + K0 u_j + Km1 u_{j-1} + Kp1 u_{j+1} = 0

and is obtained from the first-order flux form ``M q_j = A0 u_j + Am1 u_{j-1}``
(numerical flux ``u~ = u^-``) and ``M u_j'' = -A0^T q_j - Am1^T q_{j+1}``
(numerical flux ``q~ = q^+``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .errors import ParameterError

K_MAX = 8


def _check_degree(k):
    if int(k) != k or k < 0:
        raise ParameterError(f"polynomial degree must be a non-negative integer, got {k!r}")
    if k > K_MAX:
        raise ParameterError(f"polynomial degree {k} exceeds the supported maximum {K_MAX}")
    return int(k)


def _check_h(h):
    if not np.isfinite(h) or h <= 0:
        raise ParameterError(f"mesh size must be positive, got {h!r}")
    return float(h)


@dataclass(frozen=True)
class SchemeParams:
    """Discretisation parameters: degree ``k``, mesh size ``h``, CFL ratio ``lam``.

    The time step is always derived as ``dt = lam * h``.
    """

    k: int
    h: float
    lam: float

    def __post_init__(self):
        object.__setattr__(self, "k", _check_degree(self.k))
        object.__setattr__(self, "h", _check_h(self.h))
        if not np.isfinite(self.lam) or self.lam <= 0:
            raise ParameterError(f"CFL ratio must be positive, got {self.lam!r}")
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def dt(self):
        return self.lam * self.h


# exact, h-free building blocks -------------------------------------------------


@lru_cache(maxsize=None)
def _mass_unit(k):
    """Mass matrix divided by h, as a tuple of Fraction rows."""
    n = k + 1
    return tuple(
        tuple(Fraction(1, l + m + 1) if (l + m) % 2 == 0 else Fraction(0) for m in range(n))
        for l in range(n)
    )


@lru_cache(maxsize=None)
def _flux_exact(k):
    n = k + 1
    a0 = tuple(
        tuple(
            1 - (Fraction(2 * m, l + m) if (l + m) % 2 == 1 else Fraction(0))
            for l in range(n)
        )
        for m in range(n)
    )
    am1 = tuple(tuple(Fraction(-((-1) ** m)) for _ in range(n)) for m in range(n))
    return a0, am1


def _fmat(rows):
    return [list(r) for r in rows]


def _matmul(a, b):
    return [[sum(a[i][t] * b[t][j] for t in range(len(b))) for j in range(len(b[0]))]
            for i in range(len(a))]


def _transpose(a):
    return [list(col) for col in zip(*a)]


def _inverse(a):
    """Gauss-Jordan inverse over the rationals."""
    n = len(a)
    aug = [list(a[i]) + [Fraction(int(i == j)) for j in range(n)] for i in range(n)]
    for c in range(n):
        p = next(r for r in range(c, n) if aug[r][c] != 0)
        aug[c], aug[p] = aug[p], aug[c]
        piv = aug[c][c]
        aug[c] = [v / piv for v in aug[c]]
        for r in range(n):
            if r != c and aug[r][c] != 0:
                f = aug[r][c]
                aug[r] = [vr - f * vc for vr, vc in zip(aug[r], aug[c])]
    return [row[n:] for row in aug]


@lru_cache(maxsize=None)
def _stiffness_unit(k):
    """``h * (K0, Km1, Kp1)`` as exact rational matrices."""
    a0, am1 = map(_fmat, _flux_exact(k))
    minv = _inverse(_fmat(_mass_unit(k)))
    a0t, am1t = _transpose(a0), _transpose(am1)
    k0 = [[x + y for x, y in zip(r1, r2)]
          for r1, r2 in zip(_matmul(a0t, _matmul(minv, a0)), _matmul(am1t, _matmul(minv, am1)))]
    km1 = _matmul(a0t, _matmul(minv, am1))
    kp1 = _matmul(am1t, _matmul(minv, a0))
    return tuple(tuple(r) for r in k0), tuple(tuple(r) for r in km1), tuple(tuple(r) for r in kp1)


@lru_cache(maxsize=None)
def _origin_unit(k):
    k0, km1, kp1 = _stiffness_unit(k)
    return tuple(tuple(a + b + c for a, b, c in zip(r0, r1, r2)) for r0, r1, r2 in zip(k0, km1, kp1))


def _origin_symbol(k, h):
    return _to_array(_origin_unit(k)) / h


def _to_array(rows):
    return np.array([[float(v) for v in r] for r in rows], dtype=float)


# public operations ------------------------------------------------------------


def local_mass(k, h):
    """Mass matrix ``M[l, m] = h / (l + m + 1)`` for even ``l + m``, zero otherwise."""
    k = _check_degree(k)
    h = _check_h(h)
    return _to_array(_mass_unit(k)) * h


def flux_blocks(k):
    """Return ``(A0, Am1)`` with ``M q_j = A0 u_j + Am1 u_{j-1}``.

    Both matrices are independent of ``h``.
    """
    k = _check_degree(k)
    a0, am1 = _flux_exact(k)
    return _to_array(a0), _to_array(am1)


@dataclass(frozen=True, eq=False)
class LocalMatrices:
    """Per-cell blocks of the global mass (block diagonal) and stiffness
    (block tridiagonal) operators."""

    k: int
    h: float
    M: np.ndarray
    K0: np.ndarray
    Km1: np.ndarray
    Kp1: np.ndarray

    @property
    def n(self):
        return self.k + 1

    @property
    def Minv(self):
        return np.linalg.inv(self.M)

    @property
    def flux(self):
        """``(A0, Am1)`` with ``M q_j = A0 u_j + Am1 u_{j-1}``; ``K = D^T M^-1 D``."""
        return flux_blocks(self.k)

    @property
    def K_origin(self):
        """``K0 + Km1 + Kp1`` (the symbol at ``xi = 0``), summed exactly before rounding."""
        return _origin_symbol(self.k, self.h)

    def to_dict(self):
        return {
            "k": self.k,
            "h": self.h,
            "M": self.M.tolist(),
            "K0": self.K0.tolist(),
            "Km1": self.Km1.tolist(),
            "Kp1": self.Kp1.tolist(),
        }

    def to_json(self):
        """Serialise with round-trip precision (17 significant digits)."""
        return _dump_json(self.to_dict())


def _fmt17(x):
    return format(float(x), ".17g")


def _dump_json(d):
    # json.dumps uses repr(), which is shortest round-trip; force 17 digits instead.
    def conv(v):
        if isinstance(v, list):
            return "[" + ", ".join(conv(x) for x in v) + "]"
        if isinstance(v, float):
            return _fmt17(v)
        return json.dumps(v)

    body = ",\n".join(f"  {json.dumps(key)}: {conv(val)}" for key, val in d.items())
    return "{\n" + body + "\n}\n"


def assemble_stiffness(k, h):
    """Assemble :class:`LocalMatrices` for degree ``k`` and mesh size ``h``.

    The stiffness blocks are composed from the flux form,
    ``K0 = A0^T M^-1 A0 + Am1^T M^-1 Am1``, ``Km1 = A0^T M^-1 Am1`` and
    ``Kp1 = Am1^T M^-1 A0``, so the global operator is ``D^T M^-1 D`` and
    positive semi-definite by construction.
    """
    k = _check_degree(k)
    h = _check_h(h)
    k0, km1, kp1 = _stiffness_unit(k)
    return LocalMatrices(
        k=k,
        h=h,
        M=local_mass(k, h),
        K0=_to_array(k0) / h,
        Km1=_to_array(km1) / h,
        Kp1=_to_array(kp1) / h,
    )
