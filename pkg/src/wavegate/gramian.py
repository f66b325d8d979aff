"""Observability Gramian over the space of initial pairs and its blow-up rate.

An initial pair ``x = (U^0, U^1)`` is a real vector of length
``2 (k+1) J``.  Two quadratic forms act on it: ``A`` (the discrete energy of
the pair) and ``G`` (``dt * sum_{n<N}`` of the observed energy along the
trajectory).  The observability constant is ``1 / min x^T G x / x^T A x``
taken over ``range(A)``.

Observed energy sums the kinetic density over observed cells and the
potential density over flux variables whose stencil is observed; it is
positive semi-definite under the CFL condition and vanishes on constants, so
``G`` shares both properties.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .basis import LocalMatrices, SchemeParams, assemble_stiffness
from .errors import ParameterError, UnobservableError
from .evolve import (ObservationRegion, PeriodicMesh, Stepper, _block_apply, apply_flux,
                     apply_mass, apply_stiffness, n_steps, observed_faces)
from .spectral import check_cfl, mesh_modes, temporal_frequency

MAX_DIM = 4096
RITZ_REL = 1e-6
RITZ_MAX = 256


@dataclass(frozen=True, eq=False)
class GramianProblem:
    """Everything needed to evaluate observed energy along trajectories."""

    local: LocalMatrices
    mesh: PeriodicMesh
    params: SchemeParams
    observed: np.ndarray
    N: int
    T: float

    @property
    def n(self):
        return self.params.k + 1

    @property
    def state_dim(self):
        return self.n * self.mesh.J

    @property
    def dim(self):
        return 2 * self.state_dim

    def split(self, X):
        """Cell-shaped ``(U^0, U^1)`` blocks of the pair vectors in the columns of ``X``."""
        s = self.state_dim
        shape = (self.mesh.J, self.n, X.shape[1])
        return X[:s].reshape(shape), X[s:].reshape(shape)

    def energy_gram(self, X, observed=None):
        """``X^T Q X`` where ``Q`` is the energy form of the pair (optionally restricted)."""
        W0, W1 = self.split(X)
        return _pair_form(self.local, self.params.dt, W0, W1, observed)

    def observed_gram(self, X):
        """``X^T G X`` accumulated along the trajectories started from ``X``'s columns."""
        W0, W1 = self.split(np.asarray(X, dtype=float))
        stepper = Stepper(self.local, self.params.dt)
        acc = np.zeros((X.shape[1], X.shape[1]))
        for _ in range(self.N):
            acc += _pair_form_raw(self.local, self.params.dt, W0, W1, self.observed)
            W0, W1 = W1, stepper.advance(W0, W1)
        return self.params.dt * 0.5 * (acc + acc.T)


def _pair_form_raw(local, dt, W0, W1, observed):
    """Unsymmetrised ``1/2 d^T M d + 1/2 W1^T K W0`` (optionally restricted to the region).

    Its symmetric part is the energy form; the time-correction and averaged
    potential terms collapse to the cross term because ``K`` is symmetric.
    Restricted to the region, ``M`` keeps observed cells and ``K`` keeps the
    flux variables whose stencil is observed (see ``energy_cells``).
    """
    m = W0.shape[-1]
    d = (W1 - W0) / dt
    if observed is None:
        left = np.concatenate([d.reshape(-1, m), W1.reshape(-1, m)], axis=0)
        right = np.concatenate([0.5 * apply_mass(local, d).reshape(-1, m),
                                0.5 * apply_stiffness(local, W0).reshape(-1, m)], axis=0)
        return left.T @ right
    faces = observed_faces(observed)
    q0 = _block_apply(np.linalg.inv(local.M), apply_flux(local, W0)[faces])
    left = np.concatenate([d[observed].reshape(-1, m),
                           apply_flux(local, W1)[faces].reshape(-1, m)], axis=0)
    right = np.concatenate([0.5 * apply_mass(local, d)[observed].reshape(-1, m),
                            0.5 * q0.reshape(-1, m)], axis=0)
    return left.T @ right


def _pair_form(local, dt, W0, W1, observed=None):
    F = _pair_form_raw(local, dt, W0, W1, observed)
    return 0.5 * (F + F.T)


@dataclass(eq=False)
class QuadraticPencil:
    """Energy form ``A`` and accumulated observed-energy form ``G``."""

    A: np.ndarray
    G: np.ndarray
    problem: GramianProblem | None = None
    scale: float = 1.0

    @property
    def dim(self):
        return self.A.shape[0]

    def scaled(self, c):
        """Both forms multiplied by ``c > 0``."""
        return QuadraticPencil(A=c * self.A, G=c * self.G, problem=self.problem,
                               scale=c * self.scale)


def make_problem(params: SchemeParams, mesh: PeriodicMesh, region: ObservationRegion, T,
                 local: LocalMatrices | None = None, check_stability=True):
    local = local or assemble_stiffness(params.k, params.h)
    if abs(mesh.h - params.h) > 1e-14 * params.h:
        raise ParameterError("mesh size and scheme mesh size differ")
    if check_stability:
        check_cfl(local, params.lam)
    N = n_steps(T, params.dt)
    observed = region.observed(mesh) if region is not None else np.ones(mesh.J, dtype=bool)
    return GramianProblem(local=local, mesh=mesh, params=params, observed=observed, N=N, T=float(T))


def build_pencil(params: SchemeParams, mesh: PeriodicMesh, region: ObservationRegion | None, T,
                 local: LocalMatrices | None = None) -> QuadraticPencil:
    """Assemble ``A`` and ``G`` by propagating every canonical initial pair."""
    prob = make_problem(params, mesh, region, T, local)
    if prob.dim > MAX_DIM:
        raise ParameterError(f"pencil dimension {prob.dim} exceeds the limit {MAX_DIM}")
    I = np.eye(prob.dim)
    A = prob.energy_gram(I)
    G = prob.observed_gram(I)
    return QuadraticPencil(A=A, G=G, problem=prob)


@dataclass(frozen=True)
class ObservabilityResult:
    C_T: float
    mu_min: float
    deflated_dim: int
    reduced_dim: int
    mu_dense: float
    ritz_dim: int = 0


def _whiten(A, tol_deflate):
    w, V = np.linalg.eigh(0.5 * (A + A.T))
    wmax = w.max() if w.size else 0.0
    if not wmax > 0:
        raise ParameterError("the energy form vanishes on the retained space (only constant modes)")
    keep = w > tol_deflate * wmax
    return V[:, keep] / np.sqrt(w[keep]), int(np.count_nonzero(~keep))


def _min_eig(pencil, basis, tol_deflate, refine):
    """Smallest eigenvalue of the pencil restricted to ``span(basis)``."""
    A = basis.T @ pencil.A @ basis if basis is not None else pencil.A
    G = basis.T @ pencil.G @ basis if basis is not None else pencil.G
    W, ndefl = _whiten(A, tol_deflate)
    if W.shape[1] == 0:
        raise ParameterError("the retained space carries no energy (only constant modes survive)")
    Gt = W.T @ G @ W
    mu, Y = np.linalg.eigh(0.5 * (Gt + Gt.T))
    mu_dense = float(mu[0])
    mu_min, p = mu_dense, 0
    if refine and pencil.problem is not None and mu.size:
        # Rayleigh-Ritz on the low end with G re-evaluated along trajectories:
        # tiny observed energies are then resolved far below ||G|| * eps.
        p = int(np.clip(np.count_nonzero(mu < RITZ_REL * mu[-1]), 1, RITZ_MAX))
        X = W @ Y[:, :p]
        if basis is not None:
            X = basis @ X
        Ap = pencil.scale * pencil.problem.energy_gram(X)
        Gp = pencil.scale * pencil.problem.observed_gram(X)
        Wp, _ = _whiten(Ap, 1e-12)
        mu_min = float(np.linalg.eigvalsh(Wp.T @ Gp @ Wp)[0])
    return mu_min, mu_dense, ndefl, W.shape[1], p


def observability_constant(pencil: QuadraticPencil, tol_deflate=1e-10, refine=True) -> ObservabilityResult:
    """``C_T = 1 / mu_min`` for the pencil restricted to ``range(A)``.

    Directions with ``A``-eigenvalue below ``tol_deflate * max`` are deflated.
    With ``refine`` the lowest part of the spectrum is recomputed by a
    Rayleigh-Ritz step whose observed-energy matrix comes straight from
    trajectories, which keeps exponentially small ``mu`` accurate.
    """
    mu_min, mu_dense, ndefl, rdim, p = _min_eig(pencil, None, tol_deflate, refine)
    if not mu_min > 0:
        raise UnobservableError(f"unobservable at this resolution: mu_min = {mu_min!r}")
    return ObservabilityResult(C_T=1.0 / mu_min, mu_min=mu_min, deflated_dim=ndefl,
                               reduced_dim=rdim, mu_dense=mu_dense, ritz_dim=p)


# filtering ---------------------------------------------------------------------


@dataclass(frozen=True)
class FilterSpec:
    """Keep wavenumbers ``|xi| <= (1 - delta) pi / h``.

    ``physical_only`` keeps only the physical eigenvector at each retained
    wavenumber.  ``slave_pair`` ties ``U^1`` to ``U^0`` through the one-step
    phase shift of each direction instead of filtering both levels freely.
    """

    delta: float = 0.0
    physical_only: bool = True
    slave_pair: bool = False

    def __post_init__(self):
        if not 0.0 <= self.delta < 1.0:
            raise ParameterError(f"filter delta must lie in [0, 1), got {self.delta!r}")

    @property
    def retention(self):
        return 1.0 - self.delta


def filtered_basis(problem: GramianProblem, filt: FilterSpec, table=None):
    """Real orthonormal basis (columns) of the filtered initial-pair space."""
    mesh, p = problem.mesh, problem.params
    n = problem.n
    s = problem.state_dim
    table = table if table is not None else mesh_modes(problem.local, mesh.J, p.lam)
    x = mesh.centers
    edge = (1.0 - filt.delta) * np.pi / mesh.h
    cols = []
    for i, xi in enumerate(table.xis):
        if xi > edge * (1 + 1e-12) + 1e-12:
            continue
        wave = np.exp(1j * xi * x)[:, None]
        branches = [table.physical_index] if filt.physical_only else range(n)
        for m in branches:
            z0 = (wave * table.vecs[m, i][None, :]).reshape(s)
            if filt.slave_pair:
                om = temporal_frequency(table.sigma[m, i], xi, p.dt)
                for sgn in (1.0, -1.0):
                    z1 = np.exp(-1j * sgn * om * p.dt) * z0
                    cols.append(np.concatenate([z0.real, z1.real]))
                    cols.append(np.concatenate([z0.imag, z1.imag]))
            else:
                zero = np.zeros(s)
                for part in (z0.real, z0.imag):
                    cols.append(np.concatenate([part, zero]))
                    cols.append(np.concatenate([zero, part]))
    if not cols:
        raise ParameterError("filter retains no discrete wavenumber")
    B = np.array(cols).T
    U, sv, _ = np.linalg.svd(B, full_matrices=False)
    keep = sv > 1e-10 * sv.max()
    return U[:, keep]


def filtered_constant(pencil: QuadraticPencil, filt: FilterSpec, table=None, band=None,
                      tol_deflate=1e-10, refine=True) -> ObservabilityResult:
    """Observability constant of the pencil projected onto the filtered space."""
    if pencil.problem is None:
        raise ParameterError("filtering needs a pencil built by build_pencil")
    if band is not None and filt.delta < band.delta:
        warnings.warn(f"delta={filt.delta} is below the positive-velocity threshold {band.delta:.4g}",
                      stacklevel=2)
    B = filtered_basis(pencil.problem, filt, table)
    mu_min, mu_dense, ndefl, rdim, p = _min_eig(pencil, B, tol_deflate, refine)
    if not mu_min > 0:
        raise UnobservableError(f"unobservable at this resolution: mu_min = {mu_min!r}")
    return ObservabilityResult(C_T=1.0 / mu_min, mu_min=mu_min, deflated_dim=ndefl,
                               reduced_dim=rdim, mu_dense=mu_dense, ritz_dim=p)


# rates -------------------------------------------------------------------------


@dataclass(frozen=True)
class RateFit:
    r: float
    intercept: float
    r2: float
    points: tuple

    def to_json(self):
        return json.dumps({"r": self.r, "intercept": self.intercept, "r2": self.r2,
                           "points": [list(p) for p in self.points]}, indent=2) + "\n"


def fit_rate(hs, cts) -> RateFit:
    """Least squares of ``ln C_T`` against ``1/h``; ``r > 0`` means ``exp(r/h)`` growth."""
    hs = np.asarray(hs, dtype=float)
    cts = np.asarray(cts, dtype=float)
    if hs.size < 3 or hs.size != cts.size:
        raise ParameterError("rate fit needs at least three (h, C_T) rows")
    if np.unique(hs).size != hs.size:
        raise ParameterError("rate fit needs distinct mesh sizes")
    if np.any(cts <= 0) or np.any(hs <= 0):
        raise ParameterError("rate fit needs positive h and C_T")
    x = 1.0 / hs
    y = np.log(cts)
    X = np.column_stack([x, np.ones_like(x)])
    if np.linalg.matrix_rank(X) < 2:
        raise ParameterError("singular regression")
    (r, b), *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - (r * x + b)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(r=float(r), intercept=float(b), r2=r2,
                   points=tuple((float(h), float(c)) for h, c in zip(hs, cts)))


@dataclass(frozen=True)
class CTRow:
    k: int
    lam: float
    T: float
    h: float
    J: int
    N: int
    delta: float
    physical_only: bool
    C_T: float
    mu_min: float
    deflated_dim: int


@dataclass
class ObservabilityReport:
    rows: list = field(default_factory=list)
    fit: RateFit | None = None


def ct_row(k, lam, h, T=2.5, domain=(-6.0, 6.0), excluded=(-1.0, 1.0), filt: FilterSpec | None = None,
           pencil=None):
    """One row of a C_T sweep (unfiltered when ``filt`` is ``None``)."""
    params = SchemeParams(k, h, lam)
    mesh = PeriodicMesh.from_domain(h, *domain)
    pencil = pencil or build_pencil(params, mesh, ObservationRegion(*excluded), T)
    if filt is None:
        res = observability_constant(pencil)
        delta, phys = 0.0, False
    else:
        res = filtered_constant(pencil, filt)
        delta, phys = filt.delta, filt.physical_only
    return CTRow(k=k, lam=lam, T=T, h=h, J=mesh.J, N=pencil.problem.N, delta=delta,
                 physical_only=phys, C_T=res.C_T, mu_min=res.mu_min, deflated_dim=res.deflated_dim)


CT_HEADER = ["k", "lambda", "T", "h", "J", "N", "delta", "physical_only", "C_T", "mu_min",
             "deflated_dim"]


def write_ct_csv(rows, path, header_lines=()):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(CT_HEADER)
        for r in rows:
            wr.writerow([r.k, format(r.lam, ".17g"), format(r.T, ".17g"), format(r.h, ".17g"), r.J,
                         r.N, format(r.delta, ".17g"), int(r.physical_only), format(r.C_T, ".17g"),
                         format(r.mu_min, ".17g"), r.deflated_dim])


def read_ct_csv(path):
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    out = []
    for rec in csv.DictReader(lines):
        out.append(CTRow(k=int(rec["k"]), lam=float(rec["lambda"]), T=float(rec["T"]),
                         h=float(rec["h"]), J=int(rec["J"]), N=int(rec["N"]),
                         delta=float(rec["delta"]), physical_only=bool(int(rec["physical_only"])),
                         C_T=float(rec["C_T"]), mu_min=float(rec["mu_min"]),
                         deflated_dim=int(rec["deflated_dim"])))
    return out
