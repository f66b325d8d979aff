"""Frequency symbol, branch-tracked dispersion relations and group velocities.

For a wavenumber ``xi`` in the Brillouin zone ``[-pi/h, pi/h]`` the scheme
reduces to the ``(k+1) x (k+1)`` generalized Hermitian problem
``(Kxi - sigma M) v = 0`` with ``Kxi = K0 + Km1 e^{-i xi h} + Kp1 e^{i xi h}``.
The leapfrog update turns each eigenvalue into a temporal frequency
``omega = sign(xi) (2/dt) arcsin(sqrt(sigma) dt / 2)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .basis import LocalMatrices, SchemeParams, assemble_stiffness
from .errors import CFLViolation, ParameterError, TrackingError

ZONE_TOL = 1e-12
TRACK_THRESHOLD = 0.5
CRIT_REL = 1e-8
ZERO_SIGMA = 1e-12
V_FLOOR = 1e-6

FLAG_NONE = ""
FLAG_CRITICAL = "critical"
FLAG_ORIGIN = "origin-limit"


def _zone_edge(h):
    return np.pi / h


def _check_zone(xi, h):
    xi = np.asarray(xi, dtype=float)
    edge = _zone_edge(h)
    if np.any(np.abs(xi) > edge * (1 + ZONE_TOL) + ZONE_TOL):
        bad = xi[np.abs(xi) > edge * (1 + ZONE_TOL) + ZONE_TOL].ravel()[0]
        raise ParameterError(f"wavenumber {bad!r} lies outside [-pi/h, pi/h] = ±{edge!r}")
    return xi


@dataclass(frozen=True, eq=False)
class SymbolSample:
    xi: float
    Kxi: np.ndarray


def symbol_matrix(local: LocalMatrices, xi):
    """Symbol for a scalar or an array of wavenumbers (stacked on axis 0)."""
    xi = _check_zone(xi, local.h)
    # K(0) + Km1 (e^{-i theta} - 1) + Kp1 (e^{i theta} - 1), with e^{i theta} - 1 formed
    # without cancellation, keeps small eigenvalues accurate near xi = 0
    theta = xi * local.h
    em1 = (-2.0 * np.sin(0.5 * theta) ** 2 + 1j * np.sin(theta))[..., None, None]
    return local.K_origin + local.Km1 * np.conj(em1) + local.Kp1 * em1


def symbol_derivative(local: LocalMatrices, xi):
    """d/dxi of the symbol: ``i h (Kp1 e^{i xi h} - Km1 e^{-i xi h})``."""
    xi = np.asarray(xi, dtype=float)
    ph = np.exp(1j * xi * local.h)[..., None, None]
    return 1j * local.h * (local.Kp1 * ph - local.Km1 * np.conj(ph))


def symbol(local: LocalMatrices, xi) -> SymbolSample:
    """Evaluate the symbol at a single wavenumber."""
    xi = float(xi)
    return SymbolSample(xi=xi, Kxi=symbol_matrix(local, xi))


def _solve_pencil(local, xi):
    """Eigenpairs of ``(Kxi, M)`` at each xi, ascending, M-orthonormal."""
    L = np.linalg.cholesky(local.M)
    Kxi = symbol_matrix(local, np.atleast_1d(xi))
    Linv = sla.solve_triangular(L, np.eye(local.n), lower=True)
    Kt = Linv @ Kxi @ Linv.T
    Kt = 0.5 * (Kt + np.conj(np.swapaxes(Kt, -1, -2)))
    w, Y = np.linalg.eigh(Kt)
    V = Linv.T @ Y
    return w, V


def fix_phase(V, M=None, gauge="max"):
    """Normalise eigenvector phases in place-free fashion.

    ``V`` has eigenvectors in its columns (last axis indexes vectors).
    ``gauge="max"`` makes the largest-modulus component real positive (first
    index on ties); ``gauge="average"`` makes the cell average ``(M v)_0`` real
    positive and falls back to ``"max"`` where the average vanishes.
    """
    V = np.array(V, dtype=complex)
    mod = np.abs(V)
    idx = np.argmax(mod, axis=-2)
    ref = np.take_along_axis(V, idx[..., None, :], axis=-2)[..., 0, :]
    if gauge == "average":
        if M is None:
            raise ParameterError("average gauge needs the mass matrix")
        avg = (M[0] @ V) if V.ndim == 2 else np.einsum("l,...lm->...m", M[0], V)
        scale = np.max(np.abs(V), axis=-2) * M[0, 0]
        ok = np.abs(avg) > 1e-8 * scale
        ref = np.where(ok, avg, ref)
    elif gauge != "max":
        raise ParameterError(f"unknown gauge {gauge!r}")
    phase = np.where(np.abs(ref) > 0, np.conj(ref) / np.where(np.abs(ref) > 0, np.abs(ref), 1), 1)
    return V * phase[..., None, :]


@dataclass(eq=False)
class DispersionTable:
    """Branch-tracked eigen-data on a sorted wavenumber grid.

    Arrays are indexed ``[branch, grid index]``; ``vecs`` is
    ``[branch, grid index, component]``.
    """

    params: SchemeParams
    local: LocalMatrices
    xis: np.ndarray
    sigma: np.ndarray
    vecs: np.ndarray
    physical_index: int
    omega: np.ndarray = field(default=None)
    vg: np.ndarray = field(default=None)
    flags: np.ndarray = field(default=None)

    @property
    def n_branches(self):
        return self.sigma.shape[0]

    def index_of(self, xi):
        i = int(np.argmin(np.abs(self.xis - xi)))
        return i

    @property
    def physical(self):
        p = self.physical_index
        return self.sigma[p], self.omega[p], self.vg[p]


def _track(xis, w, V, M):
    """Greedy continuation by maximal M-overlap; returns permuted (w, V)."""
    npts, n = w.shape
    order = np.empty((npts, n), dtype=int)
    order[0] = np.arange(n)
    for i in range(1, npts):
        prev = V[i - 1][:, order[i - 1]]
        ov = np.abs(np.conj(prev.T) @ M @ V[i])
        assign = -np.ones(n, dtype=int)
        used = np.zeros(n, dtype=bool)
        pairs = np.dstack(np.unravel_index(np.argsort(-ov, axis=None), ov.shape))[0]
        for a, b in pairs:
            if assign[a] < 0 and not used[b]:
                assign[a] = b
                used[b] = True
        if np.min(ov[np.arange(n), assign]) < TRACK_THRESHOLD:
            raise TrackingError(
                f"branch tracking failed between xi={float(xis[i - 1])!r} and xi={float(xis[i])!r}; refine the grid",
                xi=float(xis[i]),
            )
        order[i] = assign
    ws = np.take_along_axis(w, order, axis=1)
    Vs = np.take_along_axis(V, order[:, None, :], axis=2)
    return ws.T, np.transpose(Vs, (2, 0, 1))


def temporal_frequency(sigma, xi, dt):
    """Discrete temporal frequency of the leapfrog scheme.

    Raises :class:`CFLViolation` if ``sigma dt^2 > 4`` beyond rounding.
    ``sign(0)`` is taken as ``+1`` so that a branch with ``sigma(0) > 0``
    reports its right-going limit.
    """
    sigma = np.asarray(sigma, dtype=float)
    xi = np.asarray(xi, dtype=float)
    ratio = np.clip(sigma, 0.0, None) * dt * dt / 4.0
    worst = float(np.max(ratio)) if ratio.size else 0.0
    if worst > 1.0 + 1e-12:
        raise CFLViolation(f"CFL violated: max sigma*dt^2/4 = {worst!r} > 1", margin=worst)
    sgn = np.where(xi < 0, -1.0, 1.0)
    return sgn * (2.0 / dt) * np.arcsin(np.sqrt(np.minimum(ratio, 1.0)))


def _hf_derivative(local, xis, vecs):
    """Hellmann-Feynman ``sigma'(xi) = v^H K'(xi) v`` for M-normalised v."""
    dK = symbol_derivative(local, xis)  # (npts, n, n)
    return np.real(np.einsum("bil,ilm,bim->bi", np.conj(vecs), dK, vecs))


def _group_velocities(table: DispersionTable):
    dt = table.params.dt
    h = table.params.h
    sig = table.sigma
    dsig = _hf_derivative(table.local, table.xis, table.vecs)
    sgn = np.where(table.xis < 0, -1.0, 1.0)
    crit = (4.0 - sig * dt * dt) <= CRIT_REL * 4.0
    zero = sig <= ZERO_SIGMA / h**2
    flags = np.full(sig.shape, FLAG_NONE, dtype=object)
    flags[zero] = FLAG_ORIGIN
    flags[crit] = FLAG_CRITICAL
    with np.errstate(divide="ignore", invalid="ignore"):
        vg = sgn * dsig / (np.sqrt(np.clip(4.0 - sig * dt * dt, 0, None)) * np.sqrt(np.clip(sig, 0, None)))
    bad = crit | zero
    for m, i in zip(*np.nonzero(bad)):
        if zero[m, i] and m == table.physical_index and abs(table.xis[i]) <= 1e-12 / h:
            vg[m, i] = 1.0
            continue
        vg[m, i] = _extrapolate(table.xis, vg[m], bad[m], i)
    return vg, flags


def _extrapolate(xis, vals, bad, i, npts=3):
    """Quadratic one-sided extrapolation of ``vals`` to ``xis[i]``."""
    left = [j for j in range(i - 1, -1, -1) if not bad[j]][:npts]
    right = [j for j in range(i + 1, len(xis)) if not bad[j]][:npts]
    # prefer the side whose samples are closer to i
    cands = [s for s in (left, right) if len(s) == npts]
    if not cands:
        return np.nan
    side = min(cands, key=lambda s: abs(xis[s[-1]] - xis[i]))
    x = xis[side] - xis[i]
    coef = np.polyfit(x, vals[side], npts - 1)
    return float(np.polyval(coef, 0.0))


def eig_branches(local: LocalMatrices, xi_grid, lam, gauge="max") -> DispersionTable:
    """Solve the symbol pencil on ``xi_grid`` and continue branches across it.

    ``xi_grid`` must be sorted, lie within the zone and contain ``0``.  The
    physical branch is the one with vanishing eigenvalue at ``xi = 0``.
    """
    xis = _check_zone(np.asarray(xi_grid, dtype=float), local.h)
    if xis.ndim != 1 or np.any(np.diff(xis) <= 0):
        raise ParameterError("xi grid must be one-dimensional and strictly increasing")
    zero_idx = np.nonzero(np.abs(xis) <= 1e-14 / local.h)[0]
    if zero_idx.size == 0:
        raise ParameterError("xi grid must contain 0")
    params = SchemeParams(local.k, local.h, lam)
    w, V = _solve_pencil(local, xis)
    sigma, vecs = _track(xis, w, V, local.M)
    vecs = np.transpose(fix_phase(np.transpose(vecs, (1, 2, 0)), local.M, gauge), (2, 0, 1))
    i0 = int(zero_idx[0])
    phys = int(np.argmin(sigma[:, i0]))
    table = DispersionTable(params=params, local=local, xis=xis, sigma=sigma, vecs=vecs,
                            physical_index=phys)
    table.omega = temporal_frequency(sigma, xis[None, :], params.dt)
    table.vg, table.flags = _group_velocities(table)
    return table


def group_velocity(table: DispersionTable, m, i):
    """Group velocity of branch ``m`` at grid index ``i`` (see ``table.flags``)."""
    return float(table.vg[m, i])


def default_grid(h, n=1025, levels=10):
    """Uniform grid on the zone plus geometric refinement near ``0`` and ``±pi/h``."""
    edge = _zone_edge(h)
    base = np.linspace(-edge, edge, n)
    d = base[1] - base[0]
    fine = d / 2.0 ** np.arange(1, levels + 1)
    extra = np.concatenate([fine, -fine, edge - fine, -edge + fine])
    grid = np.unique(np.concatenate([base, extra, [0.0]]))
    grid[0], grid[-1] = -edge, edge
    return grid


def dispersion_table(k, h, lam, n=1025, levels=10, gauge="max"):
    """Convenience wrapper: assemble blocks and tabulate on :func:`default_grid`."""
    local = assemble_stiffness(k, h)
    return eig_branches(local, default_grid(h, n, levels), lam, gauge=gauge)


def mesh_modes(local: LocalMatrices, J, lam, refine=8, gauge="average"):
    """Eigen-data at the non-negative mesh wavenumbers ``2 pi m / (J h)``, ``m = 0..J/2``.

    Branches are continued on a grid ``refine`` times finer and sampled back.
    Returns a :class:`DispersionTable` whose grid is exactly those wavenumbers.
    """
    h = local.h
    fine = 2.0 * np.pi * np.arange(refine * J // 2 + 1) / (refine * J * h)
    table = eig_branches(local, fine, lam, gauge=gauge)
    idx = np.arange(0, fine.size, refine)
    table.xis = 2.0 * np.pi * np.arange(J // 2 + 1) / (J * h)
    table.sigma = table.sigma[:, idx]
    table.vecs = table.vecs[:, idx]
    table.omega = table.omega[:, idx]
    table.vg = table.vg[:, idx]
    table.flags = table.flags[:, idx]
    return table


@dataclass(frozen=True)
class CFLReport:
    margin: float
    xi_max: float
    physical_margin: float
    lam_max: float

    @property
    def stable(self):
        return self.margin <= 1.0

    @property
    def strictly_stable_physical(self):
        return self.physical_margin < 1.0


def cfl_margin(local: LocalMatrices, lam, n_samples=256) -> CFLReport:
    """``max sigma dt^2 / 4`` over all branches, sampled on ``[0, pi/h]``.

    ``physical_margin`` is the same quantity for the physical branch alone.
    """
    if n_samples < 64:
        raise ParameterError("cfl_margin needs at least 64 samples")
    h = local.h
    dt = lam * h
    xis = np.linspace(0.0, _zone_edge(h), n_samples)
    w, V = _solve_pencil(local, xis)
    sigma, _ = _track(xis, w, V, local.M)
    phys = int(np.argmin(sigma[:, 0]))
    m, i = np.unravel_index(np.argmax(sigma), sigma.shape)
    smax = float(sigma[m, i])
    margin = smax * dt * dt / 4.0
    return CFLReport(
        margin=margin,
        xi_max=float(xis[i]),
        physical_margin=float(np.max(sigma[phys])) * dt * dt / 4.0,
        lam_max=float(2.0 / (h * np.sqrt(smax))),
    )


def check_cfl(local, lam, n_samples=256):
    rep = cfl_margin(local, lam, n_samples)
    if rep.margin > 1.0 + 1e-12:
        raise CFLViolation(
            f"CFL ratio {lam} exceeds the stability limit {rep.lam_max:.6g} (k={local.k})",
            margin=rep.margin,
            lambda_max=rep.lam_max,
        )
    return rep


@dataclass(frozen=True)
class BandReport:
    eta: float
    delta: float
    vg_min: float


def positive_band(table: DispersionTable) -> BandReport:
    """Largest band ``|xi| <= eta/h`` with positive physical group velocity."""
    h = table.params.h
    sel = table.xis >= 0
    xis = table.xis[sel]
    if np.count_nonzero(xis <= _zone_edge(h)) < 1024:
        raise ParameterError("positive_band needs at least 1024 samples on [0, pi/h]")
    vg = table.vg[table.physical_index][sel]
    if not vg[0] > V_FLOOR:
        raise ParameterError(f"physical group velocity at 0 is {vg[0]!r}; dispersion data defective")
    below = np.nonzero(~(vg > V_FLOOR))[0]
    last = len(xis) - 1 if below.size == 0 else below[0] - 1
    eta = float(min(xis[last] * h, np.pi))
    return BandReport(eta=eta, delta=1.0 - eta / np.pi, vg_min=float(np.min(vg[: last + 1])))


def write_dispersion_csv(table: DispersionTable, path, header_lines=()):
    """Rows sorted by xi then branch: ``xi,branch,sigma,omega,vg,is_physical,flag``."""
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["xi", "branch", "sigma", "omega", "vg", "is_physical", "flag"])
        for i, xi in enumerate(table.xis):
            for m in range(table.n_branches):
                wr.writerow([
                    format(xi, ".17g"),
                    m,
                    format(table.sigma[m, i], ".17g"),
                    format(table.omega[m, i], ".17g"),
                    format(table.vg[m, i], ".17g"),
                    int(m == table.physical_index),
                    table.flags[m, i],
                ])
