"""Leapfrog time stepping on a periodic mesh and discrete energies.

Global coefficient vectors are stored cell-major: ``U.reshape(J, k+1)`` puts
the coefficients of cell ``j`` in row ``j``.  Batched states carry extra
trailing axes, ``(J, k+1, m)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .basis import LocalMatrices, SchemeParams
from .errors import NumericalFailure, ParameterError
from .spectral import check_cfl, symbol_matrix


@dataclass(frozen=True)
class PeriodicMesh:
    """``J`` cells of width ``h`` covering ``[x_lo, x_lo + J h]`` periodically."""

    J: int
    h: float
    x_lo: float = -6.0

    def __post_init__(self):
        if int(self.J) != self.J or self.J < 8 or self.J % 2:
            raise ParameterError(f"number of cells must be an even integer >= 8, got {self.J!r}")
        if not self.h > 0:
            raise ParameterError(f"mesh size must be positive, got {self.h!r}")
        object.__setattr__(self, "J", int(self.J))

    @classmethod
    def from_domain(cls, h, lo=-6.0, hi=6.0):
        length = hi - lo
        J = int(round(length / h))
        if abs(J * h - length) > 1e-12 * abs(length):
            raise ParameterError(f"mesh size {h!r} does not divide the domain [{lo}, {hi}]")
        return cls(J=J, h=float(h), x_lo=float(lo))

    @property
    def x_hi(self):
        return self.x_lo + self.J * self.h

    @property
    def length(self):
        return self.J * self.h

    @property
    def centers(self):
        return self.x_lo + (np.arange(self.J) + 0.5) * self.h

    @property
    def frequencies(self):
        """Discrete wavenumbers ``2 pi m / (J h)`` for ``m in [-J/2, J/2)``."""
        m = np.arange(-self.J // 2, self.J // 2)
        return 2.0 * np.pi * m / (self.J * self.h)


@dataclass(frozen=True)
class ObservationRegion:
    """Cells whose centre lies outside ``[a, b]`` are observed.

    A centre falling on ``a`` or ``b`` (up to rounding) counts as unobserved.
    """

    a: float = -1.0
    b: float = 1.0

    def __post_init__(self):
        if not self.a < self.b:
            raise ParameterError(f"excluded interval needs a < b, got [{self.a}, {self.b}]")

    def observed(self, mesh: PeriodicMesh):
        if not (mesh.x_lo < self.a and self.b < mesh.x_hi):
            raise ParameterError(
                f"excluded interval [{self.a}, {self.b}] must lie strictly inside the domain"
            )
        x = mesh.centers
        tol = 1e-9 * mesh.h
        return ~((x >= self.a - tol) & (x <= self.b + tol))


WHOLE_DOMAIN = None


@dataclass(frozen=True, eq=False)
class StatePair:
    """Two consecutive time levels ``(U^n, U^{n+1})``."""

    Un: np.ndarray
    Unp1: np.ndarray
    n: int
    params: SchemeParams

    def __post_init__(self):
        if self.Un.shape != self.Unp1.shape:
            raise ParameterError("time levels must have the same shape")
        if self.Un.shape[0] % (self.params.k + 1):
            raise ParameterError("state length is not a multiple of k+1")

    @property
    def J(self):
        return self.Un.shape[0] // (self.params.k + 1)

    def cells(self, U):
        return U.reshape((self.J, self.params.k + 1) + U.shape[1:])


# block operators ---------------------------------------------------------------


def _block_apply(B, U):
    """``out[:, a] = sum_b B[a, b] U[:, b]`` evaluated elementwise.

    Avoids BLAS so that every cell sees the same sequence of roundings, which
    keeps periodic shifts bit-exact.
    """
    n = B.shape[0]
    out = np.zeros(U.shape, dtype=np.result_type(B, U))
    for a in range(n):
        acc = out[:, a]
        for b in range(n):
            if B[a, b] != 0.0:
                acc += B[a, b] * U[:, b]
    return out


def apply_stiffness(local: LocalMatrices, U):
    """Block-tridiagonal product ``K U`` on a periodic mesh; ``U`` is ``(J, n, ...)``."""
    return (_block_apply(local.K0, U)
            + _block_apply(local.Km1, np.roll(U, 1, axis=0))
            + _block_apply(local.Kp1, np.roll(U, -1, axis=0)))


def apply_mass(local: LocalMatrices, U):
    return _block_apply(local.M, U)


def apply_flux(local: LocalMatrices, U):
    """Per-cell flux residual ``(D U)_j = A0 u_j + Am1 u_{j-1}`` so that ``q_j = M^-1 (D U)_j``."""
    A0, Am1 = local.flux
    return _block_apply(A0, U) + _block_apply(Am1, np.roll(U, 1, axis=0))


def observed_faces(observed):
    """Cells whose flux variable is observed: the cell and its upwind neighbour ``j-1`` both are."""
    return observed & np.roll(observed, 1)


class Stepper:
    """Leapfrog update ``U^{n+2} = 2U^{n+1} - U^n - dt^2 M^-1 K U^{n+1}``."""

    def __init__(self, local: LocalMatrices, dt):
        self.local = local
        self.dt = float(dt)
        minv = np.linalg.inv(local.M)
        c = self.dt * self.dt
        self._s0 = c * (minv @ local.K0)
        self._sm1 = c * (minv @ local.Km1)
        self._sp1 = c * (minv @ local.Kp1)

    def advance(self, U0, U1):
        """Return ``U^{n+2}`` from cell-shaped ``U^n``, ``U^{n+1}``."""
        lap = (_block_apply(self._s0, U1)
               + _block_apply(self._sm1, np.roll(U1, 1, axis=0))
               + _block_apply(self._sp1, np.roll(U1, -1, axis=0)))
        return 2.0 * U1 - U0 - lap


def step(state: StatePair, local: LocalMatrices, stepper: Stepper | None = None) -> StatePair:
    """Advance one leapfrog step."""
    stepper = stepper or Stepper(local, state.params.dt)
    U0, U1 = state.cells(state.Un), state.cells(state.Unp1)
    U2 = stepper.advance(U0, U1)
    if not np.all(np.isfinite(U2)):
        raise NumericalFailure(f"non-finite values at step {state.n + 1}", step=state.n + 1)
    return StatePair(Un=state.Unp1, Unp1=U2.reshape(state.Un.shape), n=state.n + 1,
                     params=state.params)


# energies ----------------------------------------------------------------------


def _hnorm(Sv, v):
    """``Re <v, S v>`` summed over cells and components."""
    return float(np.real(np.sum(np.conj(v) * Sv)))


def _restricted_kform(local, U, faces):
    """``sum over faces j of q_j^H M q_j`` with ``M q_j = (D U)_j``."""
    DU = apply_flux(local, U)[faces]
    return _hnorm(_block_apply(np.linalg.inv(local.M), DU), DU)


def energy_cells(U0, U1, local: LocalMatrices, dt, observed=None):
    """Discrete energy of the cell-shaped pair ``(U0, U1)``.

    With ``observed`` (boolean per cell) the energy densities are summed over
    the observation region only: the kinetic part over observed cells and the
    potential part over flux variables ``q_j`` whose stencil ``{j-1, j}`` lies
    in the region.  The restricted energy vanishes on constants and is
    non-negative under the CFL condition, like the total energy.
    """
    d = (U1 - U0) / dt
    if observed is None:
        kin = 0.5 * _hnorm(apply_mass(local, d), d)
        kform = lambda U: _hnorm(apply_stiffness(local, U), U)
    else:
        kin = 0.5 * _hnorm(apply_mass(local, d)[observed], d[observed])
        faces = observed_faces(observed)
        kform = lambda U: _restricted_kform(local, U, faces)
    return kin + 0.25 * kform(U1) + 0.25 * kform(U0) - 0.25 * dt * dt * kform(d)


def energy(state: StatePair, local: LocalMatrices, region: ObservationRegion | None = None,
           mesh: PeriodicMesh | None = None):
    """Total energy of ``state``, or its part on ``region`` when given."""
    observed = None
    if region is not None:
        mesh = mesh or PeriodicMesh(state.J, state.params.h)
        observed = region.observed(mesh)
    return energy_cells(state.cells(state.Un), state.cells(state.Unp1), local,
                        state.params.dt, observed)


def kform_direct(local: LocalMatrices, U):
    """``||U||_K^2`` by block-tridiagonal application."""
    return _hnorm(apply_stiffness(local, U), U)


def kform_parseval(local: LocalMatrices, U):
    """``||U||_K^2`` evaluated mode by mode in the discrete Fourier domain."""
    J = U.shape[0]
    F = np.fft.fft(U, axis=0)
    m = np.fft.fftfreq(J, d=1.0 / J)
    xi = 2.0 * np.pi * m / (J * local.h)
    Kx = symbol_matrix(local, xi)
    return float(np.real(np.einsum("ma,mab,mb->", np.conj(F), Kx, F))) / J


# trajectories ------------------------------------------------------------------


@dataclass(eq=False)
class RunResult:
    n: np.ndarray
    t: np.ndarray
    E_total: np.ndarray
    E_obs: np.ndarray
    final: StatePair
    obs_integral: float
    N: int
    T_realized: float = field(default=0.0)


def n_steps(T, dt):
    N = int(round(T / dt))
    if N < 1:
        raise ParameterError(f"no steps: T={T!r} is shorter than dt={dt!r}")
    return N


def run(initial: StatePair, local: LocalMatrices, T, region: ObservationRegion | None = None,
        mesh: PeriodicMesh | None = None, check_stability=True) -> RunResult:
    """Run ``N = round(T/dt)`` steps and record energies of pairs ``n = 0..N-1``.

    ``obs_integral`` is ``dt * sum_{n<N} E_obs^n``; the returned final state is
    ``(U^N, U^{N+1})``.
    """
    p = initial.params
    dt = p.dt
    N = n_steps(T, dt)
    if check_stability:
        check_cfl(local, p.lam)
    mesh = mesh or PeriodicMesh(initial.J, p.h)
    observed = region.observed(mesh) if region is not None else None
    stepper = Stepper(local, dt)
    U0, U1 = initial.cells(initial.Un), initial.cells(initial.Unp1)
    e_tot = np.empty(N)
    e_obs = np.empty(N)
    for i in range(N):
        e_tot[i] = energy_cells(U0, U1, local, dt)
        e_obs[i] = energy_cells(U0, U1, local, dt, observed) if observed is not None else e_tot[i]
        U2 = stepper.advance(U0, U1)
        if not np.all(np.isfinite(U2)):
            raise NumericalFailure(f"non-finite values at step {initial.n + i + 2}", step=initial.n + i + 2)
        U0, U1 = U1, U2
    shape = initial.Un.shape
    final = StatePair(Un=U0.reshape(shape), Unp1=U1.reshape(shape), n=initial.n + N, params=p)
    idx = np.arange(N)
    return RunResult(n=idx, t=idx * dt, E_total=e_tot, E_obs=e_obs, final=final,
                     obs_integral=float(dt * np.sum(e_obs)), N=N, T_realized=N * dt)


def write_energy_csv(result: RunResult, path, stride=1, header_lines=()):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["n", "t", "E_total", "E_obs"])
        for i in range(0, len(result.n), max(1, int(stride))):
            wr.writerow([int(result.n[i]), format(result.t[i], ".17g"),
                         format(result.E_total[i], ".17g"), format(result.E_obs[i], ".17g")])
