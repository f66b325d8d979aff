"""Gevrey-localised, physically projected, right-going high-frequency wave packets.

A packet is assembled in the discrete Fourier domain at the mesh wavenumbers
``xi_m = 2 pi m / (J h)``: each retained wavenumber carries the physical
eigenvector scaled by a smooth cutoff centred near the zone edge, and the
second time level is the first one shifted by one step of the physical
temporal frequency.  Such packets travel with the (vanishing) discrete group
velocity and so stay trapped in the unobserved region.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .basis import LocalMatrices, SchemeParams, assemble_stiffness
from .errors import ParameterError
from .evolve import ObservationRegion, PeriodicMesh, StatePair, energy, run
from .spectral import check_cfl, mesh_modes


def gevrey_bump(s, x):
    """``exp(-(1 - x^2)^(-1/(s-1)))`` on ``|x| < 1``, zero elsewhere.

    A compactly supported function of Gevrey class ``s``; its maximum is
    ``exp(-1)`` at the origin.
    """
    if not s > 1:
        raise ParameterError(f"Gevrey index must exceed 1, got {s!r}")
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    with np.errstate(divide="ignore", over="ignore", under="ignore"):
        out[inside] = np.exp(-((1.0 - x[inside] ** 2) ** (-1.0 / (s - 1.0))))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class PacketSpec:
    """Packet shape: frequency width ``rho = h^-gamma`` centred at
    ``xi_c = pi/h - (1 + margin) rho``, located at ``x_c`` in physical space."""

    gamma: float = 0.8
    s: float = 1.5
    x_c: float = 0.0
    margin: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ParameterError(f"gamma must lie in (0, 1), got {self.gamma!r}")
        if not self.s > 1.0:
            raise ParameterError(f"Gevrey index must exceed 1, got {self.s!r}")
        if not -1.0 < self.x_c < 1.0:
            raise ParameterError(f"packet centre must lie in (-1, 1), got {self.x_c!r}")
        if not self.margin >= 1.0:
            raise ParameterError(f"placement margin must be >= 1, got {self.margin!r}")

    def rho(self, h):
        return h ** (-self.gamma)

    def xi_c(self, h):
        return np.pi / h - (1.0 + self.margin) * self.rho(h)

    def cutoff(self, h, xi):
        return gevrey_bump(self.s, (np.asarray(xi, dtype=float) - self.xi_c(h)) / self.rho(h))


@dataclass(frozen=True, eq=False)
class SpectralAmplitude:
    """Packet amplitudes at the retained mesh wavenumbers.

    ``U0hat[i]`` and ``U1hat[i]`` belong to ``xis[i] = 2 pi m[i] / (J h)``;
    ``omega`` and ``vg`` are the physical-branch values there.
    """

    m: np.ndarray
    xis: np.ndarray
    U0hat: np.ndarray
    U1hat: np.ndarray
    omega: np.ndarray
    vg: np.ndarray
    vecs: np.ndarray


def _physical_table(local, mesh, lam, table):
    if table is None:
        return mesh_modes(local, mesh.J, lam)
    want = 2.0 * np.pi * np.arange(mesh.J // 2 + 1) / (mesh.J * mesh.h)
    if table.xis.shape != want.shape or not np.allclose(table.xis, want, rtol=1e-12, atol=0):
        raise ParameterError("dispersion table must be sampled at the mesh wavenumbers (see mesh_modes)")
    return table


def packet_spectrum(params: SchemeParams, mesh: PeriodicMesh, spec: PacketSpec, table=None,
                    local: LocalMatrices | None = None) -> SpectralAmplitude:
    """Amplitudes ``r h^{gamma/2} chi(xi) e^{-i xi x_c} v_ph(xi)`` and their one-step shift."""
    h = params.h
    if abs(mesh.h - h) > 1e-14 * h:
        raise ParameterError("mesh size and scheme mesh size differ")
    local = local or assemble_stiffness(params.k, h)
    check_cfl(local, params.lam)
    rho, xc = spec.rho(h), spec.xi_c(h)
    if not xc - rho > 0:
        raise ParameterError(f"packet support [{xc - rho:.6g}, {xc + rho:.6g}] must lie in (0, pi/h); "
                             "decrease h or gamma")
    table = _physical_table(local, mesh, params.lam, table)
    chi = spec.cutoff(h, table.xis)
    # the open support of the cutoff; far-edge values may underflow to 0 but stay retained
    keep = np.nonzero(np.abs(table.xis - xc) < rho)[0]
    if keep.size == 0:
        jmin = int(np.floor(np.pi / (rho * h))) + 1
        jmin += jmin % 2
        raise ParameterError(f"no mesh wavenumber falls in the packet window; need J >= {jmin}")
    xis = table.xis[keep]
    if not np.all(xis < np.pi / h):
        raise ParameterError("packet support reaches the zone edge")
    p = table.physical_index
    v = table.vecs[p, keep]  # (nk, n)
    sig = table.sigma[p, keep]
    Mv = v @ local.M.T
    vMv = np.real(np.einsum("il,il->i", np.conj(v), Mv))
    r = 1.0 / np.sqrt(sig * vMv / h)
    U0hat = (r * h ** (spec.gamma / 2) * chi[keep] * np.exp(-1j * xis * spec.x_c))[:, None] * v
    omega = table.omega[p, keep]
    U1hat = np.exp(-1j * omega * params.dt)[:, None] * U0hat
    return SpectralAmplitude(m=keep, xis=xis, U0hat=U0hat, U1hat=U1hat, omega=omega,
                             vg=table.vg[p, keep], vecs=v)


def synthesize(amp_hat, xis, mesh: PeriodicMesh):
    """Inverse periodic transform ``u_j = (1/(J h)) sum_m Uhat_m e^{i xi_m x_j}``."""
    phase = np.exp(1j * np.outer(mesh.centers, xis))  # (J, nk)
    return (phase @ amp_hat) / (mesh.J * mesh.h)


def packet_level(spectrum: SpectralAmplitude, mesh: PeriodicMesh, n, dt):
    """Exact single-mode evolution of the packet to time level ``n`` (cell-shaped)."""
    amp = np.exp(-1j * spectrum.omega * n * dt)[:, None] * spectrum.U0hat
    return synthesize(amp, spectrum.xis, mesh)


def build_packet(params: SchemeParams, mesh: PeriodicMesh, spec: PacketSpec, table=None,
                 local: LocalMatrices | None = None) -> StatePair:
    """Complex initial pair ``(U^0, U^1)`` of the packet on ``mesh``."""
    amp = packet_spectrum(params, mesh, spec, table, local)
    U0 = synthesize(amp.U0hat, amp.xis, mesh).reshape(-1)
    U1 = synthesize(amp.U1hat, amp.xis, mesh).reshape(-1)
    return StatePair(Un=U0, Unp1=U1, n=0, params=params)


@dataclass(frozen=True)
class TrapResult:
    h: float
    J: int
    N: int
    E0: float
    obs_integral: float
    fraction: float
    ct_lower_bound: float
    n_modes: int
    vg_max: float


def trap_experiment(params: SchemeParams, mesh: PeriodicMesh, spec: PacketSpec, T,
                    region: ObservationRegion | None = None, table=None) -> TrapResult:
    """Launch a packet inside the unobserved interval and measure what reaches the observer.

    ``fraction`` is the observed integral relative to ``T_realized * E0``, and
    ``ct_lower_bound = E0 / obs_integral`` bounds the observability constant
    from below.
    """
    region = region or ObservationRegion()
    half = 0.5 * mesh.length
    if T > half - 1.0:
        raise ParameterError(f"T={T!r} exceeds half the domain length minus 1 ({half - 1.0!r}); "
                             "the packet would wrap around")
    local = assemble_stiffness(params.k, params.h)
    amp = packet_spectrum(params, mesh, spec, table, local)
    U0 = synthesize(amp.U0hat, amp.xis, mesh).reshape(-1)
    U1 = synthesize(amp.U1hat, amp.xis, mesh).reshape(-1)
    state = StatePair(Un=U0, Unp1=U1, n=0, params=params)
    E0 = energy(state, local)
    res = run(state, local, T, region=region, mesh=mesh, check_stability=False)
    obs = res.obs_integral
    return TrapResult(h=params.h, J=mesh.J, N=res.N, E0=E0, obs_integral=obs,
                      fraction=obs / (res.T_realized * E0),
                      ct_lower_bound=E0 / obs if obs > 0 else float("inf"),
                      n_modes=int(amp.xis.size), vg_max=float(np.max(np.abs(amp.vg))))


TRAP_HEADER = ["h", "J", "N", "E0", "obs_integral", "fraction", "ct_lower_bound"]


def write_trap_csv(results, path, header_lines=()):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(TRAP_HEADER)
        for r in results:
            wr.writerow([format(r.h, ".17g"), r.J, r.N] + [format(getattr(r, f), ".17g")
                                                           for f in TRAP_HEADER[3:]])
