from fractions import Fraction

import numpy as np
import pytest

from wavegate.basis import (K_MAX, SchemeParams, assemble_stiffness, flux_blocks, local_mass)
from wavegate.errors import ParameterError


def _quadrature_blocks(k, h):
    """Independent assembly by Gauss quadrature of the flux form on the reference cell."""
    x, w = np.polynomial.legendre.leggauss(k + 4)
    n = k + 1
    phi = np.array([x**l for l in range(n)])
    dphi = np.array([l * x ** (l - 1) if l else 0 * x for l in range(n)])
    M = (h / 2) * (phi * w) @ phi.T
    # M q_j = -int u phi_m' + u_j(1^-) phi_m(1) - u_{j-1}(1^-) phi_m(-1), with phi in scaled variable
    A0 = -(dphi * w) @ phi.T + np.outer(np.ones(n), np.ones(n))
    Am1 = -np.outer([(-1.0) ** m for m in range(n)], np.ones(n))
    Minv = np.linalg.inv(M)
    K0 = A0.T @ Minv @ A0 + Am1.T @ Minv @ Am1
    return M, A0, Am1, K0, A0.T @ Minv @ Am1, Am1.T @ Minv @ A0


def test_mass_examples():
    assert np.array_equal(local_mass(0, 1.0), [[1.0]])
    assert np.allclose(local_mass(1, 1.0), [[1, 0], [0, 1 / 3]], rtol=0, atol=1e-16)
    assert np.allclose(local_mass(2, 2.0), 2 * np.array([[1, 0, 1 / 3], [0, 1 / 3, 0], [1 / 3, 0, 1 / 5]]),
                       rtol=0, atol=1e-15)


@pytest.mark.parametrize("k", range(K_MAX + 1))
def test_mass_formula_and_spd(k):
    h = 0.7
    M = local_mass(k, h)
    for l in range(k + 1):
        for m in range(k + 1):
            want = float(Fraction(1, l + m + 1)) * h if (l + m) % 2 == 0 else 0.0
            assert M[l, m] == pytest.approx(want, rel=1e-15, abs=0)
    assert np.all(np.linalg.eigvalsh(M) > 0)


def test_flux_examples():
    A0, Am1 = flux_blocks(0)
    assert np.array_equal(A0, [[1.0]]) and np.array_equal(Am1, [[-1.0]])
    A0, Am1 = flux_blocks(1)
    assert np.array_equal(A0, [[1, 1], [-1, 1]])
    assert np.array_equal(Am1, [[-1, -1], [1, 1]])
    for k in range(K_MAX + 1):
        assert np.array_equal(flux_blocks(k)[0][0], np.ones(k + 1))


@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_flux_matches_quadrature(k):
    _, A0q, Am1q, *_ = _quadrature_blocks(k, 1.0)
    A0, Am1 = flux_blocks(k)
    assert np.allclose(A0, A0q, atol=1e-13)
    assert np.allclose(Am1, Am1q, atol=1e-13)


def test_stiffness_examples():
    h = 0.5
    L = assemble_stiffness(0, h)
    assert np.allclose([L.K0[0, 0], L.Km1[0, 0], L.Kp1[0, 0]], [2 / h, -1 / h, -1 / h], rtol=1e-15)
    L = assemble_stiffness(1, h)
    assert np.allclose(L.K0 * h, [[8, 2], [2, 8]], rtol=0, atol=1e-13)
    assert np.allclose(L.Km1 * h, [[-4, -4], [2, 2]], rtol=0, atol=1e-13)
    assert np.array_equal(L.Kp1, L.Km1.T)


@pytest.mark.parametrize("k", [0, 1, 2, 4])
def test_stiffness_matches_quadrature_assembly(k):
    h = 0.3
    _, _, _, K0, Km1, Kp1 = _quadrature_blocks(k, h)
    L = assemble_stiffness(k, h)
    scale = np.max(np.abs(K0))
    for a, b in ((L.K0, K0), (L.Km1, Km1), (L.Kp1, Kp1)):
        assert np.max(np.abs(a - b)) <= 1e-10 * scale


@pytest.mark.parametrize("k", range(K_MAX + 1))
@pytest.mark.parametrize("h", [2.0, 1.0, 0.5])
def test_symmetries_and_kernel(k, h):
    L = assemble_stiffness(k, h)
    assert np.array_equal(L.K0, L.K0.T)
    assert np.array_equal(L.Km1.T, L.Kp1)
    e0 = np.zeros(k + 1)
    e0[0] = 1.0
    row = (L.K0 + L.Km1 + L.Kp1) @ e0
    assert np.max(np.abs(row)) <= 1e-12 * np.max(np.abs(L.K0))


@pytest.mark.parametrize("k", range(K_MAX + 1))
def test_pure_inverse_h_scaling(k):
    ref = assemble_stiffness(k, 1.0)
    for h in (2.0, 0.5, 0.25):
        L = assemble_stiffness(k, h)
        assert np.array_equal(L.K0 * h, ref.K0 * 1.0)


def _exact_composition(k):
    """``A0^T M^-1 A0 + Am1^T M^-1 Am1`` for h = 1 in rational arithmetic."""
    n = k + 1
    M = [[Fraction(1, l + m + 1) if (l + m) % 2 == 0 else Fraction(0) for m in range(n)] for l in range(n)]
    A0, Am1 = ([[Fraction(v).limit_denominator(1000) for v in row] for row in B] for B in flux_blocks(k))

    def solve(rhs):  # M X = rhs by Gaussian elimination
        aug = [M[i][:] + rhs[i][:] for i in range(n)]
        for c in range(n):
            p = next(r for r in range(c, n) if aug[r][c] != 0)
            aug[c], aug[p] = aug[p], aug[c]
            aug[c] = [v / aug[c][c] for v in aug[c]]
            for r in range(n):
                if r != c:
                    aug[r] = [a - aug[r][c] * b for a, b in zip(aug[r], aug[c])]
        return [row[n:] for row in aug]

    def quad(B):
        X = solve(B)
        return [[sum(B[t][i] * X[t][j] for t in range(n)) for j in range(n)] for i in range(n)]

    Q0, Q1 = quad(A0), quad(Am1)
    return np.array([[float(Q0[i][j] + Q1[i][j]) for j in range(n)] for i in range(n)])


@pytest.mark.parametrize("k", range(K_MAX + 1))
def test_factorization(k):
    L = assemble_stiffness(k, 1.0)
    R = L.K0 - _exact_composition(k)
    assert np.max(np.abs(R)) <= 1e-13 * np.max(np.abs(L.K0))


@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_global_operator_psd(k, rng):
    L = assemble_stiffness(k, 1.0)
    n, J = k + 1, 3
    K = np.zeros((n * J, n * J))
    for j in range(J):
        s = slice(n * j, n * j + n)
        K[s, s] += L.K0
        K[s, slice(n * ((j - 1) % J), n * ((j - 1) % J) + n)] += L.Km1
        K[s, slice(n * ((j + 1) % J), n * ((j + 1) % J) + n)] += L.Kp1
    for _ in range(50):
        u = rng.standard_normal(n * J)
        assert u @ K @ u >= -1e-12 * (u @ u)


@pytest.mark.parametrize("bad", [-1, 9, 1.5])
def test_degree_rejected(bad):
    with pytest.raises(ParameterError):
        local_mass(bad, 1.0)
    with pytest.raises(ParameterError):
        assemble_stiffness(bad, 1.0)


@pytest.mark.parametrize("h", [0.0, -1.0, float("nan")])
def test_mesh_size_rejected(h):
    with pytest.raises(ParameterError):
        local_mass(1, h)


def test_scheme_params():
    p = SchemeParams(1, 0.25, 0.3)
    assert p.dt == 0.3 * 0.25
    with pytest.raises(ParameterError):
        SchemeParams(1, 0.25, 0.0)
    with pytest.raises(ParameterError):
        SchemeParams(10, 0.25, 0.1)


def test_json_round_trip():
    import json

    L = assemble_stiffness(2, 0.1)
    d = json.loads(L.to_json())
    assert set(d) == {"k", "h", "M", "K0", "Km1", "Kp1"}
    for key in ("M", "K0", "Km1", "Kp1"):
        assert np.array_equal(np.array(d[key]), getattr(L, key))
    assert L.to_json() == assemble_stiffness(2, 0.1).to_json()
