"""Linear spectral machinery: modal bases, dynamic stiffness and fast compliance.

The dynamic stiffness block of harmonic ``n`` at the complex rate ``lam`` is
``S_n = K + n*lam*C + (n*lam)**2 * M``.  Its inverse (the dynamic compliance)
is assembled from a one-off spectral decomposition instead of refactorizing
``S_n`` for every ``lam``: from the real symmetric eigenpairs when ``C = 0``,
or from the state-space eigenpairs of the general damped system.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg


class NearResonantDenominator(ArithmeticError):
    """Spectral compliance denominator too close to zero for a reliable inverse."""

    def __init__(self, n, worst, message=None):
        self.n = n
        self.worst = worst
        super().__init__(
            message
            or f"harmonic {n}: smallest relative denominator {worst:.3e} below guard"
        )


class DegenerateSpectrum(RuntimeError):
    """Coincident eigenvalues prevent the bi-orthogonal state-space decomposition."""


@dataclass(frozen=True)
class LinearModalBasis:
    """Mass-normalized real modes of an undamped system, ascending frequencies."""

    omegas: np.ndarray
    phis: np.ndarray  # columns are modes, phi.T @ M @ phi = I

    @property
    def n_dof(self):
        return self.phis.shape[0]


def real_modes(M, K):
    """Full mass-normalized spectrum of the symmetric pencil ``(K, M)``.

    Raises
    ------
    ValueError
        If either matrix is not symmetric or the spectrum is not strictly
        positive (free-free systems are out of scope here).
    """
    M = np.asarray(M, dtype=float)
    K = np.asarray(K, dtype=float)
    if not np.allclose(M, M.T, rtol=1e-8, atol=0.0):
        raise ValueError("mass matrix must be symmetric")
    if not np.allclose(K, K.T, rtol=1e-8, atol=1e-12 * max(np.max(np.abs(K)), 1.0)):
        raise ValueError("stiffness matrix must be symmetric")
    w2, phi = scipy.linalg.eigh(K, M)
    if w2[0] <= 0.0:
        raise ValueError("stiffness pencil has non-positive eigenvalues")
    return LinearModalBasis(omegas=np.sqrt(w2), phis=phi)


def dyn_stiffness(n, lam, model):
    """Dynamic stiffness block ``S_n(lam)`` of a second-order model."""
    if n < 0:
        raise ValueError("harmonic index must be >= 0")
    S = model.K + (n * lam) ** 2 * model.M
    if model.C is not None and np.any(model.C):
        S = S + (n * lam) * model.C
    return S.astype(complex)


def spectral_denominators(n, lam, basis):
    return basis.omegas**2 + (n * lam) ** 2


def check_spectral_guard(n, lam, basis, eps=1e-6):
    """Relative distance of the closest spectral denominator to zero."""
    den = spectral_denominators(n, lam, basis)
    rel = np.min(np.abs(den) / basis.omegas**2)
    return rel, rel < eps


def compliance_spectral(n, lam, basis, eps=1e-6, rows=None, cols=None):
    """Dynamic compliance ``H_n = sum_k phi_k phi_k^H / (omega_k^2 + (n lam)^2)``.

    ``rows`` / ``cols`` restrict the output to a sub-block without forming the
    full matrix.  Raises :class:`NearResonantDenominator` when any denominator
    falls below ``eps`` relative to ``omega_k^2``; callers are expected to fall
    back to a direct factorization of the dynamic stiffness in that regime.
    """
    den = spectral_denominators(n, lam, basis)
    rel = np.abs(den) / basis.omegas**2
    worst = np.min(rel)
    if worst < eps:
        raise NearResonantDenominator(n, worst)
    pr = basis.phis if rows is None else basis.phis[rows]
    pc = basis.phis if cols is None else basis.phis[cols]
    return (pr / den) @ pc.T


def compliance_spectral_dlam(n, lam, basis, rows=None, cols=None):
    """Derivative of :func:`compliance_spectral` with respect to ``lam``."""
    den = spectral_denominators(n, lam, basis)
    pr = basis.phis if rows is None else basis.phis[rows]
    pc = basis.phis if cols is None else basis.phis[cols]
    w = -2.0 * n**2 * lam / den**2
    return (pr * w) @ pc.T


@dataclass(frozen=True)
class StateSpaceModalBasis:
    """Bi-orthonormalized left/right eigenpairs of the first-order form.

    ``nus`` are the ``2N`` eigenvalues of ``A = [[0, -I], [M^-1 K, M^-1 C]]``;
    ``v_right`` holds the displacement blocks of the right eigenvectors
    (columns), ``w_left_minv`` the velocity blocks of the left eigenvectors
    premultiplied by ``M^-1`` (rows), so a compliance evaluation needs one
    scaled product only.
    """

    nus: np.ndarray
    v_right: np.ndarray  # (N, 2N)
    w_left_minv: np.ndarray  # (2N, N)
    A: np.ndarray
    x_left: np.ndarray  # (2N, 2N), rows
    x_right: np.ndarray  # (2N, 2N), columns

    @property
    def n_dof(self):
        return self.v_right.shape[0]


def state_modes(M, C, K, degeneracy_tol=1e-8):
    """Spectral decomposition of the damped system's state-space matrix.

    Eigenvalues must be simple; near-coincident pairs raise
    :class:`DegenerateSpectrum`.
    """
    M = np.asarray(M, dtype=float)
    C = np.asarray(C, dtype=float)
    K = np.asarray(K, dtype=float)
    n = M.shape[0]
    Minv = scipy.linalg.inv(M)
    A = np.block([[np.zeros((n, n)), -np.eye(n)], [Minv @ K, Minv @ C]])
    nus, vl, vr = scipy.linalg.eig(A, left=True, right=True)

    order = np.argsort(nus.imag + 1e-12 * nus.real)
    nus = nus[order]
    vr = vr[:, order]
    # scipy's left vectors satisfy vl^H A = nu vl^H
    xl = vl[:, order].conj().T

    scale = np.max(np.abs(nus))
    for i in range(len(nus)):
        gap = np.min(np.abs(np.delete(nus, i) - nus[i]))
        if gap < degeneracy_tol * scale:
            raise DegenerateSpectrum(
                f"eigenvalues {nus[i]:.6g} nearly coincident (gap {gap:.3e})"
            )

    s = np.einsum("ij,ji->i", xl, vr)
    if np.min(np.abs(s)) < 1e-12:
        raise DegenerateSpectrum("left/right eigenvector pairing is numerically singular")
    xl = xl / s[:, None]

    w_left = xl[:, n:]
    return StateSpaceModalBasis(
        nus=nus,
        v_right=vr[:n, :],
        w_left_minv=w_left @ Minv,
        A=A,
        x_left=xl,
        x_right=vr,
    )


def state_denominators(n, lam, sbasis):
    return sbasis.nus + n * lam


def compliance_general(n, lam, sbasis, eps=1e-6, rows=None, cols=None):
    """Dynamic compliance of the damped system from its state-space eigenpairs.

    ``H_n = sum_k v_k^(r) w_k^(l) M^-1 / (nu_k + n lam)`` with the
    ``w_k^(l) M^-1`` products precomputed at decomposition time.
    """
    den = state_denominators(n, lam, sbasis)
    ref = np.maximum(np.abs(sbasis.nus), 1e-30)
    worst = np.min(np.abs(den) / ref)
    if worst < eps:
        raise NearResonantDenominator(n, worst)
    vr = sbasis.v_right if rows is None else sbasis.v_right[rows]
    wm = sbasis.w_left_minv if cols is None else sbasis.w_left_minv[:, cols]
    return (vr / den) @ wm


def compliance_general_dlam(n, lam, sbasis, rows=None, cols=None):
    """Derivative of :func:`compliance_general` with respect to ``lam``."""
    den = state_denominators(n, lam, sbasis)
    vr = sbasis.v_right if rows is None else sbasis.v_right[rows]
    wm = sbasis.w_left_minv if cols is None else sbasis.w_left_minv[:, cols]
    return (vr * (-n / den**2)) @ wm
