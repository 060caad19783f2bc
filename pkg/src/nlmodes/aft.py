"""Harmonic signal algebra and frequency-domain evaluation of nonlinear forces.

Time-domain convention, fixed package-wide::

    u(t) = Re( sum_{n=0}^{NH} U_n * exp(i n omega t) )

with the static coefficient ``U_0`` kept real.  Solvers work on a packed real
vector in *harmonic-major* layout: block ``n = 0`` holds the static
coefficient of every represented DOF, block ``n >= 1`` holds the real parts of
all DOFs followed by the imaginary parts.
"""

from functools import lru_cache

import numpy as np

from .model import ModelError


class HarmonicSignal:
    """One-sided complex Fourier amplitudes of a multi-DOF periodic signal.

    Parameters
    ----------
    U : ndarray, shape (NH + 1, n_dof)
        Row ``n`` holds the complex amplitudes of harmonic ``n``. Row 0 must
        be real (a nonzero imaginary static part has no time-domain meaning
        and would create a null direction for the solvers).
    omega : float
        Fundamental frequency in rad/s.
    """

    __slots__ = ("U", "omega")

    def __init__(self, U, omega):
        U = np.atleast_2d(np.asarray(U, dtype=complex))
        scale = np.max(np.abs(U)) if U.size else 0.0
        if np.max(np.abs(U[0].imag), initial=0.0) > 1e-9 * max(scale, 1e-300):
            raise ValueError("static harmonic must be real")
        U = U.copy()
        U[0] = U[0].real
        self.U = U
        self.omega = float(omega)

    @property
    def nh(self):
        return self.U.shape[0] - 1

    @property
    def n_dof(self):
        return self.U.shape[1]

    @property
    def period(self):
        return 2.0 * np.pi / self.omega

    def __repr__(self):
        return f"HarmonicSignal(nh={self.nh}, n_dof={self.n_dof}, omega={self.omega:g})"


@lru_cache(maxsize=64)
def _trig_tables(nh, n_t):
    theta = 2.0 * np.pi * np.arange(n_t) / n_t
    n = np.arange(nh + 1)
    cos = np.cos(np.outer(theta, n))
    sin = np.sin(np.outer(theta, n))
    return cos, sin


def time_grid(omega, n_t):
    """Uniform sample times over one period (endpoint excluded)."""
    return 2.0 * np.pi / omega * np.arange(n_t) / n_t


def synthesize(signal, n_t):
    """Evaluate the signal on ``n_t`` uniform samples over one period.

    Requires ``n_t >= 4 * NH + 1`` so that downstream pointwise cubic and
    piecewise-linear force evaluations do not alias back into the retained
    band.
    """
    if n_t < 4 * signal.nh + 1:
        raise ValueError(f"n_t = {n_t} too small, need at least {4 * signal.nh + 1}")
    cos, sin = _trig_tables(signal.nh, n_t)
    return cos @ signal.U.real - sin @ signal.U.imag


def synthesize_velocity(signal, n_t):
    """Time derivative of the signal on the same uniform grid as :func:`synthesize`."""
    if n_t < 4 * signal.nh + 1:
        raise ValueError(f"n_t = {n_t} too small, need at least {4 * signal.nh + 1}")
    cos, sin = _trig_tables(signal.nh, n_t)
    n_omega = signal.omega * np.arange(signal.nh + 1)
    dU = 1j * n_omega[:, None] * signal.U
    return cos @ dU.real - sin @ dU.imag


def fourier_coeffs(samples, omega, nh):
    """One-sided Fourier coefficients of uniformly sampled periodic data.

    Inverse of :func:`synthesize` for band-limited input: ``U_0`` is the
    sample mean and ``U_n = 2/N_t * sum_k samples_k * exp(-i n theta_k)`` for
    ``n >= 1``.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float).T).T
    n_t = samples.shape[0]
    if n_t < 2 * nh + 1:
        raise ValueError(f"need at least {2 * nh + 1} samples for {nh} harmonics")
    cos, sin = _trig_tables(nh, n_t)
    U = (2.0 / n_t) * (cos.T @ samples - 1j * (sin.T @ samples))
    U[0] *= 0.5
    return HarmonicSignal(U, omega)


def mean_power(signal):
    """Mean of the squared signal over one period, per DOF (Parseval form)."""
    return signal.U[0].real ** 2 + 0.5 * np.sum(np.abs(signal.U[1:]) ** 2, axis=0)


def peak_zero_mean(signal, dof, n_scan=128):
    """Peak of the zero-mean response at one DOF, exact for the trig polynomial."""
    return peak_zero_mean_coeffs(signal.U[1:, dof], n_scan)


def peak_zero_mean_coeffs(U, n_scan=128):
    """Peak of ``Re(sum_{n>=1} U_n e^(i n theta))`` over a period.

    A scan brackets the extremum, then Newton on the phase derivative polishes
    it to machine accuracy.
    """
    U = np.asarray(U, dtype=complex)
    nh = U.size
    n = np.arange(1, nh + 1, dtype=float)
    if not np.any(U):
        return 0.0

    def val(theta):
        return np.sum(U.real * np.cos(n * theta) - U.imag * np.sin(n * theta))

    def dval(theta):
        return np.sum(n * (-U.real * np.sin(n * theta) - U.imag * np.cos(n * theta)))

    def ddval(theta):
        return np.sum(n**2 * (-U.real * np.cos(n * theta) + U.imag * np.sin(n * theta)))

    n_scan = max(n_scan, 8 * nh)
    thetas = 2.0 * np.pi * np.arange(n_scan) / n_scan
    samples = np.cos(np.outer(thetas, n)) @ U.real - np.sin(np.outer(thetas, n)) @ U.imag
    k = int(np.argmax(np.abs(samples)))
    theta = thetas[k]
    best = abs(samples[k])
    spacing = 2.0 * np.pi / n_scan
    for _ in range(8):
        d2 = ddval(theta)
        if d2 == 0.0:
            break
        step = -dval(theta) / d2
        if abs(step) > spacing:
            step = np.sign(step) * spacing
        theta += step
        if abs(step) < 1e-14:
            break
    return float(max(best, abs(val(theta))))


# ---------------------------------------------------------------------------
# packed real layout


def layout_size(nh, n_dof):
    return n_dof * (2 * nh + 1)


def idx_static(nh, n_dof):
    """Indices of the static block."""
    return np.arange(n_dof)


def idx_re(n, nh, n_dof):
    """Indices of the real part of harmonic ``n >= 1``."""
    return n_dof + 2 * n_dof * (n - 1) + np.arange(n_dof)


def idx_im(n, nh, n_dof):
    """Indices of the imaginary part of harmonic ``n >= 1``."""
    return n_dof + 2 * n_dof * (n - 1) + n_dof + np.arange(n_dof)


def pack(signal):
    """Flatten a signal into the harmonic-major real vector."""
    nh, n = signal.nh, signal.n_dof
    z = np.empty(layout_size(nh, n))
    z[:n] = signal.U[0].real
    for k in range(1, nh + 1):
        z[idx_re(k, nh, n)] = signal.U[k].real
        z[idx_im(k, nh, n)] = signal.U[k].imag
    return z


def unpack(z, nh, n_dof, omega):
    """Rebuild a signal from its harmonic-major real vector."""
    z = np.asarray(z, dtype=float)
    if z.size != layout_size(nh, n_dof):
        raise ValueError("packed vector length mismatch")
    U = np.empty((nh + 1, n_dof), dtype=complex)
    U[0] = z[:n_dof]
    for k in range(1, nh + 1):
        U[k] = z[idx_re(k, nh, n_dof)] + 1j * z[idx_im(k, nh, n_dof)]
    return HarmonicSignal(U, omega)


@lru_cache(maxsize=64)
def _perdof_transforms(nh, n_t):
    """Per-DOF maps between the coefficient stack [U0, Re U1, Im U1, ...] and samples."""
    cos, sin = _trig_tables(nh, n_t)
    n_c = 2 * nh + 1
    gamma = np.empty((n_t, n_c))
    gamma[:, 0] = 1.0
    lam = np.empty((n_c, n_t))
    lam[0] = 1.0 / n_t
    for n in range(1, nh + 1):
        gamma[:, 2 * n - 1] = cos[:, n]
        gamma[:, 2 * n] = -sin[:, n]
        lam[2 * n - 1] = (2.0 / n_t) * cos[:, n]
        lam[2 * n] = -(2.0 / n_t) * sin[:, n]
    return gamma, lam


def _perdof_global_map(nh, n_dof):
    """Global indices of each DOF's per-DOF coefficient stack."""
    maps = np.empty((n_dof, 2 * nh + 1), dtype=int)
    maps[:, 0] = idx_static(nh, n_dof)
    for n in range(1, nh + 1):
        maps[:, 2 * n - 1] = idx_re(n, nh, n_dof)
        maps[:, 2 * n] = idx_im(n, nh, n_dof)
    return maps


def nl_harmonics(signal, elements, covered_dofs, n_t):
    """Fourier coefficients of the residual nonlinear forces and their Jacobian.

    The signal rows must cover exactly ``covered_dofs`` (sorted global DOF
    indices); every element footprint has to lie inside that set.  Forces are
    evaluated on ``n_t`` time samples, transformed back, and the Jacobian with
    respect to the packed real coefficients is propagated analytically through
    both transforms using the per-sample active-branch force gradients.

    Returns
    -------
    (G, J) : G is a :class:`HarmonicSignal` with the force coefficients, J the
        real Jacobian ``dG/dU`` in the harmonic-major layout.
    """
    nh, n = signal.nh, signal.n_dof
    if len(covered_dofs) != n:
        raise ModelError("signal does not match the covered DOF set")
    pos = {d: i for i, d in enumerate(covered_dofs)}
    for el in elements:
        for d in el.dofs:
            if d not in pos:
                raise ModelError(f"element DOF {d} not covered by the harmonic signal")

    x = synthesize(signal, n_t)
    g = np.zeros((n_t, n))
    contribs = []  # (row_dof_local, col_dof_local, kind, data)
    for el in elements:
        loc = [pos[d] for d in el.dofs]
        if len(loc) == 1:
            g_el, (kind, data) = el.residual_force_period(x[:, loc[0]])
            g[:, loc[0]] += g_el
            contribs.append((loc[0], loc[0], kind, data))
        else:
            g_el, (kind, data) = el.residual_force_period(x[:, loc])
            g[:, loc] += g_el
            # data is (n_t, n_loc, n_loc) per-sample gradient
            for a, da in enumerate(loc):
                for b, db in enumerate(loc):
                    contribs.append((da, db, kind, data[:, a, b]))

    G = fourier_coeffs(g, signal.omega, nh)

    gamma, lam = _perdof_transforms(nh, n_t)
    gmap = _perdof_global_map(nh, n)
    size = layout_size(nh, n)
    J = np.zeros((size, size))
    for (i, j, kind, data) in contribs:
        if kind == "diag":
            block = lam @ (data[:, None] * gamma)
        else:
            block = lam @ (data @ gamma)
        J[np.ix_(gmap[i], gmap[j])] += block
    return G, J
