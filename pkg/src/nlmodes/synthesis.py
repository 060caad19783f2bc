"""Single-resonant-mode synthesis: modal database, forced response, limit cycles.

Near a 1:1 resonance the response is approximated by one amplitude-dependent
nonlinear mode plus the linearized contributions of all other modes::

    u(t) ~ Re( q_j * sum_n psi_n(|q_j|) e^(i n Omega t)
               + sum_{k != j} q_k phi_k e^(i Omega t) )

The modal amplitude follows from the scalar projected equation

    [-Omega^2 + c(Omega, |q_j|) + omega_j^2 + 2 D_j omega_j i Omega] q_j
        = psi_1^H f_1

where ``c`` is the damping term of the chosen model and ``omega_j, D_j,
psi_n`` are interpolated from a precomputed mode branch.  Everything here is
therefore scalar-cheap regardless of model size.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from . import aft
from .model import CouplingCubicSpring, CubicSpring


class FoldInRange(ValueError):
    """Branch segment folds in modal amplitude; the database needs a fold-free cut."""


class AmplitudeOutOfRange(ValueError):
    """Requested amplitude leaves the database range."""

    def __init__(self, message, partial_curve=None):
        super().__init__(message)
        self.partial_curve = partial_curve


# ---------------------------------------------------------------------------
# damping variants


@dataclass(frozen=True)
class ViscousDamping:
    """Symmetric viscous matrix, projected as ``i Omega psi^H C psi``."""

    C: np.ndarray

    def materialize(self, model):
        return self

    def resonant_term(self, omega, psi1):
        return 1j * omega * np.real(np.vdot(psi1, self.C @ psi1))

    def resonant_term_domega(self, omega, psi1):
        return 1j * np.real(np.vdot(psi1, self.C @ psi1))

    def resonant_term_dpsi(self, omega, psi1, dpsi1):
        return 1j * omega * 2.0 * np.real(np.vdot(dpsi1, self.C @ psi1))

    def linear_term(self, omega, phi_k, omega_k):
        return 1j * omega * (phi_k @ self.C @ phi_k)

    def lco_term(self, psi1, omega_j):
        return np.real(np.vdot(psi1, self.C @ psi1))

    def lco_term_dpsi(self, psi1, dpsi1, omega_j, domega_j):
        return 2.0 * np.real(np.vdot(dpsi1, self.C @ psi1))

    def viscous_matrix(self, model):
        return self.C

    def hysteretic_matrix(self):
        return None

    def modal_projections(self, basis):
        return "viscous", np.einsum("ik,ij,jk->k", basis.phis, self.C, basis.phis)

    def scalar_projection(self, psi1, dpsi1):
        return (np.real(np.vdot(psi1, self.C @ psi1)),
                2.0 * np.real(np.vdot(dpsi1, self.C @ psi1)))

    def term(self, omega, c):
        return 1j * omega * c

    def term_domega(self, omega, c):
        return 1j * c


@dataclass(frozen=True)
class HystereticDamping:
    """Structural damping matrix, projected as ``i psi^H D psi`` (frequency free)."""

    D: np.ndarray

    def materialize(self, model):
        return self

    def resonant_term(self, omega, psi1):
        return 1j * np.real(np.vdot(psi1, self.D @ psi1))

    def resonant_term_domega(self, omega, psi1):
        return 0.0j

    def resonant_term_dpsi(self, omega, psi1, dpsi1):
        return 1j * 2.0 * np.real(np.vdot(dpsi1, self.D @ psi1))

    def linear_term(self, omega, phi_k, omega_k):
        return 1j * (phi_k @ self.D @ phi_k)

    def lco_term(self, psi1, omega_j):
        return np.real(np.vdot(psi1, self.D @ psi1)) / omega_j

    def lco_term_dpsi(self, psi1, dpsi1, omega_j, domega_j):
        num = np.real(np.vdot(psi1, self.D @ psi1))
        dnum = 2.0 * np.real(np.vdot(dpsi1, self.D @ psi1))
        return dnum / omega_j - num * domega_j / omega_j**2

    def viscous_matrix(self, model):
        return None

    def hysteretic_matrix(self):
        return self.D

    def modal_projections(self, basis):
        return "hysteretic", np.einsum("ik,ij,jk->k", basis.phis, self.D, basis.phis)

    def scalar_projection(self, psi1, dpsi1):
        return (np.real(np.vdot(psi1, self.D @ psi1)),
                2.0 * np.real(np.vdot(dpsi1, self.D @ psi1)))

    def term(self, omega, c):
        return 1j * c

    def term_domega(self, omega, c):
        return 0.0j


@dataclass(frozen=True)
class ModalDamping:
    """Scalar loss factor on the resonant mode only, term ``i Omega eta``."""

    eta: float

    def materialize(self, model):
        return self

    def resonant_term(self, omega, psi1):
        return 1j * omega * self.eta

    def resonant_term_domega(self, omega, psi1):
        return 1j * self.eta

    def resonant_term_dpsi(self, omega, psi1, dpsi1):
        return 0.0j

    def linear_term(self, omega, phi_k, omega_k):
        return 0.0j

    def lco_term(self, psi1, omega_j):
        return self.eta

    def lco_term_dpsi(self, psi1, dpsi1, omega_j, domega_j):
        return 0.0

    def viscous_matrix(self, model):
        return None

    def hysteretic_matrix(self):
        return None

    def modal_projections(self, basis):
        return "none", np.zeros(basis.omegas.size)

    def scalar_projection(self, psi1, dpsi1):
        return self.eta, 0.0

    def term(self, omega, c):
        return 1j * omega * c

    def term_domega(self, omega, c):
        return 1j * c


@dataclass(frozen=True)
class ModalMatrixDamping:
    """Per-mode viscous ratios, assembled back into a matrix.

    ``C = M Phi diag(2 D_k omega_k) Phi^T M`` for the mass-normalized linear
    modes, so that ``phi_k^T C phi_k = 2 D_k omega_k`` exactly.
    """

    ratios: tuple

    def materialize(self, model):
        basis = model.linear_modes
        ratios = np.asarray(self.ratios, dtype=float)
        if ratios.size != basis.omegas.size:
            raise ValueError("need one damping ratio per mode")
        core = basis.phis * (2.0 * ratios * basis.omegas)
        C = model.M @ core @ basis.phis.T @ model.M
        C = 0.5 * (C + C.T)
        return ViscousDamping(C=C)


def resolve_damping(damping, model):
    return damping.materialize(model)


# ---------------------------------------------------------------------------
# amplitude-indexed modal database


class _Interp1:
    """1-D interpolation over amplitude with derivative and constant tail below.

    Below the first sample the mode is in its linear regime, so values are
    clamped; above the last sample callers must guard (database range error).
    Cubic coefficients are kept locally so scalar lookups avoid the spline
    wrapper overhead (these sit in the innermost synthesis loop).
    """

    def __init__(self, q, values, kind):
        self.q = q
        self.values = values
        self.kind = kind
        if kind == "cubic":
            self._c = CubicSpline(q, values, axis=0).c  # (4, m-1, ...)
        elif kind != "linear":
            raise ValueError(f"unknown interpolation kind {kind!r}")

    def _segment(self, x):
        i = np.searchsorted(self.q, x)
        return min(max(i, 1), len(self.q) - 1)

    def __call__(self, x):
        x = min(max(x, self.q[0]), self.q[-1])
        i = self._segment(x)
        if self.kind == "cubic":
            c = self._c[:, i - 1]
            dx = x - self.q[i - 1]
            return ((c[0] * dx + c[1]) * dx + c[2]) * dx + c[3]
        t = (x - self.q[i - 1]) / (self.q[i] - self.q[i - 1])
        return (1 - t) * self.values[i - 1] + t * self.values[i]

    def derivative(self, x):
        if x < self.q[0] or x > self.q[-1]:
            return np.zeros_like(self.values[0])
        i = self._segment(x)
        if self.kind == "cubic":
            c = self._c[:, i - 1]
            dx = x - self.q[i - 1]
            return (3.0 * c[0] * dx + 2.0 * c[1]) * dx + c[2]
        return (self.values[i] - self.values[i - 1]) / (self.q[i] - self.q[i - 1])


class ModalDatabase:
    """Amplitude-indexed modal properties of one mode, mass-normalized.

    Samples store ``(|q_j|, omega_j, D_j, psi_0..psi_NH)`` with
    ``psi_1^H M psi_1 = 1`` so that ``q_j psi_n`` recovers the physical
    harmonics.  Interpolation is piecewise linear or piecewise cubic over
    ``|q_j|``.
    """

    def __init__(self, amplitudes, omegas, dampings, psi, mode_index, kind="cubic",
                 master_dof=0, omega_ref=1.0):
        self.amplitudes = np.asarray(amplitudes, dtype=float)
        self._omegas = np.asarray(omegas, dtype=float)
        self._dampings = np.asarray(dampings, dtype=float)
        self._psi = np.asarray(psi, dtype=complex)  # (m, NH+1, n_dof)
        self.mode_index = int(mode_index)
        self.kind = kind
        self.master_dof = int(master_dof)
        self.omega_ref = float(omega_ref)
        if self.amplitudes.ndim != 1 or np.any(np.diff(self.amplitudes) <= 0.0):
            raise FoldInRange("amplitudes must be strictly increasing")
        self._i_omega = _Interp1(self.amplitudes, self._omegas, kind)
        self._i_damp = _Interp1(self.amplitudes, self._dampings, kind)
        m = self.amplitudes.size
        flat = self._psi.reshape(m, -1)
        self._i_psi_re = _Interp1(self.amplitudes, flat.real, kind)
        self._i_psi_im = _Interp1(self.amplitudes, flat.imag, kind)
        # the fundamental-harmonic data is interrogated in every scalar solve;
        # one stacked interpolant serves that hot path in a single evaluation
        psi1 = self._psi[:, 1, :]
        self._i_psi1_re = _Interp1(self.amplitudes, psi1.real, kind)
        self._i_psi1_im = _Interp1(self.amplitudes, psi1.imag, kind)
        hot = np.column_stack([self._omegas, self._dampings, psi1.real, psi1.imag])
        self._i_hot = _Interp1(self.amplitudes, hot, kind)
        self._probe_cache = {}

    def hot_values(self, q):
        """(omega_j, D_j, psi_1) and their amplitude derivatives in two lookups."""
        self.check_range(q)
        n = self.n_dof
        vals = self._i_hot(q)
        ders = self._i_hot.derivative(q)
        psi1 = vals[2: 2 + n] + 1j * vals[2 + n:]
        dpsi1 = ders[2: 2 + n] + 1j * ders[2 + n:]
        return vals[0], vals[1], psi1, ders[0], ders[1], dpsi1

    def probe_shape(self, q, dof):
        """All harmonics of ``psi`` at one DOF (per-DOF interpolant, cached)."""
        self.check_range(q)
        interp = self._probe_cache.get(dof)
        if interp is None:
            cols = np.column_stack([self._psi[:, :, dof].real, self._psi[:, :, dof].imag])
            interp = _Interp1(self.amplitudes, cols, self.kind)
            self._probe_cache[dof] = interp
        vals = interp(q)
        m = self.nh + 1
        return vals[:m] + 1j * vals[m:]

    @property
    def nh(self):
        return self._psi.shape[1] - 1

    @property
    def n_dof(self):
        return self._psi.shape[2]

    @property
    def q_min(self):
        return self.amplitudes[0]

    @property
    def q_max(self):
        return self.amplitudes[-1]

    def check_range(self, q):
        if q > self.q_max * (1.0 + 1e-9):
            raise AmplitudeOutOfRange(
                f"amplitude {q:.3e} above database range (max {self.q_max:.3e})"
            )

    def omega(self, q):
        self.check_range(q)
        return float(self._i_omega(q))

    def damping(self, q):
        self.check_range(q)
        return float(self._i_damp(q))

    def psi(self, q):
        self.check_range(q)
        flat = self._i_psi_re(q) + 1j * self._i_psi_im(q)
        return flat.reshape(self.nh + 1, self.n_dof)

    def psi1(self, q):
        self.check_range(q)
        return self._i_psi1_re(q) + 1j * self._i_psi1_im(q)

    def domega(self, q):
        return float(self._i_omega.derivative(q))

    def ddamping(self, q):
        return float(self._i_damp.derivative(q))

    def dpsi1(self, q):
        return self._i_psi1_re.derivative(q) + 1j * self._i_psi1_im.derivative(q)

    @classmethod
    def ingest(cls, branch, model, kind="cubic", points=None):
        """Build the database from a fold-free branch segment.

        ``q_j = (U_1^H M U_1)^(1/2)`` per point and ``psi_n = U_n / q_j``.
        Raises :class:`FoldInRange` when the amplitude is not monotone over
        the selected points (tongue segments must be cut out first).
        """
        pts = branch.points if points is None else branch.points[points]
        if len(pts) < 2:
            raise ValueError("need at least two branch points")
        q = np.empty(len(pts))
        omegas = np.empty(len(pts))
        damps = np.empty(len(pts))
        nh = pts[0].signal.nh
        n_dof = pts[0].signal.n_dof
        psi = np.empty((len(pts), nh + 1, n_dof), dtype=complex)
        for i, p in enumerate(pts):
            U1 = p.signal.U[1]
            qj = np.sqrt(np.real(np.vdot(U1, model.M @ U1)))
            if qj <= 0.0:
                raise ValueError("branch point with vanishing fundamental amplitude")
            q[i] = qj
            omegas[i] = p.omega0
            damps[i] = p.damping
            psi[i] = p.signal.U / qj
        dq = np.diff(q)
        if np.any(dq < -1e-9 * q[1:]):
            raise FoldInRange("modal amplitude folds over the selected segment")
        keep = np.concatenate([[True], dq > 0.0])
        return cls(q[keep], omegas[keep], damps[keep], psi[keep],
                   mode_index=branch.mode_index, kind=kind,
                   master_dof=branch.master_dof, omega_ref=branch.omega_ref)

    def save(self, path):
        m = self.amplitudes.size
        cols = ["q", "omega", "damping"]
        for k in range(self.nh + 1):
            for d in range(self.n_dof):
                cols.append(f"re_psi{k}_d{d}")
                cols.append(f"im_psi{k}_d{d}")
        lines = [
            "# nlmodes-modal-db v1",
            "# normalization=mass",
            f"# mode_index={self.mode_index}",
            f"# master_dof={self.master_dof}",
            f"# omega_ref={self.omega_ref!r}",
            f"# nh={self.nh}",
            f"# n_dof={self.n_dof}",
            f"# interp={self.kind}",
            ",".join(cols),
        ]
        for i in range(m):
            row = [repr(self.amplitudes[i]), repr(self._omegas[i]), repr(self._dampings[i])]
            for k in range(self.nh + 1):
                for d in range(self.n_dof):
                    row.append(repr(float(self._psi[i, k, d].real)))
                    row.append(repr(float(self._psi[i, k, d].imag)))
            lines.append(",".join(row))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")


def load_database(path, kind=None):
    meta = {}
    rows = []
    header = None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, val = body.split("=", 1)
                    meta[key.strip()] = val.strip()
                continue
            if header is None:
                header = line
                continue
            rows.append(np.array([float(v) for v in line.split(",")]))
    if not rows:
        raise ValueError(f"no database rows in {path}")
    nh = int(meta["nh"])
    n_dof = int(meta["n_dof"])
    data = np.vstack(rows)
    q = data[:, 0]
    omegas = data[:, 1]
    damps = data[:, 2]
    flat = data[:, 3::2] + 1j * data[:, 4::2]
    psi = flat.reshape(len(rows), nh + 1, n_dof)
    return ModalDatabase(
        q, omegas, damps, psi,
        mode_index=int(meta.get("mode_index", 0)),
        kind=kind or meta.get("interp", "cubic"),
        master_dof=int(meta.get("master_dof", 0)),
        omega_ref=float(meta.get("omega_ref", 1.0)),
    )


# ---------------------------------------------------------------------------
# response containers


@dataclass
class ResponseCurve:
    """Swept steady-state response rows from synthesis or reference solvers."""

    param_name: str
    params: np.ndarray
    q_j: np.ndarray
    q_lin: np.ndarray  # (m, n_modes), column of the resonant mode kept zero
    amplitude: np.ndarray
    probe_dof: int
    mode_index: int
    ref_amplitude: float = 1.0
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.params)

    @property
    def amplitude_star(self):
        return self.amplitude / self.ref_amplitude

    def export_csv(self, path):
        lines = [
            "# nlmodes-response v1",
            f"# param={self.param_name}",
            f"# probe_dof={self.probe_dof}",
            f"# mode_index={self.mode_index}",
            f"# ref_amplitude={self.ref_amplitude!r}",
            f"{self.param_name},re_qj,im_qj,a,a_star",
        ]
        for i in range(len(self.params)):
            lines.append(
                ",".join(
                    repr(float(v))
                    for v in (
                        self.params[i],
                        self.q_j[i].real,
                        self.q_j[i].imag,
                        self.amplitude[i],
                        self.amplitude[i] / self.ref_amplitude,
                    )
                )
            )
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")


def load_response_curve(path):
    meta = {}
    rows = []
    header = None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, val = body.split("=", 1)
                    meta[key.strip()] = val.strip()
                continue
            if header is None:
                header = line.split(",")
                continue
            rows.append([float(v) for v in line.split(",")])
    data = np.asarray(rows)
    return ResponseCurve(
        param_name=meta.get("param", "omega"),
        params=data[:, 0],
        q_j=data[:, 1] + 1j * data[:, 2],
        q_lin=np.zeros((len(rows), 0), dtype=complex),
        amplitude=data[:, 3],
        probe_dof=int(meta.get("probe_dof", 0)),
        mode_index=int(meta.get("mode_index", 0)),
        ref_amplitude=float(meta.get("ref_amplitude", 1.0)),
    )


# ---------------------------------------------------------------------------
# reconstruction


def reconstruct(db, q_j, q_lin, omega, model, nh=None):
    """Multi-harmonic, multi-modal response signal for one solution point.

    The resonant-mode phase acts as a time shift, rotating harmonic ``n`` by
    ``exp(i n arg(q_j))`` so the harmonics stay mutually coherent; for the
    fundamental this coincides with multiplying by ``q_j`` directly.
    """
    amp = abs(q_j)
    db.check_range(amp)
    psi = db.psi(amp)
    beta = np.angle(q_j) if amp > 0 else 0.0
    n = np.arange(db.nh + 1)
    U = amp * psi * np.exp(1j * n * beta)[:, None]
    if nh is not None:
        U = U[: nh + 1].copy()
    basis = model.linear_modes
    q_lin = np.asarray(q_lin, dtype=complex)
    if q_lin.size:
        U[1] += basis.phis @ q_lin
    return aft.HarmonicSignal(U, omega)


def probe_amplitude(signal, dof):
    """Peak of the zero-mean response at one DOF over a period."""
    return aft.peak_zero_mean(signal, dof)


def linear_modal_amplitudes(model, damping, f1, omega, skip_mode, _cache=None):
    """Classical modal amplitudes of the non-resonant linearized modes."""
    basis = model.linear_modes
    if _cache is None:
        kind, proj = damping.modal_projections(basis)
        pf = basis.phis.T @ np.asarray(f1, dtype=complex)
    else:
        kind, proj, pf = _cache
    denom = basis.omegas**2 - omega**2 + 0j
    if kind == "viscous":
        denom = denom + 1j * omega * proj
    elif kind == "hysteretic":
        denom = denom + 1j * proj
    q = pf / denom
    if 0 <= skip_mode < q.size:
        q[skip_mode] = 0.0
    return q


# ---------------------------------------------------------------------------
# scalar equation pieces


class _Projected:
    """Scalar projected equation machinery shared by frf/backbone."""

    def __init__(self, db, model, f1, damping):
        self.db = db
        self.damping = resolve_damping(damping, model)
        self.f1 = np.asarray(f1, dtype=complex)
        self.model = model
        basis = model.linear_modes
        kind, proj = self.damping.modal_projections(basis)
        self.modal_cache = (kind, proj, basis.phis.T @ self.f1)
        self._q_cache = {}

    def linear_amplitudes(self, omega, scale=1.0):
        kind, proj, pf = self.modal_cache
        return linear_modal_amplitudes(
            self.model, self.damping, self.f1, omega, self.db.mode_index,
            _cache=(kind, proj, scale * pf),
        )

    def _at(self, q):
        """Database lookups plus damping/forcing projections for one amplitude."""
        hit = self._q_cache.get(q)
        if hit is not None:
            return hit
        wj, Dj, psi1, dwj, dDj, dpsi1 = self.db.hot_values(q)
        c, dc = self.damping.scalar_projection(psi1, dpsi1)
        state = (wj, Dj, dwj, dDj, c, dc,
                 np.vdot(psi1, self.f1), np.vdot(dpsi1, self.f1))
        if len(self._q_cache) > 8:
            self._q_cache.clear()
        self._q_cache[q] = state
        return state

    def bracket(self, omega, q):
        wj, Dj, _, _, c, _, _, _ = self._at(q)
        return -(omega * omega) + wj * wj + self.damping.term(omega, c) \
            + 2j * Dj * wj * omega

    def forcing(self, q):
        return self._at(q)[6]

    def residual_log(self, omega, q):
        B = self.bracket(omega, q)
        p = self.forcing(q)
        if abs(p) == 0.0:
            raise ValueError("forcing has no projection on the resonant mode")
        return np.log(abs(B) * q) - np.log(abs(p))

    def residual_gradient_log(self, omega, q):
        """Log-modulus residual and its (omega, q) gradient in one evaluation."""
        wj, Dj, dwj, dDj, c, dc, p, dp_dq = self._at(q)
        damping = self.damping
        B = -(omega * omega) + wj * wj + damping.term(omega, c) \
            + 2j * Dj * wj * omega
        if abs(p) == 0.0:
            raise ValueError("forcing has no projection on the resonant mode")
        r = np.log(abs(B) * q) - np.log(abs(p))
        dB_dw = -2.0 * omega + damping.term_domega(omega, c) + 2j * Dj * wj
        dB_dq = 2.0 * wj * dwj + damping.term(omega, dc) \
            + 2j * omega * (dDj * wj + Dj * dwj)
        Babs2 = (B * B.conjugate()).real
        g_w = (B.conjugate() * dB_dw).real / Babs2
        g_q = (B.conjugate() * dB_dq).real / Babs2 + 1.0 / q \
            - (p.conjugate() * dp_dq).real / (p * p.conjugate()).real
        return r, g_w, g_q

    def gradient_log(self, omega, q):
        _, g_w, g_q = self.residual_gradient_log(omega, q)
        return g_w, g_q

    def modal_amplitude(self, omega, q):
        return self.forcing(q) / self.bracket(omega, q)


def _scan_roots(fun, grid):
    vals = np.array([fun(g) for g in grid])
    roots = []
    for i in range(len(grid) - 1):
        a, b = vals[i], vals[i + 1]
        if not (np.isfinite(a) and np.isfinite(b)):
            continue
        if a == 0.0:
            roots.append(grid[i])
        elif a * b < 0.0:
            roots.append(brentq(fun, grid[i], grid[i + 1], xtol=1e-14, rtol=1e-14))
    if len(grid) and vals[-1] == 0.0:
        roots.append(grid[-1])
    return roots


def frf(db, model, f1, omega_range, damping, probe_dof, n_steps_max=4000,
        step_initial=0.02, step_min=1e-8, tol=1e-10):
    """Forced frequency response by continuation of the scalar modulus equation.

    The sweep runs in pseudo-arc-length over ``(Omega, ln |q_j|)`` so that
    overhanging branches (multi-valued response) are traversed.  Amplitudes
    leaving the database range raise :class:`AmplitudeOutOfRange` with the
    partial curve attached.
    """
    eq = _Projected(db, model, f1, damping)
    omega_lo, omega_hi = omega_range
    if not omega_lo < omega_hi:
        raise ValueError("need omega_lo < omega_hi")
    w_scale = db.omega(db.q_min)

    # starting amplitude: linear estimate at the sweep edge, then a local
    # bracketed polish; a coarse scan only as fallback
    q_est = abs(eq.forcing(db.q_min)) / abs(eq.bracket(omega_lo, db.q_min))
    roots = []
    if q_est > 0:
        grid = np.geomspace(max(q_est / 8.0, db.q_min * 1e-9),
                            min(q_est * 8.0, db.q_max), 24)
        roots = _scan_roots(lambda q: eq.residual_log(omega_lo, q), grid)
    if not roots:
        grid = np.geomspace(db.q_min * 1e-6, db.q_max, 200)
        roots = _scan_roots(lambda q: eq.residual_log(omega_lo, q), grid)
    if not roots:
        raise ValueError("no response amplitude found at the lower sweep edge")
    q = min(roots)

    rows = []
    phi_probe = model.linear_modes.phis[probe_dof, :]
    n_idx = np.arange(db.nh + 1)

    def record(omega, q):
        qj = eq.modal_amplitude(omega, q)
        q_lin = eq.linear_amplitudes(omega)
        # probe response assembled at the probe DOF only (hot path)
        psi_p = db.probe_shape(q, probe_dof)
        U_p = abs(qj) * psi_p * np.exp(1j * n_idx * np.angle(qj))
        U_p[1] += phi_probe @ q_lin
        rows.append((omega, qj, q_lin, aft.peak_zero_mean_coeffs(U_p[1:])))

    record(omega_lo, q)
    y = np.array([omega_lo / w_scale, np.log(q)])
    t_prev = np.array([1.0, 0.0])
    h = step_initial

    def res_and_grad(yv):
        omega, qv = yv[0] * w_scale, np.exp(yv[1])
        db.check_range(qv)
        r, g_w, g_q = eq.residual_gradient_log(omega, qv)
        return r, np.array([g_w * w_scale, g_q * qv])

    for _ in range(n_steps_max):
        try:
            _, g = res_and_grad(y)
        except AmplitudeOutOfRange:
            raise
        t = np.array([-g[1], g[0]])
        norm = np.linalg.norm(t)
        if norm == 0.0:
            break
        t /= norm
        if t @ t_prev < 0:
            t = -t
        stepped = False
        while h >= step_min:
            y_pred = y + h * t
            ok, y_new = _frf_correct(res_and_grad, y_pred, t, tol, db)
            if ok and np.linalg.norm(y_new - y) <= 10 * h:
                stepped = True
                break
            h *= 0.5
        if not stepped:
            partial = _assemble_curve(rows, model, probe_dof, db)
            raise AmplitudeOutOfRange(
                "response sweep stalled (amplitude likely at database edge)",
                partial_curve=partial,
            )
        y = y_new
        t_prev = t
        omega, q = y[0] * w_scale, np.exp(y[1])
        if q > db.q_max:
            partial = _assemble_curve(rows, model, probe_dof, db)
            raise AmplitudeOutOfRange(
                f"response amplitude {q:.3e} left the database range",
                partial_curve=partial,
            )
        record(omega, q)
        h = min(h * 1.4, step_initial * 4)
        if omega >= omega_hi and (len(rows) < 2 or rows[-1][0] >= rows[-2][0]):
            break

    return _assemble_curve(rows, model, probe_dof, db)


def _frf_correct(res_and_grad, y_pred, t, tol, db, max_iter=25):
    y = y_pred.copy()
    for _ in range(max_iter):
        try:
            r, g = res_and_grad(y)
        except (AmplitudeOutOfRange, ValueError):
            return False, y
        arc = t @ (y - y_pred)
        if abs(r) <= tol and abs(arc) <= tol:
            return True, y
        det = g[0] * t[1] - g[1] * t[0]
        if det == 0.0 or not np.isfinite(det):
            return False, y
        dy0 = (-r * t[1] + arc * g[1]) / det
        dy1 = (-arc * g[0] + r * t[0]) / det
        if not (np.isfinite(dy0) and np.isfinite(dy1)):
            return False, y
        step = np.hypot(dy0, dy1)
        if step > 1.0:
            dy0 /= step
            dy1 /= step
        y = y + np.array([dy0, dy1])
    return False, y


def _assemble_curve(rows, model, probe_dof, db):
    m = len(rows)
    n_modes = model.n_dof
    params = np.array([r[0] for r in rows])
    q_j = np.array([r[1] for r in rows])
    q_lin = np.zeros((m, n_modes), dtype=complex)
    for i, r in enumerate(rows):
        q_lin[i] = r[2]
    amps = np.array([r[3] for r in rows])
    return ResponseCurve(
        param_name="omega",
        params=params,
        q_j=q_j,
        q_lin=q_lin,
        amplitude=amps,
        probe_dof=probe_dof,
        mode_index=db.mode_index,
    )


def backbone(db, model, f1_pattern, damping, probe_dof, levels=None, n_grid=400):
    """Resonance locus: amplitude sweep with the excitation bound to resonance.

    With the drive frequency locked to ``omega_j(|q_j|)``, the projected
    equation gives the force level reaching each amplitude in closed form;
    sweeping the database range yields the full backbone without root solving.
    When explicit ``levels`` are passed, rows are produced at those force
    scales instead (several rows per level if the locus folds).
    """
    eq = _Projected(db, model, f1_pattern, damping)
    grid = np.geomspace(db.q_min * (1 + 1e-9), db.q_max * (1 - 1e-9), n_grid)

    def level_of(q):
        omega = db.omega(q)
        return abs(eq.bracket(omega, q)) * q / abs(eq.forcing(q))

    def row_at(q, scale):
        omega = db.omega(q)
        qj = scale * eq.forcing(q) / eq.bracket(omega, q)
        q_lin = eq.linear_amplitudes(omega, scale=scale)
        sig = reconstruct(db, qj, q_lin, omega, model)
        return omega, qj, q_lin, probe_amplitude(sig, probe_dof)

    rows = []
    params = []
    if levels is None:
        for q in grid:
            scale = level_of(q)
            rows.append(row_at(q, scale))
            params.append(scale)
    else:
        for level in levels:
            for q in _scan_roots(lambda qv: level_of(qv) - level, grid):
                rows.append(row_at(q, level))
                params.append(level)
    m = len(rows)
    q_lin = np.zeros((m, model.n_dof), dtype=complex)
    for i, r in enumerate(rows):
        q_lin[i] = r[2]
    curve = ResponseCurve(
        param_name="force_scale",
        params=np.array(params),
        q_j=np.array([r[1] for r in rows]),
        q_lin=q_lin,
        amplitude=np.array([r[3] for r in rows]),
        probe_dof=probe_dof,
        mode_index=db.mode_index,
        meta={"omega": np.array([r[0] for r in rows])},
    )
    return curve


@dataclass(frozen=True)
class LcoPoint:
    amplitude: float
    omega: float
    stable: bool
    probe_amplitude: float


def lco(db, model, damping, probe_dof, n_grid=800):
    """Self-excited limit cycles: roots of the total-damping balance.

    Solves ``c(psi_1(|q|)) + 2 D_j(|q|) omega_j(|q|) = 0`` over the database
    range; an empty list means no limit cycle exists there (equilibrium only).
    Stability follows the slope rule: total damping increasing with amplitude
    means a stable cycle.
    """
    damping = resolve_damping(damping, model)

    def balance(q):
        return damping.lco_term(db.psi1(q), db.omega(q)) + 2.0 * db.damping(q) * db.omega(q)

    grid = np.geomspace(db.q_min * (1 + 1e-9), db.q_max * (1 - 1e-9), n_grid)
    points = []
    for q in _scan_roots(balance, grid):
        dq = 1e-6 * q
        slope = (balance(min(q + dq, db.q_max)) - balance(max(q - dq, db.q_min))) / (2 * dq)
        omega = db.omega(q)
        sig = reconstruct(db, q, np.zeros(model.n_dof, dtype=complex), omega, model)
        points.append(
            LcoPoint(
                amplitude=float(q),
                omega=float(omega),
                stable=bool(slope > 0.0),
                probe_amplitude=probe_amplitude(sig, probe_dof),
            )
        )
    return points


def similarity_rescale(curve, preload_ratio, model):
    """Response at a scaled contact preload from a base-preload computation.

    For preloaded piecewise-linear contacts the steady response obeys
    ``q(rho * f_pre, f_1) = rho * q(f_pre, f_1 / rho)``; given a curve computed
    at excitation ``f_1 / rho`` this rescales it to the new preload.  Models
    with cubic elements are rejected (the scaling does not hold for them).
    """
    if preload_ratio <= 0.0:
        raise ValueError("preload ratio must be positive")
    for el in model.elements:
        if isinstance(el, (CubicSpring, CouplingCubicSpring)):
            raise ValueError("similarity rescaling requires piecewise-linear contacts only")
    rho = float(preload_ratio)
    return ResponseCurve(
        param_name=curve.param_name,
        params=curve.params.copy(),
        q_j=curve.q_j * rho,
        q_lin=curve.q_lin * rho,
        amplitude=curve.amplitude * rho,
        probe_dof=curve.probe_dof,
        mode_index=curve.mode_index,
        ref_amplitude=curve.ref_amplitude,
        meta=dict(curve.meta, preload_ratio=rho),
    )


def frf_at_preload(db, model, f1, omega_range, damping, preload_ratio, probe_dof,
                   **kwargs):
    """FRF at a scaled preload using the base-preload database."""
    base = frf(db, model, np.asarray(f1) / preload_ratio, omega_range, damping,
               probe_dof, **kwargs)
    return similarity_rescale(base, preload_ratio, model)
