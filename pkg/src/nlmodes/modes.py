"""Energy-dependent nonlinear modes: multi-harmonic eigenproblem plus continuation.

The autonomous motion is expanded as ``u(t) = Re(sum_n U_n exp(n lam t))`` with
``lam = -D*omega0 + i*omega0*sqrt(1 - D**2)``.  Balancing each harmonic gives
``S_n(lam) U_n + G_n = 0``; the two extra unknowns ``(omega0, D)`` are fixed by
an amplitude normalization (mean kinetic energy over the pseudo period, or the
master-DOF amplitude) and a phase condition ``Im(U_1^(m)) = 0``.

Only the DOFs touched by nonlinear elements are iterated.  Away from linear
resonances the condensed form ``U_n + H_n^{NN} G_n = 0`` is used with the
spectral compliance; near them the solver falls back to the bordered stiffness
form ``Z_n U_n + G_n = 0`` where ``Z_n`` is the Schur complement of the linear
DOF block, which stays well-defined at the linear limit.  Either way the
linear DOFs are recovered exactly, so both formulations share one unknown
vector and one solution set.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import aft
from .linmodal import (
    NearResonantDenominator,
    check_spectral_guard,
    compliance_spectral,
    compliance_spectral_dlam,
)


class NoConvergence(RuntimeError):
    """Newton iteration failed; carries the last scaled residual norm."""

    def __init__(self, message, residual_norm=None):
        super().__init__(message)
        self.residual_norm = residual_norm


class StallError(RuntimeError):
    """Continuation step size underflowed before any point was obtained."""


class _EvalError(RuntimeError):
    """Residual evaluation failed at the current iterate (recoverable)."""


@dataclass(frozen=True)
class ContinuationSettings:
    """Knobs for the eigen solve and the branch continuation.

    ``target`` selects the amplitude normalization: ``"kinetic_energy"`` uses
    the mean kinetic energy over the pseudo period (evaluated by Parseval),
    ``"master_amplitude"`` prescribes ``|U_1|`` at the master DOF.  Steps are
    taken in pseudo-arc-length over the full scaled unknown vector; the
    continuation parameter itself is the log10 of the target when
    ``log_stepping`` is set.
    """

    nh: int = 9
    n_t: int = 128
    target: str = "kinetic_energy"
    log_stepping: bool = True
    step_initial: float = 0.2
    step_max: float = 1.0
    step_min: float = 1e-7
    newton_tol: float = 1e-9
    newton_max_iter: int = 15
    max_steps: int = 3000
    scale_damping: float = 0.01
    guard_eps: float = 1e-6
    form_switch: float = 1e-3
    min_tangent_cos: float = 0.2
    master_dof: int | None = None

    def __post_init__(self):
        if self.newton_tol <= 0 or self.step_min <= 0:
            raise ValueError("tolerances and step bounds must be positive")
        if not (self.step_min <= self.step_initial <= self.step_max):
            raise ValueError("step bounds must satisfy min <= initial <= max")
        if self.target not in ("kinetic_energy", "master_amplitude"):
            raise ValueError(f"unknown target {self.target!r}")


@dataclass
class ModalPoint:
    """One converged solution of the nonlinear eigenproblem."""

    omega0: float
    damping: float
    lam: complex
    signal: aft.HarmonicSignal  # harmonics over all DOFs
    kinetic_energy: float
    master_amp: float
    master_dof: int
    mode_index: int
    residual_norm: float
    form: str


@dataclass
class ModeBranch:
    """Ordered modal points of one mode over an energy range."""

    points: list
    mode_index: int
    master_dof: int
    turning_points: list = field(default_factory=list)
    status: str = "ok"
    message: str = ""
    omega_ref: float = 1.0
    nh: int = 0

    def energies(self):
        return np.array([p.kinetic_energy for p in self.points])

    def omegas(self):
        return np.array([p.omega0 for p in self.points])

    def dampings(self):
        return np.array([p.damping for p in self.points])

    def master_amps(self):
        return np.array([p.master_amp for p in self.points])

    def __len__(self):
        return len(self.points)

    def save(self, path):
        save_branch(self, path)


def _cblock(Hc):
    """Real 2x2-block form of a complex matrix acting on stacked [Re, Im]."""
    return np.block([[Hc.real, -Hc.imag], [Hc.imag, Hc.real]])


def _cvec(v, static):
    """Real stacked form of a complex vector for one harmonic block."""
    if static:
        return v.real
    return np.concatenate([v.real, v.imag])


class EigenSystem:
    """Precomputed machinery for the eigenproblem of one model and one mode."""

    def __init__(self, model, settings, mode_index):
        if np.any(model.C):
            raise ValueError(
                "modal analysis expects an undamped model; supply linear damping "
                "in the synthesis stage instead"
            )
        if not model.elements:
            raise ValueError("model has no nonlinear elements")
        self.model = model
        self.s = settings
        self.mode_index = int(mode_index)
        self.basis = model.linear_modes
        if not 0 <= mode_index < model.n_dof:
            raise ValueError("mode index outside spectrum")

        n = model.n_dof
        self.nl = np.array(model.nonlinear_dof_index, dtype=int)
        mask = np.ones(n, dtype=bool)
        mask[self.nl] = False
        self.lin = np.flatnonzero(mask)
        self.n_nl = self.nl.size
        self.n_l = self.lin.size
        self.nq = aft.layout_size(settings.nh, self.n_nl)
        self.dim = self.nq + 2

        self.Mnn = model.M[np.ix_(self.nl, self.nl)]
        self.Mll = model.M[np.ix_(self.lin, self.lin)]
        self.Mnl = model.M[np.ix_(self.nl, self.lin)]
        self.Knn = model.K[np.ix_(self.nl, self.nl)]
        self.Kll = model.K[np.ix_(self.lin, self.lin)]
        self.Knl = model.K[np.ix_(self.nl, self.lin)]

        self.master = self._pick_master(settings.master_dof)
        self.master_is_nl = self.master in set(self.nl.tolist())
        if self.master_is_nl:
            self.master_pos = int(np.flatnonzero(self.nl == self.master)[0])
        else:
            self.master_pos = int(np.flatnonzero(self.lin == self.master)[0])

        self._rows = [self._block_rows(k) for k in range(settings.nh + 1)]
        # fixed per-harmonic force scale so the stiffness-form residual rows are
        # dimensionless and smooth in the unknowns
        w_ref = self.basis.omegas[self.mode_index]
        k_norm = np.max(np.abs(model.K))
        m_norm = np.max(np.abs(model.M))
        self._row_norm = np.array(
            [max(k_norm + (k * w_ref) ** 2 * m_norm, 1e-300)
             for k in range(settings.nh + 1)]
        )

    def _pick_master(self, override):
        if override is not None:
            if not 0 <= override < self.model.n_dof:
                raise ValueError("master DOF outside model")
            return int(override)
        phi = np.abs(self.basis.phis[:, self.mode_index])
        if self.n_l:
            # nonlinear DOFs can lock up (stuck contact), so prefer a linear one
            return int(self.lin[np.argmax(phi[self.lin])])
        return int(self.nl[np.argmax(phi[self.nl])])

    def _block_rows(self, k):
        nh, n = self.s.nh, self.n_nl
        if k == 0:
            return aft.idx_static(nh, n)
        return np.concatenate([aft.idx_re(k, nh, n), aft.idx_im(k, nh, n)])

    # -- formulation selection ------------------------------------------------

    def pick_form(self, omega0, damping):
        lam = self.lam_of(omega0, damping)
        worst = min(
            check_spectral_guard(k, lam, self.basis, self.s.guard_eps)[0]
            for k in range(self.s.nh + 1)
        )
        return "stiffness" if worst < self.s.form_switch else "compliance"

    @staticmethod
    def lam_of(omega0, damping):
        return omega0 * (-damping + 1j * np.sqrt(1.0 - damping**2))

    # -- residual and Jacobian -------------------------------------------------

    def evaluate(self, z, target_value, form, u_scale=None):
        """Residual and Jacobian at the packed state ``z = [u, omega0, D]``.

        Returns ``(r, J, extras)`` with ``J`` of shape ``(nq+2, nq+2)`` over
        ``(u, omega0, D)``.  Residual rows are scaled to be dimensionless:
        harmonic-balance rows relative to the displacement scale ``u_scale``
        (and the static force norm in the stiffness form), normalization and
        phase rows are relative by construction.  Raises :class:`_EvalError`
        on iterates where the residual is undefined (non-positive frequency,
        |D| >= 1, vanishing normalization) so callers can cut their step.
        """
        s = self.s
        nh, n_nl, n_l, nq = s.nh, self.n_nl, self.n_l, self.nq
        u = z[:nq]
        omega0, damping = z[nq], z[nq + 1]
        if not np.all(np.isfinite(z)):
            raise _EvalError("non-finite iterate")
        if omega0 <= 0.0 or abs(damping) >= 1.0:
            raise _EvalError("iterate outside the admissible (omega0, D) region")
        s_u = u_scale if u_scale is not None else max(np.max(np.abs(u)), 1e-300)
        sq = np.sqrt(1.0 - damping**2)
        lam = omega0 * (-damping + 1j * sq)
        dlam_dw = -damping + 1j * sq
        dlam_dD = omega0 * (-1.0 - 1j * damping / sq)

        signal = aft.unpack(u, nh, n_nl, omega0)
        G, Jg = aft.nl_harmonics(signal, self.model.elements, tuple(self.nl), s.n_t)

        r = np.empty(self.dim)
        J = np.zeros((self.dim, self.dim))
        U_full = np.zeros((nh + 1, self.model.n_dof), dtype=complex)
        U_full[:, self.nl] = signal.U
        # recovery derivative stacks per harmonic: d U^L / d u and d U^L / d lam
        dUL_du = [None] * (nh + 1)
        dUL_dlam = [None] * (nh + 1)

        for k in range(nh + 1):
            rows = self._rows[k]
            Uk = signal.U[k]
            Gk = G.U[k]
            static = k == 0
            if form == "compliance":
                Hnn = compliance_spectral(k, lam, self.basis, s.guard_eps,
                                          rows=self.nl, cols=self.nl)
                dHnn = compliance_spectral_dlam(k, lam, self.basis,
                                                rows=self.nl, cols=self.nl)
                rk = Uk + Hnn @ Gk
                op = Hnn.real if static else _cblock(Hnn)
                Jblock = op @ Jg[rows, :]
                Jblock[:, rows] += np.eye(rows.size)
                dr_dlam = dHnn @ Gk
                ULk = None
                if n_l:
                    Hln = compliance_spectral(k, lam, self.basis, s.guard_eps,
                                              rows=self.lin, cols=self.nl)
                    dHln = compliance_spectral_dlam(k, lam, self.basis,
                                                    rows=self.lin, cols=self.nl)
                    ULk = -Hln @ Gk
                    dUL_du[k] = -(Hln.real if static else _cblock(Hln)) @ Jg[rows, :]
                    dUL_dlam[k] = -dHln @ Gk
                row_scale = s_u
            else:
                nl2 = (k * lam) ** 2
                Snn = self.Knn + nl2 * self.Mnn
                dSnn = 2.0 * k**2 * lam * self.Mnn
                ULk = None
                if n_l:
                    Sll = self.Kll + nl2 * self.Mll
                    Snl = self.Knl + nl2 * self.Mnl
                    dSll = 2.0 * k**2 * lam * self.Mll
                    dSnl = 2.0 * k**2 * lam * self.Mnl
                    lu = np.linalg.inv(Sll)
                    A = lu @ Snl.T  # S^LN is the transpose of S^NL (symmetric blocks)
                    Z = Snn - Snl @ A
                    dA = lu @ (dSnl.T - dSll @ A)
                    dZ = dSnn - dSnl @ A - Snl @ dA
                    ULk = -A @ Uk
                    sel = np.zeros((rows.size, nq))
                    sel[:, rows] = np.eye(rows.size)
                    dUL_du[k] = -(A.real if static else _cblock(A)) @ sel
                    dUL_dlam[k] = -dA @ Uk
                else:
                    Z = Snn
                    dZ = dSnn
                rk = Z @ Uk + Gk
                op = Z.real if static else _cblock(Z)
                Jblock = Jg[rows, :].copy()
                Jblock[:, rows] += op
                dr_dlam = dZ @ Uk
                row_scale = self._row_norm[k] * s_u

            r[rows] = _cvec(rk, static) / row_scale
            J[np.ix_(rows, np.arange(nq))] = Jblock / row_scale
            J[rows, nq] = _cvec(dr_dlam * dlam_dw, static) / row_scale
            J[rows, nq + 1] = _cvec(dr_dlam * dlam_dD, static) / row_scale
            if ULk is not None:
                U_full[k, self.lin] = ULk

        # amplitude normalization ------------------------------------------------
        w_full = [None] * (nh + 1)
        e_kin = 0.0
        for k in range(1, nh + 1):
            w_full[k] = self.model.M @ U_full[k]
            e_kin += 0.25 * (k * omega0) ** 2 * np.real(np.vdot(U_full[k], w_full[k]))
        if not np.isfinite(e_kin):
            raise _EvalError("non-finite kinetic energy")

        ge_u = np.zeros(nq)
        ge_w = 2.0 * e_kin / omega0
        ge_D = 0.0
        for k in range(1, nh + 1):
            c = 0.5 * (k * omega0) ** 2
            wk = w_full[k]
            rows = self._rows[k]
            nh_n = self.n_nl
            ge_u[rows[:nh_n]] += c * wk[self.nl].real
            ge_u[rows[nh_n:]] += c * wk[self.nl].imag
            if n_l:
                wl = wk[self.lin]
                stack = c * np.concatenate([wl.real, wl.imag])
                ge_u += stack @ dUL_du[k]
                ge_w += c * np.real(np.conj(wl) @ (dUL_dlam[k] * dlam_dw))
                ge_D += c * np.real(np.conj(wl) @ (dUL_dlam[k] * dlam_dD))
        # static recovery does not enter the kinetic energy

        # master component and its gradient ---------------------------------------
        U1m = U_full[1, self.master]
        cm_u = np.zeros(nq, dtype=complex)
        cm_w = 0.0 + 0.0j
        cm_D = 0.0 + 0.0j
        rows1 = self._rows[1]
        if self.master_is_nl:
            cm_u[rows1[self.master_pos]] = 1.0
            cm_u[rows1[self.n_nl + self.master_pos]] = 1j
        else:
            p = self.master_pos
            cm_u = dUL_du[1][p, :] + 1j * dUL_du[1][n_l + p, :]
            cm_w = dUL_dlam[1][p] * dlam_dw
            cm_D = dUL_dlam[1][p] * dlam_dD

        if s.target == "kinetic_energy":
            if e_kin <= 0.0:
                raise _EvalError("kinetic energy not positive at iterate")
            r[nq] = np.log(e_kin) - np.log(target_value)
            J[nq, :nq] = ge_u / e_kin
            J[nq, nq] = ge_w / e_kin
            J[nq, nq + 1] = ge_D / e_kin
        else:
            amp = np.abs(U1m)
            if amp <= 0.0:
                raise _EvalError("master amplitude vanished at iterate")
            r[nq] = np.log(amp) - np.log(target_value)
            d = np.real(np.conj(U1m) * cm_u) / amp**2
            J[nq, :nq] = d
            J[nq, nq] = np.real(np.conj(U1m) * cm_w) / amp**2
            J[nq, nq + 1] = np.real(np.conj(U1m) * cm_D) / amp**2

        r[nq + 1] = U1m.imag / s_u
        J[nq + 1, :nq] = cm_u.imag / s_u
        J[nq + 1, nq] = np.imag(cm_w) / s_u
        J[nq + 1, nq + 1] = np.imag(cm_D) / s_u

        extras = {
            "U_full": U_full,
            "e_kin": e_kin,
            "lam": lam,
            "master_val": U1m,
            "G": G,
            "signal": signal,
        }
        return r, J, extras

    # -- scaling ---------------------------------------------------------------

    def scales(self, z):
        s_u = max(np.max(np.abs(z[: self.nq])), 1e-300)
        sc = np.empty(self.dim)
        sc[: self.nq] = s_u
        sc[self.nq] = self.basis.omegas[self.mode_index]
        sc[self.nq + 1] = self.s.scale_damping
        return sc

    # -- initial guess -----------------------------------------------------------

    def linear_guess(self, target_value):
        j = self.mode_index
        phi = self.basis.phis[:, j].copy()
        if phi[self.master] < 0:
            phi = -phi
        wj = self.basis.omegas[j]
        if self.s.target == "kinetic_energy":
            q0 = 2.0 * np.sqrt(target_value) / wj
        else:
            q0 = target_value / abs(phi[self.master])
        U = np.zeros((self.s.nh + 1, self.n_nl), dtype=complex)
        U[1] = q0 * phi[self.nl]
        z = np.empty(self.dim)
        z[: self.nq] = aft.pack(aft.HarmonicSignal(U, wj))
        z[self.nq] = wj
        z[self.nq + 1] = 0.0
        return z

    # -- Newton ------------------------------------------------------------------

    def newton(self, z0, target_value, form="auto", tangent=None, y_pred=None,
               scales=None):
        """Solve the eigenproblem (optionally with an arc-length constraint).

        Without a tangent this is a square Newton solve on ``z``.  With
        ``tangent`` and ``y_pred`` given (both in scaled coordinates including
        the continuation parameter), the corrector iterates the augmented
        system in ``y = [z, ell]``.
        """
        s = self.s
        arc = tangent is not None
        if form == "auto":
            form = self.pick_form(z0[self.nq], z0[self.nq + 1])
        z = np.array(z0, dtype=float)
        ell = None
        if arc:
            z, ell = z[:-1], z[-1]
        sc = self.scales(z) if scales is None else scales[: self.dim]

        def full_residual(zc, ellc, formc):
            rc, Jc, exc = self.evaluate(zc, self._target_from(ellc, target_value), formc)
            if arc:
                y_sc = np.concatenate([zc / sc, [ellc / scales[-1]]])
                rc = np.concatenate([rc, [tangent @ (y_sc - y_pred)]])
            return rc, Jc, exc

        try:
            r, J, extras = full_residual(z, ell, form)
        except NearResonantDenominator:
            form = "stiffness"
            r, J, extras = full_residual(z, ell, form)
        rn = np.linalg.norm(r, np.inf)

        nonmonotone = 0
        for _ in range(s.newton_max_iter):
            if arc:
                Jsc = np.empty((self.dim + 1, self.dim + 1))
                Jsc[: self.dim, : self.dim] = J * sc[None, :]
                dcol = np.zeros(self.dim)
                dcol[self.nq] = -np.log(10.0) if s.log_stepping else -1.0
                Jsc[: self.dim, self.dim] = dcol * scales[-1]
                Jsc[self.dim, :] = tangent
                try:
                    dy = np.linalg.solve(Jsc, -r)
                except np.linalg.LinAlgError as exc:
                    raise _EvalError("singular corrector matrix") from exc
                dz = dy[:-1] * sc
                dell = dy[-1] * scales[-1]
                step_rel = np.linalg.norm(dy, np.inf)
            else:
                try:
                    dy = np.linalg.solve(J * sc[None, :], -r)
                except np.linalg.LinAlgError as exc:
                    raise _EvalError("singular Newton matrix") from exc
                dz = dy * sc
                dell = 0.0
                step_rel = np.linalg.norm(dy, np.inf)
            # a small residual alone can hide response error behind the force
            # scaling; the remaining Newton correction bounds it directly
            if rn <= s.newton_tol and step_rel <= 1e3 * s.newton_tol:
                return z if not arc else np.concatenate([z, [ell]]), extras, form

            # backtracking from rough starts, with a small nonmonotone budget
            # because active-set changes of the contact laws can force the
            # residual up before Newton locks onto the new smooth piece
            alpha = self._admissible_fraction(z, dz)
            accepted = best = first = None
            for _ in range(12):
                z_try = z + alpha * dz
                ell_try = ell + alpha * dell if arc else None
                try:
                    r2, J2, ex2 = full_residual(z_try, ell_try, form)
                except NearResonantDenominator:
                    if form == "compliance":
                        form = "stiffness"
                        r2, J2, ex2 = full_residual(z_try, ell_try, form)
                    else:
                        alpha *= 0.5
                        continue
                except _EvalError:
                    alpha *= 0.5
                    continue
                rn2 = np.linalg.norm(r2, np.inf)
                state = (z_try, ell_try, r2, J2, ex2, rn2)
                if first is None:
                    first = state
                if rn2 <= (1.0 - 1e-4 * alpha) * rn and alpha >= 0.0625:
                    # creeping decreases at tinier alpha signal a wrong basin;
                    # prefer the nonmonotone full step below in that case
                    accepted = state
                    break
                alpha *= 0.5
            if accepted is not None:
                nonmonotone = 0
            elif first is not None and nonmonotone < 4:
                accepted = first
                nonmonotone += 1
            else:
                raise NoConvergence(
                    f"Newton stagnated (residual {rn:.3e})", residual_norm=float(rn)
                )
            z, ell, r, J, extras, rn = accepted
        raise NoConvergence(
            f"Newton did not reach tolerance (last residual {rn:.3e})",
            residual_norm=float(rn),
        )

    def _admissible_fraction(self, z, dz):
        """Largest step fraction (halvings) keeping ``omega0 > 0`` and ``|D| < 1``."""
        alpha = 1.0
        for _ in range(40):
            w_new = z[self.nq] + alpha * dz[self.nq]
            d_new = z[self.nq + 1] + alpha * dz[self.nq + 1]
            if w_new > 0.0 and abs(d_new) < 1.0:
                return alpha
            alpha *= 0.5
        raise _EvalError("cannot keep iterate admissible")

    def _target_from(self, ell, target_value):
        if ell is None:
            return target_value
        return 10.0**ell if self.s.log_stepping else ell

    # -- point construction --------------------------------------------------------

    def make_point(self, z, extras, form):
        omega0, damping = float(z[self.nq]), float(z[self.nq + 1])
        U = extras["U_full"].copy()
        if U[1, self.master].real < 0:
            # half-period time shift keeps the autonomous solution, fixes the sign
            signs = (-1.0) ** np.arange(self.s.nh + 1)
            U = U * signs[:, None]
        sig = aft.HarmonicSignal(U, omega0)
        target = (extras["e_kin"] if self.s.target == "kinetic_energy"
                  else np.abs(extras["master_val"]))
        r, _, _ = self.evaluate(z[: self.nq + 2], target, form)
        return ModalPoint(
            omega0=omega0,
            damping=damping,
            lam=self.lam_of(omega0, damping),
            signal=sig,
            kinetic_energy=float(extras["e_kin"]),
            master_amp=float(np.abs(extras["master_val"])),
            master_dof=self.master,
            mode_index=self.mode_index,
            residual_norm=float(np.linalg.norm(r, np.inf)),
            form=form,
        )

    def expanded_residual(self, point):
        """Scaled full-system residual ``S_n U_n + G_n`` of a converged point."""
        sigN = aft.HarmonicSignal(point.signal.U[:, self.nl], point.omega0)
        G, _ = aft.nl_harmonics(sigN, self.model.elements, tuple(self.nl), self.s.n_t)
        worst = 0.0
        for k in range(self.s.nh + 1):
            S = self.model.K + (k * point.lam) ** 2 * self.model.M
            res = S @ point.signal.U[k]
            res[self.nl] += G.U[k]
            scale = max(np.max(np.abs(S)) * np.max(np.abs(point.signal.U)), 1e-300)
            worst = max(worst, np.max(np.abs(res)) / scale)
        return worst


def residual(z, model, settings, target_value, mode_index=0, form="stiffness",
             master_dof=None):
    """Residual and Jacobian of the normalized eigenproblem at a packed state.

    ``z`` stacks the harmonic-major coefficients of the nonlinear DOFs followed
    by ``omega0`` and ``D``.  Mainly a convenience wrapper for testing and
    diagnostics; the continuation drives :class:`EigenSystem` directly.
    """
    if master_dof is not None:
        settings = replace(settings, master_dof=master_dof)
    sys_ = EigenSystem(model, settings, mode_index)
    r, J, _ = sys_.evaluate(np.asarray(z, dtype=float), target_value, form)
    return r, J


def solve_point(model, mode_index, target_value, settings=None, z0=None,
                form="auto"):
    """Converge a single modal point at a prescribed normalization target."""
    settings = settings or ContinuationSettings()
    sys_ = EigenSystem(model, settings, mode_index)
    if z0 is None:
        z0 = sys_.linear_guess(target_value)
    z, extras, used = sys_.newton(np.asarray(z0, dtype=float), target_value, form=form)
    return sys_.make_point(z, extras, used)


def continue_branch(model, mode_index, energy_range, settings=None):
    """Trace one mode over ``[e_min, e_max]`` in mean kinetic energy.

    Pseudo-arc-length predictor/corrector on the full scaled unknown vector;
    folds of the energy (internal-resonance tongues) are traversed and logged
    as turning points.  Returns a partial branch with a diagnostic status when
    the step size underflows after at least one converged point.
    """
    settings = settings or ContinuationSettings()
    if settings.target != "kinetic_energy":
        settings = replace(settings, target="kinetic_energy")
    e_min, e_max = energy_range
    if not (0.0 < e_min < e_max):
        raise ValueError("energy range must satisfy 0 < e_min < e_max")
    sys_ = EigenSystem(model, settings, mode_index)

    z0 = sys_.linear_guess(e_min)
    try:
        z, extras, form = sys_.newton(z0, e_min, form="auto")
    except (NoConvergence, _EvalError) as exc:
        raise StallError(f"could not converge the starting point: {exc}") from exc
    first = sys_.make_point(z, extras, form)
    branch = ModeBranch(
        points=[first],
        mode_index=mode_index,
        master_dof=sys_.master,
        omega_ref=float(model.linear_modes.omegas[0]),
        nh=settings.nh,
    )

    ell = np.log10(first.kinetic_energy) if settings.log_stepping else first.kinetic_energy
    y = np.concatenate([z, [ell]])
    t_prev = np.zeros(sys_.dim + 1)
    t_prev[-1] = 1.0
    h = settings.step_initial
    prev_dell = 0.0

    for _ in range(settings.max_steps):
        sc_z = sys_.scales(y[:-1])
        sc = np.concatenate([sc_z, [1.0]])
        form = sys_.pick_form(y[sys_.nq], y[sys_.nq + 1])
        try:
            tangent = _branch_tangent(sys_, y, sc, t_prev, form)
        except (_EvalError, NearResonantDenominator, np.linalg.LinAlgError):
            form = "stiffness"
            tangent = _branch_tangent(sys_, y, sc, t_prev, form)

        accepted = None
        angle_floor = settings.step_initial / 256.0
        while h >= settings.step_min:
            y_sc = y / sc
            y_pred_sc = y_sc + h * tangent
            y_pred = y_pred_sc * sc
            try:
                y_new, extras, used = sys_.newton(
                    y_pred, None, form=form, tangent=tangent,
                    y_pred=y_pred_sc, scales=sc,
                )
            except (NoConvergence, _EvalError, NearResonantDenominator):
                h *= 0.5
                continue
            dist = np.linalg.norm(y_new / sc - y_sc)
            if dist > 10.0 * h or not np.isfinite(dist):
                h *= 0.5
                continue
            # sharp tangent turns signal a nearly missed fold: refine instead
            if h > angle_floor:
                try:
                    t_new = _branch_tangent(sys_, y_new, sc, tangent, used)
                except (_EvalError, NearResonantDenominator, np.linalg.LinAlgError):
                    t_new = None
                if t_new is not None and t_new @ tangent < settings.min_tangent_cos:
                    h *= 0.5
                    continue
            accepted = (y_new, extras, used)
            break

        if accepted is None:
            # nonsmooth corner (contact state change): cross it with a short
            # natural-parameter step, which the arc corrector cannot take
            direction = np.sign(tangent[-1]) or np.sign(prev_dell) or 1.0
            dl = 0.05
            while dl >= 1e-6:
                try:
                    z_new, extras, used = sys_.newton(
                        np.array(y[:-1]), sys_._target_from(y[-1] + direction * dl, None),
                        form=form,
                    )
                except (NoConvergence, _EvalError, NearResonantDenominator):
                    dl *= 0.5
                    continue
                y_new = np.concatenate([z_new, [y[-1] + direction * dl]])
                secant = (y_new - y) / sc
                norm = np.linalg.norm(secant)
                if norm > 0:
                    tangent = secant / norm
                accepted = (y_new, extras, used)
                h = max(h, settings.step_initial / 16.0)
                break
            if accepted is None:
                branch.status = "stalled"
                branch.message = f"step size underflowed at energy {10.0**y[-1]:.3e}"
                return branch

        y, extras, used = accepted
        point = sys_.make_point(y[:-1], extras, used)
        branch.points.append(point)
        dell = y[-1] - ell
        if prev_dell != 0.0 and dell * prev_dell < 0.0:
            branch.turning_points.append(len(branch.points) - 1)
        if dell != 0.0:
            prev_dell = dell
        ell = y[-1]
        t_prev = tangent
        if point.kinetic_energy >= e_max:
            return branch
        h = min(h * 1.5, settings.step_max)

    branch.status = "max_steps"
    branch.message = "step budget exhausted before reaching the energy target"
    return branch


def _branch_tangent(sys_, y, sc, t_prev, form):
    z, ell = y[:-1], y[-1]
    tv = sys_._target_from(ell, None)
    r, J, _ = sys_.evaluate(z, tv, form)
    A = np.empty((sys_.dim + 1, sys_.dim + 1))
    A[: sys_.dim, : sys_.dim] = J * sc[None, : sys_.dim]
    dcol = np.zeros(sys_.dim)
    dcol[sys_.nq] = -np.log(10.0) if sys_.s.log_stepping else -1.0
    A[: sys_.dim, sys_.dim] = dcol * sc[-1]
    A[sys_.dim, :] = t_prev
    rhs = np.zeros(sys_.dim + 1)
    rhs[-1] = 1.0
    t = np.linalg.solve(A, rhs)
    t /= np.linalg.norm(t)
    if t @ t_prev < 0:
        t = -t
    return t


@dataclass
class TongueEntry:
    energy: float
    omega_a: float
    omega_b: float
    mismatch: float


@dataclass
class TongueReport:
    ratio: int
    tolerance: float
    entries: list

    @property
    def found(self):
        return bool(self.entries)

    def best(self):
        return min(self.entries, key=lambda e: e.mismatch) if self.entries else None


def mode_at_tongue_check(branch_a, branch_b, ratio, tolerance=5e-3):
    """Scan for energies where ``ratio * omega_a`` meets ``omega_b``.

    ``omega_b`` is interpolated over energy from ``branch_b``; every point of
    ``branch_a`` inside the common energy range whose frequency ratio matches
    within ``tolerance`` is reported.
    """
    ea, wa = branch_a.energies(), branch_a.omegas()
    eb, wb = branch_b.energies(), branch_b.omegas()
    order = np.argsort(eb)
    eb, wb = eb[order], wb[order]
    eb, keep = np.unique(eb, return_index=True)
    wb = wb[keep]
    lo, hi = eb[0], eb[-1]
    entries = []
    for e, w in zip(ea, wa):
        if not lo <= e <= hi:
            continue
        w_b = np.interp(e, eb, wb)
        mismatch = abs(ratio * w - w_b) / w_b
        if mismatch < tolerance:
            entries.append(TongueEntry(energy=float(e), omega_a=float(w),
                                       omega_b=float(w_b), mismatch=float(mismatch)))
    return TongueReport(ratio=ratio, tolerance=tolerance, entries=entries)


# ---------------------------------------------------------------------------
# tabular branch export


def save_branch(branch, path):
    """Write a branch as CSV with metadata comment lines (lossless round trip)."""
    if not branch.points:
        raise ValueError("cannot save an empty branch")
    p0 = branch.points[0]
    nh = p0.signal.nh
    n_dof = p0.signal.n_dof
    cols = ["energy", "omega0", "omega0_star", "damping", "master_amp"]
    for k in range(nh + 1):
        for d in range(n_dof):
            cols.append(f"re_u{k}_d{d}")
            cols.append(f"im_u{k}_d{d}")
    lines = [
        "# nlmodes-branch v1",
        f"# mode_index={branch.mode_index}",
        f"# master_dof={branch.master_dof}",
        f"# omega_ref={branch.omega_ref!r}",
        f"# nh={nh}",
        f"# n_dof={n_dof}",
        f"# status={branch.status}",
        ",".join(cols),
    ]
    for p in branch.points:
        row = [
            repr(p.kinetic_energy),
            repr(p.omega0),
            repr(p.omega0 / branch.omega_ref),
            repr(p.damping),
            repr(p.master_amp),
        ]
        for k in range(nh + 1):
            for d in range(n_dof):
                row.append(repr(float(p.signal.U[k, d].real)))
                row.append(repr(float(p.signal.U[k, d].imag)))
        lines.append(",".join(row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_branch(path):
    """Read a branch written by :func:`save_branch`."""
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
            rows.append(np.array([float(v) for v in line.split(",")]))
    if header is None or not rows:
        raise ValueError(f"no branch data in {path}")
    nh = int(meta["nh"])
    n_dof = int(meta["n_dof"])
    mode_index = int(meta.get("mode_index", 0))
    master_dof = int(meta.get("master_dof", 0))
    omega_ref = float(meta.get("omega_ref", 1.0))
    points = []
    for row in rows:
        energy, omega0, _, damping, master_amp = row[:5]
        vals = row[5:]
        U = np.empty((nh + 1, n_dof), dtype=complex)
        for k in range(nh + 1):
            base = 2 * n_dof * k
            U[k] = vals[base: base + 2 * n_dof: 2] + 1j * vals[base + 1: base + 2 * n_dof: 2]
        lam = omega0 * (-damping + 1j * np.sqrt(1.0 - damping**2))
        points.append(
            ModalPoint(
                omega0=omega0,
                damping=damping,
                lam=lam,
                signal=aft.HarmonicSignal(U, omega0),
                kinetic_energy=energy,
                master_amp=master_amp,
                master_dof=master_dof,
                mode_index=mode_index,
                residual_norm=np.nan,
                form="loaded",
            )
        )
    return ModeBranch(
        points=points,
        mode_index=mode_index,
        master_dof=master_dof,
        status=meta.get("status", "ok"),
        omega_ref=omega_ref,
        nh=nh,
    )
