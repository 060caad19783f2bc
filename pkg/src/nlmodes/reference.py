"""Reference solvers used as oracles: forced harmonic balance and time stepping.

These deliberately share nothing with the synthesis path except the AFT force
evaluation, so agreement between them and the reduced-order results is a
meaningful cross-check rather than a tautology.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import aft
from .model import CubicSpring, ElasticCoulomb, UnilateralSpring
from .modes import NoConvergence, _cblock, _cvec
from .synthesis import ResponseCurve, resolve_damping

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False


class IntegrationDiverged(RuntimeError):
    """State norm overflow: the trajectory grows without bound."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class NotSteady(RuntimeError):
    """Trailing periods still show transient amplitude drift."""


@dataclass(frozen=True)
class HbmSettings:
    """Forced harmonic-balance solve and sweep settings."""

    nh: int = 7
    n_t: int = 128
    step_initial: float = 0.01
    step_max: float = 0.05
    step_min: float = 1e-9
    newton_tol: float = 1e-9
    newton_max_iter: int = 25
    max_steps: int = 20000

    def __post_init__(self):
        if not (0 < self.step_min <= self.step_initial <= self.step_max):
            raise ValueError("step bounds must satisfy 0 < min <= initial <= max")
        if self.newton_tol <= 0:
            raise ValueError("tolerance must be positive")


class _HbmSystem:
    """Condensed forced harmonic balance in the nonlinear DOFs."""

    def __init__(self, model, f1, damping, settings):
        self.model = model
        self.s = settings
        damping = resolve_damping(damping, model)
        C = model.C.copy()
        cv = damping.viscous_matrix(model)
        if cv is not None:
            C = C + cv
        self.C = C
        self.D_hyst = damping.hysteretic_matrix()
        self.damping = damping

        n = model.n_dof
        self.nl = np.array(model.nonlinear_dof_index, dtype=int)
        if self.nl.size == 0:
            self.nl = np.arange(n)  # linear model: keep every DOF explicit
        mask = np.ones(n, dtype=bool)
        mask[self.nl] = False
        self.lin = np.flatnonzero(mask)
        self.n_nl = self.nl.size
        self.n_l = self.lin.size
        self.nq = aft.layout_size(settings.nh, self.n_nl)

        self.F = np.zeros((settings.nh + 1, n), dtype=complex)
        self.F[1] = np.asarray(f1, dtype=complex)

        self._rows = []
        for k in range(settings.nh + 1):
            if k == 0:
                self._rows.append(aft.idx_static(settings.nh, self.n_nl))
            else:
                self._rows.append(
                    np.concatenate(
                        [aft.idx_re(k, settings.nh, self.n_nl),
                         aft.idx_im(k, settings.nh, self.n_nl)]
                    )
                )
    def _s_blocks(self, k, omega):
        lam = 1j * omega
        S = self.model.K + (k * lam) * self.C + (k * lam) ** 2 * self.model.M
        dS = 1j * k * self.C - 2.0 * k**2 * omega * self.model.M
        if k >= 1 and self.D_hyst is not None:
            S = S + 1j * self.D_hyst
        return S, dS

    def evaluate(self, u, omega, u_scale=None):
        """Residual, Jacobian over ``(u, omega)``, and recovered full harmonics.

        The condensation runs through the full dynamic compliance
        ``H_n = S_n^-1`` (damping keeps ``S_n`` regular on the real frequency
        axis), which stays well-conditioned even where the linear-DOF block
        alone is resonant and a Schur complement would cancel catastrophically.
        """
        s = self.s
        if omega <= 0.0 or not np.all(np.isfinite(u)):
            raise ValueError("inadmissible iterate")
        s_u = u_scale if u_scale is not None else max(np.max(np.abs(u)), 1e-300)
        sig = aft.unpack(u, s.nh, self.n_nl, omega)
        if self.model.elements:
            G, Jg = aft.nl_harmonics(sig, self.model.elements, tuple(self.nl), s.n_t)
            GU = G.U
        else:
            GU = np.zeros((s.nh + 1, self.n_nl), dtype=complex)
            Jg = np.zeros((self.nq, self.nq))
        r = np.empty(self.nq)
        J = np.zeros((self.nq, self.nq + 1))
        U_full = np.zeros((s.nh + 1, self.model.n_dof), dtype=complex)
        U_full[:, self.nl] = sig.U
        for k in range(s.nh + 1):
            rows = self._rows[k]
            static = k == 0
            S, dS = self._s_blocks(k, omega)
            H = np.linalg.inv(S)
            HF = H @ self.F[k]
            Hnn = H[np.ix_(self.nl, self.nl)]
            rk = sig.U[k] + Hnn @ GU[k] - HF[self.nl]
            # dH = -H dS H, applied to the force and the nonlinear terms
            HdSH_F = H @ (dS @ HF)
            HG = H[:, self.nl] @ GU[k]
            HdSH_G = H @ (dS @ HG)
            dr_dw = -HdSH_G[self.nl] + HdSH_F[self.nl]
            if self.n_l:
                U_full[k, self.lin] = HF[self.lin] - H[np.ix_(self.lin, self.nl)] @ GU[k]
            scale = s_u
            r[rows] = _cvec(rk, static) / scale
            block = (Hnn.real if static else _cblock(Hnn)) @ Jg[rows, :]
            block[:, rows] += np.eye(rows.size)
            J[np.ix_(rows, np.arange(self.nq))] = block / scale
            J[rows, self.nq] = _cvec(dr_dw, static) / scale
        return r, J, aft.HarmonicSignal(U_full, omega)

    def linear_guess(self, omega):
        u = np.zeros(self.nq)
        S, _ = self._s_blocks(1, omega)
        U1 = np.linalg.solve(S, self.F[1])
        rows = self._rows[1]
        u[rows[: self.n_nl]] = U1[self.nl].real
        u[rows[self.n_nl:]] = U1[self.nl].imag
        return u

    def newton(self, u, omega, tangent=None, y_pred=None, scales=None):
        s = self.s
        u = np.array(u, dtype=float)
        omega = float(omega)
        sc_u = self.scales(u) if scales is None else scales

        def residual(uc, wc):
            r, J, sig = self.evaluate(uc, wc, u_scale=sc_u[0])
            if tangent is not None:
                y_sc = np.concatenate([uc / sc_u[0], [wc / sc_u[1]]])
                r = np.concatenate([r, [tangent @ (y_sc - y_pred)]])
            return r, J, sig

        r, J, sig = residual(u, omega)
        rn = np.linalg.norm(r, np.inf)
        nonmonotone = 0
        for _ in range(s.newton_max_iter):
            if tangent is not None:
                A = np.empty((self.nq + 1, self.nq + 1))
                A[: self.nq, : self.nq] = J[:, : self.nq] * sc_u[0]
                A[: self.nq, self.nq] = J[:, self.nq] * sc_u[1]
                A[self.nq, :] = tangent
                dy = np.linalg.solve(A, -r)
                du = dy[:-1] * sc_u[0]
                dw = dy[-1] * sc_u[1]
            else:
                dy = np.linalg.solve(J[:, : self.nq] * sc_u[0], -r)
                du = dy * sc_u[0]
                dw = 0.0
            # converge on the remaining correction too, not the residual alone
            if rn <= s.newton_tol and np.linalg.norm(dy, np.inf) <= 1e3 * s.newton_tol:
                return u, omega, sig
            alpha, accepted, first = 1.0, None, None
            for _ in range(10):
                try:
                    r2, J2, sig2 = residual(u + alpha * du, omega + alpha * dw)
                except ValueError:
                    alpha *= 0.5
                    continue
                rn2 = np.linalg.norm(r2, np.inf)
                state = (u + alpha * du, omega + alpha * dw, r2, J2, sig2, rn2)
                if first is None:
                    first = state
                if rn2 <= (1 - 1e-4 * alpha) * rn and alpha >= 0.0625:
                    accepted = state
                    break
                alpha *= 0.5
            if accepted is not None:
                nonmonotone = 0
            elif first is not None and nonmonotone < 4:
                accepted = first
                nonmonotone += 1
            else:
                raise NoConvergence(f"HBM Newton stagnated (residual {rn:.3e})",
                                    residual_norm=float(rn))
            u, omega, r, J, sig, rn = accepted
        raise NoConvergence(f"HBM Newton did not converge (residual {rn:.3e})",
                            residual_norm=float(rn))

    def scales(self, u):
        return np.array([max(np.max(np.abs(u)), 1e-300),
                         self.model.linear_modes.omegas[0]])


def hbm_frf(model, f1, omega_range, damping, settings=None, probe_dof=0):
    """Forced response by multi-harmonic balance with arc-length over frequency.

    Solves every harmonic jointly (condensed to the nonlinear DOFs) and sweeps
    the excitation frequency through folds.  Serves as the reference for the
    single-mode synthesis results.
    """
    settings = settings or HbmSettings()
    sys_ = _HbmSystem(model, f1, damping, settings)
    omega_lo, omega_hi = omega_range
    if not 0 < omega_lo < omega_hi:
        raise ValueError("need 0 < omega_lo < omega_hi")

    u = sys_.linear_guess(omega_lo)
    u, omega, sig = sys_.newton(u, omega_lo)

    rows = []

    def record(sig, omega):
        U1 = sig.U[1]
        q1 = np.sqrt(np.real(np.vdot(U1, model.M @ U1)))
        rows.append((omega, q1, aft.peak_zero_mean(sig, probe_dof)))

    record(sig, omega)
    y = np.concatenate([u, [omega]])
    t_prev = np.zeros(sys_.nq + 1)
    t_prev[-1] = 1.0
    h = settings.step_initial

    for _ in range(settings.max_steps):
        sc = sys_.scales(y[:-1])
        r, J, _ = sys_.evaluate(y[:-1], y[-1], u_scale=sc[0])
        A = np.empty((sys_.nq + 1, sys_.nq + 1))
        A[: sys_.nq, : sys_.nq] = J[:, : sys_.nq] * sc[0]
        A[: sys_.nq, sys_.nq] = J[:, sys_.nq] * sc[1]
        A[sys_.nq, :] = t_prev
        rhs = np.zeros(sys_.nq + 1)
        rhs[-1] = 1.0
        try:
            t = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError:
            t = t_prev
        t /= np.linalg.norm(t)
        if t @ t_prev < 0:
            t = -t

        stepped = False
        while h >= settings.step_min:
            y_sc = np.concatenate([y[:-1] / sc[0], [y[-1] / sc[1]]])
            y_pred_sc = y_sc + h * t
            u_pred = y_pred_sc[:-1] * sc[0]
            w_pred = y_pred_sc[-1] * sc[1]
            try:
                u_new, w_new, sig = sys_.newton(
                    u_pred, w_pred, tangent=t, y_pred=y_pred_sc, scales=sc
                )
            except (NoConvergence, ValueError):
                h *= 0.5
                continue
            dist = np.linalg.norm(
                np.concatenate([u_new / sc[0], [w_new / sc[1]]]) - y_sc
            )
            if dist > 10 * h:
                h *= 0.5
                continue
            stepped = True
            break
        if not stepped:
            # contact-state kinks can lock the arc corrector; cross the corner
            # with a short fixed-frequency step in the current sweep direction
            direction = np.sign(t[-1]) or 1.0
            dw = 0.01 * sc[1]
            while dw >= 1e-8 * sc[1]:
                try:
                    u_new, w_new, sig = sys_.newton(np.array(y[:-1]),
                                                    y[-1] + direction * dw)
                except (NoConvergence, ValueError):
                    dw *= 0.5
                    continue
                secant = np.concatenate(
                    [(u_new - y[:-1]) / sc[0], [(w_new - y[-1]) / sc[1]]]
                )
                norm = np.linalg.norm(secant)
                if norm > 0:
                    t = secant / norm
                stepped = True
                h = max(h, settings.step_initial / 8.0)
                break
            if not stepped:
                raise NoConvergence(
                    f"frequency sweep stalled at omega = {y[-1]:.6g}"
                )
        y = np.concatenate([u_new, [w_new]])
        t_prev = t
        record(sig, w_new)
        h = min(h * 1.4, settings.step_max)
        if w_new >= omega_hi and (len(rows) < 2 or rows[-1][0] >= rows[-2][0]):
            break

    m = len(rows)
    return ResponseCurve(
        param_name="omega",
        params=np.array([r[0] for r in rows]),
        q_j=np.array([r[1] for r in rows], dtype=complex),
        q_lin=np.zeros((m, 0), dtype=complex),
        amplitude=np.array([r[2] for r in rows]),
        probe_dof=probe_dof,
        mode_index=-1,
        meta={"kind": "hbm"},
    )


# ---------------------------------------------------------------------------
# time integration


@dataclass(frozen=True)
class TimeIntegrationSettings:
    """Fixed-step 4th-order integration controls.

    ``steps_per_period`` must resolve the fastest retained dynamics (at least
    50 steps per shortest relevant period).
    """

    steps_per_period: int = 512
    n_periods: int = 200
    store_every: int = 1
    transient_fraction: float = 0.5
    steady_window_periods: int = 10
    steady_rel_tol: float = 1e-3
    divergence_factor: float = 1e9

    def __post_init__(self):
        if self.steps_per_period < 50:
            raise ValueError("need at least 50 steps per period")
        if self.store_every < 1 or self.steps_per_period % self.store_every:
            raise ValueError("store_every must divide steps_per_period")
        if not 0.0 <= self.transient_fraction < 1.0:
            raise ValueError("transient fraction must lie in [0, 1)")


@dataclass
class Trajectory:
    t: np.ndarray
    u: np.ndarray
    v: np.ndarray
    period: float
    steps_per_period: int
    meta: dict = field(default_factory=dict)

    def probe(self, dof):
        return self.u[:, dof]

    def export_csv(self, path, dofs=None):
        dofs = list(range(self.u.shape[1])) if dofs is None else list(dofs)
        cols = ["t"] + [f"u_d{d}" for d in dofs] + [f"v_d{d}" for d in dofs]
        lines = ["# nlmodes-trajectory v1", ",".join(cols)]
        for i in range(self.t.size):
            vals = [self.t[i]] + [self.u[i, d] for d in dofs] + [self.v[i, d] for d in dofs]
            lines.append(",".join(repr(float(v)) for v in vals))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")


_EL_CUBIC, _EL_UNILATERAL, _EL_JENKINS = 0, 1, 2


def _element_tables(model):
    """Flat per-element arrays for the compiled kernel (single-DOF laws only)."""
    codes, dofs, p1, p2 = [], [], [], []
    for el in model.elements:
        if isinstance(el, CubicSpring):
            codes.append(_EL_CUBIC)
            p1.append(el.coefficient)
            p2.append(0.0)
        elif isinstance(el, UnilateralSpring):
            codes.append(_EL_UNILATERAL)
            p1.append(el.stiffness)
            p2.append(el.preload)
        elif isinstance(el, ElasticCoulomb):
            codes.append(_EL_JENKINS)
            p1.append(el.tangent_stiffness)
            p2.append(el.limit_force)
        else:
            return None
        dofs.append(el.dofs[0])
    return (np.array(codes, dtype=np.int64), np.array(dofs, dtype=np.int64),
            np.array(p1), np.array(p2))


if _HAVE_NUMBA:

    @numba.njit(cache=True)
    def _residual_forces_nb(u, codes, dofs, p1, p2, el_x, el_f, g):
        g[:] = 0.0
        for e in range(codes.size):
            x = u[dofs[e]]
            if codes[e] == 0:
                g[dofs[e]] += p1[e] * x * x * x
            elif codes[e] == 1:
                gap = x + p2[e]
                if gap <= 0.0:
                    g[dofs[e]] += -p1[e] * gap
            else:
                trial = el_f[e] + p1[e] * (x - el_x[e])
                if trial > p2[e]:
                    trial = p2[e]
                elif trial < -p2[e]:
                    trial = -p2[e]
                g[dofs[e]] += trial - p1[e] * x

    @numba.njit(cache=True)
    def _rk4_kernel(u, v, Minv, K, C, f_re, f_im, omega_f, forced, dt, n_steps,
                    store_every, codes, dofs, p1, p2, el_x, el_f, u_out, v_out,
                    limit):
        n = u.size
        g = np.zeros(n)
        ext = np.zeros(n)
        u_out[0] = u
        v_out[0] = v
        for i in range(1, n_steps + 1):
            t = (i - 1) * dt
            # stage 1
            if forced:
                c = np.cos(omega_f * t)
                s = np.sin(omega_f * t)
                for d in range(n):
                    ext[d] = f_re[d] * c - f_im[d] * s
            _residual_forces_nb(u, codes, dofs, p1, p2, el_x, el_f, g)
            a1 = Minv @ (ext - C @ v - K @ u - g)
            k1u = v
            # stage 2
            u2 = u + 0.5 * dt * k1u
            v2 = v + 0.5 * dt * a1
            if forced:
                c = np.cos(omega_f * (t + 0.5 * dt))
                s = np.sin(omega_f * (t + 0.5 * dt))
                for d in range(n):
                    ext[d] = f_re[d] * c - f_im[d] * s
            _residual_forces_nb(u2, codes, dofs, p1, p2, el_x, el_f, g)
            a2 = Minv @ (ext - C @ v2 - K @ u2 - g)
            # stage 3
            u3 = u + 0.5 * dt * v2
            v3 = v + 0.5 * dt * a2
            _residual_forces_nb(u3, codes, dofs, p1, p2, el_x, el_f, g)
            a3 = Minv @ (ext - C @ v3 - K @ u3 - g)
            # stage 4
            u4 = u + dt * v3
            v4 = v + dt * a3
            if forced:
                c = np.cos(omega_f * (t + dt))
                s = np.sin(omega_f * (t + dt))
                for d in range(n):
                    ext[d] = f_re[d] * c - f_im[d] * s
            _residual_forces_nb(u4, codes, dofs, p1, p2, el_x, el_f, g)
            a4 = Minv @ (ext - C @ v4 - K @ u4 - g)

            unew = u + dt / 6.0 * (k1u + 2.0 * v2 + 2.0 * v3 + v4)
            vnew = v + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            u = unew
            v = vnew
            # commit hysteretic states at the accepted step
            for e in range(codes.size):
                if codes[e] == 2:
                    x = u[dofs[e]]
                    trial = el_f[e] + p1[e] * (x - el_x[e])
                    if trial > p2[e]:
                        trial = p2[e]
                    elif trial < -p2[e]:
                        trial = -p2[e]
                    el_f[e] = trial
                    el_x[e] = x
            if i % store_every == 0:
                u_out[i // store_every] = u
                v_out[i // store_every] = v
            norm = 0.0
            for d in range(n):
                norm += abs(u[d]) + abs(v[d])
            if norm > limit:
                return i
        return 0


def _integrate_python(model, u, v, C, dt, n_steps, store_every, f1, omega_f,
                      limit, u_out, v_out):
    K = model.K
    Minv = scipy.linalg.inv(model.M)
    states = model.initial_states(u)
    forced = f1 is not None

    def ext(t):
        if not forced:
            return 0.0
        return (f1 * np.exp(1j * omega_f * t)).real

    def accel(t, uu, vv, states):
        g = model.residual_forces(uu, states)
        return Minv @ (ext(t) - C @ vv - K @ uu - g)

    u_out[0], v_out[0] = u, v
    t = 0.0
    for i in range(1, n_steps + 1):
        a1 = accel(t, u, v, states)
        u2, v2 = u + 0.5 * dt * v, v + 0.5 * dt * a1
        a2 = accel(t + 0.5 * dt, u2, v2, states)
        u3, v3 = u + 0.5 * dt * v2, v + 0.5 * dt * a2
        a3 = accel(t + 0.5 * dt, u3, v3, states)
        u4, v4 = u + dt * v3, v + dt * a3
        a4 = accel(t + dt, u4, v4, states)
        u = u + dt / 6.0 * (v + 2 * v2 + 2 * v3 + v4)
        v = v + dt / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
        states = model.advance_states(u, states)
        t += dt
        if i % store_every == 0:
            u_out[i // store_every], v_out[i // store_every] = u, v
        if np.sum(np.abs(u)) + np.sum(np.abs(v)) > limit:
            return i
    return 0


def integrate(model, settings, x0=None, v0=None, period=None, forcing=None,
              damping=None):
    """Fixed-step RK4 of the second-order system with stateful contact laws.

    ``forcing`` is ``(f1, Omega)`` for a harmonic drive ``Re(f1 e^(i Omega t))``
    or ``None`` for autonomous runs (then ``period`` sets the step size).
    Hysteretic element states are frozen within each step (trial forces from
    the last committed state) and committed at the step end; that keeps the
    stages consistent for a rate-independent law.

    The step must resolve the stiffest system mode (explicit scheme); use
    :func:`stable_steps_per_period` to size ``steps_per_period``.  Raises
    :class:`IntegrationDiverged` when the state norm overflows, which signals
    unbounded growth for self-excited runs below the damping boundary.
    """
    n = model.n_dof
    u = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    v = np.zeros(n) if v0 is None else np.array(v0, dtype=float)
    if forcing is not None:
        f1 = np.asarray(forcing[0], dtype=complex)
        omega_f = float(forcing[1])
        period = 2.0 * np.pi / omega_f
    else:
        f1, omega_f = None, 0.0
        if period is None:
            raise ValueError("autonomous runs need an explicit period for the step size")

    C = model.C.copy()
    if damping is not None:
        cv = resolve_damping(damping, model).viscous_matrix(model)
        if cv is None:
            raise ValueError("time integration supports viscous damping models only")
        C = C + cv

    dt = period / settings.steps_per_period
    n_steps = settings.steps_per_period * settings.n_periods
    every = settings.store_every
    n_stored = n_steps // every
    u_out = np.empty((n_stored + 1, n))
    v_out = np.empty((n_stored + 1, n))
    ref_norm = max(np.sum(np.abs(u)) + np.sum(np.abs(v)), 1.0)
    limit = settings.divergence_factor * ref_norm

    tables = _element_tables(model) if _HAVE_NUMBA else None
    if tables is not None:
        codes, dofs, p1, p2 = tables
        el_x = np.array([u[d] for d in dofs]) if dofs.size else np.zeros(0)
        fc = np.where(codes == _EL_JENKINS, p2, np.inf) if dofs.size else np.zeros(0)
        el_f = np.clip(p1 * el_x, -fc, fc) if dofs.size else np.zeros(0)
        stopped = _rk4_kernel(
            u.copy(), v.copy(), scipy.linalg.inv(model.M), model.K, C,
            f1.real if f1 is not None else np.zeros(n),
            f1.imag if f1 is not None else np.zeros(n),
            omega_f, f1 is not None, dt, n_steps, every,
            codes, dofs, p1, p2, el_x, el_f, u_out, v_out, limit,
        )
    else:
        stopped = _integrate_python(model, u, v, C, dt, n_steps, every, f1,
                                    omega_f, limit, u_out, v_out)

    spp_stored = settings.steps_per_period // every
    t_out = (dt * every) * np.arange(n_stored + 1)
    if stopped:
        last = stopped // every
        traj = Trajectory(t_out[: last + 1], u_out[: last + 1],
                          v_out[: last + 1], period, spp_stored)
        raise IntegrationDiverged(
            f"state norm overflow at t = {dt * stopped:.4g} (unbounded growth)",
            traj,
        )
    return Trajectory(t_out, u_out, v_out, period, spp_stored,
                      meta={"forcing": forcing is not None})


def stable_steps_per_period(model, period, safety=3.0):
    """Steps per period needed for a stable explicit step on the stiffest mode."""
    w_max = model.linear_modes.omegas[-1]
    return int(np.ceil(safety * w_max * period / 2.8))


def steady_state_amplitude(traj, dof, windows=10, rel_tol=1e-3):
    """Amplitude once consecutive trailing periods agree within ``rel_tol``.

    Compares the peak of the zero-mean response over the last ``windows``
    whole periods; raises :class:`NotSteady` when they still drift.
    """
    spp = traj.steps_per_period
    need = windows * spp
    if traj.t.size <= need:
        raise ValueError("trajectory shorter than the requested steady window")
    x = traj.probe(dof)[-need:]
    amps = np.empty(windows)
    for w in range(windows):
        seg = x[w * spp: (w + 1) * spp]
        amps[w] = np.max(np.abs(seg - np.mean(seg)))
    mean = np.mean(amps)
    if mean == 0.0:
        return 0.0
    if (np.max(amps) - np.min(amps)) / mean > rel_tol:
        raise NotSteady(
            f"amplitude drift {np.ptp(amps) / mean:.2e} over the last {windows} periods"
        )
    return float(mean)


def oscillation_frequency(traj, dof, discard_fraction=0.5):
    """Mean angular frequency from upward zero crossings of the trailing response."""
    i0 = int(traj.t.size * discard_fraction)
    x = traj.probe(dof)[i0:]
    t = traj.t[i0:]
    x = x - np.mean(x)
    idx = np.flatnonzero((x[:-1] < 0.0) & (x[1:] >= 0.0))
    if idx.size < 3:
        raise ValueError("too few zero crossings for a frequency estimate")
    crossings = t[idx] - x[idx] * (t[idx + 1] - t[idx]) / (x[idx + 1] - x[idx])
    periods = np.diff(crossings)
    return float(2.0 * np.pi / np.mean(periods))


def modal_initial_conditions(point):
    """Displacement/velocity at t = 0 of a converged modal point's motion."""
    U = point.signal.U
    n = np.arange(U.shape[0])
    u0 = np.real(np.sum(U, axis=0))
    v0 = np.real(np.sum(1j * n[:, None] * point.omega0 * U, axis=0))
    return u0, v0
