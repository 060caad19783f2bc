"""Mechanical system definitions: structural matrices plus local nonlinear elements.

Bookkeeping convention used throughout the package: the assembled stiffness
matrix of a :class:`SecondOrderModel` contains the linearization of every
attached element about the static equilibrium ``u = 0`` (contact closed,
friction slider stuck).  Elements therefore expose *residual* force laws that
vanish identically in the linear regime, next to the raw physical laws used
for hysteresis diagnostics.
"""

from dataclasses import dataclass, replace
from functools import cached_property
import json

import numpy as np
import scipy.linalg


class ModelError(ValueError):
    """Invalid model definition (geometry, matrices or element data)."""


# Sentinel DOF index meaning "let the builder place the element".
ATTACH_AUTO = -1


def _check_positive(name, value):
    if not np.isfinite(value) or value <= 0.0:
        raise ModelError(f"{name} must be strictly positive, got {value!r}")


@dataclass(frozen=True)
class CubicSpring:
    """Grounded cubic spring, force ``coefficient * x**3``."""

    dof: int
    coefficient: float

    def __post_init__(self):
        _check_positive("coefficient", self.coefficient)

    @property
    def dofs(self):
        return (self.dof,)

    def linear_stiffness(self, n_dof):
        return np.zeros((n_dof, n_dof))

    def raw_force_period(self, x, state=None):
        return self.coefficient * x**3, state

    def residual_force_period(self, x):
        g = self.coefficient * x**3
        return g, ("diag", 3.0 * self.coefficient * x**2)

    def initial_state(self, x0):
        return None

    def residual_force_frozen(self, x, state):
        return self.coefficient * x**3

    def advance_state(self, x, state):
        return None


@dataclass(frozen=True)
class UnilateralSpring:
    """Preloaded one-sided spring: raw force ``stiffness * (x + preload)_+``.

    The equilibrium is compressed by ``preload``, so the closed-contact
    stiffness is absorbed into the model matrix and the residual force is
    nonzero only during lift-off.
    """

    dof: int
    stiffness: float
    preload: float

    def __post_init__(self):
        _check_positive("stiffness", self.stiffness)
        _check_positive("preload", self.preload)

    @property
    def dofs(self):
        return (self.dof,)

    def linear_stiffness(self, n_dof):
        K = np.zeros((n_dof, n_dof))
        K[self.dof, self.dof] = self.stiffness
        return K

    def raw_force_period(self, x, state=None):
        return self.stiffness * np.maximum(x + self.preload, 0.0), state

    def residual_force_period(self, x):
        open_gap = (x + self.preload) <= 0.0
        g = np.where(open_gap, -self.stiffness * (x + self.preload), 0.0)
        d = np.where(open_gap, -self.stiffness, 0.0)
        return g, ("diag", d)

    def initial_state(self, x0):
        return None

    def residual_force_frozen(self, x, state):
        if x + self.preload <= 0.0:
            return -self.stiffness * (x + self.preload)
        return 0.0

    def advance_state(self, x, state):
        return None


@dataclass(frozen=True)
class ElasticCoulomb:
    """Elastic dry-friction element: spring in series with a slipping slider.

    ``tangent_stiffness`` is the stick stiffness, ``limit_force`` the slider
    saturation level.  The stick stiffness is absorbed into the model matrix;
    the residual force is zero while fully stuck.
    """

    dof: int
    tangent_stiffness: float
    limit_force: float
    cycle_tol: float = 1e-10
    max_cycles: int = 10

    def __post_init__(self):
        _check_positive("tangent_stiffness", self.tangent_stiffness)
        if not np.isfinite(self.limit_force) or self.limit_force < 0.0:
            raise ModelError(f"limit_force must be >= 0, got {self.limit_force!r}")

    @property
    def dofs(self):
        return (self.dof,)

    def linear_stiffness(self, n_dof):
        K = np.zeros((n_dof, n_dof))
        K[self.dof, self.dof] = self.tangent_stiffness
        return K

    def _converged_loop(self, x, g_prev, w_seed, with_jacobian):
        """March the stick/slip recursion over full periods until the loop repeats.

        Works on the residual force ``g = f - k_t x`` directly: ``g`` is
        constant while sticking (no roundoff accumulation, fully stuck motion
        gives exactly zero) and takes the closed saturation form while
        slipping.
        """
        kt, fc = self.tangent_stiffness, self.limit_force
        n_t = x.size
        g = np.empty(n_t)
        W = np.zeros((n_t, n_t)) if with_jacobian else None
        w_prev = w_seed
        scale = max(fc, kt * np.max(np.abs(x)), 1.0e-300)
        converged = False
        for cycle in range(self.max_cycles):
            g_last_cycle = g.copy() if cycle else None
            for k in range(n_t):
                trial = g_prev + kt * x[k]
                if trial > fc:
                    g[k] = fc - kt * x[k]
                    if with_jacobian:
                        W[k] = 0.0
                        W[k, k] = -kt
                elif trial < -fc:
                    g[k] = -fc - kt * x[k]
                    if with_jacobian:
                        W[k] = 0.0
                        W[k, k] = -kt
                else:
                    g[k] = g_prev
                    if with_jacobian:
                        W[k] = w_prev
                if with_jacobian:
                    w_prev = W[k]
                g_prev = g[k]
            if cycle >= 1 and np.max(np.abs(g - g_last_cycle)) <= self.cycle_tol * scale:
                converged = True
                break
        if not converged:
            raise ModelError(
                "friction loop did not reach a periodic state within "
                f"{self.max_cycles} cycles"
            )
        return g, W, g_prev

    def _elastic_seed(self, x_last):
        kt, fc = self.tangent_stiffness, self.limit_force
        f0 = np.clip(kt * x_last, -fc, fc)
        return float(f0 - kt * x_last)

    def raw_force_period(self, x, state=None):
        x = np.asarray(x, dtype=float)
        kt = self.tangent_stiffness
        if state is not None:
            g_seed = float(state) - kt * x[-1]
        else:
            g_seed = self._elastic_seed(x[-1])
        g, _, g_end = self._converged_loop(x, g_seed, None, False)
        return g + kt * x, float(g_end + kt * x[-1])

    def residual_force_period(self, x):
        x = np.asarray(x, dtype=float)
        kt, fc = self.tangent_stiffness, self.limit_force
        g_seed = self._elastic_seed(x[-1])
        w_seed = np.zeros(x.size)
        if abs(kt * x[-1]) > fc:
            # slipped elastic seed keeps its sample sensitivity
            w_seed[-1] = -kt
        g, W, _ = self._converged_loop(x, g_seed, w_seed, True)
        return g, ("dense", W)

    def initial_state(self, x0):
        f0 = np.clip(self.tangent_stiffness * x0, -self.limit_force, self.limit_force)
        return (float(x0), float(f0))

    def residual_force_frozen(self, x, state):
        x_ref, f_ref = state
        trial = f_ref + self.tangent_stiffness * (x - x_ref)
        f = np.clip(trial, -self.limit_force, self.limit_force)
        return f - self.tangent_stiffness * x

    def advance_state(self, x, state):
        x_ref, f_ref = state
        trial = f_ref + self.tangent_stiffness * (x - x_ref)
        return (float(x), float(np.clip(trial, -self.limit_force, self.limit_force)))


@dataclass(frozen=True)
class CouplingCubicSpring:
    """Cubic spring in the relative displacement of two DOFs."""

    dof_a: int
    dof_b: int
    coefficient: float

    def __post_init__(self):
        _check_positive("coefficient", self.coefficient)
        if self.dof_a == self.dof_b:
            raise ModelError("coupling element needs two distinct DOFs")

    @property
    def dofs(self):
        return (self.dof_a, self.dof_b)

    def linear_stiffness(self, n_dof):
        return np.zeros((n_dof, n_dof))

    def raw_force_period(self, x, state=None):
        s = x[:, 0] - x[:, 1]
        g = self.coefficient * s**3
        return np.column_stack([g, -g]), state

    def residual_force_period(self, x):
        s = x[:, 0] - x[:, 1]
        g = self.coefficient * s**3
        d = 3.0 * self.coefficient * s**2
        grad = np.empty((x.shape[0], 2, 2))
        grad[:, 0, 0] = d
        grad[:, 0, 1] = -d
        grad[:, 1, 0] = -d
        grad[:, 1, 1] = d
        return np.column_stack([g, -g]), ("diag", grad)

    def initial_state(self, x0):
        return None

    def residual_force_frozen(self, x, state):
        s = x[0] - x[1]
        g = self.coefficient * s**3
        return np.array([g, -g])

    def advance_state(self, x, state):
        return None


NONLINEAR_ELEMENT_TYPES = (CubicSpring, UnilateralSpring, ElasticCoulomb, CouplingCubicSpring)


def nl_force_time(element, x_samples, state=None, t=None):
    """Steady periodic raw force of one element over one sampled period.

    Parameters
    ----------
    element : nonlinear element instance
    x_samples : ndarray
        Local displacement samples over one period, shape ``(n_t,)`` for
        single-DOF elements or ``(n_t, n_local)`` for coupling elements.
    state : optional
        Internal element state to seed from (hysteretic elements only).
    t : ndarray, optional
        Sample times; when given they must be uniformly spaced.

    Returns
    -------
    (force_samples, updated_state)
    """
    x = np.asarray(x_samples, dtype=float)
    if x.size == 0:
        raise ModelError("empty sampling")
    if t is not None:
        t = np.asarray(t, dtype=float)
        if t.shape[0] != x.shape[0]:
            raise ModelError("time vector length does not match samples")
        dt = np.diff(t)
        if dt.size and not np.allclose(dt, dt[0], rtol=1e-9, atol=0.0):
            raise ModelError("non-uniform sampling")
    n_local = len(element.dofs)
    if n_local == 1:
        if x.ndim != 1:
            x = x.reshape(-1)
    elif x.ndim != 2 or x.shape[1] != n_local:
        raise ModelError(f"expected samples with {n_local} columns")
    return element.raw_force_period(x, state)


def dissipated_energy_per_cycle(element, x_samples):
    """Loop integral of the raw element force over one period (trapezoid on the cycle)."""
    f, _ = nl_force_time(element, x_samples)
    x = np.asarray(x_samples, dtype=float)
    dx = np.roll(x, -1, axis=0) - x
    f_mid = 0.5 * (f + np.roll(f, -1, axis=0))
    return float(np.sum(f_mid * dx))


class SecondOrderModel:
    """Assembled second-order mechanical system with attached nonlinear elements.

    Parameters
    ----------
    M, K : ndarray
        Structural mass and stiffness matrices.  The constructor adds every
        element's linearization about the equilibrium to ``K``; the matrix
        passed in must not already contain those contributions.
    C : ndarray, optional
        Viscous damping matrix, zero when omitted.
    elements : sequence of nonlinear elements
    """

    def __init__(self, M, K, C=None, elements=(), spec=None):
        M = np.asarray(M, dtype=float)
        K_structural = np.asarray(K, dtype=float)
        n = M.shape[0]
        if M.shape != (n, n) or K_structural.shape != (n, n):
            raise ModelError("M and K must be square matrices of equal size")
        if not np.allclose(M, M.T, rtol=1e-8, atol=0.0):
            raise ModelError("mass matrix must be symmetric")
        if not np.allclose(K_structural, K_structural.T, rtol=1e-8,
                           atol=1e-12 * np.max(np.abs(K_structural))):
            raise ModelError("stiffness matrix must be symmetric")
        try:
            scipy.linalg.cholesky(M)
        except scipy.linalg.LinAlgError as exc:
            raise ModelError("mass matrix must be positive definite") from exc
        if C is None:
            C = np.zeros((n, n))
        else:
            C = np.asarray(C, dtype=float)
            if C.shape != (n, n):
                raise ModelError("damping matrix size mismatch")
            if not np.allclose(C, C.T, rtol=1e-8, atol=1e-12 * max(np.max(np.abs(C)), 1.0)):
                raise ModelError("damping matrix must be symmetric")
        elements = tuple(elements)
        K_total = K_structural.copy()
        for el in elements:
            for d in el.dofs:
                if not 0 <= d < n:
                    raise ModelError(f"element DOF {d} outside model of size {n}")
            K_total = K_total + el.linear_stiffness(n)

        self.M = M
        self.K = K_total
        self.K_structural = K_structural
        self.C = C
        self.elements = elements
        self.spec = spec
        self.nonlinear_dof_index = tuple(sorted({d for el in elements for d in el.dofs}))

    @property
    def n_dof(self):
        return self.M.shape[0]

    @property
    def n_nonlinear(self):
        return len(self.nonlinear_dof_index)

    @cached_property
    def linear_modes(self):
        from .linmodal import real_modes

        return real_modes(self.M, self.K)

    def residual_forces(self, u, states):
        """Residual nonlinear forces at one displacement vector, frozen element states."""
        g = np.zeros(self.n_dof)
        for el, st in zip(self.elements, states):
            dofs = list(el.dofs)
            val = el.residual_force_frozen(u[dofs] if len(dofs) > 1 else u[dofs[0]], st)
            g[dofs] += np.atleast_1d(val)
        return g

    def initial_states(self, u0):
        return [
            el.initial_state(u0[list(el.dofs)] if len(el.dofs) > 1 else u0[el.dofs[0]])
            for el in self.elements
        ]

    def advance_states(self, u, states):
        return [
            el.advance_state(u[list(el.dofs)] if len(el.dofs) > 1 else u[el.dofs[0]], st)
            for el, st in zip(self.elements, states)
        ]


def build_2dof_cubic():
    """Two-mass chain with a grounded cubic spring on the first mass."""
    M = np.eye(2)
    K = np.array([[2.0, -1.0], [-1.0, 2.0]])
    spec = {"builder": "2dof_cubic", "params": {}}
    return SecondOrderModel(M, K, elements=(CubicSpring(dof=0, coefficient=0.5),), spec=spec)


@dataclass(frozen=True)
class BeamParams:
    """Cantilever geometry and material data (SI units)."""

    length: float = 0.2
    width: float = 0.04
    thickness: float = 0.003
    young_modulus: float = 2.1e11
    density: float = 7800.0
    n_elements: int = 10

    def __post_init__(self):
        for name in ("length", "width", "thickness", "young_modulus", "density"):
            _check_positive(name, getattr(self, name))
        if self.n_elements < 1:
            raise ModelError("n_elements must be >= 1")

    @property
    def area(self):
        return self.width * self.thickness

    @property
    def second_moment(self):
        return self.width * self.thickness**3 / 12.0


def tip_transverse_dof(params=None):
    """Index of the free-end deflection DOF after the clamped node is removed."""
    params = params or BeamParams()
    return 2 * (params.n_elements - 1)


def beam_matrices(params):
    """Assemble cantilever mass/stiffness with 2 DOFs (deflection, rotation) per free node.

    Consistent mass matrix, no rotary-inertia correction.  The clamped node is
    eliminated, leaving ``2 * n_elements`` DOFs ordered node by node.
    """
    le = params.length / params.n_elements
    EI = params.young_modulus * params.second_moment
    rhoA = params.density * params.area

    k_e = (EI / le**3) * np.array(
        [
            [12.0, 6.0 * le, -12.0, 6.0 * le],
            [6.0 * le, 4.0 * le**2, -6.0 * le, 2.0 * le**2],
            [-12.0, -6.0 * le, 12.0, -6.0 * le],
            [6.0 * le, 2.0 * le**2, -6.0 * le, 4.0 * le**2],
        ]
    )
    m_e = (rhoA * le / 420.0) * np.array(
        [
            [156.0, 22.0 * le, 54.0, -13.0 * le],
            [22.0 * le, 4.0 * le**2, 13.0 * le, -3.0 * le**2],
            [54.0, 13.0 * le, 156.0, -22.0 * le],
            [-13.0 * le, -3.0 * le**2, -22.0 * le, 4.0 * le**2],
        ]
    )

    n_nodes = params.n_elements + 1
    n_full = 2 * n_nodes
    K = np.zeros((n_full, n_full))
    M = np.zeros((n_full, n_full))
    for e in range(params.n_elements):
        sl = slice(2 * e, 2 * e + 4)
        K[sl, sl] += k_e
        M[sl, sl] += m_e
    # clamp node 0: drop its deflection and rotation
    keep = np.arange(2, n_full)
    return M[np.ix_(keep, keep)], K[np.ix_(keep, keep)]


def build_clamped_beam(params=None, element=None):
    """Cantilever beam model, optionally with one nonlinear element at the free end.

    The element's ``dof`` field is ignored and replaced by the tip deflection
    DOF; pass ``dof=ATTACH_AUTO`` to make that explicit.
    """
    params = params or BeamParams()
    M, K = beam_matrices(params)
    elements = ()
    if element is not None:
        if len(element.dofs) != 1:
            raise ModelError("beam builder attaches single-DOF elements only")
        elements = (replace(element, dof=tip_transverse_dof(params)),)
    spec = {
        "builder": "clamped_beam",
        "params": {
            "length": params.length,
            "width": params.width,
            "thickness": params.thickness,
            "young_modulus": params.young_modulus,
            "density": params.density,
            "n_elements": params.n_elements,
        },
    }
    if elements:
        spec["element"] = element_to_dict(elements[0])
    return SecondOrderModel(M, K, elements=elements, spec=spec)


_ELEMENT_TAGS = {
    "cubic_spring": CubicSpring,
    "unilateral_spring": UnilateralSpring,
    "elastic_coulomb": ElasticCoulomb,
    "coupling_cubic_spring": CouplingCubicSpring,
}


def element_to_dict(element):
    for tag, cls in _ELEMENT_TAGS.items():
        if isinstance(element, cls):
            d = {"type": tag}
            for field in cls.__dataclass_fields__:
                d[field] = getattr(element, field)
            return d
    raise ModelError(f"unknown element type {type(element).__name__}")


def element_from_dict(d):
    d = dict(d)
    tag = d.pop("type", None)
    cls = _ELEMENT_TAGS.get(tag)
    if cls is None:
        raise ModelError(f"unknown element type tag {tag!r}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ModelError(f"bad parameters for element {tag!r}: {exc}") from exc


def model_from_dict(spec):
    """Build a model from its JSON-compatible description.

    Two forms are accepted::

        {"builder": "2dof_cubic"}
        {"builder": "clamped_beam", "params": {...}, "element": {...}}
        {"matrices": {"M": [[...]], "K": [[...]], "C": [[...]]},
         "elements": [{...}, ...]}

    Matrices given inline must exclude element linearizations; they are
    absorbed on construction.
    """
    if not isinstance(spec, dict):
        raise ModelError("model spec must be a mapping")
    if "builder" in spec:
        name = spec["builder"]
        if name == "2dof_cubic":
            if spec.get("element") or spec.get("elements"):
                raise ModelError("2dof_cubic builder defines its own element")
            return build_2dof_cubic()
        if name == "clamped_beam":
            try:
                params = BeamParams(**spec.get("params", {}))
            except TypeError as exc:
                raise ModelError(f"bad beam parameters: {exc}") from exc
            element = None
            if spec.get("element") is not None:
                element = element_from_dict(spec["element"])
            return build_clamped_beam(params, element)
        raise ModelError(f"unknown builder {name!r}")
    if "matrices" in spec:
        mats = spec["matrices"]
        if "M" not in mats or "K" not in mats:
            raise ModelError("inline matrices need at least M and K")
        elements = tuple(element_from_dict(e) for e in spec.get("elements", ()))
        return SecondOrderModel(
            np.array(mats["M"], dtype=float),
            np.array(mats["K"], dtype=float),
            C=np.array(mats["C"], dtype=float) if "C" in mats else None,
            elements=elements,
            spec=spec,
        )
    raise ModelError("model spec needs either 'builder' or 'matrices'")


def load_model(path):
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
