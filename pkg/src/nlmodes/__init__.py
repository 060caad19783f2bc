"""Nonlinear vibration modes and single-resonant-mode response synthesis."""

__version__ = "0.1.0"

from .model import (
    ATTACH_AUTO,
    BeamParams,
    CouplingCubicSpring,
    CubicSpring,
    ElasticCoulomb,
    ModelError,
    SecondOrderModel,
    UnilateralSpring,
    build_2dof_cubic,
    build_clamped_beam,
    load_model,
    model_from_dict,
    nl_force_time,
)
from .aft import HarmonicSignal, fourier_coeffs, nl_harmonics, synthesize
from .linmodal import (
    DegenerateSpectrum,
    LinearModalBasis,
    NearResonantDenominator,
    StateSpaceModalBasis,
    compliance_general,
    compliance_spectral,
    dyn_stiffness,
    real_modes,
    state_modes,
)
from .modes import (
    ContinuationSettings,
    ModalPoint,
    ModeBranch,
    NoConvergence,
    StallError,
    continue_branch,
    load_branch,
    mode_at_tongue_check,
    solve_point,
)

__all__ = [name for name in dir() if not name.startswith("_")]
