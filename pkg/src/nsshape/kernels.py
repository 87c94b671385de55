"""Facade exporting the active kernel lane.

Import hot kernels from here; the lane is picked in ``_accel`` from the
NSSHAPE_KERNELS environment variable.
"""

from ._accel import ACTIVE_LANE, USE_NUMBA

if USE_NUMBA:
    from . import _kernels_nb as _lane
else:
    from . import _kernels_np as _lane

locate_many = _lane.locate_many
p2_eval_vec = _lane.p2_eval_vec
asm_stiffness = _lane.asm_stiffness
asm_mass = _lane.asm_mass
asm_divergence = _lane.asm_divergence
asm_convection = _lane.asm_convection
asm_linearized = _lane.asm_linearized
rhs_scatter_vec = _lane.rhs_scatter_vec
hausdorff_dir = _lane.hausdorff_dir

__all__ = [
    "ACTIVE_LANE",
    "USE_NUMBA",
    "locate_many",
    "p2_eval_vec",
    "asm_stiffness",
    "asm_mass",
    "asm_divergence",
    "asm_convection",
    "asm_linearized",
    "rhs_scatter_vec",
    "hausdorff_dir",
]
