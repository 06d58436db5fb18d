from .cutting_plane import (
    CuttingPlaneConfig,
    MasterError,
    MasterInfeasibleError,
    SolveDiagnostics,
    separation_round,
    solve_cutting_plane,
    solve_socp_direct,
)
from .master import BACKENDS, ClarabelMaster, LinprogMaster, MasterSolver, QPData, make_master

__all__ = [
    "BACKENDS",
    "ClarabelMaster",
    "CuttingPlaneConfig",
    "LinprogMaster",
    "MasterError",
    "MasterInfeasibleError",
    "MasterSolver",
    "QPData",
    "SolveDiagnostics",
    "make_master",
    "separation_round",
    "solve_cutting_plane",
    "solve_socp_direct",
]
