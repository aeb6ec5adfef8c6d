"""Coupled free-flow / porous-medium compressible flow on staggered grids.

A channel flow (compressible Navier-Stokes on a uniform staggered grid)
exchanges mass and momentum with an anisotropic porous block (Darcy flow,
multi-point or two-point flux approximation) across a sharp interface.
Both subdomains are assembled into one monolithic nonlinear system and
advanced with implicit Euler and a damped Newton method.
"""

from .config import ConfigError, ScenarioConfig, SolverConfig, load_scenario, load_scenario_file
from .coupling import (
    CoupledProblem,
    CouplingError,
    build_coupled_problem,
    pm_boundary_tagger,
)
from .darcy import (
    DarcyAssemblyError,
    SubfaceCondition,
    build_darcy_table,
    rotated_permeability,
)
from .fluid import ConstantFluid, FluidEvaluationError, IdealGas, make_fluid
from .freeflow import FreeFlowAssembly, FreeFlowError, InterfaceData, build_freeflow_assembly
from .mesh import (
    CartesianFFMesh,
    Mesh,
    MeshError,
    build_cartesian_mesh,
    build_ff_mesh,
    build_interaction_regions,
    build_interface_mapping,
    build_staggered_topology,
    crisscross_triangulation,
    diagonal_triangulation,
    import_triangle_mesh,
    write_triangle_mesh,
)
from .scenarios import (
    Scenario,
    ScenarioError,
    boundary_mass_flux,
    build_scenario,
    cut_line_mass_flux,
    interface_exchange,
    run_scenario,
    steady_state,
    weak_axis_permeability,
)
from .solver import (
    CoupledSystem,
    FreeFlowSystem,
    PorousSystem,
    SolverError,
    advance,
    newton_solve,
    steady_solve,
)

__version__ = "0.1.0"

__all__ = [
    "CartesianFFMesh",
    "ConfigError",
    "ConstantFluid",
    "CoupledProblem",
    "CoupledSystem",
    "CouplingError",
    "DarcyAssemblyError",
    "FluidEvaluationError",
    "FreeFlowAssembly",
    "FreeFlowError",
    "FreeFlowSystem",
    "IdealGas",
    "InterfaceData",
    "Mesh",
    "MeshError",
    "PorousSystem",
    "Scenario",
    "ScenarioConfig",
    "ScenarioError",
    "SolverConfig",
    "SolverError",
    "SubfaceCondition",
    "advance",
    "boundary_mass_flux",
    "build_coupled_problem",
    "build_freeflow_assembly",
    "build_scenario",
    "cut_line_mass_flux",
    "interface_exchange",
    "load_scenario",
    "load_scenario_file",
    "newton_solve",
    "pm_boundary_tagger",
    "run_scenario",
    "steady_solve",
    "steady_state",
    "build_cartesian_mesh",
    "build_darcy_table",
    "rotated_permeability",
    "build_ff_mesh",
    "build_interaction_regions",
    "build_interface_mapping",
    "build_staggered_topology",
    "crisscross_triangulation",
    "diagonal_triangulation",
    "import_triangle_mesh",
    "make_fluid",
    "weak_axis_permeability",
    "write_triangle_mesh",
    "__version__",
]
