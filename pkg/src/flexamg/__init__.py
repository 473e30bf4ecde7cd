"""Flexible algebraic multigrid cycles designed by grammar-guided genetic programming."""
from .cycle import (CoarseCorrection, FlexProgram, Relax, Restrict, StdVSolve, execute_cycle,
                    run_solver, standard_v_cycle, validate_program)
from .grammar import Grammar, genotype_to_program, random_derivation
from .hierarchy import Hierarchy, build_hierarchy
from .krylov import hybrid_solve, pcg, reference_solver_program
from .smoothers import SmootherSpec

__version__ = "0.1.0"

__all__ = [
    "CoarseCorrection", "FlexProgram", "Relax", "Restrict", "StdVSolve", "execute_cycle",
    "run_solver", "standard_v_cycle", "validate_program", "Grammar", "genotype_to_program",
    "random_derivation", "Hierarchy", "build_hierarchy", "hybrid_solve", "pcg",
    "reference_solver_program", "SmootherSpec",
]
