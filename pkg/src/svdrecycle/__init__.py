"""GMRES with SVD-based Krylov subspace recycling for sequences of systems."""
from .convdiff import (ProblemParams, SequenceConfig, SequenceResult, assemble_step,
                       iteration_stats, run_sequence)
from .costmodel import CostParams, cost_baseline, cost_recycled, interval_map, min_interval
from .krylov import GmresConfig, LinearOperator, SolveReport, gmres_cycle, solve_restarted
from .precond import IdentityPrecond, SsorPrecond
from .recycle import (Composition, InitialGuess, RecycleMethod, RecyclingSpace,
                      SingularRestrictionError, build_space, recycled_solve)
from .sparsela import CsrMatrix, thin_svd
from .svdwindow import SolutionWindow, SvdMode

__version__ = "0.1.0"
