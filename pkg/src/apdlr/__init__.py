"""Asymptotic-preserving dynamical low-rank solver for multi-scale linear transport."""
from .diagnostics import RunRecord, convergence_slope, effective_rank, l2_error_centers
from .integrator import SchemeConfig, run, select_dt, step
from .lowrank import (CoefficientFields, LowRankFactors, NumericalFailure, init_factors,
                      k_step, l_step, reconstruct, s_step, weighted_qr)
from .mesh import StaggeredGrid
from .problems import CATALOG, discretize, get_problem
from .reference import diffusion_step, full_tensor_step
from .velocity import VelocitySet, load_velocity_set

__version__ = "0.1.0"
