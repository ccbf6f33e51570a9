"""Minimum restraint functions for exit-time optimal control with unbounded controls."""

from .expr import EvaluationError, ExprSyntaxError, parse_expr, to_text, evaluate
from .model import (ControlProblem, ControlSet, MrfCandidate, StateSpace, Target,
                    limiting_gradient_fd, point_target)
from .polynomial import MultiIndex, PolyDynamics, eval_poly
from .hamiltonian import (MinimizeBudget, hamiltonian, sign_equivalence_check,
                          truncated_hamiltonian)
from .rescale import cost_invariance_check, rescale, time_maps
from .verifier import (LevelSampling, VerificationReport, check_positive_definite_proper,
                       check_remark_A_prime, verify_mrf)
from .feedback import (StepBudget, Trajectory, build_kl_envelope, check_gac_bound,
                       feedback_select, sample_hold_stage, synthesize)
from .polysys import (DiagonalSpec, HullWitness, NearAffineStructure, affine_field,
                      check_hyp_Adiag, check_hyp_Amax, classify_near_affine,
                      diagonal_subsystem, hull_witness, maximal_subsystem, sign_set,
                      transfer_check)
from .scenario import Scenario, load_builtin, load_scenario

__version__ = "0.1.0"
