"""Grasp-quality oracle, two-stage baseline, benchmark harness and backbone ablation.

Only the oracle is imported eagerly; the harness modules pull in the sampler and
are imported from their submodules directly.
"""

from .quality import CLEARANCE_M, ClosureResult, constraint_satisfied, force_closure

__all__ = ["CLEARANCE_M", "ClosureResult", "constraint_satisfied", "force_closure"]
