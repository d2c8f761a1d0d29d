"""Containers shared by the estimators."""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class SolverError(RuntimeError):
    """Raised when an estimator cannot produce a valid iterate.

    The offending state is kept on the exception for inspection.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state if state is not None else {}


@dataclass
class SolverConfig:
    """Settings for the proximal gradient loops.

    Attributes
    ----------
    tol : float
        Stopping tolerance (duality gap for GOWL, coefficient step norm for
        the column regressions).
    t0 : float
        Initial step size.
    c : float
        Backtracking factor in (0, 1).
    max_iter : int
    max_backtracks : int
        Backtracks allowed per iteration before giving up.
    theta0 : ndarray, optional
        Initial precision matrix for GOWL; ``diag(S)^-1`` when omitted.
    step_rule : {"bb", "warm"}
        How each line search is seeded: the short Barzilai-Borwein step
        from the last two iterates, or the previous accepted step.
    """

    tol: float = 1e-5
    t0: float = 1.0
    c: float = 0.5
    max_iter: int = 500
    max_backtracks: int = 50
    theta0: Optional[np.ndarray] = None
    step_rule: str = "bb"

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if not self.t0 > 0:
            raise ValueError(f"t0 must be positive, got {self.t0}")
        if not 0 < self.c < 1:
            raise ValueError(f"c must lie in (0, 1), got {self.c}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.step_rule not in ("bb", "warm"):
            raise ValueError(f"step_rule must be 'bb' or 'warm', got {self.step_rule!r}")


@dataclass
class PrecisionEstimate:
    theta: np.ndarray
    iterations: int
    final_gap: float
    objective: float
    converged: bool = True
    method: str = ""
    info: dict = field(default_factory=dict)


@dataclass
class ColumnEstimate:
    beta: np.ndarray
    sigma2: float
    iterations: int
    converged: bool
    objective: float = float("nan")
    final_step: float = float("nan")
    objective_trace: Optional[np.ndarray] = None
