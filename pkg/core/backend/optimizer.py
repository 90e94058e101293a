"""Levenberg-Marquardt over the sliding window with manifold updates."""
import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from scipy import linalg

from core.backend.problem import Problem
from core.backend.state import STATE_DIM, LocalIncrement, NavState
from core.errors import EstimationError

logger = logging.getLogger(__name__)

COMPONENT_NAMES = (
    "px", "py", "pz", "vx", "vy", "vz", "roll", "pitch", "yaw",
    "bax", "bay", "baz", "bgx", "bgy", "bgz", "clock_bias", "clock_drift",
)


@dataclass(frozen=True)
class LmSettings:
    """Levenberg-Marquardt settings.

    Attributes:
        max_iterations (int): iteration limit
        gradient_tolerance (float): stop when the gradient infinity norm is below this
        step_tolerance (float): stop when the step norm is below this
        cost_tolerance (float): stop when the cost decrease, predicted or achieved,
            is below this times max(cost, 1)
        initial_lambda (float): starting damping
        lambda_increase (float): damping factor after a rejected step
        lambda_decrease (float): damping factor after an accepted step
        damping_floor (float): added to the Hessian diagonal before scaling
    """

    max_iterations: int = 50
    gradient_tolerance: float = 1e-8
    step_tolerance: float = 1e-10
    cost_tolerance: float = 1e-9
    initial_lambda: float = 1e-4
    lambda_increase: float = 10.0
    lambda_decrease: float = 0.5
    damping_floor: float = 1e-9


@dataclass
class ConvergenceReport:
    """Summary of one optimization run."""

    iterations: int = 0
    initial_cost: float = 0.0
    final_cost: float = 0.0
    termination: str = "max_iterations"
    accepted_steps: int = 0
    rank_deficient: bool = False
    diagnostic: str = ""
    cost_history: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "termination": self.termination,
            "rank_deficient": self.rank_deficient,
            "diagnostic": self.diagnostic,
        }


def _check_finite(factor, r: np.ndarray) -> None:
    if not np.all(np.isfinite(r)):
        raise EstimationError(f"Non-finite residual in {factor.describe()}")


def linearize_problem(problem: Problem, states: Sequence[NavState]) -> Tuple[np.ndarray, np.ndarray, float]:
    """Dense normal equations (H, g) and cost, blocks ordered by time."""
    index = {s.timestamp: i for i, s in enumerate(states)}
    n = STATE_DIM * len(states)
    H = np.zeros((n, n))
    g = np.zeros(n)
    cost = 0.0
    for f in problem.factors:
        r, blocks = f.linearize([states[index[k]] for k in f.keys])
        _check_finite(f, r)
        cost += 0.5 * float(r @ r)
        slots = [index[k] * STATE_DIM for k in f.keys]
        for a, Ja in zip(slots, blocks):
            g[a:a + STATE_DIM] += Ja.T @ r
            for b, Jb in zip(slots, blocks):
                H[a:a + STATE_DIM, b:b + STATE_DIM] += Ja.T @ Jb
    return H, g, cost


def evaluate_cost(problem: Problem, states: Sequence[NavState]) -> float:
    lookup = {s.timestamp: s for s in states}
    cost = 0.0
    for f in problem.factors:
        r = f.whitened_residual([lookup[k] for k in f.keys])
        _check_finite(f, r)
        cost += 0.5 * float(r @ r)
    return cost


def rank_diagnostic(H: np.ndarray, keys: Sequence[float], tolerance: float = 1e-10) -> str:
    """Describe the weakest direction of H when it is numerically singular."""
    values, vectors = linalg.eigh(H)
    scale = max(float(np.max(np.abs(values))), 1e-300)
    if values[0] > tolerance * scale:
        return ""
    weakest = int(np.argmax(np.abs(vectors[:, 0])))
    state_index, component = divmod(weakest, STATE_DIM)
    return (
        f"normal equations rank deficient: direction dominated by "
        f"{COMPONENT_NAMES[component]} of state t={keys[state_index]:.3f} unobservable"
    )


def _apply_step(states: Sequence[NavState], step: np.ndarray) -> List[NavState]:
    return [s.box_plus(LocalIncrement(step[i * STATE_DIM:(i + 1) * STATE_DIM])) for i, s in enumerate(states)]


def optimize(problem: Problem, settings: LmSettings = None) -> Tuple[List[NavState], ConvergenceReport]:
    """Minimize the total cost of the window and store the result in ``problem``.

    Args:
        problem (Problem): window with factors
        settings (LmSettings): solver settings

    Returns:
        Tuple[List[NavState], ConvergenceReport]: optimized states and the report

    Raises:
        EstimationError: If the window is empty or a residual is not finite
    """
    settings = settings or LmSettings()
    if not problem.states:
        raise EstimationError("Cannot optimize an empty window")
    states = list(problem.states)
    keys = [s.timestamp for s in states]
    H, g, cost = linearize_problem(problem, states)
    report = ConvergenceReport(initial_cost=cost, final_cost=cost, cost_history=[cost])
    report.diagnostic = rank_diagnostic(H, keys)
    report.rank_deficient = bool(report.diagnostic)
    if report.rank_deficient:
        logger.warning("Optimizer: %s", report.diagnostic)

    lam = settings.initial_lambda
    for iteration in range(1, settings.max_iterations + 1):
        if np.max(np.abs(g)) < settings.gradient_tolerance:
            report.termination = "gradient"
            break
        report.iterations = iteration
        damped = H + lam * np.diag(np.diag(H) + settings.damping_floor)
        try:
            step = -linalg.cho_solve(linalg.cho_factor(damped), g)
        except linalg.LinAlgError:
            lam *= settings.lambda_increase
            continue

        floor = settings.cost_tolerance * max(cost, 1.0)
        predicted = -float(g @ step) - 0.5 * float(step @ H @ step)
        if predicted < floor:
            report.termination = "cost"
            break

        candidate = _apply_step(states, step)
        new_cost = evaluate_cost(problem, candidate)
        step_norm = float(np.linalg.norm(step))
        if new_cost < cost:
            states = candidate
            decrease = cost - new_cost
            cost = new_cost
            report.accepted_steps += 1
            report.cost_history.append(cost)
            lam = max(lam * settings.lambda_decrease, 1e-15)
            if step_norm < settings.step_tolerance:
                report.termination = "step"
                break
            if decrease < floor:
                report.termination = "cost"
                break
            H, g, cost = linearize_problem(problem, states)
        else:
            lam *= settings.lambda_increase
            if step_norm < settings.step_tolerance:
                report.termination = "step"
                break
    else:
        if np.max(np.abs(g)) < settings.gradient_tolerance:
            report.termination = "gradient"

    report.final_cost = cost
    problem.set_states(states)
    logger.debug(
        "LM finished after %d iterations (%s): cost %.6g -> %.6g",
        report.iterations, report.termination, report.initial_cost, report.final_cost,
    )
    return states, report
