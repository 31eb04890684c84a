# File: seqnet/src/gradcheck.py
# Central-difference gradient checking for tensor functions and whole networks

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog

from seqnet.src.tensor import Tape, Tensor

logger = structlog.get_logger(__name__)

# --- Configuration ---
DEFAULT_EPS = 1e-5
DEFAULT_TOL = 1e-4
# errors of gradients smaller than this are measured against it, not against themselves
REL_FLOOR = 1e-6


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    checked: int
    worst: Optional[Tuple[int, int]] = None  # (tensor index, flat coordinate)
    message: str = ""

    def __bool__(self) -> bool:
        return self.passed


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_FLOOR)


def _evaluate(fn: Callable[..., Tensor], points: Sequence[Tensor]) -> float:
    return float(np.asarray(fn(*points).data).reshape(-1)[0])


def grad_check(
    fn: Callable[..., Tensor],
    point: Union[Tensor, Sequence[Tensor]],
    eps: float = DEFAULT_EPS,
    tol: float = DEFAULT_TOL,
    max_coords: Optional[int] = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare tape gradients of scalar ``fn(*points)`` with central differences.

    ``point`` is one tensor or a list of tensors; they are perturbed in place and
    restored afterwards. ``max_coords`` samples that many coordinates per tensor
    instead of sweeping all of them.
    """
    points: List[Tensor] = [point] if isinstance(point, Tensor) else list(point)
    saved_flags = [p.requires_grad for p in points]
    for p in points:
        p.requires_grad = True
        p.zero_grad()

    with Tape() as tape:
        loss = fn(*points)
    tape.backward(loss)
    analytic = [p.grad.copy() for p in points]
    for p, flag in zip(points, saved_flags):
        p.requires_grad = flag
        p.zero_grad()

    rng = np.random.default_rng(seed)
    worst_err, worst, checked = 0.0, None, 0
    for t_index, (p, grad) in enumerate(zip(points, analytic)):
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for coord in coords:
            original = flat[coord]
            flat[coord] = original + eps
            f_plus = _evaluate(fn, points)
            flat[coord] = original - eps
            f_minus = _evaluate(fn, points)
            flat[coord] = original
            numeric = (f_plus - f_minus) / (2 * eps)
            exact = float(grad.reshape(-1)[coord])
            checked += 1
            if not np.isfinite([f_plus, f_minus, exact]).all():
                message = f"gradcheck.grad_check: non-finite value at tensor {t_index}, coordinate {int(coord)}"
                logger.warning(message)
                return GradCheckReport(float("inf"), False, checked, (t_index, int(coord)), message)
            err = relative_error(exact, numeric)
            if err > worst_err or worst is None:
                worst_err, worst = err, (t_index, int(coord))

    passed = worst_err < tol
    logger.debug("gradcheck.grad_check: finished", checked=checked, max_rel_err=worst_err, passed=passed)
    return GradCheckReport(worst_err, passed, checked, worst)
