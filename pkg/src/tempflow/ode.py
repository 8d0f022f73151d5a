"""Classical fixed-step fourth-order Runge-Kutta."""

from __future__ import annotations

from typing import Callable, TypeVar

import numpy as np

Y = TypeVar("Y", float, np.ndarray)


def rk4_step(f: Callable[[float, Y], Y], t: float, y: Y, h: float) -> Y:
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def time_grid(t_end: float, dt: float) -> np.ndarray:
    """Uniform grid ``0, dt, ..., t_end``; the last step is shortened if needed."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if t_end < 0:
        raise ValueError(f"t_end must be non-negative, got {t_end}")
    n = int(np.floor(t_end / dt + 1e-9))
    grid = dt * np.arange(n + 1)
    if t_end - grid[-1] > 1e-12 * max(1.0, t_end):
        grid = np.append(grid, t_end)
    else:
        grid[-1] = t_end if n > 0 else grid[-1]
    return grid


def rk4_solve(f: Callable[[float, Y], Y], y0: Y, t_end: float, dt: float) -> tuple[np.ndarray, list]:
    """Integrate ``y' = f(t, y)`` on :func:`time_grid` and return ``(ts, ys)``."""
    ts = time_grid(t_end, dt)
    ys = [y0]
    y = y0
    for t0, t1 in zip(ts[:-1], ts[1:]):
        y = rk4_step(f, t0, y, t1 - t0)
        ys.append(y)
    return ts, ys
