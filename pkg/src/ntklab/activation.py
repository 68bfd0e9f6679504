"""Activation functions with first/second derivatives and the runtime
smoothness checks the training theory assumes (bounded sigma'', sigma' and
linear growth)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["ActivationSpec", "relu", "swish", "tanh_act", "sigmoid_act",
           "act_value", "act_grad", "act_hess", "check_a1"]

_KINDS = ("relu", "swish", "tanh", "sigmoid")


@dataclass(frozen=True)
class ActivationSpec:
    """Which activation to use; ``s`` is the swish sharpness parameter."""

    kind: str
    s: float = 1.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown activation {self.kind!r}; expected one of {_KINDS}")
        if self.kind == "swish" and not self.s > 0:
            raise ValueError(f"swish sharpness must be positive, got s={self.s}")

    @property
    def smooth(self) -> bool:
        return self.kind != "relu"

    @property
    def label(self) -> str:
        return f"swish{self.s:g}" if self.kind == "swish" else self.kind


def relu() -> ActivationSpec:
    return ActivationSpec("relu")


def swish(s: float) -> ActivationSpec:
    return ActivationSpec("swish", s=s)


def tanh_act() -> ActivationSpec:
    return ActivationSpec("tanh")


def sigmoid_act() -> ActivationSpec:
    return ActivationSpec("sigmoid")


def _sigmoid(u):
    # Split by sign to avoid overflow in exp for large |u|.
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    eu = np.exp(u[~pos])
    out[~pos] = eu / (1.0 + eu)
    return out


def act_value(spec: ActivationSpec, u):
    """sigma(u); vectorized over u."""
    u_arr = np.asarray(u, dtype=float)
    if spec.kind == "relu":
        out = np.maximum(u_arr, 0.0)
    elif spec.kind == "swish":
        out = u_arr * _sigmoid(spec.s * u_arr)
    elif spec.kind == "tanh":
        out = np.tanh(u_arr)
    else:
        out = _sigmoid(u_arr)
    return out if u_arr.ndim else float(out)


def act_grad(spec: ActivationSpec, u):
    """sigma'(u).  For ReLU the subgradient at 0 is fixed to 0."""
    u_arr = np.asarray(u, dtype=float)
    if spec.kind == "relu":
        out = (u_arr > 0.0).astype(float)
    elif spec.kind == "swish":
        g = _sigmoid(spec.s * u_arr)
        out = g + spec.s * u_arr * g * (1.0 - g)
    elif spec.kind == "tanh":
        out = 1.0 - np.tanh(u_arr) ** 2
    else:
        g = _sigmoid(u_arr)
        out = g * (1.0 - g)
    return out if u_arr.ndim else float(out)


def act_hess(spec: ActivationSpec, u):
    """sigma''(u); rejected for ReLU, whose second derivative does not exist."""
    if not spec.smooth:
        raise ValueError("second derivative undefined for relu; check spec.smooth first")
    u_arr = np.asarray(u, dtype=float)
    if spec.kind == "swish":
        g = _sigmoid(spec.s * u_arr)
        gp = spec.s * g * (1.0 - g)
        gpp = spec.s * gp * (1.0 - 2.0 * g)
        out = 2.0 * gp + u_arr * gpp
    elif spec.kind == "tanh":
        th = np.tanh(u_arr)
        out = -2.0 * th * (1.0 - th**2)
    else:
        g = _sigmoid(u_arr)
        out = g * (1.0 - g) * (1.0 - 2.0 * g)
    return out if u_arr.ndim else float(out)


def check_a1(spec: ActivationSpec, grid_halfwidth: float = 10.0, grid_points: int = 100_000) -> dict:
    """Scan |sigma''|, |sigma'| and |sigma(u)| - (1 + |u|) on a symmetric grid.

    Returns {'C_estimate', 'grad_bound_ok', 'growth_bound_ok'}.  The scan
    range dominates realizable pre-activations in the regimes we train in
    (|b.x| <= 1 plus a bounded bias term), so grid maxima are faithful
    estimates of the sup norms.
    """
    if not spec.smooth:
        raise ValueError(
            "smoothness check applies to smooth activations only; "
            "use the analytic ReLU kernel path for relu"
        )
    if grid_points < 2:
        raise ValueError("need at least two grid points")
    grid = np.linspace(-grid_halfwidth, grid_halfwidth, grid_points)
    c_estimate = float(np.max(np.abs(act_hess(spec, grid))))
    grad_bound_ok = bool(np.max(np.abs(act_grad(spec, grid))) <= 2.0)
    growth_bound_ok = bool(np.max(np.abs(act_value(spec, grid)) - (1.0 + np.abs(grid))) <= 0.0)
    return {
        "C_estimate": c_estimate,
        "grad_bound_ok": grad_bound_ok,
        "growth_bound_ok": growth_bound_ok,
    }
