"""Tangent-kernel evaluation in three modes (frozen random features, the
closed-form ReLU expectation on the sphere, Monte Carlo over fresh weight
draws), layer components, Gram matrices and the effective dimension."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .activation import ActivationSpec, act_grad, act_value
from .model import NetworkParams
from .numerics import SeededRng, sample_sphere

__all__ = [
    "RandomFeature",
    "ClosedFormReLU",
    "MonteCarlo",
    "KernelSpec",
    "kernel_eval",
    "kernel_matrix",
    "mc_pairwise",
    "gram_matrix",
    "degree_of_freedom",
    "closed_form_validation_report",
    "write_gram_csv",
]

COMPONENTS = ("full", "output", "input")


@dataclass(frozen=True)
class RandomFeature:
    """Kernel induced by the feature map of a fixed symmetric initialization."""

    init: NetworkParams


@dataclass(frozen=True)
class ClosedFormReLU:
    """Exact sphere expectation for ReLU (arc-cosine identities)."""


@dataclass(frozen=True)
class MonteCarlo:
    """Sample average over fresh uniform-sphere weight draws."""

    samples: int
    seed: int


Mode = Union[RandomFeature, ClosedFormReLU, MonteCarlo]


@dataclass(frozen=True)
class KernelSpec:
    component: str
    mode: Mode
    activation: ActivationSpec
    gamma: float
    R: float

    def __post_init__(self):
        if self.component not in COMPONENTS:
            raise ValueError(f"component must be one of {COMPONENTS}, got {self.component!r}")
        if not self.R > 0:
            raise ValueError(f"R must be positive, got {self.R}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        if isinstance(self.mode, ClosedFormReLU) and self.activation.kind != "relu":
            raise ValueError("closed-form mode is only available for the relu activation")
        if isinstance(self.mode, MonteCarlo) and self.mode.samples < 1:
            raise ValueError("Monte Carlo mode needs at least one sample")
        if isinstance(self.mode, RandomFeature):
            init = self.mode.init
            if not init.is_symmetric_init(tol=0.0):
                raise ValueError("random-feature mode requires a symmetric initialization")
            if init.R != self.R or init.gamma != self.gamma:
                raise ValueError(
                    f"spec constants (R={self.R}, gamma={self.gamma}) disagree with the "
                    f"initialization (R={init.R}, gamma={init.gamma})"
                )

    @property
    def label(self) -> str:
        if isinstance(self.mode, RandomFeature):
            mode = f"rf{self.mode.init.M}"
        elif isinstance(self.mode, ClosedFormReLU):
            mode = "closed"
        else:
            mode = f"mc{self.mode.samples}"
        return f"{self.component}/{mode}/{self.activation.label}/R={self.R:g}/gamma={self.gamma:g}"


def _as_points(x, name="points") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a vector or an (n, d) array")
    return arr


def _require_unit(X: np.ndarray, tol: float = 1e-9):
    norms = np.linalg.norm(X, axis=1)
    worst = float(np.max(np.abs(norms - 1.0))) if norms.size else 0.0
    if worst > tol:
        raise ValueError(
            f"closed-form relu kernel requires unit-sphere points; worst |norm-1| = {worst:.3e}"
        )


def _combine(component: str, ka: np.ndarray, kb: np.ndarray) -> np.ndarray:
    if component == "full":
        return ka + kb
    if component == "output":
        return ka
    return kb


def _closed_form_parts(X: np.ndarray, Z: np.ndarray, d: int, R: float, gamma: float):
    dot = X @ Z.T
    cos = np.clip(dot, -1.0, 1.0)
    theta = np.arccos(cos)
    pml = math.pi - theta
    ka = (np.sin(theta) + pml * cos) / (2.0 * math.pi * d)
    kb = (R * R) * (dot + gamma * gamma) * pml / (2.0 * math.pi)
    return ka, kb


def _random_feature_parts(init: NetworkParams, activation: ActivationSpec,
                          X: np.ndarray, Z: np.ndarray, same: bool):
    m = init.M
    ux = X @ init.B + init.gamma * init.c
    sx, spx = act_value(activation, ux), act_grad(activation, ux)
    if same:
        sz, spz = sx, spx
    else:
        uz = Z @ init.B + init.gamma * init.c
        sz, spz = act_value(activation, uz), act_grad(activation, uz)
    ka = (sx @ sz.T) / m
    kb = (init.R**2) * (X @ Z.T + init.gamma**2) * ((spx @ spz.T) / m)
    return ka, kb


_MC_CHUNK = 65_536


def _monte_carlo_parts(mode: MonteCarlo, activation: ActivationSpec, R: float, gamma: float,
                       X: np.ndarray, Z: np.ndarray, same: bool):
    d = X.shape[1]
    gen_rng = SeededRng(mode.seed)
    draws = sample_sphere(gen_rng, d, mode.samples)
    sum_a = np.zeros((X.shape[0], Z.shape[0]))
    sum_b = np.zeros_like(sum_a)
    for lo in range(0, mode.samples, _MC_CHUNK):
        block = draws[lo:lo + _MC_CHUNK]
        ux = X @ block.T
        sx, spx = act_value(activation, ux), act_grad(activation, ux)
        if same:
            sz, spz = sx, spx
        else:
            uz = Z @ block.T
            sz, spz = act_value(activation, uz), act_grad(activation, uz)
        sum_a += sx @ sz.T
        sum_b += spx @ spz.T
    ka = sum_a / mode.samples
    kb = (R * R) * (X @ Z.T + gamma * gamma) * (sum_b / mode.samples)
    return ka, kb


def kernel_matrix(spec: KernelSpec, x, z=None) -> np.ndarray:
    """Kernel values k(x_i, z_j) as an (n, m) array."""
    X = _as_points(x, "x")
    same = z is None
    Z = X if same else _as_points(z, "z")
    if X.shape[1] != Z.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Z.shape[1]}")
    if isinstance(spec.mode, ClosedFormReLU):
        _require_unit(X)
        if not same:
            _require_unit(Z)
        ka, kb = _closed_form_parts(X, Z, X.shape[1], spec.R, spec.gamma)
    elif isinstance(spec.mode, RandomFeature):
        if spec.mode.init.d != X.shape[1]:
            raise ValueError(
                f"points have d={X.shape[1]} but the initialization has d={spec.mode.init.d}"
            )
        ka, kb = _random_feature_parts(spec.mode.init, spec.activation, X, Z, same)
    else:
        ka, kb = _monte_carlo_parts(spec.mode, spec.activation, spec.R, spec.gamma, X, Z, same)
    return _combine(spec.component, ka, kb)


def kernel_eval(spec: KernelSpec, x, z) -> float:
    """Single kernel value k(x, z)."""
    return float(kernel_matrix(spec, np.asarray(x)[None, :], np.asarray(z)[None, :])[0, 0])


def mc_pairwise(spec: KernelSpec, x, z):
    """Monte Carlo values and standard errors for row-paired points.

    Returns (values, stderr), each of shape (n,).  Used to validate the
    closed forms: the estimator averages per-draw products, so the SE is
    the sample standard deviation over draws divided by sqrt(samples).
    """
    if not isinstance(spec.mode, MonteCarlo):
        raise ValueError("mc_pairwise requires a Monte Carlo kernel spec")
    X, Z = _as_points(x), _as_points(z)
    if X.shape != Z.shape:
        raise ValueError("mc_pairwise expects equally shaped point arrays")
    mode = spec.mode
    draws = sample_sphere(SeededRng(mode.seed), X.shape[1], mode.samples)
    n = X.shape[0]
    count = 0
    s1 = np.zeros(n)
    s2 = np.zeros(n)
    lin = (spec.R**2) * (np.sum(X * Z, axis=1) + spec.gamma**2)
    for lo in range(0, mode.samples, _MC_CHUNK):
        block = draws[lo:lo + _MC_CHUNK]
        ux, uz = X @ block.T, Z @ block.T
        pa = act_value(spec.activation, ux) * act_value(spec.activation, uz)
        pb = act_grad(spec.activation, ux) * act_grad(spec.activation, uz)
        prod = _combine(spec.component, pa, lin[:, None] * pb)
        s1 += prod.sum(axis=1)
        s2 += (prod**2).sum(axis=1)
        count += block.shape[0]
    mean = s1 / count
    var = np.maximum(s2 / count - mean**2, 0.0)
    stderr = np.sqrt(var / count)
    return mean, stderr


def gram_matrix(spec: KernelSpec, points) -> np.ndarray:
    """Dense kernel matrix on one point set, exactly symmetric.

    The strict upper triangle is mirrored onto the lower one so floating
    point cannot introduce asymmetry.
    """
    X = _as_points(points)
    if X.shape[0] < 1:
        raise ValueError("need at least one point")
    g = kernel_matrix(spec, X)
    upper = np.triu(g)
    return upper + np.triu(g, 1).T


def degree_of_freedom(eigenvalues, lam: float) -> float:
    """Effective dimension sum_i lambda_i / (lambda_i + lam).

    Tiny negative eigenvalues (eigensolver noise) are clipped to zero;
    genuinely negative input is rejected.
    """
    if not lam > 0:
        raise ValueError(f"regularization must be positive, got {lam}")
    vals = np.asarray(eigenvalues, dtype=float)
    if vals.size == 0:
        return 0.0
    top = float(vals.max(initial=0.0))
    if np.any(vals < -1e-8 * max(top, 1.0)):
        raise ValueError("eigenvalues are substantially negative; not a PSD spectrum")
    vals = np.clip(vals, 0.0, None)
    return float(np.sum(vals / (vals + lam)))


def closed_form_validation_report(d: int = 3, n_pairs: int = 50, samples: int = 10**6,
                                  seed: int = 1234, R: float = 1.0,
                                  gamma: float = 0.5) -> dict:
    """Closed-form ReLU kernels versus Monte Carlo at random point pairs.

    The arc-cosine-style closed forms are not self-evident, so this check
    stays available permanently: every component must agree with a fresh
    Monte Carlo estimate within 3 standard errors at every pair.
    """
    pts = sample_sphere(SeededRng(seed, 0), d, 2 * n_pairs)
    x, z = pts[:n_pairs], pts[n_pairs:]
    z[0] = x[0]  # include a coincident pair (theta = 0 edge)
    report = {"d": d, "n_pairs": n_pairs, "samples": samples, "components": {}, "pass": True}
    for component in COMPONENTS:
        closed_spec = KernelSpec(component, ClosedFormReLU(), ActivationSpec("relu"),
                                 gamma=gamma, R=R)
        mc_spec = KernelSpec(component, MonteCarlo(samples, seed + 1), ActivationSpec("relu"),
                             gamma=gamma, R=R)
        closed = np.array([kernel_eval(closed_spec, xi, zi) for xi, zi in zip(x, z)])
        mc, se = mc_pairwise(mc_spec, x, z)
        gaps = np.abs(closed - mc)
        in_units = gaps / np.maximum(se, 1e-300)
        ok = bool(np.all(in_units <= 3.0))
        report["components"][component] = {
            "max_abs_gap": float(gaps.max()),
            "max_gap_in_stderr": float(in_units.max()),
            "pass": ok,
        }
        report["pass"] = report["pass"] and ok
    return report


def write_gram_csv(matrix: np.ndarray, path) -> None:
    """Row-major full-matrix CSV export (17 significant digits)."""
    g = np.asarray(matrix, dtype=float)
    with open(path, "w", encoding="utf-8") as fh:
        for row in g:
            fh.write(",".join(f"{v:.17g}" for v in row))
            fh.write("\n")
