"""Two-layer network g(x) = M^{-1/2} sum_r a_r sigma(b_r.x + gamma c_r):
symmetric initialization, forward evaluation, and the frozen-init gradient
feature map whose inner products realize the finite-width tangent kernel."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .activation import ActivationSpec, act_grad, act_value
from .numerics import SeededRng, sample_sphere

__all__ = ["NetworkParams", "symmetric_init", "forward", "feature_map",
           "feature_dim", "a2_violations"]


@dataclass
class NetworkParams:
    """Parameter triple (a, B, c) plus the scale constants (R, gamma).

    ``a``: output weights, shape (M,); ``B``: input weights, shape (d, M)
    with columns b_r; ``c``: biases, shape (M,).  Width M must be even so
    the symmetric (zero-function) initialization exists.
    """

    a: np.ndarray
    B: np.ndarray
    c: np.ndarray
    gamma: float
    R: float

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        if self.a.ndim != 1 or self.c.ndim != 1 or self.B.ndim != 2:
            raise ValueError("expected a:(M,), B:(d,M), c:(M,)")
        m = self.a.size
        if m % 2 != 0:
            raise ValueError(f"width must be even, got M={m}")
        if self.B.shape[1] != m or self.c.size != m:
            raise ValueError(
                f"inconsistent shapes: a has M={m}, B is {self.B.shape}, c has {self.c.size}"
            )
        if not self.R > 0:
            raise ValueError(f"output-weight scale R must be positive, got {self.R}")
        if self.gamma < 0:
            raise ValueError(f"bias scale gamma must be nonnegative, got {self.gamma}")

    @property
    def M(self) -> int:
        return self.a.size

    @property
    def d(self) -> int:
        return self.B.shape[0]

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.a.copy(), self.B.copy(), self.c.copy(), self.gamma, self.R)

    def is_symmetric_init(self, tol: float = 0.0) -> bool:
        """True when the parameters still sit at a symmetric initialization."""
        half = self.M // 2
        ok = (
            np.all(np.abs(self.a[:half] - self.R) <= tol)
            and np.all(np.abs(self.a[half:] + self.R) <= tol)
            and np.all(np.abs(self.B[:, :half] - self.B[:, half:]) <= tol)
            and np.all(np.abs(self.c) <= tol)
        )
        norms = np.linalg.norm(self.B[:, :half], axis=0)
        return bool(ok and np.all(np.abs(norms - 1.0) <= max(tol, 1e-9)))

    def to_dict(self) -> dict:
        """JSON-style document {M, d, R, gamma, a[], B[][], c[]} (B row-major, d x M)."""
        return {
            "M": self.M,
            "d": self.d,
            "R": self.R,
            "gamma": self.gamma,
            "a": self.a.tolist(),
            "B": self.B.tolist(),
            "c": self.c.tolist(),
        }

    @staticmethod
    def from_dict(doc: dict) -> "NetworkParams":
        params = NetworkParams(
            a=np.array(doc["a"], dtype=float),
            B=np.array(doc["B"], dtype=float),
            c=np.array(doc["c"], dtype=float),
            gamma=float(doc["gamma"]),
            R=float(doc["R"]),
        )
        if params.M != int(doc["M"]) or params.d != int(doc["d"]):
            raise ValueError("checkpoint M/d fields disagree with array shapes")
        return params


def a2_violations(R: float, gamma: float) -> list[str]:
    """Which boundedness-assumption constants a run violates (empty = none).

    Runs outside R=1, gamma in [0,1] are allowed but get tagged in output
    metadata rather than silently treated as theory-covered.
    """
    issues = []
    if R != 1.0:
        issues.append(f"R={R:g} (theory fixes R=1)")
    if not 0.0 <= gamma <= 1.0:
        issues.append(f"gamma={gamma:g} (theory requires gamma in [0,1])")
    return issues


def symmetric_init(rng: SeededRng, M: int, d: int, R: float = 1.0,
                   gamma: float = 0.0) -> NetworkParams:
    """Paired +/-R output weights with duplicated unit input weights and zero
    biases, so the initial network is exactly the zero function."""
    if M < 2 or M % 2 != 0:
        raise ValueError(f"width must be an even integer >= 2, got M={M}")
    half = M // 2
    directions = sample_sphere(rng, d, half)  # (half, d)
    B = np.concatenate([directions, directions], axis=0).T.copy()  # (d, M)
    a = np.concatenate([np.full(half, R), np.full(half, -R)])
    c = np.zeros(M)
    return NetworkParams(a=a, B=B, c=c, gamma=gamma, R=R)


def _preactivations(params: NetworkParams, X: np.ndarray) -> np.ndarray:
    return X @ params.B + params.gamma * params.c


def forward(params: NetworkParams, activation: ActivationSpec, x: np.ndarray):
    """Network output at ``x`` (shape (d,)) or a batch (n, d)."""
    x_arr = np.asarray(x, dtype=float)
    single = x_arr.ndim == 1
    if single:
        x_arr = x_arr[None, :]
    if x_arr.shape[1] != params.d:
        raise ValueError(f"point dimension {x_arr.shape[1]} != network d={params.d}")
    s = act_value(activation, _preactivations(params, x_arr))
    out = (s @ params.a) / math.sqrt(params.M)
    return float(out[0]) if single else out


def feature_dim(M: int, d: int) -> int:
    return M * (d + 2)


def feature_map(init_params: NetworkParams, activation: ActivationSpec, x: np.ndarray):
    """Parameter gradient of the network at a symmetric initialization.

    Layout per point: [output block (M) | input block (M*d, unit-major) |
    bias block (M)].  The inner product of two feature vectors is the
    finite-width tangent kernel value (R^2 carried on the derivative
    blocks through a_r = +/-R).
    """
    if not init_params.is_symmetric_init(tol=0.0):
        raise ValueError("feature_map requires parameters at a symmetric initialization")
    x_arr = np.asarray(x, dtype=float)
    single = x_arr.ndim == 1
    if single:
        x_arr = x_arr[None, :]
    if x_arr.shape[1] != init_params.d:
        raise ValueError(f"point dimension {x_arr.shape[1]} != network d={init_params.d}")
    n, d = x_arr.shape
    m = init_params.M
    root_m = math.sqrt(m)
    u = _preactivations(init_params, x_arr)
    s = act_value(activation, u)
    asp = init_params.a * act_grad(activation, u)  # (n, M)
    phi = np.empty((n, feature_dim(m, d)))
    phi[:, :m] = s / root_m
    phi[:, m:m + m * d] = (asp[:, :, None] * x_arr[:, None, :]).reshape(n, m * d) / root_m
    phi[:, m + m * d:] = init_params.gamma * asp / root_m
    return phi[0] if single else phi
