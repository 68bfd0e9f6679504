"""Single-pass regularized averaged SGD, twice: once on the two-layer
network parameters (element-wise recursions, regularized toward the
initialization) and once as the reference linear dynamics in the frozen
random-feature space.  Both consume one shared replayable sample stream so
their averaged iterates can be compared pointwise."""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .activation import ActivationSpec, act_grad, act_value
from .model import NetworkParams, forward
from .numerics import SeededRng, sample_sphere
from .source import TargetFunction

__all__ = [
    "TrainConfig",
    "SampleStream",
    "FrozenStream",
    "LinearIterate",
    "NetworkRunResult",
    "KernelRunResult",
    "asgd_network",
    "asgd_kernel",
    "kernel_predict",
    "ridge_minimizer",
    "equivalence_gap",
]

_X_STREAM, _NOISE_STREAM = 0, 1


@dataclass(frozen=True)
class TrainConfig:
    """Iteration budget, regularization, constant learning rate.

    ``eta * lam`` must stay below 1 (the recursion contracts toward the
    initialization); with ``theory_mode`` the stronger step-size condition
    4(6 + lam) eta <= 1 from the convergence analysis is enforced.
    """

    steps: int
    lam: float
    eta: float
    seed: Optional[int] = None
    snapshot_schedule: tuple = ()
    theory_mode: bool = False
    allow_nonsmooth: bool = False

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError(f"steps must be nonnegative, got {self.steps}")
        if self.lam < 0:
            raise ValueError(f"regularization must be nonnegative, got {self.lam}")
        if not self.eta > 0:
            raise ValueError(f"learning rate must be positive, got {self.eta}")
        if not self.eta * self.lam < 1.0:
            raise ValueError(f"need eta*lam < 1, got {self.eta * self.lam}")
        if self.theory_mode and not 4.0 * (6.0 + self.lam) * self.eta <= 1.0:
            raise ValueError(
                f"theory mode requires 4(6+lam)*eta <= 1, got {4 * (6 + self.lam) * self.eta:.4f}"
            )
        for t in self.snapshot_schedule:
            if not 0 <= t <= self.steps:
                raise ValueError(f"snapshot index {t} outside [0, {self.steps}]")


@dataclass(frozen=True)
class SampleStream:
    """Replayable stream of (x_t, y_t) pairs on the sphere.

    Two streams with identical fields produce identical sequences, which is
    what lets the network and kernel dynamics consume the very same
    examples.  ``clip`` truncates labels to [-1, 1].
    """

    target: TargetFunction
    noise_std: float
    clip: bool
    seed: int
    d: int

    def __post_init__(self):
        if self.noise_std < 0:
            raise ValueError(f"noise level must be nonnegative, got {self.noise_std}")
        if self.d < 2:
            raise ValueError(f"need d >= 2, got {self.d}")

    def draw(self, steps: int):
        """The first ``steps`` samples; the same prefix on every call."""
        if steps == 0:
            return np.zeros((0, self.d)), np.zeros(0)
        x = sample_sphere(SeededRng(self.seed, _X_STREAM), self.d, steps)
        y = self.target.evaluate(x)
        if self.noise_std > 0:
            gen = SeededRng(self.seed, _NOISE_STREAM).generator()
            y = y + self.noise_std * gen.standard_normal(steps)
        if self.clip:
            y = np.clip(y, -1.0, 1.0)
        return x, y

    def fingerprint(self, steps: int) -> str:
        """Identifies (seed, noise, target, length); equal fingerprints mean
        both trainers saw the same examples."""
        msg = f"{self.seed}|{self.noise_std:.17g}|{int(self.clip)}|{self.target.ident}|{steps}|d={self.d}"
        return hashlib.sha256(msg.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class FrozenStream:
    """A fully materialized stream: same interface as SampleStream, with the
    draw precomputed once (useful when several runs share the examples)."""

    x: np.ndarray
    y: np.ndarray
    seed: int
    d: int
    _fingerprint: str

    @staticmethod
    def freeze(stream: SampleStream, steps: int) -> "FrozenStream":
        x, y = stream.draw(steps)
        return FrozenStream(x=x, y=y, seed=stream.seed, d=stream.d,
                            _fingerprint=stream.fingerprint(steps))

    def draw(self, steps: int):
        if steps > self.y.size:
            raise ValueError(f"frozen stream holds {self.y.size} samples, need {steps}")
        return self.x[:steps], self.y[:steps]

    def fingerprint(self, steps: int) -> str:
        if steps != self.y.size:
            raise ValueError("frozen stream fingerprint is defined at its full length")
        return self._fingerprint


def _check_smooth(activation: ActivationSpec, config: TrainConfig):
    if not activation.smooth and not config.allow_nonsmooth:
        raise ValueError(
            "training with relu falls outside the smoothness assumptions; "
            "set allow_nonsmooth=True to run anyway"
        )


@dataclass
class NetworkRunResult:
    averaged: NetworkParams
    final: NetworkParams
    activation: ActivationSpec
    stream_fingerprint: str
    snapshots: list  # (t, NetworkParams averaged over iterates 0..t, wall_ms)


def asgd_network(init: NetworkParams, activation: ActivationSpec, config: TrainConfig,
                 stream: SampleStream, train_output: bool = True,
                 train_input: bool = True) -> NetworkRunResult:
    """Averaged SGD on the network parameters.

    Element-wise updates per unit r (error e_t = g(x_t) - y_t):
        a_r   <- a_r - eta*lam*(a_r - a_r0) - eta e_t sigma(u_r) / sqrt(M)
        b_r   <- b_r - eta*lam*(b_r - b_r0) - eta e_t a_r sigma'(u_r) x_t / sqrt(M)
        c_r   <- c_r - eta*lam*(c_r - c_r0) - eta e_t a_r gamma sigma'(u_r) / sqrt(M)
    with u_r = b_r.x_t + gamma c_r, followed by uniform averaging over the
    T+1 iterates including the initialization.  Freezing a layer zeroes its
    update and nothing else.
    """
    _check_smooth(activation, config)
    if config.seed is not None and config.seed != stream.seed:
        raise ValueError(f"config seed {config.seed} != stream seed {stream.seed}")
    if stream.d != init.d:
        raise ValueError(f"stream dimension {stream.d} != network d={init.d}")
    m, gamma = init.M, init.gamma
    sqm = math.sqrt(m)
    eta, lam = config.eta, config.lam
    a0, b0, c0 = init.a.copy(), init.B.copy(), init.c.copy()
    a, b, c = a0.copy(), b0.copy(), c0.copy()
    avg_a, avg_b, avg_c = a.copy(), b.copy(), c.copy()
    shrink = 1.0 - eta * lam
    reg_a, reg_b, reg_c = eta * lam * a0, eta * lam * b0, eta * lam * c0

    schedule = set(config.snapshot_schedule)
    snapshots = []
    clock = time.perf_counter()

    def record(t):
        wall_ms = (time.perf_counter() - clock) * 1e3
        snapshots.append(
            (t, NetworkParams(avg_a.copy(), avg_b.copy(), avg_c.copy(), gamma, init.R), wall_ms)
        )

    if 0 in schedule:
        record(0)
    xs, ys = stream.draw(config.steps)
    for t in range(config.steps):
        x = xs[t]
        u = x @ b + gamma * c
        s = act_value(activation, u)
        err = (s @ a) / sqm - ys[t]
        asp = a * act_grad(activation, u)
        coef = eta * err / sqm
        if train_output:
            a *= shrink
            a += reg_a
            a -= coef * s
        if train_input:
            b *= shrink
            b += reg_b
            b -= coef * np.outer(x, asp)
            c *= shrink
            c += reg_c
            c -= coef * gamma * asp
        w = 1.0 / (t + 2)
        avg_a += (a - avg_a) * w
        avg_b += (b - avg_b) * w
        avg_c += (c - avg_c) * w
        if (t + 1) in schedule:
            record(t + 1)

    return NetworkRunResult(
        averaged=NetworkParams(avg_a, avg_b, avg_c, gamma, init.R),
        final=NetworkParams(a, b, c, gamma, init.R),
        activation=activation,
        stream_fingerprint=stream.fingerprint(config.steps),
        snapshots=snapshots,
    )


@dataclass
class LinearIterate:
    """Feature-space weights of a function in the random-feature span.

    Blocks mirror the feature layout: ``w_out`` (M,), ``w_in`` (M, d) and
    ``w_bias`` (M,).  ``w = 0`` is the zero function.  ``avg_*`` hold the
    running uniform average over iterates 0..t.
    """

    w_out: np.ndarray
    w_in: np.ndarray
    w_bias: np.ndarray
    avg_out: np.ndarray
    avg_in: np.ndarray
    avg_bias: np.ndarray

    @staticmethod
    def zeros(m: int, d: int) -> "LinearIterate":
        return LinearIterate(
            np.zeros(m), np.zeros((m, d)), np.zeros(m),
            np.zeros(m), np.zeros((m, d)), np.zeros(m),
        )

    def as_vector(self, averaged: bool = False) -> np.ndarray:
        """Flat vector in the feature layout [output | input | bias]."""
        parts = (
            (self.avg_out, self.avg_in, self.avg_bias)
            if averaged
            else (self.w_out, self.w_in, self.w_bias)
        )
        return np.concatenate([parts[0], parts[1].ravel(), parts[2]])


def kernel_predict(init: NetworkParams, activation: ActivationSpec,
                   w_out, w_in, w_bias, x) -> np.ndarray:
    """<w, feature_map(x)> evaluated in block form, batched over rows of x."""
    x_arr = np.asarray(x, dtype=float)
    single = x_arr.ndim == 1
    if single:
        x_arr = x_arr[None, :]
    u = x_arr @ init.B + init.gamma * init.c
    s = act_value(activation, u)
    asp = init.a * act_grad(activation, u)
    out = (s @ w_out + np.sum((x_arr @ w_in.T) * asp, axis=1) + init.gamma * (asp @ w_bias))
    out = out / math.sqrt(init.M)
    return float(out[0]) if single else out


@dataclass
class KernelRunResult:
    iterate: LinearIterate
    init: NetworkParams
    activation: ActivationSpec
    component: str
    stream_fingerprint: str
    snapshots: list  # (t, flat averaged weight vector, wall_ms)

    def predict_averaged(self, x):
        return kernel_predict(
            self.init, self.activation,
            self.iterate.avg_out, self.iterate.avg_in, self.iterate.avg_bias, x,
        )

    def predict_final(self, x):
        return kernel_predict(
            self.init, self.activation,
            self.iterate.w_out, self.iterate.w_in, self.iterate.w_bias, x,
        )


def asgd_kernel(init: NetworkParams, activation: ActivationSpec, config: TrainConfig,
                stream: SampleStream, component: str = "full") -> KernelRunResult:
    """Reference averaged SGD in the frozen-feature space.

    g^{t+1} = (1 - eta lam) g^t - eta (g^t(x_t) - y_t) k(x_t, .) realized on
    the weight vector; the average includes the zero iterate g^0.
    ``component`` restricts updates to the output block, the input+bias
    blocks, or all of them (the corresponding component kernel).
    """
    _check_smooth(activation, config)
    if component not in ("full", "output", "input"):
        raise ValueError(f"unknown component {component!r}")
    if config.seed is not None and config.seed != stream.seed:
        raise ValueError(f"config seed {config.seed} != stream seed {stream.seed}")
    if stream.d != init.d:
        raise ValueError(f"stream dimension {stream.d} != network d={init.d}")
    if not init.is_symmetric_init(tol=0.0):
        raise ValueError("kernel dynamics need the frozen symmetric initialization")
    m, d, gamma = init.M, init.d, init.gamma
    sqm = math.sqrt(m)
    eta, lam = config.eta, config.lam
    shrink = 1.0 - eta * lam
    use_out = component in ("full", "output")
    use_in = component in ("full", "input")

    it = LinearIterate.zeros(m, d)
    schedule = set(config.snapshot_schedule)
    snapshots = []
    clock = time.perf_counter()

    def record(t):
        wall_ms = (time.perf_counter() - clock) * 1e3
        snapshots.append((t, it.as_vector(averaged=True), wall_ms))

    if 0 in schedule:
        record(0)
    xs, ys = stream.draw(config.steps)
    b0, a0 = init.B, init.a
    for t in range(config.steps):
        x = xs[t]
        u = x @ b0 + gamma * init.c
        s = act_value(activation, u)
        asp = a0 * act_grad(activation, u)
        pred = (it.w_out @ s + (it.w_in @ x) @ asp + gamma * (it.w_bias @ asp)) / sqm
        coef = eta * (pred - ys[t]) / sqm
        if use_out:
            it.w_out *= shrink
            it.w_out -= coef * s
        if use_in:
            it.w_in *= shrink
            it.w_in -= coef * np.outer(asp, x)
            it.w_bias *= shrink
            it.w_bias -= coef * gamma * asp
        w = 1.0 / (t + 2)
        it.avg_out += (it.w_out - it.avg_out) * w
        it.avg_in += (it.w_in - it.avg_in) * w
        it.avg_bias += (it.w_bias - it.avg_bias) * w
        if (t + 1) in schedule:
            record(t + 1)

    return KernelRunResult(
        iterate=it,
        init=init,
        activation=activation,
        component=component,
        stream_fingerprint=stream.fingerprint(config.steps),
        snapshots=snapshots,
    )


def ridge_minimizer(init: NetworkParams, activation: ActivationSpec, x, y,
                    lam: float) -> LinearIterate:
    """Feature-space ridge solution of (Phi Phi^T/n + lam I) w = Phi y / n.

    Solved through the n x n dual system (the solution lies in the feature
    span), then verified against the primal normal equations to 1e-8
    relative residual.
    """
    from .model import feature_map  # local import to keep module load light

    x_arr = np.asarray(x, dtype=float)
    y_arr = np.asarray(y, dtype=float)
    if x_arr.ndim != 2 or x_arr.shape[0] != y_arr.size:
        raise ValueError("expected x:(n,d) with matching labels")
    n = x_arr.shape[0]
    if n < 1:
        raise ValueError("need at least one sample")
    if lam < 0:
        raise ValueError(f"regularization must be nonnegative, got {lam}")
    phi = feature_map(init, activation, x_arr)  # (n, D)
    gram = phi @ phi.T
    try:
        alpha = np.linalg.solve(gram + n * lam * np.eye(n), y_arr)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular ridge system (lam = 0 with rank-deficient features)") from exc
    w = phi.T @ alpha
    rhs = phi.T @ y_arr / n
    resid = phi.T @ (phi @ w) / n + lam * w - rhs
    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm > 0 and np.linalg.norm(resid) > 1e-8 * rhs_norm:
        raise ValueError(
            "singular or ill-conditioned ridge system: normal-equation residual "
            f"{np.linalg.norm(resid) / rhs_norm:.3e} exceeds 1e-8"
        )
    m, d = init.M, init.d
    w_out = w[:m]
    w_in = w[m:m + m * d].reshape(m, d)
    w_bias = w[m + m * d:]
    return LinearIterate(w_out, w_in, w_bias, w_out.copy(), w_in.copy(), w_bias.copy())


def equivalence_gap(net_result: NetworkRunResult, kernel_result: KernelRunResult,
                    test_points, weights=None) -> dict:
    """Sup and weighted-RMS distance between the two averaged predictors."""
    if net_result.stream_fingerprint != kernel_result.stream_fingerprint:
        raise ValueError(
            "trainers ran on different streams: "
            f"{net_result.stream_fingerprint} vs {kernel_result.stream_fingerprint}"
        )
    pts = np.asarray(test_points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("need a nonempty (n, d) array of test points")
    g_net = forward(net_result.averaged, net_result.activation, pts)
    g_ker = kernel_result.predict_averaged(pts)
    diff = np.abs(g_net - g_ker)
    if weights is None:
        l2 = float(np.sqrt(np.mean(diff**2)))
    else:
        w_arr = np.asarray(weights, dtype=float)
        if w_arr.shape != (pts.shape[0],) or np.any(w_arr < 0):
            raise ValueError("weights must be nonnegative with one entry per point")
        l2 = float(np.sqrt(np.sum(w_arr * diff**2) / np.sum(w_arr)))
    return {"sup_gap": float(diff.max()), "l2_gap": l2}
