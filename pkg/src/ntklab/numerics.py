"""Deterministic RNG streams, sphere sampling, Gegenbauer polynomials,
Gauss-Jacobi quadrature and a dense symmetric eigensolver.

Everything downstream (kernels, spectra, trainers, experiments) builds on
the primitives in this module, so all of them are pure functions of their
inputs and fully reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SeededRng",
    "QuadratureRule",
    "EigenDecomposition",
    "sample_sphere",
    "gegenbauer_eval",
    "gegenbauer_sequence",
    "gauss_jacobi_rule",
    "jacobi_rule",
    "half_interval_rule",
    "surface_ratio",
    "sym_eigen",
]


@dataclass(frozen=True)
class SeededRng:
    """A (seed, stream_id) pair naming one reproducible random stream.

    Identical pairs yield bitwise-identical draw sequences across runs and
    platforms (PCG64 seeded through ``numpy.random.SeedSequence``, both of
    which are specified algorithms).  Distinct stream ids give statistically
    independent streams, so concurrent jobs each derive their own id and
    never share generator state.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if not (0 <= int(self.stream_id) < 2**64):
            raise ValueError(f"stream_id must be a 64-bit unsigned integer, got {self.stream_id}")

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(ss))

    def substream(self, stream_id: int) -> "SeededRng":
        """Independent stream with the same seed and a different id."""
        return SeededRng(self.seed, stream_id)


def sample_sphere(rng: SeededRng, d: int, n: int) -> np.ndarray:
    """Draw ``n`` points uniformly on the unit sphere in R^d.

    Gaussian-normalize construction, which is rotation invariant.  Returns
    an (n, d) array whose rows have unit Euclidean norm.
    """
    if d < 2:
        raise ValueError(f"sphere sampling requires d >= 2, got d={d}")
    if n < 1:
        raise ValueError(f"need at least one sample, got n={n}")
    g = rng.generator().standard_normal((n, d))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    # Zero norm has probability zero; guard anyway so we never emit NaN.
    bad = (norms == 0.0).ravel()
    if bad.any():
        g[bad] = 1.0 / math.sqrt(d)
        norms = np.linalg.norm(g, axis=1, keepdims=True)
    return g / norms


def gegenbauer_eval(k: int, d: int, t):
    """Legendre polynomial of degree ``k`` and dimension ``d`` at ``t``.

    Normalized so P_k(1) = 1.  Uses the stable three-term recurrence
    P_{k+1}(t) = ((2k+d-2) t P_k(t) - k P_{k-1}(t)) / (k+d-2) with
    P_0 = 1, P_1(t) = t.  ``t`` may be a scalar or an array in [-1, 1].
    """
    if k < 0:
        raise ValueError(f"degree must be nonnegative, got k={k}")
    if d < 2:
        raise ValueError(f"dimension must be >= 2, got d={d}")
    t_arr = np.asarray(t, dtype=float)
    if np.any(np.abs(t_arr) > 1.0 + 1e-12):
        raise ValueError("argument outside [-1, 1]")
    prev = np.ones_like(t_arr)
    if k == 0:
        return prev if t_arr.ndim else float(prev)
    cur = t_arr.copy()
    for j in range(1, k):
        prev, cur = cur, ((2 * j + d - 2) * t_arr * cur - j * prev) / (j + d - 2)
    return cur if t_arr.ndim else float(cur)


def gegenbauer_sequence(k_max: int, d: int, t: np.ndarray) -> np.ndarray:
    """All degrees at once: rows P_0(t) .. P_{k_max}(t), shape (k_max+1, len(t))."""
    if k_max < 0:
        raise ValueError(f"k_max must be nonnegative, got {k_max}")
    t = np.asarray(t, dtype=float)
    out = np.empty((k_max + 1, t.size), dtype=float)
    out[0] = 1.0
    if k_max >= 1:
        out[1] = t
    for j in range(1, k_max):
        out[j + 1] = ((2 * j + d - 2) * t * out[j] - j * out[j - 1]) / (j + d - 2)
    return out


def surface_ratio(d: int) -> float:
    """Ratio of sphere surface areas omega_{d-2} / omega_{d-1}.

    omega_{m} = 2 pi^{(m+1)/2} / Gamma((m+1)/2) is the area of S^m; the
    ratio is evaluated through log-Gamma so large ``d`` stays finite.
    """
    if d < 2:
        raise ValueError(f"dimension must be >= 2, got d={d}")
    return math.exp(math.lgamma(d / 2.0) - math.lgamma((d - 1) / 2.0)) / math.sqrt(math.pi)


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes/weights integrating against (1-t^2)^((d-3)/2) dt on (-1, 1).

    Exact for polynomials up to degree 2*node_count - 1; the weights sum
    to omega_{d-1}/omega_{d-2}.
    """

    nodes: np.ndarray
    weights: np.ndarray
    d: int
    node_count: int

    def integrate(self, values: np.ndarray) -> float:
        """Integral of a function given its values at the nodes."""
        return float(np.dot(self.weights, values))


def _jacobi_recurrence(n: int, alpha: float, beta: float):
    """Monic three-term recurrence coefficients for the Jacobi weight
    (1-x)^alpha (1+x)^beta on [-1, 1] (Gautschi's formulas).

    Returns (a, b, mu0): diagonal a_k, off-diagonal b_k (b_0 unused) and
    the total mass mu0 of the weight.
    """
    if alpha <= -1 or beta <= -1:
        raise ValueError("Jacobi weight exponents must exceed -1")
    a = np.zeros(n)
    b = np.zeros(n)
    apb = alpha + beta
    a[0] = (beta - alpha) / (apb + 2.0)
    for k in range(1, n):
        den = (2.0 * k + apb) * (2.0 * k + apb + 2.0)
        a[k] = (beta**2 - alpha**2) / den
        if k == 1:
            b[k] = 4.0 * (alpha + 1.0) * (beta + 1.0) / ((apb + 2.0) ** 2 * (apb + 3.0))
        else:
            b[k] = (
                4.0 * k * (k + alpha) * (k + beta) * (k + apb)
                / ((2.0 * k + apb) ** 2 * (2.0 * k + apb + 1.0) * (2.0 * k + apb - 1.0))
            )
    mu0 = math.exp(
        (apb + 1.0) * math.log(2.0)
        + math.lgamma(alpha + 1.0)
        + math.lgamma(beta + 1.0)
        - math.lgamma(apb + 2.0)
    )
    return a, b, mu0


def jacobi_rule(node_count: int, alpha: float, beta: float):
    """Gauss-Jacobi nodes and weights for (1-x)^alpha (1+x)^beta on [-1, 1].

    Golub-Welsch: nodes are eigenvalues of the symmetric tridiagonal Jacobi
    matrix, weights come from the first eigenvector components.
    """
    if node_count < 1:
        raise ValueError(f"node_count must be >= 1, got {node_count}")
    a, b, mu0 = _jacobi_recurrence(node_count, alpha, beta)
    jac = np.diag(a)
    if node_count > 1:
        off = np.sqrt(b[1:])
        jac += np.diag(off, 1) + np.diag(off, -1)
    decomp = sym_eigen(jac)
    order = np.argsort(decomp.eigenvalues)  # ascending nodes
    nodes = decomp.eigenvalues[order]
    weights = mu0 * decomp.eigenvectors[0, order] ** 2
    if alpha == beta:
        # The weight is even, so enforce the exact node/weight symmetry the
        # eigensolver only delivers to rounding.
        nodes = 0.5 * (nodes - nodes[::-1])
        weights = 0.5 * (weights + weights[::-1])
    return nodes, weights


def gauss_jacobi_rule(node_count: int, d: int) -> QuadratureRule:
    """Quadrature for the sphere-sectional weight (1-t^2)^((d-3)/2).

    For d = 2 the weight is the (singular but integrable) Chebyshev weight
    and the analytically known Gauss-Chebyshev rule is used; otherwise a
    Golub-Welsch construction.
    """
    if node_count < 1:
        raise ValueError(f"node_count must be >= 1, got {node_count}")
    if d < 2:
        raise ValueError(f"dimension must be >= 2, got d={d}")
    if d == 2:
        i = np.arange(1, node_count + 1)
        nodes = np.cos((2.0 * i - 1.0) * math.pi / (2.0 * node_count))[::-1].copy()
        weights = np.full(node_count, math.pi / node_count)
    else:
        lam = (d - 3) / 2.0
        try:
            nodes, weights = jacobi_rule(node_count, lam, lam)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - defensive
            raise RuntimeError(f"quadrature construction failed for d={d}") from exc
    return QuadratureRule(nodes=nodes, weights=weights, d=d, node_count=node_count)


def half_interval_rule(node_count: int, d: int, parity: str):
    """Nodes/weights on (0, 1) for integrals of one-parity polynomials
    against (1-t^2)^((d-3)/2) dt.

    ``parity='even'`` is exact for even polynomials, ``parity='odd'`` for
    odd ones (degree up to ~4*node_count).  Substituting t = sqrt(s) turns
    either case into a polynomial integral against a Jacobi weight in s, so
    integrands with a kink at t=0 (ReLU pieces) are handled exactly.
    """
    if d < 2:
        raise ValueError(f"dimension must be >= 2, got d={d}")
    lam = (d - 3) / 2.0
    if parity == "even":
        u, w = jacobi_rule(node_count, lam, -0.5)
        s = 0.5 * (u + 1.0)
        nodes = np.sqrt(s)
        weights = 0.5 * (0.5 ** (lam + 0.5)) * w
    elif parity == "odd":
        u, w = jacobi_rule(node_count, lam, 0.0)
        s = 0.5 * (u + 1.0)
        nodes = np.sqrt(s)
        weights = 0.5 * (0.5 ** (lam + 1.0)) * w / nodes
    else:
        raise ValueError(f"parity must be 'even' or 'odd', got {parity!r}")
    return nodes, weights


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenvalues (descending) and orthonormal eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    dimension: int


def sym_eigen(matrix: np.ndarray) -> EigenDecomposition:
    """Dense symmetric eigendecomposition with eigenvalues sorted descending.

    The input must be symmetric to 1e-10 relative tolerance (Frobenius);
    it is symmetrized exactly before the solve so the result is a
    deterministic function of the input.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = np.linalg.norm(a)
    asym = np.linalg.norm(a - a.T)
    if asym > 1e-10 * max(scale, 1e-300):
        raise ValueError(
            f"matrix is not symmetric: relative asymmetry {asym / max(scale, 1e-300):.3e}"
        )
    sym = 0.5 * (a + a.T)
    try:
        vals, vecs = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"symmetric eigensolve did not converge (n={a.shape[0]})") from exc
    order = np.argsort(vals)[::-1]
    return EigenDecomposition(
        eigenvalues=vals[order], eigenvectors=vecs[:, order], dimension=a.shape[0]
    )
