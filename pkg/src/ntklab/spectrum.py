"""Spectra of the kernel integral operator on the uniform sphere.

Empirical route: eigenvalues of Gram/n on a sampled point cloud.
Analytic route: 1-D weighted integrals of the activation against Legendre
polynomials give per-degree eigenvalues, each carried with the dimension
of its spherical-harmonic eigenspace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .activation import ActivationSpec, act_grad, act_value
from .kernel import KernelSpec, gram_matrix
from .numerics import (
    SeededRng,
    gauss_jacobi_rule,
    gegenbauer_sequence,
    half_interval_rule,
    sample_sphere,
    surface_ratio,
    sym_eigen,
)

__all__ = [
    "SpectrumEstimate",
    "AnalyticSpectrum",
    "multiplicity",
    "empirical_spectrum",
    "funk_hecke_coefficients",
    "analytic_ntk_spectrum",
    "expand_with_multiplicity",
    "fit_decay",
    "compare_spectra",
    "write_empirical_csv",
    "write_analytic_csv",
]

UNDERFLOW_FLOOR = 1e-300


def multiplicity(d: int, k: int) -> int:
    """Dimension N(d, k) of the degree-k spherical harmonics on S^{d-1}."""
    if d < 2:
        raise ValueError(f"dimension must be >= 2, got d={d}")
    if k < 0:
        raise ValueError(f"degree must be nonnegative, got k={k}")
    if k == 0:
        return 1
    num = (2 * k + d - 2) * math.comb(k + d - 3, d - 2)
    assert num % k == 0
    return num // k


@dataclass
class SpectrumEstimate:
    """Eigensystem of Gram/n on a sampled cloud of unit vectors.

    ``eigenvalues`` are descending and clipped at zero; ``eigenvectors``
    holds the matching orthonormal columns.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sample_points: np.ndarray
    kernel: KernelSpec
    n: int

    @property
    def d(self) -> int:
        return self.sample_points.shape[1]


def empirical_spectrum(kernel: KernelSpec, n: int, d: int, rng: SeededRng) -> SpectrumEstimate:
    """Sample n uniform sphere points, eigendecompose Gram/n."""
    if n < 2:
        raise ValueError(f"need n >= 2 samples, got {n}")
    points = sample_sphere(rng, d, n)
    gram = gram_matrix(kernel, points)
    decomp = sym_eigen(gram / n)
    vals = np.clip(decomp.eigenvalues, 0.0, None)
    return SpectrumEstimate(
        eigenvalues=vals,
        eigenvectors=decomp.eigenvectors,
        sample_points=points,
        kernel=kernel,
        n=n,
    )


def funk_hecke_coefficients(activation: ActivationSpec, d: int, k_max: int, quad_nodes: int):
    """1-D projections of sigma and sigma' onto Legendre polynomials.

    mu1[k] and mu2[k] are omega_{d-2}/omega_{d-1} times the integrals of
    sigma(t) P_k(t) and sigma'(t) P_k(t) against (1-t^2)^((d-3)/2) dt.

    For ReLU the integrals run over [0, 1] only (sigma vanishes on the
    left half) and use parity-split half-interval rules, so the kink at 0
    never sits inside a quadrature panel and every value is exact to
    rounding.  Smooth activations use the full-interval rule.
    """
    if quad_nodes < k_max + 1:
        raise ValueError(
            f"quad_nodes={quad_nodes} cannot resolve degrees up to k_max={k_max}"
        )
    ratio = surface_ratio(d)
    if activation.kind == "relu":
        mu1 = np.empty(k_max + 1)
        mu2 = np.empty(k_max + 1)
        for parity in ("even", "odd"):
            nodes, weights = half_interval_rule(quad_nodes, d, parity)
            p = gegenbauer_sequence(k_max, d, nodes)
            # relu(t) = t and relu'(t) = 1 on (0, 1]:
            # t*P_k is odd when k is even; P_k has the parity of k.
            if parity == "odd":
                mu1_rows = np.arange(0, k_max + 1, 2)
                mu2_rows = np.arange(1, k_max + 1, 2)
            else:
                mu1_rows = np.arange(1, k_max + 1, 2)
                mu2_rows = np.arange(0, k_max + 1, 2)
            mu1[mu1_rows] = ratio * (p[mu1_rows] * nodes) @ weights
            mu2[mu2_rows] = ratio * p[mu2_rows] @ weights
        return mu1, mu2
    rule = gauss_jacobi_rule(quad_nodes, d)
    p = gegenbauer_sequence(k_max, d, rule.nodes)
    sig = act_value(activation, rule.nodes)
    sig_p = act_grad(activation, rule.nodes)
    mu1 = ratio * p @ (rule.weights * sig)
    mu2 = ratio * p @ (rule.weights * sig_p)
    return mu1, mu2


@dataclass
class AnalyticSpectrum:
    """Per-degree eigenvalues (k, lambda_k, N(d,k)) of the integral operator."""

    degrees: np.ndarray
    values: np.ndarray
    multiplicities: np.ndarray
    d: int
    k_max: int
    component: str
    activation: ActivationSpec
    gamma: float
    R: float
    truncated_degrees: int = 0

    def per_degree(self) -> list[tuple[int, float, int]]:
        return [
            (int(k), float(v), int(m))
            for k, v, m in zip(self.degrees, self.values, self.multiplicities)
        ]


def analytic_ntk_spectrum(activation: ActivationSpec, d: int, gamma: float, R: float,
                          k_max: int = 60, quad_nodes: int | None = None,
                          component: str = "full") -> AnalyticSpectrum:
    """Per-degree tangent-kernel eigenvalues via 1-D quadrature.

    The output-layer part of degree k is mu1[k]^2.  The input-layer part
    combines the sigma' projections through the degree recurrence (the
    linear x.x' factor shifts degrees by one) plus the gamma^2 bias term;
    the R^2 factor multiplies the whole input-layer part, matching the
    feature-map convention.  Degree 0 uses t*P_0 = P_1.
    """
    if k_max < 0:
        raise ValueError(f"k_max must be nonnegative, got {k_max}")
    if quad_nodes is None:
        quad_nodes = max(2 * (k_max + 2), 64)
    if quad_nodes < k_max + 2:
        raise ValueError(
            f"quad_nodes={quad_nodes} too small for k_max={k_max}; need at least k_max + 2"
        )
    mu1, mu2 = funk_hecke_coefficients(activation, d, k_max + 1, quad_nodes)
    lam1 = mu1**2
    lam2 = mu2**2
    out_part = lam1[: k_max + 1]
    in_part = np.empty(k_max + 1)
    in_part[0] = (R**2) * (gamma**2 * lam2[0] + lam2[1])
    for k in range(1, k_max + 1):
        den = 2 * k + d - 2
        in_part[k] = (R**2) * (
            gamma**2 * lam2[k] + (k / den) * lam2[k - 1] + ((k + d - 2) / den) * lam2[k + 1]
        )
    if component == "output":
        values = out_part
    elif component == "input":
        values = in_part
    elif component == "full":
        values = out_part + in_part
    else:
        raise ValueError(f"unknown component {component!r}")
    keep = values >= UNDERFLOW_FLOOR
    # Degrees at or below the double-precision floor cannot be represented
    # meaningfully; truncate them (true zeros, e.g. gamma-free odd relu
    # degrees, are dropped for the same reason).
    degrees = np.flatnonzero(keep)
    return AnalyticSpectrum(
        degrees=degrees,
        values=values[keep],
        multiplicities=np.array([multiplicity(d, int(k)) for k in degrees], dtype=int),
        d=d,
        k_max=k_max,
        component=component,
        activation=activation,
        gamma=gamma,
        R=R,
        truncated_degrees=int(k_max + 1 - keep.sum()),
    )


def expand_with_multiplicity(spec: AnalyticSpectrum, max_length: int | None = None) -> np.ndarray:
    """Descending eigenvalue list with each degree repeated N(d, k) times.

    ``max_length`` truncates the output to the largest ``max_length``
    eigenvalues without materializing the full expansion (multiplicities
    grow like k^{d-2}, which overflows memory for large d otherwise).
    """
    values = spec.values
    mults = spec.multiplicities
    if max_length is not None:
        order = np.argsort(values)[::-1]
        cum = np.cumsum(mults[order])
        cut = int(np.searchsorted(cum, max_length)) + 1
        keep = np.sort(order[:cut])
        values, mults = values[keep], mults[keep]
    expanded = np.repeat(values, mults)
    out = np.sort(expanded)[::-1]
    if max_length is not None:
        out = out[:max_length]
    return out.copy()


def fit_decay(eigenvalues, index_range: tuple[int, int]) -> dict:
    """Least-squares slope of log(lambda_i) against log(i) over 1-based ranks.

    Returns {'beta_hat': -slope, 'r2': fit quality}.
    """
    lo, hi = index_range
    if not (hi > lo >= 1):
        raise ValueError(f"need hi > lo >= 1, got [{lo}, {hi}]")
    vals = np.asarray(eigenvalues, dtype=float)
    if hi > vals.size:
        raise ValueError(f"range end {hi} exceeds spectrum length {vals.size}")
    window = vals[lo - 1:hi]
    if np.any(window <= 0):
        raise ValueError("eigenvalues in the fit range must be strictly positive")
    x = np.log(np.arange(lo, hi + 1, dtype=float))
    y = np.log(window)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return {"beta_hat": float(-slope), "r2": r2}


def compare_spectra(analytic: AnalyticSpectrum, empirical: SpectrumEstimate,
                    top_k: int) -> np.ndarray:
    """Rank-matched relative errors |lambda_emp - lambda_ana| / lambda_ana."""
    expanded = expand_with_multiplicity(analytic)
    if top_k > min(expanded.size, empirical.eigenvalues.size):
        raise ValueError(
            f"top_k={top_k} exceeds available eigenvalues "
            f"({expanded.size} analytic, {empirical.eigenvalues.size} empirical)"
        )
    ana = expanded[:top_k]
    emp = empirical.eigenvalues[:top_k]
    return np.abs(emp - ana) / ana


def write_empirical_csv(estimate: SpectrumEstimate, path) -> None:
    """(index, eigenvalue) rows, 1-based rank, descending."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("index,eigenvalue\n")
        for i, v in enumerate(estimate.eigenvalues, start=1):
            fh.write(f"{i},{v:.17g}\n")


def write_analytic_csv(spec: AnalyticSpectrum, path) -> None:
    """(degree, eigenvalue, multiplicity, cumulative_index) rows in degree order."""
    cumulative = np.cumsum(spec.multiplicities)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("degree,eigenvalue,multiplicity,cumulative_index\n")
        for k, v, m, ci in zip(spec.degrees, spec.values, spec.multiplicities, cumulative):
            fh.write(f"{k},{v:.17g},{m},{ci}\n")
