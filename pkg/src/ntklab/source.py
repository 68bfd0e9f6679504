"""Target functions built from Nystrom eigenfunctions of an empirical
spectrum, plus estimation of the smoothness norm ||Sigma^{-r} g||."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .kernel import kernel_matrix
from .spectrum import SpectrumEstimate

__all__ = [
    "EIGEN_FLOOR_REL",
    "TargetFunction",
    "nystrom_eigenfunction",
    "nystrom_eigenfunctions",
    "synthesize_target",
    "closed_form_target",
    "zero_target",
    "source_norm",
    "project_coefficients",
    "source_norm_under",
    "write_norm_table",
]

# Eigenvalues below this fraction of the top one cannot support a stable
# Nystrom extension or a lambda^{-r} weighting; they are treated as
# unresolved.
EIGEN_FLOOR_REL = 1e-10


def _floor(estimate: SpectrumEstimate) -> float:
    top = float(estimate.eigenvalues[0]) if estimate.eigenvalues.size else 0.0
    return EIGEN_FLOOR_REL * top


def nystrom_eigenfunctions(estimate: SpectrumEstimate, indices, x) -> np.ndarray:
    """Evaluate empirical eigenfunctions off-sample.

    phi_i(x) = sqrt(n) / (n * lambda_i) * sum_j k(x, z_j) u_{ji}, which
    interpolates sqrt(n) u_{ji} at the sample points and has unit empirical
    L2 norm there.  Returns an (n_points, len(indices)) array.
    """
    idx = np.asarray(indices, dtype=int)
    floor = _floor(estimate)
    lams = estimate.eigenvalues[idx]
    if np.any(lams <= floor):
        bad = idx[lams <= floor]
        raise ValueError(
            f"eigenfunction(s) {bad.tolist()} sit below the resolvability floor "
            f"({floor:.3e}); they cannot be extended off-sample"
        )
    x_arr = np.asarray(x, dtype=float)
    single = x_arr.ndim == 1
    if single:
        x_arr = x_arr[None, :]
    cross = kernel_matrix(estimate.kernel, x_arr, estimate.sample_points)  # (p, n)
    u = estimate.eigenvectors[:, idx]  # (n, m)
    vals = (cross @ u) / (np.sqrt(estimate.n) * lams)
    return vals[0] if single else vals


def nystrom_eigenfunction(estimate: SpectrumEstimate, i: int, x) -> float:
    """Single eigenfunction value phi_i(x)."""
    out = nystrom_eigenfunctions(estimate, [i], np.asarray(x, dtype=float))
    return float(np.asarray(out).ravel()[0])


@dataclass
class TargetFunction:
    """A regression target g, either synthetic-analytic (``closed_form``)
    or a finite combination of Nystrom eigenfunctions of ``basis``."""

    basis: Optional[SpectrumEstimate]
    coefficients: dict[int, float]
    ident: str
    closed_form: Optional[Callable[[np.ndarray], np.ndarray]] = None
    _idx: np.ndarray = field(init=False, repr=False)
    _wts: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        items = sorted(self.coefficients.items())
        self._idx = np.array([i for i, _ in items], dtype=int)
        self._wts = np.array([w for _, w in items], dtype=float)

    def evaluate(self, x) -> np.ndarray:
        x_arr = np.asarray(x, dtype=float)
        single = x_arr.ndim == 1
        if single:
            x_arr = x_arr[None, :]
        if self.closed_form is not None:
            vals = np.asarray(self.closed_form(x_arr), dtype=float)
        elif self._idx.size == 0:
            vals = np.zeros(x_arr.shape[0])
        else:
            phis = nystrom_eigenfunctions(self.basis, self._idx, x_arr)
            vals = phis @ self._wts
        return float(vals[0]) if single else vals

    def l2_norm(self) -> float:
        """sqrt(sum a_i^2); exact for eigenfunction combinations up to
        Nystrom error."""
        return float(np.sqrt(np.sum(self._wts**2)))


def synthesize_target(estimate: SpectrumEstimate, indices, weights) -> TargetFunction:
    """g = sum_m weights[m] * phi_{indices[m]} over Nystrom eigenfunctions."""
    idx = list(indices)
    wts = list(weights)
    if len(idx) != len(wts):
        raise ValueError(f"{len(idx)} indices but {len(wts)} weights")
    if len(set(idx)) != len(idx):
        raise ValueError("duplicate eigenfunction indices")
    floor = _floor(estimate)
    for i in idx:
        if not 0 <= i < estimate.eigenvalues.size:
            raise ValueError(f"eigenfunction index {i} out of range")
        if estimate.eigenvalues[i] <= floor:
            raise ValueError(
                f"eigenvalue {estimate.eigenvalues[i]:.3e} at index {i} is below the "
                f"resolvability floor {floor:.3e}"
            )
    digest = hashlib.sha256()
    digest.update(estimate.kernel.label.encode())
    digest.update(np.ascontiguousarray(estimate.sample_points).tobytes())
    for i, w in sorted(zip(idx, wts)):
        digest.update(f"{i}:{w:.17g};".encode())
    return TargetFunction(
        basis=estimate,
        coefficients=dict(zip(idx, wts)),
        ident=f"nystrom:{digest.hexdigest()[:16]}",
    )


def closed_form_target(fn: Callable[[np.ndarray], np.ndarray], ident: str) -> TargetFunction:
    """Purely analytic target; evaluation bypasses any spectral basis."""
    return TargetFunction(basis=None, coefficients={}, ident=f"closed:{ident}", closed_form=fn)


def zero_target() -> TargetFunction:
    return closed_form_target(lambda x: np.zeros(x.shape[0]), "zero")


def source_norm(target: TargetFunction, spectrum_eigenvalues, r: float) -> float:
    """sqrt(sum_i a_i^2 lambda_i^{-2r}) with the target's own coefficients
    and eigenvalues taken from the supplied (descending) spectrum."""
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"smoothness exponent r must lie in [0, 1], got {r}")
    lams = np.asarray(spectrum_eigenvalues, dtype=float)
    if target._idx.size == 0:
        return 0.0
    if target._idx.max() >= lams.size:
        raise ValueError("target coefficient index outside the supplied spectrum")
    lam_sel = lams[target._idx]
    if np.any(lam_sel <= 0.0):
        raise ValueError("zero eigenvalue under a nonzero coefficient")
    return float(np.sqrt(np.sum(target._wts**2 * lam_sel ** (-2.0 * r))))


def project_coefficients(target: TargetFunction, estimate: SpectrumEstimate):
    """Coefficients of the target in another operator's Nystrom basis.

    Evaluates the target at the estimate's sample points and projects onto
    its eigenvectors (empirical L2 inner products): a_i = u_i . g / sqrt(n).
    Only eigendirections above the resolvability floor are returned.

    Returns (indices, coefficients, dropped_mass) where dropped_mass is the
    squared norm falling below the floor.
    """
    vals = target.evaluate(estimate.sample_points)
    coeffs = (estimate.eigenvectors.T @ vals) / np.sqrt(estimate.n)
    floor = _floor(estimate)
    keep = estimate.eigenvalues > floor
    dropped = float(np.sum(coeffs[~keep] ** 2))
    return np.flatnonzero(keep), coeffs[keep], dropped


def source_norm_under(target: TargetFunction, estimate: SpectrumEstimate, r: float) -> float:
    """Smoothness norm of the target measured under a different operator.

    This is the cross-operator estimator: project the target's sample
    values onto the operator's eigenbasis, then weight by lambda^{-2r}.
    """
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"smoothness exponent r must lie in [0, 1], got {r}")
    idx, coeffs, _ = project_coefficients(target, estimate)
    lams = estimate.eigenvalues[idx]
    return float(np.sqrt(np.sum(coeffs**2 * lams ** (-2.0 * r))))


def write_norm_table(rows, path) -> None:
    """CSV export of (r, operator_name, norm) rows."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("r,operator_name,norm\n")
        for r, name, norm in rows:
            fh.write(f"{r:.17g},{name},{norm:.17g}\n")
