"""Principal component bases over microstructure images."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError


@dataclass(frozen=True)
class PcaBasis:
    scope: str  # 'local' (macro-cell images) or 'global' (whole images)
    mean: np.ndarray
    components: np.ndarray  # (n_components, n_pixels), orthonormal rows
    explained_variance: np.ndarray
    n_fit: int


def fit_pca(X, n_components, scope):
    """Fit an orthonormal basis of the leading principal directions.

    X holds one flattened image per row. Components carry a deterministic
    sign (largest-magnitude entry positive) so refits on identical data are
    reproducible bit for bit.
    """
    X = np.asarray(X, dtype=float)
    n_obs, n_pix = X.shape
    if n_components > min(n_obs, n_pix):
        raise ConfigError(
            f"cannot extract {n_components} components from {n_obs}x{n_pix} data")
    mean = X.mean(axis=0)
    _, svals, Vt = np.linalg.svd(X - mean, full_matrices=False)
    comps = Vt[:n_components]
    flip = np.sign(comps[np.arange(n_components),
                         np.argmax(np.abs(comps), axis=1)])
    comps = comps * flip[:, None]
    expl = svals[:n_components] ** 2 / max(n_obs - 1, 1)
    return PcaBasis(scope, mean, comps, expl, n_obs)


def project(basis, flat):
    """Scores of one flattened image: centered inner products with the basis."""
    flat = np.asarray(flat, dtype=float).ravel()
    if flat.shape[0] != basis.mean.shape[0]:
        raise ConfigError("image size does not match the fitted basis")
    return basis.components @ (flat - basis.mean)
