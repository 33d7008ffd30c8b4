"""Feature catalog, per-cell evaluation, and design matrix assembly.

A registry is an ordered list of FeatureSpec rows with stable string ids.
Cell-scope features see one macro-cell sub-image at a time; global-scope
features see the whole microstructure and are replicated into every cell row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, NumericalError
from . import functions as ff
from .pca import project

REGISTRY_FORMAT_VERSION = 1

_CELL_FAMILIES = {
    "constant", "sca", "maxwell_garnett", "dem", "lineal_path",
    "lineal_path_fit", "blob_count", "pixel_cross", "max_extent",
    "generalized_mean", "convex_area", "connected_path", "specific_surface",
    "gauss_filter", "std", "log_std", "ising", "two_point_corr", "dist_stat",
    "pca_local",
}
_GLOBAL_FAMILIES = {
    "max_extent_global", "sca_global", "maxwell_garnett_global", "dem_global",
    "pca_global",
}


@dataclass(frozen=True)
class FeatureSpec:
    id: str
    family: str
    params: dict = field(default_factory=dict)

    @property
    def scope(self):
        return "global" if self.family in _GLOBAL_FAMILIES else "cell"

    def __post_init__(self):
        if self.family not in _CELL_FAMILIES | _GLOBAL_FAMILIES:
            raise ConfigError(f"unknown feature family {self.family!r}")


def validate_registry(registry):
    ids = [f.id for f in registry]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate feature ids in registry")
    return list(registry)


class FeatureContext:
    """Cached per-sample quantities shared by all feature evaluations."""

    def __init__(self, lam_f, partition, phases, local_pca=None, global_pca=None):
        self.phases = phases
        self.partition = partition
        self.local_pca = local_pca
        self.global_pca = global_pca
        lam_f = np.asarray(lam_f, dtype=float)
        mid = 0.5 * (phases.lam_lo + phases.lam_hi)
        hi_vec = lam_f > mid  # contrast one: everything classifies as lo
        self.full_values = partition.full_image(lam_f)
        self.full_hi = partition.full_image(hi_vec)
        self.cells = [partition.cell_image(lam_f, k)
                      for k in range(partition.n_cells)]
        self.cell_hi = [partition.cell_image(hi_vec, k)
                        for k in range(partition.n_cells)]

    def mask(self, k, phase):
        hi = self.cell_hi[k]
        return hi if phase == "hi" else ~hi

    def global_mask(self, phase):
        return self.full_hi if phase == "hi" else ~self.full_hi


def _effective_medium(fam, params, phases, v_hi):
    lo, hi = phases.lam_lo, phases.lam_hi
    if fam == "sca":
        return ff.self_consistent_approximation(v_hi, lo, hi)
    inc = params["inclusion"]
    v_inc = v_hi if inc == "hi" else 1.0 - v_hi
    lam_inc = hi if inc == "hi" else lo
    lam_mat = lo if inc == "hi" else hi
    if fam == "maxwell_garnett":
        return ff.maxwell_garnett(lam_mat, v_inc)
    if fam == "dem":
        return ff.differential_effective_medium(lam_mat, lam_inc, v_inc)
    raise ConfigError(f"unknown effective-medium family {fam!r}")


def evaluate_feature(spec, ctx, k):
    """Value of one feature for macro-cell k (global features ignore k)."""
    fam, p = spec.family, spec.params
    if fam == "constant":
        return 1.0
    if fam in ("sca", "maxwell_garnett", "dem"):
        return _effective_medium(fam, p, ctx.phases,
                                 float(np.mean(ctx.cell_hi[k])))
    if fam == "lineal_path":
        return ff.lineal_path(ctx.mask(k, p["phase"]), p["d"])
    if fam == "lineal_path_fit":
        a, b = ff.lineal_path_fit(ctx.mask(k, p["phase"]), p["distances"])
        return a if p["param"] == "a" else b
    if fam == "blob_count":
        return ff.blob_count(ctx.mask(k, p["phase"]))
    if fam == "pixel_cross":
        return ff.pixel_cross_max(ctx.mask(k, p["phase"]), p["axis"])
    if fam == "max_extent":
        return ff.max_extent(ctx.mask(k, p["phase"]), p["axis"])
    if fam == "generalized_mean":
        return ff.generalized_mean(ctx.cells[k], p["q"])
    if fam == "convex_area":
        return ff.convex_area_stats(ctx.mask(k, p["phase"]), p["stat"])
    if fam == "connected_path":
        return ff.connected_path_invdist(ctx.mask(k, p["phase"]), p["axis"])
    if fam == "specific_surface":
        return ff.specific_surface(ctx.mask(k, p["phase"]))
    if fam == "gauss_filter":
        return ff.gauss_filter_mean(ctx.cells[k], p["a"])
    if fam == "std":
        return ff.population_std(ctx.cells[k])
    if fam == "log_std":
        return ff.log_std(ctx.cells[k])
    if fam == "ising":
        return ff.ising_energy(ctx.cell_hi[k])
    if fam == "two_point_corr":
        return ff.two_point_corr(ctx.mask(k, p["phase"]), p["d"])
    if fam == "dist_stat":
        return ff.distance_stat(ctx.mask(k, p["phase"]), p["metric"], p["stat"])
    if fam == "pca_local":
        if ctx.local_pca is None:
            raise ConfigError("registry uses local PCA but no basis was fitted")
        return float(project(ctx.local_pca, ctx.cells[k])[p["component"] - 1])
    if fam == "max_extent_global":
        return ff.max_extent(ctx.global_mask(p["phase"]), p["axis"])
    if fam == "sca_global":
        return _effective_medium("sca", {}, ctx.phases, float(np.mean(ctx.full_hi)))
    if fam == "maxwell_garnett_global":
        return _effective_medium("maxwell_garnett", p, ctx.phases,
                                 float(np.mean(ctx.full_hi)))
    if fam == "dem_global":
        return _effective_medium("dem", p, ctx.phases, float(np.mean(ctx.full_hi)))
    if fam == "pca_global":
        if ctx.global_pca is None:
            raise ConfigError("registry uses global PCA but no basis was fitted")
        return float(project(ctx.global_pca, ctx.full_values)[p["component"] - 1])
    raise ConfigError(f"unknown feature family {fam!r}")


def build_design_matrix(lam_f, partition, registry, phases,
                        local_pca=None, global_pca=None):
    """Feature matrix Phi with one row per macro-cell, one column per feature."""
    ctx = FeatureContext(lam_f, partition, phases, local_pca, global_pca)
    n_cells = partition.n_cells
    Phi = np.empty((n_cells, len(registry)))
    for j, spec in enumerate(registry):
        if spec.scope == "global":
            Phi[:, j] = evaluate_feature(spec, ctx, 0)
        else:
            for k in range(n_cells):
                Phi[k, j] = evaluate_feature(spec, ctx, k)
    bad = ~np.isfinite(Phi)
    if bad.any():
        j = int(np.argwhere(bad.any(axis=0)).ravel()[0])
        raise NumericalError(f"feature {registry[j].id!r} produced a non-finite value")
    return Phi


# ---------------------------------------------------------------------------
# standardization

@dataclass(frozen=True)
class Standardizer:
    """Affine column map (phi - mean) / scale fitted on training design rows.

    Constant-family columns and degenerate (zero-variance) columns pass
    through untouched.
    """

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, design_rows, registry):
        X = np.asarray(design_rows, dtype=float)
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        for j, spec in enumerate(registry):
            if spec.family == "constant" or scale[j] == 0.0:
                mean[j], scale[j] = 0.0, 1.0
        return cls(mean, scale)

    @classmethod
    def identity(cls, n_features):
        return cls(np.zeros(n_features), np.ones(n_features))

    def apply(self, Phi):
        return (Phi - self.mean) / self.scale


# ---------------------------------------------------------------------------
# catalogs

def default_registry():
    """The full 100-feature catalog for 2D microstructures."""
    rows = []

    def add(slug, family, **params):
        rows.append(FeatureSpec(f"{len(rows) + 1:03d}_{slug}", family, params))

    add("constant", "constant")
    add("sca", "sca")
    for inc in ("lo", "hi"):
        add(f"mg_{inc}", "maxwell_garnett", inclusion=inc)
    for inc in ("lo", "hi"):
        add(f"dem_{inc}", "dem", inclusion=inc)
    for d in (4, 7, 10):
        for ph in ("hi", "lo"):
            add(f"linpath_d{d}_{ph}", "lineal_path", d=d, phase=ph)
    for ph in ("lo", "hi"):
        for prm in ("a", "b"):
            add(f"linfit_{prm}_{ph}", "lineal_path_fit",
                distances=(2, 4, 6, 8), phase=ph, param=prm)
    for ph in ("hi", "lo"):
        add(f"nblobs_{ph}", "blob_count", phase=ph)
    for ph in ("lo", "hi"):
        for ax in ("y", "x"):
            add(f"cross_{ax}_{ph}", "pixel_cross", axis=ax, phase=ph)
    for ph in ("hi", "lo"):
        for ax in ("y", "x"):
            add(f"extent_{ax}_{ph}", "max_extent", axis=ax, phase=ph)
    for q in (-1.0, -0.5, 0.0, 0.5, 1.0):
        add(f"genmean_{q:g}", "generalized_mean", q=q)
    for stat in ("max", "var", "mean"):
        for ph in ("hi", "lo"):
            add(f"convex_{stat}_{ph}", "convex_area", phase=ph, stat=stat)
    for ph in ("lo", "hi"):
        for ax in ("x", "y"):
            add(f"conpath_{ax}_{ph}", "connected_path", axis=ax, phase=ph)
    for ph in ("lo", "hi"):
        add(f"specsurf_{ph}", "specific_surface", phase=ph)
    for a in (1, 2, 4, 8, 16):
        add(f"gauss_{a}", "gauss_filter", a=a)
    add("std", "std")
    add("logstd", "log_std")
    add("ising", "ising")
    for d in (3, 5, 7, 9, 11, 13):
        for ph in ("hi", "lo"):
            add(f"s2_d{d}_{ph}", "two_point_corr", d=d, phase=ph)
    for ph in ("hi", "lo"):
        for metric in ("euclidean", "cityblock", "chessboard"):
            for stat in ("mean", "var", "max"):
                add(f"dist_{metric}_{stat}_{ph}", "dist_stat",
                    phase=ph, metric=metric, stat=stat)
    for c in range(1, 8):
        add(f"pca_local_{c}", "pca_local", component=c)
    for ph in ("hi", "lo"):
        for ax in ("x", "y"):
            add(f"gextent_{ax}_{ph}", "max_extent_global", axis=ax, phase=ph)
    add("gsca", "sca_global")
    for inc in ("lo", "hi"):
        add(f"gmg_{inc}", "maxwell_garnett_global", inclusion=inc)
    for inc in ("lo", "hi"):
        add(f"gdem_{inc}", "dem_global", inclusion=inc)
    for c in range(1, 4):
        add(f"pca_global_{c}", "pca_global", component=c)
    return validate_registry(rows)


def basic_registry():
    """A compact, scale-tame catalog without PCA; works in 1D and 2D."""
    rows = []

    def add(slug, family, **params):
        rows.append(FeatureSpec(f"b{len(rows) + 1:02d}_{slug}", family, params))

    for q in (-1.0, -0.5, 0.0, 0.5, 1.0):
        add(f"genmean_{q:g}", "generalized_mean", q=q)
    add("sca", "sca")
    for inc in ("lo", "hi"):
        add(f"mg_{inc}", "maxwell_garnett", inclusion=inc)
    for inc in ("lo", "hi"):
        add(f"dem_{inc}", "dem", inclusion=inc)
    for d in (2, 4):
        for ph in ("hi", "lo"):
            add(f"linpath_d{d}_{ph}", "lineal_path", d=d, phase=ph)
    for d in (2, 4):
        for ph in ("hi", "lo"):
            add(f"s2_d{d}_{ph}", "two_point_corr", d=d, phase=ph)
    for ph in ("lo", "hi"):
        add(f"specsurf_{ph}", "specific_surface", phase=ph)
    add("std", "std")
    add("logstd", "log_std")
    add("ising", "ising")
    for ph in ("hi", "lo"):
        add(f"dist_mean_{ph}", "dist_stat", phase=ph,
            metric="euclidean", stat="mean")
    add("gauss_2", "gauss_filter", a=2)
    add("constant", "constant")
    return validate_registry(rows)


NAMED_REGISTRIES = {"default": default_registry, "basic": basic_registry}


def registry_uses_pca(registry):
    fams = {f.family for f in registry}
    return "pca_local" in fams, "pca_global" in fams


# ---------------------------------------------------------------------------
# serialization

def registry_to_obj(registry, standardizer=None):
    obj = {
        "format_version": REGISTRY_FORMAT_VERSION,
        "features": [
            {"id": f.id, "family": f.family,
             "params": {k: (list(v) if isinstance(v, tuple) else v)
                        for k, v in f.params.items()}}
            for f in registry
        ],
        "standardization": None,
    }
    if standardizer is not None:
        obj["standardization"] = {"mean": standardizer.mean.tolist(),
                                  "scale": standardizer.scale.tolist()}
    return obj


def registry_from_obj(obj):
    if obj.get("format_version") != REGISTRY_FORMAT_VERSION:
        raise ConfigError("unsupported registry format version")
    rows = []
    for rec in obj["features"]:
        params = {k: (tuple(v) if isinstance(v, list) else v)
                  for k, v in rec["params"].items()}
        rows.append(FeatureSpec(rec["id"], rec["family"], params))
    std = None
    if obj.get("standardization"):
        std = Standardizer(np.asarray(obj["standardization"]["mean"]),
                           np.asarray(obj["standardization"]["scale"]))
    return validate_registry(rows), std
