"""Disk formats, dataset generation, run configuration.

Arrays are stored as raw little-endian float64 with shapes recorded in a JSON
manifest next to them; manifests use sorted keys, so identical runs produce
byte-identical files. All writes go through a temp-file-then-rename path.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field, fields as dc_fields, replace

import numpy as np
import scipy.sparse

from .errors import ConfigError, NumericalError, SolveError
from .fem import Solver
from .features import (PcaBasis, Standardizer, NAMED_REGISTRIES,
                       build_design_matrix, registry_from_obj,
                       registry_to_obj, registry_uses_pca, validate_registry)
from .features.registry import REGISTRY_FORMAT_VERSION
from .grids import BoundaryCondition, MacroCellPartition, StructuredGrid
from .media import GrfSampler, GrfSpec, PhaseSpec, make_microstructure
from .model import DecoderParams, EncoderParams, LinkFunction
from .prediction import SurrogateModel
from .training import TrainingConfig, TrainingData, rng_for

DATA_FORMAT_VERSION = 1
MODEL_FORMAT_VERSION = 1

# generator stream tags (training reserves 1..3)
_STREAM_DATA = 7
_STREAM_PCA = 8


# ---------------------------------------------------------------------------
# low-level helpers

def atomic_write_bytes(path, payload):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj):
    """Stable fingerprint of a configuration object."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def write_array(path, arr):
    arr = np.asarray(arr, dtype=float)
    atomic_write_bytes(path, arr.astype("<f8").tobytes())


def read_array(path, shape):
    with open(path, "rb") as fh:
        buf = fh.read()
    arr = np.frombuffer(buf, dtype="<f8").astype(float)
    expected = int(np.prod(shape)) if shape else arr.size
    if arr.size != expected:
        raise ConfigError(
            f"{path}: expected {expected} float64 values, found {arr.size}")
    return arr.reshape(shape)


def _write_manifest(dirpath, manifest):
    atomic_write_text(os.path.join(dirpath, "manifest.json"),
                      canonical_json(manifest))


def _read_manifest(dirpath, expected_kind, expected_version):
    path = os.path.join(dirpath, "manifest.json")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"no manifest at {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})")
    if manifest.get("kind") != expected_kind:
        raise ConfigError(f"{path}: expected kind {expected_kind!r}, "
                          f"found {manifest.get('kind')!r}")
    if manifest.get("format_version") != expected_version:
        raise ConfigError(f"{path}: unsupported format version "
                          f"{manifest.get('format_version')!r}")
    return manifest


def _save_array_map(dirpath, arrays):
    spec = {}
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=float)
        fname = f"{name}.f64"
        write_array(os.path.join(dirpath, fname), arr)
        spec[name] = {"file": fname, "shape": list(arr.shape)}
    return spec


def _load_array_map(dirpath, spec):
    out = {}
    for name, rec in spec.items():
        out[name] = read_array(os.path.join(dirpath, rec["file"]),
                               tuple(rec["shape"]))
    return out


# ---------------------------------------------------------------------------
# datasets

@dataclass
class Dataset:
    lam_f: np.ndarray  # (N, n_elements_fine)
    u_f: np.ndarray    # (N, n_dof_fine)
    bc_a: np.ndarray   # (N, 4)
    ids: np.ndarray    # (N,) int
    meta: dict = field(default_factory=dict)

    @property
    def n_samples(self):
        return int(self.lam_f.shape[0])

    def training_data(self):
        return TrainingData(self.lam_f, self.u_f, self.bc_a,
                            np.asarray(self.ids, dtype=int))

    def subset(self, rows):
        return Dataset(self.lam_f[rows], self.u_f[rows], self.bc_a[rows],
                       np.asarray(self.ids)[rows], dict(self.meta))


def save_dataset(dirpath, ds):
    os.makedirs(dirpath, exist_ok=True)
    arrays = _save_array_map(dirpath, {
        "lam_f": ds.lam_f, "u_f": ds.u_f, "bc_a": ds.bc_a})
    manifest = {
        "kind": "dataset",
        "format_version": DATA_FORMAT_VERSION,
        "arrays": arrays,
        "ids": [int(i) for i in ds.ids],
        "meta": ds.meta,
    }
    _write_manifest(dirpath, manifest)


def load_dataset(dirpath):
    manifest = _read_manifest(dirpath, "dataset", DATA_FORMAT_VERSION)
    arrays = _load_array_map(dirpath, manifest["arrays"])
    return Dataset(arrays["lam_f"], arrays["u_f"], arrays["bc_a"],
                   np.asarray(manifest["ids"], dtype=int),
                   manifest.get("meta", {}))


_GEN_CACHE = {}


def _gen_setup(dim, nel, lam_lo, lam_hi, length_scale, method, n_rff, bc_a):
    key = (dim, tuple(nel), lam_lo, lam_hi, length_scale, method, n_rff,
           tuple(np.round(np.asarray(bc_a, float), 12)))
    if key not in _GEN_CACHE:
        grid = StructuredGrid.make(dim, nel)
        phases = PhaseSpec(lam_lo, lam_hi)
        sampler = GrfSampler(grid, GrfSpec(length_scale, method, n_rff))
        bc = BoundaryCondition.corner_dirichlet(grid, np.asarray(bc_a, float))
        _GEN_CACHE[key] = (grid, phases, sampler, Solver(grid, bc))
    return _GEN_CACHE[key]


def _gen_one(payload):
    (sid, seed, dim, nel, lam_lo, lam_hi, length_scale, method, n_rff,
     bc_a, max_attempts) = payload
    _, phases, sampler, solver = _gen_setup(
        dim, nel, lam_lo, lam_hi, length_scale, method, n_rff, bc_a)
    last_exc = None
    for attempt in range(max_attempts):
        rng = rng_for(seed, _STREAM_DATA, sid, attempt)
        ms = make_microstructure(sampler, phases, rng)
        try:
            u = solver.solve(ms.lam)
            return sid, ms.lam, u, ms.volume_fraction_lo
        except SolveError as exc:
            last_exc = exc
    raise NumericalError(
        f"sample {sid} failed to solve after {max_attempts} attempts: "
        f"{last_exc}")


def generate_dataset(fine, phases, grf, bc_a, n_samples, seed, start_id=0,
                     threads=1, max_attempts=5, meta=None):
    """Draw microstructures and solve the reference problem for each.

    Sample sid is a pure function of (seed, sid), so datasets extend and
    shard deterministically. A sample whose solve fails is redrawn from a
    fresh stream (the id is kept).
    """
    bc_a = np.asarray(bc_a, dtype=float)
    payloads = [(int(start_id + i), int(seed), fine.dim, fine.nel_per_axis,
                 phases.lam_lo, phases.lam_hi, grf.length_scale, grf.method,
                 grf.n_rff, bc_a, max_attempts)
                for i in range(n_samples)]
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_gen_one, payloads,
                                  chunksize=max(1, n_samples // (threads * 4))))
    else:
        results = [_gen_one(p) for p in payloads]
    results.sort(key=lambda r: r[0])
    lam = np.asarray([r[1] for r in results])
    u = np.asarray([r[2] for r in results])
    ids = np.asarray([r[0] for r in results], dtype=int)
    full_meta = {
        "seed": int(seed),
        "bc": [float(x) for x in bc_a],
        "dim": fine.dim,
        "nel": list(fine.nel_per_axis),
        "lam_lo": phases.lam_lo,
        "lam_hi": phases.lam_hi,
        "length_scale": grf.length_scale,
        "grf_method": grf.method,
        "n_rff": grf.n_rff,
        "vf_lo_mean": float(np.mean([r[3] for r in results])),
    }
    if meta:
        full_meta.update(meta)
    bc_rows = np.broadcast_to(bc_a, (n_samples, 4)).copy()
    return Dataset(lam, u, bc_rows, ids, full_meta)


# ---------------------------------------------------------------------------
# PCA bases over unsupervised microstructure draws

def pca_components_needed(registry):
    n_local = n_global = 0
    for spec in registry:
        if spec.family == "pca_local":
            n_local = max(n_local, spec.params["component"])
        elif spec.family == "pca_global":
            n_global = max(n_global, spec.params["component"])
    return n_local, n_global


def fit_pca_bases(fine, coarse, phases, grf, registry, n_fit, seed):
    """Fit cell-level and image-level principal bases from fresh draws.

    Draws are unsupervised (no solves) and come from a stream independent of
    training and test data.
    """
    from .features import fit_pca

    n_local, n_global = pca_components_needed(registry)
    if n_local == 0 and n_global == 0:
        return None, None
    if n_fit < 2:
        raise ConfigError("fitting a principal basis needs at least two draws")
    partition = MacroCellPartition.build(coarse, fine)
    sampler = GrfSampler(fine, grf)
    cell_rows, full_rows = [], []
    for i in range(n_fit):
        rng = rng_for(seed, _STREAM_PCA, i)
        ms = make_microstructure(sampler, phases, rng)
        if n_global:
            full_rows.append(partition.full_image(ms.lam).ravel())
        if n_local:
            for k in range(partition.n_cells):
                cell_rows.append(partition.cell_image(ms.lam, k).ravel())
    local = fit_pca(np.asarray(cell_rows), n_local, "local") if n_local else None
    glob = fit_pca(np.asarray(full_rows), n_global, "global") if n_global else None
    return local, glob


# ---------------------------------------------------------------------------
# run configuration

@dataclass(frozen=True)
class ProblemConfig:
    dim: int = 2
    n_fine: int = 64
    n_coarse: int = 4
    lam_lo: float = 1.0
    lam_hi: float = 2.0
    length_scale: float = 0.01
    grf_method: str = "auto"
    n_rff: int = 5000
    bc: tuple = (0.0, 1.0, 1.0, 0.0)


@dataclass(frozen=True)
class FeatureConfig:
    registry: object = "default"  # name or inline list of feature specs
    standardize: bool = True
    pca_fit_samples: int = 0
    pca_seed: int = 90001


@dataclass(frozen=True)
class ModelConfig:
    link: str = "sigmoid"
    coefficient_mode: str = "shared"
    free_bias: bool = False


@dataclass(frozen=True)
class DataGenConfig:
    n_samples: int = 16
    seed: int = 0


@dataclass(frozen=True)
class PredictionConfig:
    n_draws: int = 64
    mode: str = "laplace"


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemConfig
    features: FeatureConfig
    model: ModelConfig
    training: TrainingConfig
    data: DataGenConfig
    prediction: PredictionConfig
    train_seed: int
    raw: dict

    @property
    def hash(self):
        return config_hash(self.raw)


def _parse_dataclass(cls, obj, path, extra_ok=()):
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object")
    names = {f.name for f in dc_fields(cls)}
    unknown = set(obj) - names - set(extra_ok)
    if unknown:
        raise ConfigError(
            f"{path}: unknown key(s) {sorted(unknown)!r}; "
            f"allowed: {sorted(names | set(extra_ok))}")
    kwargs = {k: obj[k] for k in obj if k in names}
    if "bc" in kwargs:
        bc = kwargs["bc"]
        if not (isinstance(bc, (list, tuple)) and len(bc) == 4):
            raise ConfigError(f"{path}.bc: expected 4 numbers")
        kwargs["bc"] = tuple(float(x) for x in bc)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}")


_SECTIONS = ("problem", "features", "model", "training", "data",
             "prediction", "train_seed")


def parse_config(obj):
    """Validate a config mapping; unknown keys anywhere are rejected."""
    if not isinstance(obj, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(obj) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown top-level config key(s) {sorted(unknown)!r}; "
                          f"allowed: {sorted(_SECTIONS)}")
    problem = _parse_dataclass(ProblemConfig, obj.get("problem", {}), "problem")
    features = _parse_dataclass(FeatureConfig, obj.get("features", {}),
                                "features")
    model = _parse_dataclass(ModelConfig, obj.get("model", {}), "model")
    training_obj = dict(obj.get("training", {}))
    for key in ("coefficient_mode", "free_bias"):
        if key in training_obj:
            raise ConfigError(
                f"training.{key}: belongs in the model section")
    training = _parse_dataclass(TrainingConfig, training_obj, "training")
    training = replace(training, coefficient_mode=model.coefficient_mode,
                       free_bias=model.free_bias)
    data = _parse_dataclass(DataGenConfig, obj.get("data", {}), "data")
    prediction = _parse_dataclass(PredictionConfig, obj.get("prediction", {}),
                                  "prediction")
    if problem.dim not in (1, 2):
        raise ConfigError("problem.dim must be 1 or 2")
    if problem.n_fine % problem.n_coarse != 0:
        raise ConfigError("problem.n_fine must be a multiple of n_coarse")
    if prediction.mode not in ("laplace", "map"):
        raise ConfigError("prediction.mode must be 'laplace' or 'map'")
    train_seed = obj.get("train_seed", 0)
    if not isinstance(train_seed, int):
        raise ConfigError("train_seed must be an integer")
    return RunConfig(problem, features, model, training, data, prediction,
                     train_seed, raw=obj)


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})")
    return parse_config(obj)


@dataclass
class ProblemSetup:
    """Concrete objects assembled from a RunConfig."""

    fine: StructuredGrid
    coarse: StructuredGrid
    phases: PhaseSpec
    grf: GrfSpec
    link: LinkFunction
    registry: tuple
    bc_a: np.ndarray


def build_problem(cfg):
    p = cfg.problem
    fine = StructuredGrid.make(p.dim, (p.n_fine,) * p.dim)
    coarse = StructuredGrid.make(p.dim, (p.n_coarse,) * p.dim)
    phases = PhaseSpec(p.lam_lo, p.lam_hi)
    grf = GrfSpec(p.length_scale, p.grf_method, p.n_rff)
    link = LinkFunction(cfg.model.link, p.lam_lo, p.lam_hi)
    reg = cfg.features.registry
    if isinstance(reg, str):
        if reg not in NAMED_REGISTRIES:
            raise ConfigError(f"unknown registry {reg!r}; "
                              f"known: {sorted(NAMED_REGISTRIES)}")
        registry = NAMED_REGISTRIES[reg]()
    else:
        registry, _ = registry_from_obj(
            {"format_version": REGISTRY_FORMAT_VERSION, "features": reg})
    registry = validate_registry(registry)
    return ProblemSetup(fine, coarse, phases, grf, link, registry,
                        np.asarray(p.bc, dtype=float))


# ---------------------------------------------------------------------------
# model persistence

def save_model(dirpath, model):
    os.makedirs(dirpath, exist_ok=True)
    enc, dec = model.encoder, model.decoder
    W = dec.W
    W_dense = np.asarray(W.todense()) if scipy.sparse.issparse(W) else np.asarray(W)
    arrays = {
        "theta": enc.theta,
        "sigma_c_sq": enc.sigma_c_sq,
        "gamma": enc.gamma,
        "active": enc.active.astype(float),
        "W": W_dense,
        "b": dec.b,
        "s_sq": dec.s_sq,
    }
    if enc.theta_cov is not None:
        arrays["theta_cov"] = enc.theta_cov
    for name, basis in (("local_pca", model.local_pca),
                        ("global_pca", model.global_pca)):
        if basis is not None:
            arrays[f"{name}_mean"] = basis.mean
            arrays[f"{name}_components"] = basis.components
            arrays[f"{name}_explained"] = basis.explained_variance
    std = model.standardizer
    manifest = {
        "kind": "model",
        "format_version": MODEL_FORMAT_VERSION,
        "arrays": _save_array_map(dirpath, arrays),
        "fine": {"dim": model.fine.dim, "nel": list(model.fine.nel_per_axis)},
        "coarse": {"dim": model.coarse.dim,
                   "nel": list(model.coarse.nel_per_axis)},
        "phases": {"lam_lo": model.phases.lam_lo,
                   "lam_hi": model.phases.lam_hi},
        "link": model.link.kind,
        "coefficient_mode": enc.coefficient_mode,
        "registry": registry_to_obj(model.registry, std),
        "pca": {name: ({"scope": basis.scope, "n_fit": basis.n_fit}
                       if basis is not None else None)
                for name, basis in (("local_pca", model.local_pca),
                                    ("global_pca", model.global_pca))},
        "meta": model.meta,
    }
    _write_manifest(dirpath, manifest)


def load_model(dirpath):
    manifest = _read_manifest(dirpath, "model", MODEL_FORMAT_VERSION)
    arrays = _load_array_map(dirpath, manifest["arrays"])
    fine = StructuredGrid.make(manifest["fine"]["dim"],
                               manifest["fine"]["nel"])
    coarse = StructuredGrid.make(manifest["coarse"]["dim"],
                                 manifest["coarse"]["nel"])
    phases = PhaseSpec(manifest["phases"]["lam_lo"],
                       manifest["phases"]["lam_hi"])
    link = LinkFunction(manifest["link"], phases.lam_lo, phases.lam_hi)
    registry, standardizer = registry_from_obj(manifest["registry"])
    bases = {}
    for name in ("local_pca", "global_pca"):
        info = manifest["pca"].get(name)
        if info is None:
            bases[name] = None
        else:
            bases[name] = PcaBasis(info["scope"], arrays[f"{name}_mean"],
                                   arrays[f"{name}_components"],
                                   arrays[f"{name}_explained"],
                                   int(info["n_fit"]))
    enc = EncoderParams(
        theta=arrays["theta"],
        sigma_c_sq=arrays["sigma_c_sq"],
        gamma=arrays["gamma"],
        active=arrays["active"] > 0.5,
        coefficient_mode=manifest["coefficient_mode"],
        theta_cov=arrays.get("theta_cov"),
    )
    dec = DecoderParams(scipy.sparse.csr_matrix(arrays["W"]), arrays["b"],
                        arrays["s_sq"])
    return SurrogateModel(fine, coarse, registry, phases, link, enc, dec,
                          standardizer, bases["local_pca"],
                          bases["global_pca"], manifest.get("meta", {}))
