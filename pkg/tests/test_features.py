"""Feature functions against hand-computed values, plus registry plumbing."""

import numpy as np
import pytest

from microrom import (ConfigError, MacroCellPartition, NumericalError,
                      PhaseSpec, Standardizer, StructuredGrid,
                      basic_registry, build_design_matrix, default_registry,
                      fit_pca)
from microrom.features import (FeatureSpec, evaluate_feature, FeatureContext,
                               project, registry_from_obj, registry_to_obj,
                               validate_registry)
import microrom.features.functions as ff


# ---------------------------------------------------------------------------
# effective-medium estimates

def test_generalized_mean_hand_values():
    cell = np.array([[1.0, 10.0]])
    assert ff.generalized_mean(cell, 1.0) == pytest.approx(5.5)
    assert ff.generalized_mean(cell, 0.0) == pytest.approx(np.sqrt(10.0))
    assert ff.generalized_mean(cell, -1.0) == pytest.approx(20.0 / 11.0)
    assert ff.generalized_mean(np.full((3, 3), 4.2), -0.5) == pytest.approx(4.2)
    with pytest.raises(NumericalError):
        ff.generalized_mean(np.array([[1.0, 0.0]]), 1.0)


def test_generalized_mean_monotone_in_q():
    vals = np.array([[1.0, 2.0, 7.0, 10.0]])
    means = [ff.generalized_mean(vals, q) for q in (-1.0, -0.5, 0.0, 0.5, 1.0)]
    assert np.all(np.diff(means) > 0)


def test_self_consistent_hand_values():
    # equal fractions at contrast 10: alpha = 0, phi = sqrt(lam_lo lam_hi)
    assert ff.self_consistent_approximation(0.5, 1.0, 10.0) == \
        pytest.approx(np.sqrt(10.0))
    assert ff.self_consistent_approximation(1.0, 1.0, 10.0) == pytest.approx(10.0)
    assert ff.self_consistent_approximation(0.0, 1.0, 10.0) == pytest.approx(1.0)


def test_maxwell_garnett_values_and_clamp():
    assert ff.maxwell_garnett(1.0, 0.25) == pytest.approx(2.0)
    # past the pole the printed formula goes negative and is kept that way
    assert ff.maxwell_garnett(1.0, 0.75) == pytest.approx(-2.0)
    with pytest.warns(UserWarning):
        assert ff.maxwell_garnett(1.0, 0.5) == pytest.approx(1e3)
    with pytest.warns(UserWarning):
        assert ff.maxwell_garnett(2.0, 0.5005) == pytest.approx(-2e3)


def test_dem_endpoints_and_residual():
    assert ff.differential_effective_medium(1.0, 10.0, 0.0) == pytest.approx(1.0, abs=1e-8)
    assert ff.differential_effective_medium(1.0, 10.0, 1.0) == pytest.approx(10.0, abs=1e-8)
    assert ff.differential_effective_medium(3.0, 3.0, 0.4) == 3.0
    for v in (0.2, 0.5, 0.8):
        phi = ff.differential_effective_medium(1.0, 10.0, v)
        resid = ((10.0 - phi) / 9.0) * np.sqrt(1.0 / phi) - (1.0 - v)
        assert abs(resid) < 1e-8
        assert 1.0 < phi < 10.0
    # more inclusion, more conductive (inclusion above matrix)
    vals = [ff.differential_effective_medium(1.0, 10.0, v)
            for v in np.linspace(0.05, 0.95, 7)]
    assert np.all(np.diff(vals) > 0)


# ---------------------------------------------------------------------------
# n-point statistics

def test_two_point_corr_hand_values():
    mask = np.array([[1, 0], [0, 1]], dtype=bool)
    assert ff.two_point_corr(mask, 0) == pytest.approx(0.5)
    assert ff.two_point_corr(mask, 1) == pytest.approx(0.0)
    with pytest.raises(ConfigError):
        ff.two_point_corr(mask, 2)
    solid = np.ones((3, 4), dtype=bool)
    assert ff.two_point_corr(solid, 2) == pytest.approx(1.0)


def test_two_point_corr_counts_in_bounds_pairs():
    # 1x4 stripe [1,1,0,1]: offset-1 x-pairs (0,1),(1,2),(2,3) -> one both-in
    mask = np.array([[1, 1, 0, 1]], dtype=bool)
    assert ff.two_point_corr(mask, 1) == pytest.approx(1.0 / 3.0)


def test_two_point_corr_iid_medium():
    rng = np.random.default_rng(0)
    mask = rng.random((128, 128)) < 0.3
    # independent pixels: S2(d) = p^2 for d >= 1
    val = ff.two_point_corr(mask, 5)
    assert val == pytest.approx(0.09, abs=0.01)


def test_specific_surface_checkerboard():
    yy, xx = np.mgrid[0:4, 0:4]
    checker = (yy + xx) % 2 == 0
    # S2(1) = 0 and S2(0) = 1/2 for the checkerboard
    assert ff.specific_surface(checker) == pytest.approx(2.0)
    assert ff.specific_surface(np.ones((4, 4), dtype=bool)) == pytest.approx(0.0)


def test_lineal_path_hand_values():
    mask = np.array([[1, 1, 0, 1, 1, 1, 0, 0]], dtype=bool)
    assert ff.lineal_path(mask, 0) == pytest.approx(5.0 / 8.0)
    # length-2 all-phase windows along x: (0,1), (3,4), (4,5) out of 7
    assert ff.lineal_path(mask, 1) == pytest.approx(3.0 / 7.0)
    # no window of 3 consecutive pixels spans a gap
    assert ff.lineal_path(mask, 2) == pytest.approx(1.0 / 6.0)
    # beyond the extent there are no segments at all
    assert ff.lineal_path(mask, 8) == 0.0


def test_lineal_path_counts_both_axes():
    mask = np.array([[1, 0], [1, 0]], dtype=bool)
    # x windows: (1,0) twice -> 0 hits; y windows: (1,1) and (0,0) -> 1 hit
    assert ff.lineal_path(mask, 1) == pytest.approx(1.0 / 4.0)


def test_lineal_path_fit_matches_independent_regression():
    rng = np.random.default_rng(2)
    mask = rng.random((24, 24)) < 0.6
    ds = (1, 2, 3, 4)
    a, b = ff.lineal_path_fit(mask, ds)
    L = np.array([ff.lineal_path(mask, d) for d in ds])
    slope, intercept = np.polyfit(ds, np.log(L), 1)
    assert a == pytest.approx(np.exp(intercept), rel=1e-10)
    assert b == pytest.approx(-slope, rel=1e-10)


def test_lineal_path_fit_solid_phase():
    a, b = ff.lineal_path_fit(np.ones((6, 6), dtype=bool), (1, 2, 3))
    assert a == pytest.approx(1.0)
    assert b == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------------------
# morphology

def test_blob_count():
    mask = np.array([[1, 0, 1], [0, 1, 0]], dtype=bool)
    # diagonal contact does not connect under 4-connectivity
    assert ff.blob_count(mask) == 3.0
    assert ff.blob_count(np.zeros((3, 3), dtype=bool)) == 0.0
    assert ff.blob_count(np.ones((3, 3), dtype=bool)) == 1.0


def test_pixel_cross_max():
    mask = np.array([[1, 1, 0], [1, 0, 0]], dtype=bool)
    assert ff.pixel_cross_max(mask, "x") == 2.0  # best row
    assert ff.pixel_cross_max(mask, "y") == 2.0  # best column
    assert ff.pixel_cross_max(np.array([[1, 1, 1], [1, 0, 0]], dtype=bool),
                              "x") == 3.0
    with pytest.raises(ConfigError):
        ff.pixel_cross_max(mask, "z")


def test_max_extent():
    mask = np.array([[1, 1, 1], [0, 0, 0], [0, 0, 1]], dtype=bool)
    assert ff.max_extent(mask, "x") == 3.0
    assert ff.max_extent(mask, "y") == 1.0
    assert ff.max_extent(np.zeros((2, 2), dtype=bool), "x") == 0.0


def test_convex_area_stats():
    mask = np.zeros((5, 5), dtype=bool)
    mask[0, 0:3] = True  # bar: hull area 3
    mask[3, 4] = True    # lone pixel: area 1
    assert ff.convex_area_stats(mask, "max") == 3.0
    assert ff.convex_area_stats(mask, "mean") == 2.0
    assert ff.convex_area_stats(mask, "var") == 1.0
    assert ff.convex_area_stats(np.zeros((3, 3), dtype=bool), "mean") == 0.0


def test_convex_area_fills_concavities():
    # hull of the L with corners (0,0),(2,0),(2,2) holds 6 lattice points
    mask = np.zeros((4, 4), dtype=bool)
    mask[0, 0] = mask[1, 0] = mask[2, 0] = mask[2, 1] = mask[2, 2] = True
    assert ff.convex_area_stats(mask, "max") == 6.0


def test_connected_path():
    assert ff.connected_path_invdist(
        np.array([[1, 1, 1]], dtype=bool), "x") == pytest.approx(1.0 / 3.0)
    assert ff.connected_path_invdist(
        np.array([[1, 0, 1]], dtype=bool), "x") == 0.0
    # a single-row cell spans top-to-bottom trivially wherever there is phase
    assert ff.connected_path_invdist(
        np.array([[1, 0, 0]], dtype=bool), "y") == 1.0
    mask = np.array([[1, 1], [0, 1]], dtype=bool)
    assert ff.connected_path_invdist(mask, "y") == pytest.approx(0.5)
    # forced detour: shortest spanning path visits 4 pixels
    bend = np.array([[0, 1], [1, 1], [1, 0]], dtype=bool)
    assert ff.connected_path_invdist(bend, "y") == pytest.approx(1.0 / 4.0)


def test_distance_stats():
    mask = np.array([[True, False, False]])
    assert ff.distance_stat(mask, "euclidean", "mean") == pytest.approx(1.0)
    assert ff.distance_stat(mask, "euclidean", "max") == pytest.approx(2.0)
    assert ff.distance_stat(mask, "euclidean", "var") == pytest.approx(2.0 / 3.0)
    corner = np.zeros((2, 2), dtype=bool)
    corner[0, 0] = True
    assert ff.distance_stat(corner, "chessboard", "max") == 1.0
    assert ff.distance_stat(corner, "cityblock", "max") == 2.0
    assert ff.distance_stat(corner, "euclidean", "max") == pytest.approx(np.sqrt(2))


def test_distance_stats_absent_phase_sentinel():
    empty = np.zeros((3, 4), dtype=bool)
    sentinel = float(np.hypot(3, 4))
    assert ff.distance_stat(empty, "euclidean", "mean") == sentinel
    assert ff.distance_stat(empty, "cityblock", "max") == sentinel
    assert ff.distance_stat(empty, "chessboard", "var") == 0.0


# ---------------------------------------------------------------------------
# filters and pixel statistics

def test_gauss_filter_mean():
    img = np.array([[1.0, 10.0], [1.0, 10.0]])
    # symmetric weights: plain mean
    assert ff.gauss_filter_mean(img, 2.0) == pytest.approx(5.5)
    assert ff.gauss_filter_mean(np.full((5, 3), 7.7), 0.5) == pytest.approx(7.7)


def test_gauss_filter_width_effect():
    img = np.zeros((9, 9))
    img[4, 4] = 1.0  # center pixel
    narrow = ff.gauss_filter_mean(img, 0.01)
    wide = ff.gauss_filter_mean(img, 50.0)
    assert narrow > wide  # tight kernel concentrates on the center
    assert wide == pytest.approx(1.0 / 81.0, rel=0.05)


def test_population_std():
    img = np.array([[1.0, 10.0], [1.0, 10.0]])
    assert ff.population_std(img) == pytest.approx(4.5)
    assert ff.log_std(img) == pytest.approx(np.log(4.5 + 1e-5))


def test_ising_energy():
    assert ff.ising_energy(np.ones((3, 3), dtype=bool)) == -12.0
    yy, xx = np.mgrid[0:3, 0:3]
    assert ff.ising_energy((yy + xx) % 2 == 0) == 12.0
    assert ff.ising_energy(np.array([[True, False]])) == 1.0


# ---------------------------------------------------------------------------
# principal components

def test_pca_recovers_dominant_direction():
    X = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 2.0], [0.0, -2.0]])
    basis = fit_pca(X, 2, "local")
    assert np.allclose(basis.mean, 0.0)
    assert np.allclose(np.abs(basis.components[0]), [0.0, 1.0], atol=1e-12)
    assert basis.components[0][1] > 0  # deterministic sign
    assert np.allclose(basis.explained_variance, [8.0 / 3.0, 2.0 / 3.0])
    scores = project(basis, np.array([0.0, 3.0]))
    assert scores[0] == pytest.approx(3.0)


def test_pca_rejects_too_many_components():
    with pytest.raises(ConfigError):
        fit_pca(np.zeros((3, 5)), 4, "local")
    with pytest.raises(ConfigError):
        project(fit_pca(np.eye(4), 2, "local"), np.zeros(5))


def test_pca_refit_is_bit_identical():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((20, 9))
    b1 = fit_pca(X, 3, "global")
    b2 = fit_pca(X.copy(), 3, "global")
    assert np.array_equal(b1.components, b2.components)


# ---------------------------------------------------------------------------
# registry and design matrices

def test_default_registry_shape():
    reg = default_registry()
    assert len(reg) == 100
    ids = [f.id for f in reg]
    assert len(set(ids)) == 100
    fams = {f.family for f in reg}
    assert "generalized_mean" in fams and "pca_local" in fams


def test_basic_registry_shape():
    reg = basic_registry()
    assert len(reg) >= 20
    assert any(f.family == "generalized_mean" and f.params.get("q") == -1.0
               for f in reg)
    assert any(f.family == "constant" for f in reg)


def test_registry_rejects_duplicates():
    with pytest.raises(ConfigError):
        validate_registry([FeatureSpec("x", "constant", {}),
                           FeatureSpec("x", "std", {})])


def test_design_matrix_layout_and_globals():
    fine = StructuredGrid.make(2, (8, 8))
    coarse = StructuredGrid.make(2, (2, 2))
    part = MacroCellPartition.build(coarse, fine)
    phases = PhaseSpec(1.0, 10.0)
    reg = validate_registry([
        FeatureSpec("c", "constant", {}),
        FeatureSpec("vf_like", "generalized_mean", {"q": 1.0}),
        FeatureSpec("g_sca", "sca_global", {}),
    ])
    rng = np.random.default_rng(4)
    lam = np.where(rng.random(fine.n_elements) < 0.5, 1.0, 10.0)
    Phi = build_design_matrix(lam, part, reg, phases)
    assert Phi.shape == (4, 3)
    assert np.all(Phi[:, 0] == 1.0)
    # global feature identical across cells
    assert np.ptp(Phi[:, 2]) == 0.0
    # local means differ between cells for this realization
    assert np.ptp(Phi[:, 1]) > 0.0


def test_design_matrix_flags_non_finite(monkeypatch):
    fine = StructuredGrid.make(1, (8,))
    coarse = StructuredGrid.make(1, (2,))
    part = MacroCellPartition.build(coarse, fine)
    reg = validate_registry([FeatureSpec("bad_std", "std", {})])
    monkeypatch.setattr(ff, "population_std", lambda v: float("nan"))
    with pytest.raises(NumericalError, match="bad_std"):
        build_design_matrix(np.ones(8), part, reg, PhaseSpec(1.0, 2.0))


def test_contrast_one_classifies_everything_low():
    fine = StructuredGrid.make(1, (8,))
    coarse = StructuredGrid.make(1, (2,))
    part = MacroCellPartition.build(coarse, fine)
    ctx = FeatureContext(np.full(8, 3.0), part, PhaseSpec(3.0, 3.0))
    assert not ctx.full_hi.any()


def test_pca_feature_requires_basis():
    fine = StructuredGrid.make(1, (8,))
    coarse = StructuredGrid.make(1, (2,))
    part = MacroCellPartition.build(coarse, fine)
    reg = validate_registry([FeatureSpec("p1", "pca_local", {"component": 1})])
    with pytest.raises(ConfigError):
        build_design_matrix(np.ones(8), part, reg, PhaseSpec(1.0, 2.0))


def test_standardizer_roundtrip():
    reg = validate_registry([FeatureSpec("c", "constant", {}),
                             FeatureSpec("m", "generalized_mean", {"q": 1.0}),
                             FeatureSpec("s", "std", {})])
    rng = np.random.default_rng(8)
    rows = rng.uniform(1.0, 5.0, size=(40, 3))
    rows[:, 0] = 1.0
    std = Standardizer.fit(rows, reg)
    out = std.apply(rows)
    assert np.allclose(out[:, 0], 1.0)  # constant column untouched
    assert abs(out[:, 1].mean()) < 1e-12
    assert out[:, 1].std() == pytest.approx(1.0)
    ident = Standardizer.identity(3)
    assert np.array_equal(ident.apply(rows), rows)


def test_standardizer_degenerate_column():
    reg = validate_registry([FeatureSpec("m", "generalized_mean", {"q": 1.0})])
    rows = np.full((10, 1), 2.5)
    std = Standardizer.fit(rows, reg)
    assert np.array_equal(std.apply(rows), rows)


def test_registry_serialization_roundtrip():
    reg = basic_registry()
    rows = np.random.default_rng(0).uniform(1, 2, (12, len(reg)))
    std = Standardizer.fit(rows, reg)
    obj = registry_to_obj(reg, std)
    reg2, std2 = registry_from_obj(obj)
    assert [f.id for f in reg2] == [f.id for f in reg]
    assert [f.family for f in reg2] == [f.family for f in reg]
    assert all(f1.params == f2.params for f1, f2 in zip(reg, reg2))
    assert np.allclose(std2.mean, std.mean)
    assert np.allclose(std2.scale, std.scale)


def test_feature_evaluation_deterministic():
    fine = StructuredGrid.make(2, (16, 16))
    coarse = StructuredGrid.make(2, (1, 1))
    part = MacroCellPartition.build(coarse, fine)
    phases = PhaseSpec(1.0, 2.0)
    rng = np.random.default_rng(13)
    lam = np.where(rng.random(fine.n_elements) < 0.4, 1.0, 2.0)
    reg = basic_registry()
    A = build_design_matrix(lam, part, reg, phases)
    B = build_design_matrix(lam.copy(), part, reg, phases)
    assert np.array_equal(A, B)
