import math

import numpy as np
import pytest

from rotvo.core.config import RelRotConfig
from rotvo.core.exceptions import InsufficientCorrespondencesError, InvalidArgumentError, NoModelError
from rotvo.core.relrot import (
    CorrSet,
    inlier_mask,
    normal_cov,
    ransac_iterations,
    ransac_relrot,
    solve_relrot,
    sym3_eigen,
)
from rotvo.core.so3 import Rot3, exp, geodesic_angle

R_TRUE = exp([0.02, math.radians(8.0), -0.01])


def test_sym3_eigen_matches_numpy(rng):
    for _ in range(50):
        A = rng.normal(size=(3, 3))
        M = A @ A.T
        values, e = sym3_eigen(M)
        expected, vectors = np.linalg.eigh(M)
        assert np.allclose(values, expected, atol=1e-9 * np.abs(expected).max())
        assert abs(abs(e @ vectors[:, 0]) - 1.0) < 1e-7
        assert np.linalg.norm(M @ e - values[0] * e) < 1e-7 * np.abs(expected).max()


def test_sym3_eigen_diagonal_and_repeated():
    values, e = sym3_eigen(np.diag([3.0, 1.0, 2.0]))
    assert np.allclose(values, [1.0, 2.0, 3.0])
    assert np.allclose(np.abs(e), [0.0, 1.0, 0.0])
    values, e = sym3_eigen(np.eye(3))
    assert np.allclose(values, 1.0)
    assert np.linalg.norm(e) == pytest.approx(1.0)


@pytest.mark.parametrize("translation", [(0.0, 0.0, 0.0), (0.3, -0.1, 1.5)])
def test_normals_are_coplanar_at_the_true_rotation(rng, make_pair, translation):
    c, _ = make_pair(rng, R_TRUE, n=100, translation=translation)
    cov = normal_cov(R_TRUE.inverse(), c)
    assert cov.lam_min < 1e-12
    if any(translation):
        # The plane normal is the baseline seen from frame k
        t_k = R_TRUE.inverse().apply(np.asarray(translation))
        assert abs(cov.e_min @ t_k) / np.linalg.norm(t_k) == pytest.approx(1.0, abs=1e-6)
    off = normal_cov(R_TRUE.inverse() @ exp([0.0, 0.02, 0.0]), c)
    assert off.lam_min > 1e3 * cov.lam_min


def test_normal_cov_requires_correspondences():
    with pytest.raises(InvalidArgumentError):
        normal_cov(Rot3.identity(), CorrSet(np.empty((0, 3)), np.empty((0, 3))))


def test_corrset_shapes_must_match():
    with pytest.raises(InvalidArgumentError):
        CorrSet(np.ones((3, 3)), np.ones((2, 3)))


@pytest.mark.parametrize("translation", [(0.0, 0.0, 0.0), (0.5, 0.0, 1.0)])
def test_solve_relrot_recovers_rotation_from_perturbed_start(rng, make_pair, translation):
    c, _ = make_pair(rng, R_TRUE, n=60, translation=translation)
    start = R_TRUE.inverse() @ exp([0.03, -0.04, 0.02])
    solve = solve_relrot(c, start)
    assert solve.converged
    assert geodesic_angle(solve.rotation, R_TRUE.inverse()) < 1e-6
    assert solve.lam_min < 1e-12


def test_solve_relrot_rejects_small_sets(rng, make_pair):
    c, _ = make_pair(rng, R_TRUE, n=4)
    with pytest.raises(InsufficientCorrespondencesError):
        solve_relrot(c, Rot3.identity())


def test_ransac_exact_data(rng, make_pair):
    c, _ = make_pair(rng, R_TRUE, n=200, translation=(0.2, 0.0, 1.0))
    result = ransac_relrot(c)
    assert geodesic_angle(result.R_jk, R_TRUE) < 1e-6
    assert result.inlier_count == 200
    assert geodesic_angle(result.transfer, R_TRUE.inverse()) < 1e-6


def test_ransac_with_outliers_and_noise(rng, make_pair):
    c, mask = make_pair(
        rng, R_TRUE, n=200, translation=(1.0, 0.0, 0.2), noise=math.radians(0.1), outlier_frac=0.3
    )
    result = ransac_relrot(c)
    found = np.zeros(len(c), dtype=bool)
    found[result.inliers] = True
    precision = (found & mask).sum() / found.sum()
    recall = (found & mask).sum() / mask.sum()
    assert geodesic_angle(result.R_jk, R_TRUE) < math.radians(0.5)
    assert precision >= 0.95
    assert recall >= 0.9


def test_ransac_is_deterministic_under_seed(rng, make_pair):
    c, _ = make_pair(rng, R_TRUE, n=150, noise=math.radians(0.1), outlier_frac=0.2)
    cfg = RelRotConfig(seed=11)
    a = ransac_relrot(c, cfg=cfg)
    b = ransac_relrot(c, cfg=cfg)
    assert a.R_jk == b.R_jk
    assert np.array_equal(a.inliers, b.inliers)
    assert a.hypotheses == b.hypotheses


def test_ransac_accepts_warm_start(rng, make_pair):
    c, _ = make_pair(rng, R_TRUE, n=100, translation=(0.0, 0.1, 0.8))
    result = ransac_relrot(c, R_init=R_TRUE @ exp([0.01, 0.0, 0.0]))
    assert geodesic_angle(result.R_jk, R_TRUE) < 1e-6


def test_ransac_pure_rotation_with_noise(rng, make_pair):
    c, _ = make_pair(rng, R_TRUE, n=150, noise=math.radians(0.05))
    result = ransac_relrot(c)
    assert geodesic_angle(result.R_jk, R_TRUE) < math.radians(0.25)
    assert result.inlier_count >= 140


def test_ransac_too_few_correspondences(rng, make_pair):
    c, _ = make_pair(rng, R_TRUE, n=3)
    with pytest.raises(InsufficientCorrespondencesError):
        ransac_relrot(c)


def test_ransac_on_unrelated_bearings_never_overcounts(rng):
    # Every bearing in frame k is unrelated to frame j
    f = rng.normal(size=(5, 3)) * [0.3, 0.3, 0.0] + [0.0, 0.0, 1.0]
    fp = rng.normal(size=(5, 3)) * [0.3, 0.3, 0.0] + [0.0, 0.0, 1.0]
    c = CorrSet(f / np.linalg.norm(f, axis=1, keepdims=True), fp / np.linalg.norm(fp, axis=1, keepdims=True))
    cfg = RelRotConfig(inlier_thresh=math.radians(1e-6), max_ransac_iters=5)
    try:
        result = ransac_relrot(c, cfg=cfg)
    except NoModelError:
        return
    # Five points always admit an exact fit; the model must then explain them all
    assert result.inlier_count == 5


def test_plane_angle_rule_counts_zero_normals_as_inliers(rng, make_pair):
    c, _ = make_pair(rng, R_TRUE, n=50)
    cfg = RelRotConfig(inlier_residual="plane_angle")
    cov = normal_cov(R_TRUE.inverse(), c)
    assert inlier_mask(c, R_TRUE.inverse(), cov.e_min, cfg).all()


def test_ransac_iterations():
    assert ransac_iterations(1.0, 5, 0.99) == 1
    assert ransac_iterations(0.5, 5, 0.99) == 146
    assert ransac_iterations(0.0, 5, 0.99) > 10**6


@pytest.mark.slow
def test_ransac_quality_over_seeds(make_pair):
    errors, precisions, recalls = [], [], []
    for seed in range(100):
        gen = np.random.default_rng(seed)
        R = exp(gen.normal(0.0, 0.1, size=3))
        c, mask = make_pair(
            gen, R, n=200, translation=[1.0, 0.1 * gen.normal(), 0.2 * gen.normal()],
            noise=math.radians(0.1), outlier_frac=0.3,
        )
        result = ransac_relrot(c, cfg=RelRotConfig(seed=seed))
        found = np.zeros(len(c), dtype=bool)
        found[result.inliers] = True
        errors.append(geodesic_angle(result.R_jk, R))
        precisions.append((found & mask).sum() / found.sum())
        recalls.append((found & mask).sum() / mask.sum())
    assert np.median(errors) <= math.radians(0.5)
    assert np.median(precisions) >= 0.95
    assert np.median(recalls) >= 0.9


@pytest.mark.slow
def test_halving_noise_does_not_raise_the_median_error(make_pair):
    sigma = math.radians(0.2)
    medians = []
    for scale in (1.0, 0.5):
        errors = []
        for seed in range(100):
            # Same seed: same geometry and noise directions, scaled magnitudes
            gen = np.random.default_rng(seed)
            c, _ = make_pair(gen, R_TRUE, n=100, translation=(1.0, 0.0, 0.3), noise=scale * sigma)
            start = R_TRUE.inverse() @ exp([0.0, math.radians(2.0), 0.0])
            errors.append(geodesic_angle(solve_relrot(c, start).rotation, R_TRUE.inverse()))
        medians.append(np.median(errors))
    assert medians[0] <= math.radians(0.5)
    assert medians[1] <= medians[0]