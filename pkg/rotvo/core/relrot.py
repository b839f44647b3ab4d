"""
Relative orientation from bearing correspondences, independent of translation.

For a correspondence (f, f') and a candidate transfer rotation T (so that
f' = T f under pure rotation), the epipolar-plane normal is n = f' x T f. At the
true rotation all normals are coplanar whatever the baseline, so the smallest
eigenvalue of M = sum n n^T is zero there. The solver minimises that eigenvalue
over SO(3) with Levenberg-Marquardt and is wrapped in a seeded RANSAC.

Edge convention: ``ransac_relrot`` takes and returns view-graph edges
R_jk = R_j^T R_k. The transfer rotation used by ``normal_cov`` and
``solve_relrot`` is T = R_jk^T.
"""

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .config import RelRotConfig
from .exceptions import InsufficientCorrespondencesError, InvalidArgumentError, NoModelError
from .logging import get_logger
from .seeds import derive_rng
from .so3 import Rot3, exp

logger = get_logger()

ZERO_NORMAL: float = 1e-9


@dataclass(frozen=True)
class CorrSet:
    """Bearing correspondences between frame j (``f``) and frame k (``f_prime``)."""

    f: NDArray[np.float64]
    f_prime: NDArray[np.float64]

    def __post_init__(self):
        f = np.asarray(self.f, dtype=np.float64).reshape(-1, 3)
        fp = np.asarray(self.f_prime, dtype=np.float64).reshape(-1, 3)
        if f.shape != fp.shape:
            raise InvalidArgumentError(
                f"Correspondence arrays differ in shape: {f.shape} vs {fp.shape}"
            )
        f.setflags(write=False)
        fp.setflags(write=False)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "f_prime", fp)

    def __len__(self) -> int:
        return len(self.f)

    def subset(self, indices: ArrayLike) -> "CorrSet":
        idx = np.asarray(indices, dtype=np.intp)
        return CorrSet(self.f[idx], self.f_prime[idx])


@dataclass(frozen=True)
class NormalCov:
    """Covariance of the epipolar-plane normals and its smallest eigenpair."""

    M: NDArray[np.float64]
    lam_min: float
    e_min: NDArray[np.float64]


@dataclass(frozen=True)
class RelRotSolve:
    """Outcome of one LM run over a fixed correspondence set."""

    rotation: Rot3  # transfer rotation T
    lam_min: float
    e_min: NDArray[np.float64]
    converged: bool
    iterations: int


@dataclass(frozen=True)
class RelRotResult:
    """RANSAC outcome for a frame pair; ``R_jk`` is the view-graph edge rotation."""

    R_jk: Rot3
    inliers: NDArray[np.intp]
    lam_min: float
    converged: bool
    hypotheses: int

    @property
    def transfer(self) -> Rot3:
        return self.R_jk.inverse()

    @property
    def inlier_count(self) -> int:
        return int(len(self.inliers))


def sym3_eigen(M: NDArray[np.float64]) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Closed-form eigenvalues (ascending) of a symmetric 3x3 matrix and the
    unit eigenvector of the smallest one, sign fixed so its first nonzero
    component is positive."""
    p1 = M[0, 1] ** 2 + M[0, 2] ** 2 + M[1, 2] ** 2
    q = (M[0, 0] + M[1, 1] + M[2, 2]) / 3.0
    if p1 == 0.0:
        values = np.sort(np.diag(M).copy())
    else:
        p2 = (M[0, 0] - q) ** 2 + (M[1, 1] - q) ** 2 + (M[2, 2] - q) ** 2 + 2.0 * p1
        p = math.sqrt(p2 / 6.0)
        B = (M - q * np.eye(3)) / p
        r = min(1.0, max(-1.0, float(np.linalg.det(B)) / 2.0))
        phi = math.acos(r) / 3.0
        hi = q + 2.0 * p * math.cos(phi)
        lo = q + 2.0 * p * math.cos(phi + 2.0 * math.pi / 3.0)
        values = np.array([lo, 3.0 * q - hi - lo, hi])
    return values, _min_eigenvector(M, values[0])


def _min_eigenvector(M: NDArray[np.float64], lam: float) -> NDArray[np.float64]:
    A = M - lam * np.eye(3)
    crosses = np.array([np.cross(A[0], A[1]), np.cross(A[0], A[2]), np.cross(A[1], A[2])])
    norms = np.linalg.norm(crosses, axis=1)
    best = int(np.argmax(norms))
    scale = float(np.sum(A * A))
    if scale == 0.0 or norms[best] <= 1e-10 * scale:
        # Repeated smallest eigenvalue: any vector of the eigenspace will do
        _, vectors = np.linalg.eigh(M)
        e = vectors[:, 0]
    else:
        e = crosses[best] / norms[best]
    nz = np.flatnonzero(np.abs(e) > 1e-15)
    if len(nz) and e[nz[0]] < 0.0:
        e = -e
    return e


def _normals(c: CorrSet, T: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.cross(c.f_prime, c.f @ T.T)


def normal_cov(R: Rot3, c: CorrSet) -> NormalCov:
    """M = sum_i n_i n_i^T with n_i = f'_i x (R f_i), and its smallest eigenpair."""
    if len(c) == 0:
        raise InvalidArgumentError("normal_cov needs at least one correspondence")
    n = _normals(c, R.matrix())
    M = n.T @ n
    M = 0.5 * (M + M.T)
    values, e = sym3_eigen(M)
    return NormalCov(M=M, lam_min=max(0.0, float(values[0])), e_min=e)


def _residuals(
    c: CorrSet, T: NDArray[np.float64], e_ref: NDArray[np.float64] | None = None
) -> tuple[NDArray[np.float64], NDArray[np.float64], float]:
    """Residuals r_i = n_i . e_min, whose squared norm is lambda_min."""
    n = _normals(c, T)
    M = n.T @ n
    values, e = sym3_eigen(0.5 * (M + M.T))
    if e_ref is not None and float(e @ e_ref) < 0.0:
        e = -e
    return n @ e, e, max(0.0, float(values[0]))


def _retract(T: NDArray[np.float64], delta: NDArray[np.float64]) -> NDArray[np.float64]:
    return T @ exp(delta).matrix()


def solve_relrot(c: CorrSet, R_init: Rot3, cfg: RelRotConfig | None = None) -> RelRotSolve:
    """Minimise lambda_min(M(T)) over the transfer rotation T, starting at ``R_init``.

    Levenberg-Marquardt over a tangent update T <- T exp(delta). The Jacobian of
    the residual vector is taken by central finite differences of the
    closed-form eigen-solution.
    """
    cfg = cfg or RelRotConfig()
    if len(c) < cfg.min_sample:
        raise InsufficientCorrespondencesError(
            f"solve_relrot needs at least {cfg.min_sample} correspondences, got {len(c)}"
        )

    h = cfg.fd_step
    T = R_init.matrix()
    r, e, lam = _residuals(c, T)
    mu: float | None = None
    converged = False
    iteration = 0

    for iteration in range(1, cfg.max_iters + 1):
        if lam == 0.0:
            converged = True
            break

        J = np.empty((len(c), 3))
        for i in range(3):
            step = np.zeros(3)
            step[i] = h
            r_plus, _, _ = _residuals(c, _retract(T, step), e)
            r_minus, _, _ = _residuals(c, _retract(T, -step), e)
            J[:, i] = (r_plus - r_minus) / (2.0 * h)

        H = J.T @ J
        g = J.T @ r
        if mu is None:
            mu = 1e-3 * max(float(np.max(np.diag(H))), 1e-12)

        accepted = False
        while True:
            delta = np.linalg.solve(H + mu * np.eye(3), -g)
            step_norm = float(np.linalg.norm(delta))
            T_try = _retract(T, delta)
            r_try, e_try, lam_try = _residuals(c, T_try, e)
            if lam_try < lam:
                accepted = True
                mu *= 0.1
                break
            mu *= 10.0
            if step_norm < cfg.step_tol or mu > 1e16:
                break

        if not accepted:
            # No descent direction left at this damping: local minimum
            converged = True
            break

        decrease = lam - lam_try
        T, r, e, lam = T_try, r_try, e_try, lam_try
        if step_norm < cfg.step_tol or decrease < cfg.obj_tol:
            converged = True
            break

    if not converged:
        logger.debug(f"solve_relrot stopped at max_iters={cfg.max_iters}, lambda_min={lam:.3e}")

    return RelRotSolve(
        rotation=Rot3.from_matrix(T),
        lam_min=lam,
        e_min=e,
        converged=converged,
        iterations=iteration,
    )


def inlier_mask(
    c: CorrSet, T: Rot3, e: NDArray[np.float64], cfg: RelRotConfig
) -> NDArray[np.bool_]:
    """Classify correspondences against a transfer rotation and plane normal ``e``."""
    n = _normals(c, T.matrix())
    off_plane = np.abs(n @ e)
    limit = math.sin(cfg.inlier_thresh)
    if cfg.inlier_residual == "epipolar":
        return off_plane < limit
    norms = np.linalg.norm(n, axis=1)
    return (norms < ZERO_NORMAL) | (off_plane < limit * norms)


def ransac_iterations(inlier_ratio: float, sample_size: int, confidence: float) -> int:
    """Standard adaptive stopping rule for RANSAC."""
    if inlier_ratio <= 0.0:
        return np.iinfo(np.int64).max
    p_good = inlier_ratio**sample_size
    if p_good >= 1.0:
        return 1
    return int(math.ceil(math.log(1.0 - confidence) / math.log(1.0 - p_good)))


def ransac_relrot(
    c: CorrSet, R_init: Rot3 | None = None, cfg: RelRotConfig | None = None
) -> RelRotResult:
    """Robust relative rotation for a frame pair.

    Hypothesis ``i`` draws its minimal sample from the ``i``-th seeded stream,
    so results depend only on ``cfg.seed``.
    """
    cfg = cfg or RelRotConfig()
    if len(c) < cfg.min_sample:
        raise InsufficientCorrespondencesError(
            f"ransac_relrot needs at least {cfg.min_sample} correspondences, got {len(c)}"
        )

    T_init = (R_init or Rot3.identity()).inverse()
    best_mask: NDArray[np.bool_] | None = None
    best_count = -1
    best_solve: RelRotSolve | None = None
    needed = cfg.max_ransac_iters
    hypotheses = 0

    while hypotheses < min(needed, cfg.max_ransac_iters):
        rng = derive_rng(cfg.seed, hypotheses)
        sample = rng.choice(len(c), size=cfg.min_sample, replace=False)
        hypotheses += 1

        solve = solve_relrot(c.subset(sample), T_init, cfg)
        mask = inlier_mask(c, solve.rotation, solve.e_min, cfg)
        count = int(mask.sum())
        if count > best_count:
            best_count, best_mask, best_solve = count, mask, solve
            needed = ransac_iterations(count / len(c), cfg.min_sample, cfg.confidence)
            logger.trace(f"RANSAC hypothesis {hypotheses}: {count}/{len(c)} inliers")

    if hypotheses >= cfg.max_ransac_iters and needed > cfg.max_ransac_iters:
        logger.warning(f"RANSAC hit the iteration cap ({cfg.max_ransac_iters}) at {best_count}/{len(c)} inliers")

    if best_solve is None or best_count < cfg.min_sample:
        raise NoModelError(
            f"RANSAC found {max(best_count, 0)} inliers, fewer than the minimal sample {cfg.min_sample}"
        )

    # Final model refit on all inliers of the best hypothesis
    refit = solve_relrot(c.subset(np.flatnonzero(best_mask)), best_solve.rotation, cfg)
    refit_mask = inlier_mask(c, refit.rotation, refit.e_min, cfg)
    if refit_mask.sum() >= best_count:
        final, final_mask = refit, refit_mask
    else:
        final, final_mask = best_solve, best_mask

    if final_mask.sum() < cfg.min_sample:
        raise NoModelError("Refit left fewer inliers than the minimal sample")
    if not final.converged:
        logger.warning(f"Relative rotation refit did not converge (lambda_min={final.lam_min:.3e})")

    return RelRotResult(
        R_jk=final.rotation.inverse(),
        inliers=np.flatnonzero(final_mask),
        lam_min=final.lam_min,
        converged=final.converged,
        hypotheses=hypotheses,
    )
