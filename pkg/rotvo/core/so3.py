"""
SO(3) substrate: rotations stored as canonical unit quaternions.

Conventions
-----------
- Quaternions are (w, x, y, z), Hamilton product, active rotations, so that
  ``compose(a, b).matrix() == a.matrix() @ b.matrix()``.
- The sign is canonical: w >= 0, and when w == 0 the first nonzero component is
  positive. Equal rotations therefore have bitwise-equal quaternions.
- Tangent vectors are axis-angle 3-vectors in radians.
- Batched helpers (``exp_matrices``, ``log_matrices``) work on stacks of
  matrices and are what the averaging solvers use internally.
"""

import math
from dataclasses import dataclass
from typing import Final, Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial.transform import Rotation

from .exceptions import InvalidArgumentError

TangentVec = NDArray[np.float64]

QUAT_NORM_TOL: Final = 1e-12
ORTHONORMAL_TOL: Final = 1e-9
SMALL_ANGLE: Final = 1e-8
INPUT_ORTHONORMAL_TOL: Final = 1e-4


def _canonical(w: float, x: float, y: float, z: float) -> tuple[float, float, float, float]:
    norm = math.sqrt(w * w + x * x + y * y + z * z)
    if not math.isfinite(norm) or norm == 0.0:
        raise InvalidArgumentError(f"Cannot normalise quaternion ({w}, {x}, {y}, {z})")
    w, x, y, z = w / norm, x / norm, y / norm, z / norm
    if w < 0.0:
        w, x, y, z = -w, -x, -y, -z
    elif w == 0.0:
        for c in (x, y, z):
            if c != 0.0:
                if c < 0.0:
                    x, y, z = -x, -y, -z
                break
        w = 0.0  # drop a negative zero
    return (w, x, y, z)


def _qmul(a: tuple, b: tuple) -> tuple[float, float, float, float]:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


@dataclass(frozen=True, slots=True)
class Rot3:
    """An orientation on SO(3), immutable and safe to share between threads."""

    q: tuple[float, float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "q", _canonical(*(float(c) for c in self.q)))

    # -- constructors -------------------------------------------------------

    @classmethod
    def identity(cls) -> "Rot3":
        return cls((1.0, 0.0, 0.0, 0.0))

    @classmethod
    def from_quat(cls, w: float, x: float, y: float, z: float) -> "Rot3":
        return cls((w, x, y, z))

    @classmethod
    def from_matrix(cls, matrix: ArrayLike) -> "Rot3":
        """Build from a 3x3 rotation matrix; small orthonormality errors are projected away."""
        m = np.asarray(matrix, dtype=np.float64)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise InvalidArgumentError(f"Expected a finite 3x3 matrix, got shape {m.shape}")
        if (
            np.abs(m.T @ m - np.eye(3)).max() > INPUT_ORTHONORMAL_TOL
            or np.linalg.det(m) <= 0.0
        ):
            raise InvalidArgumentError("Matrix is not a proper rotation")
        x, y, z, w = Rotation.from_matrix(m).as_quat()
        return cls((w, x, y, z))

    @classmethod
    def exp(cls, omega: ArrayLike) -> "Rot3":
        return exp(omega)

    @classmethod
    def random(cls, rng: np.random.Generator) -> "Rot3":
        """Uniformly distributed rotation."""
        v = rng.standard_normal(4)
        return cls(tuple(v))

    @classmethod
    def parse(cls, tokens: Sequence[str]) -> "Rot3":
        """Parse the four serialised quaternion fields ``qw qx qy qz``."""
        if len(tokens) != 4:
            raise InvalidArgumentError(f"Expected 4 quaternion fields, got {len(tokens)}")
        values = [float(t) for t in tokens]
        if not all(math.isfinite(v) for v in values):
            raise InvalidArgumentError("Quaternion fields must be finite")
        return cls(tuple(values))

    # -- views --------------------------------------------------------------

    def matrix(self) -> NDArray[np.float64]:
        w, x, y, z = self.q
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def format(self) -> str:
        """Serialise as ``qw qx qy qz`` with 17 significant digits."""
        return " ".join(f"{c:.17g}" for c in self.q)

    def angle(self) -> float:
        w, x, y, z = self.q
        return 2.0 * math.atan2(math.sqrt(x * x + y * y + z * z), abs(w))

    def apply(self, vectors: ArrayLike) -> NDArray[np.float64]:
        """Rotate one 3-vector or a stack of shape (N, 3)."""
        v = np.asarray(vectors, dtype=np.float64)
        return v @ self.matrix().T

    # -- group operations ---------------------------------------------------

    def compose(self, other: "Rot3") -> "Rot3":
        return Rot3(_qmul(self.q, other.q))

    def inverse(self) -> "Rot3":
        w, x, y, z = self.q
        return Rot3((w, -x, -y, -z))

    def relative(self, other: "Rot3") -> "Rot3":
        return self.inverse().compose(other)

    def log(self) -> TangentVec:
        return log(self)

    def __matmul__(self, other: "Rot3") -> "Rot3":
        return self.compose(other)


def exp(omega: ArrayLike) -> Rot3:
    """Rotation of angle ``|omega|`` about ``omega / |omega|``."""
    w = np.asarray(omega, dtype=np.float64).reshape(-1)
    if w.shape != (3,) or not np.all(np.isfinite(w)):
        raise InvalidArgumentError(f"exp expects a finite 3-vector, got {omega!r}")
    theta = float(np.linalg.norm(w))
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        s = 0.5 * (1.0 - t2 / 24.0)
        return Rot3((1.0 - t2 / 8.0, s * w[0], s * w[1], s * w[2]))
    s = math.sin(0.5 * theta) / theta
    return Rot3((math.cos(0.5 * theta), s * w[0], s * w[1], s * w[2]))


def log(r: Rot3) -> TangentVec:
    """Principal logarithm, angle in [0, pi].

    At angle exactly pi the axis is read from the column of R + I with the
    largest diagonal entry, with that entry made positive.
    """
    w, x, y, z = r.q
    s = math.sqrt(x * x + y * y + z * z)
    if s == 0.0:
        return np.zeros(3)
    if w == 0.0:
        m = r.matrix() + np.eye(3)
        i = int(np.argmax(np.diag(m)))
        axis = m[:, i] / np.linalg.norm(m[:, i])
        if axis[i] < 0.0:
            axis = -axis
        return math.pi * axis
    if s < SMALL_ANGLE:
        scale = (2.0 / w) * (1.0 - (s * s) / (3.0 * w * w))
    else:
        scale = 2.0 * math.atan2(s, w) / s
    return scale * np.array([x, y, z])


def compose(a: Rot3, b: Rot3) -> Rot3:
    return a.compose(b)


def inverse(a: Rot3) -> Rot3:
    return a.inverse()


def relative(a: Rot3, b: Rot3) -> Rot3:
    """``inverse(a) . b``; for absolute orientations this is the edge R_ab."""
    return a.relative(b)


def geodesic_angle(a: Rot3, b: Rot3) -> float:
    """Angle of ``a^T b`` in [0, pi]; symmetric and bi-invariant."""
    aw, ax, ay, az = a.q
    w, x, y, z = _qmul((aw, -ax, -ay, -az), b.q)
    return 2.0 * math.atan2(math.sqrt(x * x + y * y + z * z), abs(w))


def hat(v: ArrayLike) -> NDArray[np.float64]:
    """Skew-symmetric cross-product matrix of a 3-vector."""
    x, y, z = np.asarray(v, dtype=np.float64)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def exp_matrices(omegas: ArrayLike) -> NDArray[np.float64]:
    """Batched exp: (N, 3) tangent vectors to (N, 3, 3) matrices."""
    return Rotation.from_rotvec(np.asarray(omegas, dtype=np.float64).reshape(-1, 3)).as_matrix()


def log_matrices(matrices: ArrayLike) -> NDArray[np.float64]:
    """Batched log: (N, 3, 3) rotation matrices to (N, 3) tangent vectors."""
    return Rotation.from_matrix(np.asarray(matrices, dtype=np.float64).reshape(-1, 3, 3)).as_rotvec()


def stack_matrices(rotations: Iterable[Rot3]) -> NDArray[np.float64]:
    """(N, 3, 3) stack of rotation matrices."""
    mats = [r.matrix() for r in rotations]
    if not mats:
        return np.zeros((0, 3, 3))
    return np.stack(mats)


def from_matrices(matrices: NDArray[np.float64]) -> list[Rot3]:
    """Convert an (N, 3, 3) stack back to canonical rotations."""
    if len(matrices) == 0:
        return []
    quats = Rotation.from_matrix(matrices).as_quat()
    return [Rot3((q[3], q[0], q[1], q[2])) for q in quats]
