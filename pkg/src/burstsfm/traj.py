"""Camera trajectory accuracy: first-pair scale fixing, rigid alignment, ATE and RPE.

Poses are camera-to-world: ``rotation`` (unit quaternion, w first) orients the
camera in the world and ``translation`` is the camera centre in cm.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .exceptions import DataError, NumericalError


@dataclass
class Trajectory:
    ids: np.ndarray
    quaternions: np.ndarray  # (n, 4) as (w, x, y, z)
    translations: np.ndarray  # (n, 3)
    registered: np.ndarray = None

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.quaternions = np.asarray(self.quaternions, dtype=np.float64).reshape(-1, 4)
        self.translations = np.asarray(self.translations, dtype=np.float64).reshape(-1, 3)
        n = len(self.ids)
        if self.registered is None:
            self.registered = np.ones(n, dtype=bool)
        self.registered = np.asarray(self.registered, dtype=bool)
        if not (len(self.quaternions) == len(self.translations) == len(self.registered) == n):
            raise DataError("trajectory fields have inconsistent lengths")
        if np.any(np.diff(self.ids) <= 0):
            raise DataError("trajectory ids must be unique and sorted")
        norms = np.linalg.norm(self.quaternions, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise DataError("pose quaternions must have unit norm")

    def __len__(self):
        return len(self.ids)

    @classmethod
    def from_rotations(cls, ids, rotations: Rotation, translations, registered=None):
        xyzw = rotations.as_quat()
        wxyz = np.column_stack([xyzw[:, 3], xyzw[:, :3]])
        return cls(ids, wxyz, translations, registered)

    @property
    def rotations(self) -> Rotation:
        q = self.quaternions
        return Rotation.from_quat(np.column_stack([q[:, 1:], q[:, :1]]))

    def subset(self, ids) -> "Trajectory":
        idx = np.searchsorted(self.ids, ids)
        return Trajectory(self.ids[idx], self.quaternions[idx], self.translations[idx],
                          self.registered[idx])


def load_trajectory(path) -> Trajectory:
    """Read ``id qw qx qy qz tx ty tz`` lines (``#`` comments allowed), sorted by id."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 8:
                raise DataError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
            try:
                rows.append((int(parts[0]), *map(float, parts[1:])))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: no poses")
    rows.sort(key=lambda r: r[0])
    arr = np.array([r[1:] for r in rows])
    q = arr[:, :4]
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    return Trajectory([r[0] for r in rows], q, arr[:, 4:])


def save_trajectory(traj: Trajectory, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, q, t, reg in zip(traj.ids, traj.quaternions, traj.translations, traj.registered):
            if reg:
                fh.write(f"{i} " + " ".join(f"{v:.17g}" for v in (*q, *t)) + "\n")


def common_ids(est: Trajectory, gt: Trajectory) -> np.ndarray:
    """Ids registered in ``est`` and present in ``gt``, sorted."""
    return np.intersect1d(est.ids[est.registered], gt.ids[gt.registered])


def fix_scale_first_pair(est: Trajectory, gt: Trajectory):
    """Scale est translations so its first common pair spans the ground-truth distance.

    Returns ``(scaled_trajectory, scale)``.
    """
    ids = common_ids(est, gt)
    if len(ids) < 2:
        raise DataError("need at least two registered poses common to both trajectories")
    e = est.subset(ids[:2]).translations
    g = gt.subset(ids[:2]).translations
    de = np.linalg.norm(e[1] - e[0])
    if de == 0:
        raise NumericalError(f"first registered pair {ids[:2].tolist()} coincides in the estimate")
    s = np.linalg.norm(g[1] - g[0]) / de
    scaled = Trajectory(est.ids, est.quaternions, est.translations * s, est.registered)
    return scaled, float(s)


@dataclass
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray
    degenerate: bool = False


def align_rigid(est: Trajectory, gt: Trajectory):
    """Least-squares rotation + translation taking est positions onto gt.

    Orthogonal Procrustes on centred positions with det = +1. Returns
    ``(RigidTransform, aligned_trajectory)``; collinear inputs set ``degenerate``.
    """
    ids = common_ids(est, gt)
    if len(ids) < 2:
        raise DataError("rigid alignment needs at least two common poses")
    p = est.subset(ids).translations
    q = gt.subset(ids).translations
    pc, qc = p.mean(axis=0), q.mean(axis=0)
    h = (p - pc).T @ (q - qc)
    u, sv, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    trans = qc - rot @ pc
    degenerate = len(ids) < 3 or sv[1] <= 1e-12 * max(sv[0], 1e-300)
    if degenerate:
        warnings.warn("positions are collinear; rotation about the line is unconstrained",
                      RuntimeWarning, stacklevel=2)
    aligned = apply_rigid(est, rot, trans)
    return RigidTransform(rot, trans, bool(degenerate)), aligned


def apply_rigid(traj: Trajectory, rotation, translation) -> Trajectory:
    """Left-multiply every pose by the world transform (rotation, translation)."""
    r = Rotation.from_matrix(rotation)
    rots = r * traj.rotations
    t = traj.translations @ np.asarray(rotation).T + np.asarray(translation)
    return Trajectory.from_rotations(traj.ids, rots, t, traj.registered)


def rotation_angle_deg(rot: Rotation) -> np.ndarray:
    """Geodesic angle of each rotation, in degrees, via atan2 (exact near zero)."""
    xyzw = rot.as_quat().reshape(-1, 4)
    angle = 2.0 * np.arctan2(np.linalg.norm(xyzw[:, :3], axis=1), np.abs(xyzw[:, 3]))
    return np.degrees(angle)


def absolute_instantaneous_error(aligned_est: Trajectory, gt: Trajectory):
    """Per-pose translation (cm) and rotation (deg) errors over common ids.

    Returns ``(ids, trans_err, rot_err)``.
    """
    ids = common_ids(aligned_est, gt)
    if len(ids) == 0:
        raise DataError("trajectories share no registered ids")
    e, g = aligned_est.subset(ids), gt.subset(ids)
    trans = np.linalg.norm(e.translations - g.translations, axis=1)
    rot = rotation_angle_deg(g.rotations.inv() * e.rotations)
    return ids, trans, rot


def relative_pose_error(aligned_est: Trajectory, gt: Trajectory):
    """Errors of consecutive motion increments ``(gt_i^-1 gt_j)^-1 (est_i^-1 est_j)``.

    Pairs run over consecutive commonly registered ids. Returns
    ``(pairs, trans_err, rot_err)``.
    """
    ids = common_ids(aligned_est, gt)
    if len(ids) < 2:
        raise DataError("relative pose error needs at least two common poses")
    e, g = aligned_est.subset(ids), gt.subset(ids)

    def increments(tr: Trajectory):
        r = tr.rotations
        ri, rj = r[:-1], r[1:]
        dt = ri.inv().apply(tr.translations[1:] - tr.translations[:-1])
        return ri.inv() * rj, dt

    re, te = increments(e)
    rg, tg = increments(g)
    err_rot = rg.inv() * re
    err_t = rg.inv().apply(te - tg)
    pairs = np.column_stack([ids[:-1], ids[1:]])
    return pairs, np.linalg.norm(err_t, axis=1), rotation_angle_deg(err_rot)


@dataclass
class TrajectoryError:
    ate_trans_mean: float
    ate_rot_mean: float
    rpe_trans_mean: float
    rpe_rot_mean: float
    scale: float = 1.0
    n_evaluated: int = 0
    n_skipped: int = 0
    ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64), repr=False)
    ate_trans: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    ate_rot: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    rpe_pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)), repr=False)
    rpe_trans: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    rpe_rot: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    def summary_lines(self) -> list[str]:
        return [
            f"poses evaluated: {self.n_evaluated} (skipped unregistered: {self.n_skipped})",
            f"scale: {self.scale:.9g}",
            f"ATE translation mean [cm]: {self.ate_trans_mean:.6g}",
            f"ATE rotation mean [deg]: {self.ate_rot_mean:.6g}",
            f"RPE translation mean [cm]: {self.rpe_trans_mean:.6g}",
            f"RPE rotation mean [deg]: {self.rpe_rot_mean:.6g}",
        ]

    def to_csv(self, path) -> None:
        rpe_t = dict(zip(self.rpe_pairs[:, 1].astype(int).tolist(), self.rpe_trans))
        rpe_r = dict(zip(self.rpe_pairs[:, 1].astype(int).tolist(), self.rpe_rot))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "ate_trans_cm", "ate_rot_deg", "rpe_trans_cm", "rpe_rot_deg"])
            for i, at, ar in zip(self.ids, self.ate_trans, self.ate_rot):
                i = int(i)
                w.writerow([i, f"{at:.9g}", f"{ar:.9g}",
                            f"{rpe_t[i]:.9g}" if i in rpe_t else "",
                            f"{rpe_r[i]:.9g}" if i in rpe_r else ""])


def evaluate_trajectory(est: Trajectory, gt: Trajectory, scale: str = "first-pair",
                        rigid: bool = True) -> TrajectoryError:
    """Scale-fix (``first-pair`` or ``none``), optionally rigid-align, then ATE and RPE.

    Estimated ids missing from ``gt`` are an error; ground-truth poses the
    estimate did not register are skipped and counted.
    """
    unknown = np.setdiff1d(est.ids, gt.ids)
    if len(unknown):
        raise DataError(f"estimated ids not in ground truth: {unknown[:10].tolist()}")
    s = 1.0
    if scale == "first-pair":
        est, s = fix_scale_first_pair(est, gt)
    elif scale != "none":
        raise DataError(f"unknown scale mode {scale!r}")
    if rigid:
        _, est = align_rigid(est, gt)
    ids, at, ar = absolute_instantaneous_error(est, gt)
    pairs, rt, rr = relative_pose_error(est, gt)
    skipped = int(gt.registered.sum()) - len(ids)
    return TrajectoryError(float(at.mean()), float(ar.mean()), float(rt.mean()), float(rr.mean()),
                           s, len(ids), skipped, ids, at, ar, pairs, rt, rr)
