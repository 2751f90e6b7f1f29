"""Synthetic symmetric-shape datasets and symmetry-aware pose metrics.

Five shapes are supported. Three have finite proper rotation groups built by
closure over two generators each:

- ``tet``: 12 elements (two order-3 axes of a regular tetrahedron),
- ``cube``: 24 elements (quarter turns about two face normals),
- ``icosa``: 60 elements (an order-5 vertex axis and an order-3 face axis).

Two have continuous symmetry. A circle component is stored as a pair
``(axis, flip)`` and denotes the set ``{flip o Exp(theta * axis)}`` over all
theta; ``flip`` is None for the plain axis circle.

- ``cone``: one circle about +z, discrete part = {identity},
- ``cyl``: the +z circle plus a second circle pre-rotated by a half turn
  about +x (end-over-end flip), giving two circles of equivalent poses.

Datasets are (shape_id, pose) records; no images exist anywhere in this
package, the shape id itself is the conditioning signal. ``gen_dataset``
draws poses uniformly at random. ``gen_orbit_dataset`` instead fixes one
canonical pose per shape and emits random symmetry-equivalents of it, which
makes the conditional pose distribution given a shape id exactly the
multimodal distribution the diffusion model is meant to learn.

Equivalence between poses is measured by ``equivalent_distance``: the
minimum geodesic angle between a prediction and any symmetry-equivalent of
the ground truth, in degrees. Continuous components are minimized by a
720-point scan refined with golden-section search.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._batch import quat_mul
from .lie_core import ParamMode, RigidTransform, Rotation, so3_exp

SHAPES = ("tet", "cube", "icosa", "cone", "cyl")

# Expected discrete group orders; closure aborts above the largest.
_GROUP_SIZES = {"tet": 12, "cube": 24, "icosa": 60, "cone": 1, "cyl": 1}
_CLOSURE_CAP = 120
_DEDUP_TOL = 1e-9

# Continuous minimization: coarse grid resolution and refinement tolerance.
_SCAN_POINTS = 720
_GOLDEN_TOL = 1e-4

_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SymmetrySpec:
    """Proper symmetry group of one shape.

    ``discrete`` is closed under composition and inverse and contains the
    identity. ``continuous_axes`` holds zero, one, or two circle components
    as (unit axis, optional flip) pairs; the equivalence set of a pose X is
    {X o D o F o Exp(theta axis)} over discrete D, circle components, and
    all angles theta.
    """

    shape: str
    discrete: tuple[Rotation, ...]
    continuous_axes: tuple[tuple[np.ndarray, Optional[Rotation]], ...]


@dataclass(frozen=True)
class PoseSample:
    shape_id: int
    pose: RigidTransform
    mode: ParamMode


@dataclass(frozen=True)
class DatasetHeader:
    """Metadata stored on the first line of a dataset file.

    ``shapes`` defines the shape_id mapping: id k means shapes[k]. For
    orbit-style files ``canonical`` lists the per-shape ground-truth pose,
    aligned with ``shapes``; it is None for uniform files.
    """

    mode: ParamMode
    shapes: tuple[str, ...]
    translation_range: tuple[float, float]
    seed: Optional[int] = None
    kind: str = "uniform"
    canonical: Optional[tuple[RigidTransform, ...]] = None


def _close_group(generators: list[Rotation]) -> tuple[Rotation, ...]:
    """Breadth-first closure of a finite rotation group from its generators.

    Quaternion sign is a representation artifact, so element identity uses
    min(|q - p|, |q + p|); half-turn elements sit at w = 0 where a plain
    canonical-sign comparison is unstable.
    """
    elems = [Rotation.identity()]
    quats = [elems[0].q]
    frontier = list(range(len(elems)))
    while frontier:
        fresh: list[int] = []
        for idx in frontier:
            for gen in generators:
                prod = elems[idx].compose(gen)
                known = any(
                    min(np.linalg.norm(prod.q - q), np.linalg.norm(prod.q + q))
                    < _DEDUP_TOL
                    for q in quats
                )
                if not known:
                    elems.append(prod)
                    quats.append(prod.q)
                    fresh.append(len(elems) - 1)
                    if len(elems) > _CLOSURE_CAP:
                        raise RuntimeError("symmetry closure did not terminate")
        frontier = fresh
    return tuple(elems)


@functools.lru_cache(maxsize=None)
def symmetry_group(shape: str) -> SymmetrySpec:
    """Return the proper symmetry group of one of the five known shapes."""
    if shape not in SHAPES:
        raise ValueError(f"unknown shape {shape!r}, expected one of {SHAPES}")
    z_axis = np.array([0.0, 0.0, 1.0])
    if shape == "tet":
        third = 2.0 * math.pi / 3.0
        gens = [
            so3_exp(np.array([1.0, 1.0, 1.0]) / math.sqrt(3.0) * third),
            so3_exp(np.array([1.0, -1.0, -1.0]) / math.sqrt(3.0) * third),
        ]
        discrete = _close_group(gens)
        axes: tuple = ()
    elif shape == "cube":
        gens = [
            so3_exp(np.array([0.0, 0.0, math.pi / 2.0])),
            so3_exp(np.array([math.pi / 2.0, 0.0, 0.0])),
        ]
        discrete = _close_group(gens)
        axes = ()
    elif shape == "icosa":
        golden = (1.0 + math.sqrt(5.0)) / 2.0
        vertex = np.array([0.0, 1.0, golden])
        face = np.array([golden / 3.0, 0.0, (2.0 * golden + 1.0) / 3.0])
        gens = [
            so3_exp(vertex / np.linalg.norm(vertex) * (2.0 * math.pi / 5.0)),
            so3_exp(face / np.linalg.norm(face) * (2.0 * math.pi / 3.0)),
        ]
        discrete = _close_group(gens)
        axes = ()
    elif shape == "cone":
        discrete = (Rotation.identity(),)
        axes = ((z_axis, None),)
    else:
        discrete = (Rotation.identity(),)
        flip = so3_exp(np.array([math.pi, 0.0, 0.0]))
        axes = ((z_axis, None), (z_axis, flip))
    expected = _GROUP_SIZES[shape]
    if len(discrete) != expected:
        raise RuntimeError(
            f"{shape} closure produced {len(discrete)} elements, expected {expected}"
        )
    for axis, _ in axes:
        axis.setflags(write=False)
    return SymmetrySpec(shape=shape, discrete=discrete, continuous_axes=axes)


def _as_spec(shape) -> SymmetrySpec:
    if isinstance(shape, SymmetrySpec):
        return shape
    return symmetry_group(shape)


def _check_range(translation_range) -> tuple[float, float]:
    lo, hi = (float(translation_range[0]), float(translation_range[1]))
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
        raise ValueError(f"translation range must be ordered and finite, got ({lo}, {hi})")
    return lo, hi


def _check_shapes(shapes) -> tuple[str, ...]:
    shapes = tuple(shapes)
    if not shapes:
        raise ValueError("need at least one shape")
    for s in shapes:
        if s not in SHAPES:
            raise ValueError(f"unknown shape {s!r}, expected one of {SHAPES}")
    if len(set(shapes)) != len(shapes):
        raise ValueError("duplicate shapes in dataset request")
    return shapes


def random_rotation(rng: np.random.Generator) -> Rotation:
    """Uniform draw on SO(3): a normalized 4-component Gaussian quaternion."""
    return Rotation.from_quat(rng.standard_normal(4))


def _random_translation(rng, lo: float, hi: float, mode: ParamMode) -> np.ndarray:
    if mode == ParamMode.SO3:
        return np.zeros(3)
    return rng.uniform(lo, hi, size=3)


def gen_dataset(shapes, n_per_shape, translation_range, rng,
                mode=ParamMode.SE3) -> list[PoseSample]:
    """Draw poses uniformly: rotations uniform on SO(3), translations uniform
    per axis in ``translation_range`` (fixed at zero in SO3 mode).

    Samples are ordered by shape, n_per_shape each; shape_id indexes the
    ``shapes`` sequence.
    """
    shapes = _check_shapes(shapes)
    lo, hi = _check_range(translation_range)
    mode = ParamMode(mode)
    if n_per_shape < 1:
        raise ValueError("n_per_shape must be at least 1")
    out: list[PoseSample] = []
    for sid in range(len(shapes)):
        for _ in range(n_per_shape):
            pose = RigidTransform(random_rotation(rng),
                                  _random_translation(rng, lo, hi, mode))
            out.append(PoseSample(shape_id=sid, pose=pose, mode=mode))
    return out


def _random_symmetry(spec: SymmetrySpec, rng) -> Rotation:
    """One uniform draw from the (possibly continuous) symmetry set."""
    elem = spec.discrete[rng.integers(len(spec.discrete))]
    if spec.continuous_axes:
        axis, flip = spec.continuous_axes[rng.integers(len(spec.continuous_axes))]
        circ = so3_exp(axis * rng.uniform(0.0, 2.0 * math.pi))
        if flip is not None:
            circ = flip.compose(circ)
        elem = elem.compose(circ)
    return elem


def gen_orbit_dataset(shapes, n_per_shape, translation_range, rng,
                      mode=ParamMode.SE3
                      ) -> tuple[list[PoseSample], tuple[RigidTransform, ...]]:
    """Fix one canonical pose per shape and emit symmetry-equivalents of it.

    Every record for shape k is (R_k o S, T_k) with S drawn uniformly from
    the symmetry set, so the records are exactly the poses an annotator
    could have reported for one static scene. Returns the samples plus the
    canonical poses aligned with ``shapes``.
    """
    shapes = _check_shapes(shapes)
    lo, hi = _check_range(translation_range)
    mode = ParamMode(mode)
    if n_per_shape < 1:
        raise ValueError("n_per_shape must be at least 1")
    canonical = []
    for _ in shapes:
        canonical.append(RigidTransform(random_rotation(rng),
                                        _random_translation(rng, lo, hi, mode)))
    out: list[PoseSample] = []
    for sid, name in enumerate(shapes):
        spec = symmetry_group(name)
        base = canonical[sid]
        for _ in range(n_per_shape):
            rot = base.rot.compose(_random_symmetry(spec, rng))
            out.append(PoseSample(shape_id=sid,
                                  pose=RigidTransform(rot, base.trans),
                                  mode=mode))
    return out, tuple(canonical)


def _quat_angles(orbit: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Geodesic angles between each orbit row and one quaternion.

    Uses the chord form 4 asin(d/2), accurate near zero where the arccos of
    a dot product loses half the digits.
    """
    d = np.minimum(np.linalg.norm(orbit - q, axis=1),
                   np.linalg.norm(orbit + q, axis=1))
    return 4.0 * np.arcsin(np.clip(d / 2.0, 0.0, 1.0))


def _circle_quats(axis: np.ndarray, flip: Optional[Rotation],
                  thetas: np.ndarray) -> np.ndarray:
    half = 0.5 * thetas[:, None]
    quats = np.concatenate([np.cos(half), np.sin(half) * axis[None, :]], axis=1)
    if flip is not None:
        quats = quat_mul(np.broadcast_to(flip.q, quats.shape), quats)
    return quats


def _golden_section(f, lo: float, hi: float, tol: float) -> float:
    """Minimize a unimodal scalar function on [lo, hi] to bracket width tol."""
    ratio = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - ratio * (b - a)
    d = a + ratio * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - ratio * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + ratio * (b - a)
            fd = f(d)
    return min(fc, fd)


def equivalent_distance(shape, gt: Rotation, pred: Rotation) -> float:
    """Minimum angle, in degrees, between pred and any pose equivalent to gt.

    ``shape`` may be a shape name or a prebuilt SymmetrySpec. The discrete
    part is an exact minimum over the group; each continuous circle is
    scanned at 720 points and the best cell is refined by golden-section
    search to 1e-4 rad.
    """
    spec = _as_spec(shape)
    disc = np.stack([s.q for s in spec.discrete])
    orbit = quat_mul(np.broadcast_to(gt.q, disc.shape), disc)
    best = float(np.min(_quat_angles(orbit, pred.q)))
    for axis, flip in spec.continuous_axes:
        thetas = np.linspace(0.0, 2.0 * math.pi, _SCAN_POINTS, endpoint=False)
        circ = quat_mul(np.broadcast_to(gt.q, (len(thetas), 4)),
                        _circle_quats(axis, flip, thetas))
        angles = _quat_angles(circ, pred.q)
        k = int(np.argmin(angles))
        cell = 2.0 * math.pi / _SCAN_POINTS

        def at(theta: float) -> float:
            row = _circle_quats(axis, flip, np.array([theta]))
            return float(_quat_angles(quat_mul(gt.q[None, :], row), pred.q)[0])

        refined = _golden_section(at, thetas[k] - cell, thetas[k] + cell,
                                  _GOLDEN_TOL)
        best = min(best, refined)
    return math.degrees(best)


def _fmt(x: float) -> str:
    # 17 significant digits round-trips any float64 exactly.
    return "%.17g" % x


def _fmt_vec(v) -> str:
    return "[" + ", ".join(_fmt(float(c)) for c in v) + "]"


def _pose_json(pose: RigidTransform) -> str:
    return '{"quat": %s, "trans": %s}' % (_fmt_vec(pose.rot.q), _fmt_vec(pose.trans))


def save_dataset(path, header: DatasetHeader, samples) -> int:
    """Write a dataset file: one JSON header line, then one line per sample.

    All floats are printed with 17 significant digits, so writing is
    byte-deterministic and loading reproduces every value exactly.
    Returns the number of sample rows written.
    """
    if header.canonical is not None and len(header.canonical) != len(header.shapes):
        raise ValueError("canonical poses must align with shapes")
    shapes_json = json.dumps(list(header.shapes))
    seed_json = "null" if header.seed is None else str(int(header.seed))
    canon_json = "null"
    if header.canonical is not None:
        canon_json = "[" + ", ".join(_pose_json(p) for p in header.canonical) + "]"
    head = (
        '{"schema": %d, "kind": %s, "mode": %s, "seed": %s, '
        '"translation_range": %s, "shapes": %s, "canonical": %s}'
        % (
            _SCHEMA_VERSION,
            json.dumps(header.kind),
            json.dumps(header.mode.value),
            seed_json,
            _fmt_vec(header.translation_range),
            shapes_json,
            canon_json,
        )
    )
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(head + "\n")
        for s in samples:
            fh.write('{"shape_id": %d, "pose": %s}\n' % (s.shape_id, _pose_json(s.pose)))
            n += 1
    return n


def _pose_from_json(obj) -> RigidTransform:
    return RigidTransform(Rotation.from_quat(np.asarray(obj["quat"], dtype=np.float64)),
                          np.asarray(obj["trans"], dtype=np.float64))


def load_dataset(path) -> tuple[DatasetHeader, list[PoseSample]]:
    with open(path, "r", encoding="utf-8") as fh:
        head = json.loads(fh.readline())
        if head.get("schema") != _SCHEMA_VERSION:
            raise ValueError(f"unsupported dataset schema {head.get('schema')!r}")
        mode = ParamMode(head["mode"])
        canonical = None
        if head.get("canonical") is not None:
            canonical = tuple(_pose_from_json(p) for p in head["canonical"])
        header = DatasetHeader(
            mode=mode,
            shapes=tuple(head["shapes"]),
            translation_range=(float(head["translation_range"][0]),
                               float(head["translation_range"][1])),
            seed=None if head.get("seed") is None else int(head["seed"]),
            kind=head["kind"],
            canonical=canonical,
        )
        n_shapes = len(header.shapes)
        samples = []
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            sid = int(obj["shape_id"])
            if not 0 <= sid < n_shapes:
                raise ValueError(f"shape_id {sid} outside header shapes")
            samples.append(PoseSample(shape_id=sid,
                                      pose=_pose_from_json(obj["pose"]),
                                      mode=mode))
    return header, samples
