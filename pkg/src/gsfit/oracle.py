"""Domain boxes, seeded uniform sampling, and instrumented oracle access."""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .expr import Expr


@dataclass(frozen=True)
class DomainBox:
    """Axis-aligned closed box, one [lo, hi] interval per variable."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        if len(self.lo) != len(self.hi) or not self.lo:
            raise ValueError("lo and hi must be non-empty and equally long")
        for a, b in zip(self.lo, self.hi):
            if not a < b:
                raise ValueError(f"degenerate interval [{a}, {b}]")

    @property
    def arity(self) -> int:
        return len(self.lo)

    @staticmethod
    def cube(lo: float, hi: float, arity: int) -> "DomainBox":
        return DomainBox((float(lo),) * arity, (float(hi),) * arity)

    def lo_array(self) -> np.ndarray:
        return np.asarray(self.lo, dtype=float)

    def hi_array(self) -> np.ndarray:
        return np.asarray(self.hi, dtype=float)

    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lo_array() + self.hi_array())

    def contains(self, point: np.ndarray) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.lo_array()) and np.all(p <= self.hi_array()))

    def uniform(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Draw `count` i.i.d. uniform points as an (count, arity) array."""
        u = rng.random((count, self.arity))
        return self.lo_array() + u * (self.hi_array() - self.lo_array())


@dataclass
class SampleSet:
    """Points in a box with (optionally) the oracle values at them."""

    points: np.ndarray
    values: np.ndarray | None
    seed: int

    def __len__(self) -> int:
        return self.points.shape[0]

    def to_csv(self) -> str:
        n = self.points.shape[1]
        header = ",".join([f"x{i}" for i in range(1, n + 1)] + ["f"])
        vals = self.values if self.values is not None else np.full(len(self), np.nan)
        rows = [header]
        for p, v in zip(self.points, vals):
            rows.append(",".join(format(c, ".17g") for c in p) + "," + format(v, ".17g"))
        return "\n".join(rows) + "\n"


def sample_uniform(box: DomainBox, count: int, seed: int) -> SampleSet:
    """Seeded uniform sample of `count` points; values left unset."""
    if count < 1:
        raise ValueError("count must be positive")
    rng = np.random.default_rng(seed)
    return SampleSet(points=box.uniform(count, rng), values=None, seed=seed)


class Oracle:
    """Black-box view of a target function over a box.

    Every point evaluation bumps the counter by one (thread-safe). All
    structure probes in this package go through an Oracle so that probe
    budgets are observable.
    """

    def __init__(self, target: Expr, box: DomainBox):
        if target.arity_bound() > box.arity:
            raise ValueError(
                f"target uses x{target.arity_bound()} but box has arity {box.arity}"
            )
        self.target = target
        self.box = box
        self._count = 0
        self._lock = threading.Lock()

    @property
    def arity(self) -> int:
        return self.box.arity

    @property
    def eval_count(self) -> int:
        return self._count

    def __call__(self, point) -> float:
        return float(self.eval_batch(np.asarray(point, dtype=float).reshape(1, -1))[0])

    def eval_batch(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        vals = self.target.eval_batch(points)
        with self._lock:
            self._count += points.shape[0]
        return vals

    def collect(self, sample: SampleSet) -> SampleSet:
        """Return a copy of `sample` with oracle values filled in."""
        return SampleSet(
            points=sample.points, values=self.eval_batch(sample.points), seed=sample.seed
        )

    def sample(self, count: int, seed: int) -> SampleSet:
        """Uniform sample with values; rows with invalid values are redrawn.

        Up to 20 redraw rounds; points that stay invalid (a measure-zero
        singularity being hit repeatedly) raise.
        """
        rng = np.random.default_rng(seed)
        pts = self.box.uniform(count, rng)
        vals = self.eval_batch(pts)
        for _ in range(20):
            bad = ~np.isfinite(vals)
            if not bad.any():
                break
            pts[bad] = self.box.uniform(int(bad.sum()), rng)
            vals[bad] = self.eval_batch(pts[bad])
        else:
            raise RuntimeError("could not draw a fully valid sample from the box")
        return SampleSet(points=pts, values=vals, seed=seed)


def make_oracle(target: Expr, box: DomainBox) -> Oracle:
    """Wrap a target expression as an instrumented oracle (counter at 0)."""
    return Oracle(target, box)
