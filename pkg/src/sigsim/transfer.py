"""Gate transfer functions over trained networks, with valid-region containment.

A transfer model predicts the next output transition of a gate from the
time gap between the input transition and the previous output transition,
the input slope and the previous output slope.  Queries outside the
populated part of that 3-d space are moved onto it before the networks see
them; the populated part is approximated by a dilated voxel grid.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .mlp import DimensionMismatch, MlpNetwork, load_model, save_model

MIN_DELAY = 1e-3  # scaled units, 0.1 ps
MIN_SLOPE = 1e-2
DEFAULT_RESOLUTION = 32


class EmptyTrainingSet(ValueError):
    pass


class ModelMissing(KeyError):
    pass


class TransferInput(NamedTuple):
    T: float
    a_in: float
    a_prev_out: float


class TransferOutput(NamedTuple):
    a_out: float
    delay: float


class ValidRegion:
    """Occupied voxels of a ``resolution``³ grid spanning the training bounds."""

    def __init__(self, lo, hi, resolution: int, voxels):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.resolution = int(resolution)
        vox = np.asarray(voxels, dtype=np.int64).reshape(-1, 3)
        if vox.shape[0] == 0:
            raise EmptyTrainingSet("region has no occupied voxel")
        if np.any(vox < 0) or np.any(vox >= self.resolution):
            raise ValueError("voxel index out of range")
        if not np.all(self.hi > self.lo):
            raise ValueError("region bounds must have positive extent")
        self.voxels = np.unique(vox, axis=0)
        self.grid = np.zeros((self.resolution,) * 3, dtype=bool)
        self.grid[tuple(self.voxels.T)] = True
        self.width = (self.hi - self.lo) / self.resolution
        self.centers = self.lo + (self.voxels + 0.5) * self.width
        self._tree = cKDTree(self.voxels + 0.5)

    def __len__(self) -> int:
        return self.voxels.shape[0]

    def _index_coords(self, x: np.ndarray) -> np.ndarray:
        return (x - self.lo) / (self.hi - self.lo) * self.resolution

    def voxel_of(self, x) -> tuple[int, int, int] | None:
        """Grid cell containing ``x``, or None outside the bounds."""
        x = np.asarray(x, dtype=float)
        if np.any(x < self.lo) or np.any(x > self.hi):
            return None
        idx = np.minimum(np.floor(self._index_coords(x)).astype(np.int64), self.resolution - 1)
        return tuple(int(i) for i in idx)

    def contains(self, x) -> bool:
        v = self.voxel_of(x)
        return v is not None and bool(self.grid[v])

    def nearest_center(self, x) -> np.ndarray:
        _, i = self._tree.query(self._index_coords(np.asarray(x, dtype=float)))
        return self.centers[i]

    def to_text(self) -> str:
        lines = [f"resolution {self.resolution}",
                 "lo " + " ".join(f"{v:.17g}" for v in self.lo),
                 "hi " + " ".join(f"{v:.17g}" for v in self.hi),
                 f"voxels {len(self)}"]
        lines.extend(f"{i} {j} {k}" for i, j, k in self.voxels)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_lines(cls, lines: list[str]) -> ValidRegion:
        head = {}
        it = iter(lines)
        for _ in range(4):
            key, *vals = next(it).split()
            head[key] = vals
        n = int(head["voxels"][0])
        vox = [tuple(int(v) for v in next(it).split()) for _ in range(n)]
        return cls([float(v) for v in head["lo"]], [float(v) for v in head["hi"]],
                   int(head["resolution"][0]), vox)


def build_region(points, resolution: int = DEFAULT_RESOLUTION) -> ValidRegion:
    """Voxelize training inputs and dilate the occupied set by one cell (26-neighbourhood)."""
    pts = np.asarray([tuple(p) for p in points], dtype=float).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise EmptyTrainingSet("no training points")
    if not np.all(np.isfinite(pts)):
        raise ValueError("region points must be finite")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    flat = hi <= lo
    pad = np.maximum(np.abs(lo) * 1e-3, 1e-6)
    lo = np.where(flat, lo - pad, lo)
    hi = np.where(flat, hi + pad, hi)
    idx = np.floor((pts - lo) / (hi - lo) * resolution).astype(np.int64)
    idx = np.clip(idx, 0, resolution - 1)
    occ = np.unique(idx, axis=0)
    offsets = np.array(list(itertools.product((-1, 0, 1), repeat=3)))
    dil = (occ[:, None, :] + offsets[None, :, :]).reshape(-1, 3)
    dil = dil[np.all((dil >= 0) & (dil < resolution), axis=1)]
    return ValidRegion(lo, hi, resolution, dil)


def project(region: ValidRegion, x: TransferInput) -> TransferInput:
    """Move ``x`` into the valid region.

    Gaps beyond the largest trained gap (including the +inf of a dummy
    previous transition) saturate to that bound first.  A point inside an
    occupied voxel is returned as is, anything else maps to the nearest
    occupied voxel centre in grid-normalized coordinates.
    """
    v = np.array([x.T, x.a_in, x.a_prev_out], dtype=float)
    v = np.nan_to_num(v, nan=0.0, posinf=np.inf, neginf=-np.inf)
    v = np.where(np.isnan(v), 0.5 * (region.lo + region.hi), v)
    if v[0] > region.hi[0]:
        v[0] = region.hi[0]
    v = np.clip(v, region.lo - 1e6 * (region.hi - region.lo), region.hi + 1e6 * (region.hi - region.lo))
    if region.contains(v):
        return TransferInput(float(v[0]), float(v[1]), float(v[2]))
    c = region.nearest_center(v)
    return TransferInput(float(c[0]), float(c[1]), float(c[2]))


@dataclass
class TransferModel:
    rise_slope: MlpNetwork
    rise_delay: MlpNetwork
    fall_slope: MlpNetwork
    fall_delay: MlpNetwork
    rise_region: ValidRegion
    fall_region: ValidRegion
    gate_kind: str = "NOR2"
    fanout_class: int = 1
    dummy_slope: float = 50.0
    provenance: str = ""
    stats: dict = field(default_factory=dict)  # summary of the training table
    calls: Counter = field(default_factory=Counter, compare=False, repr=False)

    def __post_init__(self):
        for name in ("rise_slope", "rise_delay", "fall_slope", "fall_delay"):
            net = getattr(self, name)
            if net.n_inputs != 3:
                raise DimensionMismatch(f"{name} takes {net.n_inputs} features, transfer slots need 3")
        if not self.dummy_slope > 0:
            raise ValueError("dummy_slope is a magnitude and must be positive")

    @property
    def key(self) -> tuple[str, int]:
        return (self.gate_kind, self.fanout_class)


def apply_transfer(model: TransferModel, x: TransferInput) -> TransferOutput:
    """Predict ``(a_out, b_out - b_in)`` for one input transition of an inverting gate."""
    rising = x.a_in > 0
    if rising:
        model.calls["rise"] += 1
        region, slope_net, delay_net = model.rise_region, model.rise_slope, model.rise_delay
    else:
        model.calls["fall"] += 1
        region, slope_net, delay_net = model.fall_region, model.fall_slope, model.fall_delay
    p = project(region, x)
    feats = np.array([p.T, p.a_in, p.a_prev_out])
    a_raw = slope_net.forward(feats)
    delay = delay_net.forward(feats)
    if not math.isfinite(delay) or delay < MIN_DELAY:
        delay = MIN_DELAY
    mag = abs(a_raw) if math.isfinite(a_raw) else MIN_SLOPE
    mag = max(mag, MIN_SLOPE)
    return TransferOutput(-mag if rising else mag, delay)


def fanout_class(load: int) -> int:
    return 1 if load <= 1 else 2


def constant_network(value: float) -> MlpNetwork:
    return MlpNetwork((3, 10, 10, 5, 1), y_mean=value)


def stub_model(delay: float, slope: float, gate_kind: str = "NOR2", fanout_class: int = 1) -> TransferModel:
    """Constant delay and slope magnitude, for wiring tests and digital equivalence checks."""
    region = build_region([(0.0, 1.0, 1.0)], resolution=4)
    return TransferModel(constant_network(slope), constant_network(delay),
                         constant_network(-slope), constant_network(delay),
                         region, region, gate_kind, fanout_class, dummy_slope=abs(slope))


class ModelRegistry:
    """Transfer models keyed by gate kind and fan-out class."""

    def __init__(self, models=()):
        self._models: dict[tuple[str, int], TransferModel] = {}
        for m in models:
            self.register(m)

    def register(self, model: TransferModel) -> None:
        self._models[model.key] = model

    def get(self, kind: str, load: int = 1) -> TransferModel:
        key = (kind, fanout_class(load))
        try:
            return self._models[key]
        except KeyError:
            raise ModelMissing(f"no transfer model for {kind} with fan-out class {key[1]}") from None

    def __contains__(self, key) -> bool:
        return key in self._models

    def __iter__(self):
        return iter(sorted(self._models.values(), key=lambda m: m.key))

    def __len__(self) -> int:
        return len(self._models)

    @classmethod
    def uniform(cls, delay: float, slope: float, kinds=("INV", "NOR2")) -> ModelRegistry:
        return cls(stub_model(delay, slope, k, c) for k in kinds for c in (1, 2))

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for m in self:
            save_bundle(m, d / bundle_name(*m.key))

    @classmethod
    def load(cls, directory) -> ModelRegistry:
        d = Path(directory)
        bundles = sorted(p for p in d.iterdir() if (p / "meta.json").is_file())
        if not bundles:
            raise FileNotFoundError(f"no model bundles under {d}")
        return cls(load_bundle(p) for p in bundles)


def bundle_name(kind: str, cls: int) -> str:
    return f"{kind}_fo{cls}"


NETWORK_FILES = ("rise_slope", "rise_delay", "fall_slope", "fall_delay")


def save_bundle(model: TransferModel, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name in NETWORK_FILES:
        save_model(getattr(model, name), d / f"{name}.mlp")
    (d / "region.txt").write_text("[rise]\n" + model.rise_region.to_text()
                                  + "[fall]\n" + model.fall_region.to_text())
    meta = {"gate_kind": model.gate_kind, "fanout_class": model.fanout_class,
            "dummy_slope": model.dummy_slope, "provenance": model.provenance, "stats": model.stats}
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_bundle(directory) -> TransferModel:
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text())
    nets = {name: load_model(d / f"{name}.mlp") for name in NETWORK_FILES}
    lines = [ln for ln in (d / "region.txt").read_text().splitlines() if ln.strip()]
    try:
        r_at, f_at = lines.index("[rise]"), lines.index("[fall]")
    except ValueError:
        raise ValueError(f"{d / 'region.txt'}: missing [rise]/[fall] sections") from None
    rise = ValidRegion.from_lines(lines[r_at + 1:f_at])
    fall = ValidRegion.from_lines(lines[f_at + 1:])
    return TransferModel(nets["rise_slope"], nets["rise_delay"], nets["fall_slope"], nets["fall_delay"],
                         rise, fall, meta["gate_kind"], int(meta["fanout_class"]),
                         float(meta["dummy_slope"]), meta.get("provenance", ""), meta.get("stats", {}))


BUNDLE_FILES = tuple(f"{n}.mlp" for n in NETWORK_FILES) + ("region.txt", "meta.json")


def bundle_hash(directory) -> str:
    """SHA-256 over the model files of a bundle (run manifests excluded)."""
    h = hashlib.sha256()
    d = Path(directory)
    for name in BUNDLE_FILES:
        h.update(name.encode())
        h.update((d / name).read_bytes())
    return h.hexdigest()
