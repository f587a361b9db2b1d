"""Synthetic multiview activity data, missing-view simulation, and the
on-disk dataset format.

Each class is defined by a smooth latent prototype trajectory (a sum of
three random-frequency sinusoids). Every view observes the latent through
a fixed random linear projection plus Gaussian noise at a per-view
signal-to-noise ratio, which acts as the view-quality knob. Real dataset
loaders are out of scope; the directory format written by save_dataset is
the integration point for external converters.
"""

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"ALIADBIN"
FORMAT_VERSION = 1
LATENT_DIM = 8


@dataclass
class ViewSpec:
    name: str
    modality: str  # "inertial" or "pose"
    channels: int
    snr: float = 10.0


@dataclass
class SyntheticSpec:
    num_views: int = 5
    num_classes: int = 4
    window: int = 64
    samples_per_class: int = 40
    views: list[ViewSpec] = field(default_factory=list)
    fraction_unlabeled: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.num_views < 1 or self.num_classes < 2:
            raise ValueError("need at least 1 view and 2 classes")
        if not self.views:
            self.views = [
                ViewSpec(name=f"view_{v}", modality="inertial", channels=3)
                for v in range(self.num_views)
            ]
        if len(self.views) != self.num_views:
            raise ValueError("views list length must equal num_views")
        if any(v.snr <= 0 for v in self.views):
            raise ValueError("SNR must be positive")

    @classmethod
    def from_json(cls, obj: dict) -> "SyntheticSpec":
        views = [ViewSpec(**v) for v in obj.pop("views", [])]
        return cls(views=views, **obj)


@dataclass
class Dataset:
    """Multiview samples: one float32 array [num_samples, channels, window]
    per view, labels (-1 = unlabeled), and a presence mask."""

    views: list[np.ndarray]
    labels: np.ndarray  # int64 [num_samples], -1 for unlabeled
    mask: np.ndarray  # bool [num_samples, V]
    view_specs: list[ViewSpec]
    num_classes: int

    @property
    def num_samples(self) -> int:
        return self.labels.shape[0]

    @property
    def num_views(self) -> int:
        return len(self.views)

    @property
    def window(self) -> int:
        return self.views[0].shape[-1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            views=[v[idx] for v in self.views],
            labels=self.labels[idx],
            mask=self.mask[idx],
            view_specs=self.view_specs,
            num_classes=self.num_classes,
        )

    def labeled_indices(self) -> np.ndarray:
        return np.nonzero(self.labels >= 0)[0]

    def unlabeled_indices(self) -> np.ndarray:
        return np.nonzero(self.labels < 0)[0]


def _prototype(rng: np.random.Generator, length: int) -> np.ndarray:
    """Smooth latent trajectory [LATENT_DIM, length]: sum of 3 sinusoids
    with random frequency, phase and amplitude per latent channel."""
    t = np.linspace(0.0, 1.0, length, dtype=np.float64)
    traj = np.zeros((LATENT_DIM, length))
    for d in range(LATENT_DIM):
        for _ in range(3):
            freq = rng.uniform(0.5, 4.0)
            phase = rng.uniform(0, 2 * math.pi)
            amp = rng.uniform(0.5, 1.5)
            traj[d] += amp * np.sin(2 * math.pi * freq * t + phase)
    return traj


def gen_synthetic(spec: SyntheticSpec) -> Dataset:
    """Deterministic synthetic dataset per spec.seed.

    Per sample: the class prototype is phase-shifted by a small random
    amount, projected into each view's channel space by a fixed random
    matrix, and corrupted with Gaussian noise scaled so that
    signal_power / noise_power equals the view's SNR.
    """
    rng = np.random.default_rng(spec.seed)
    protos = [_prototype(rng, spec.window * 2) for _ in range(spec.num_classes)]
    projections = [
        rng.normal(size=(vs.channels, LATENT_DIM)) / math.sqrt(LATENT_DIM)
        for vs in spec.views
    ]

    n_total = spec.num_classes * spec.samples_per_class
    views = [
        np.zeros((n_total, vs.channels, spec.window), dtype=np.float32)
        for vs in spec.views
    ]
    labels = np.zeros(n_total, dtype=np.int64)
    i = 0
    for cls in range(spec.num_classes):
        for _ in range(spec.samples_per_class):
            offset = rng.integers(0, spec.window)
            latent = protos[cls][:, offset : offset + spec.window]
            for v, vs in enumerate(spec.views):
                clean = projections[v] @ latent
                sig_power = float(np.mean(clean**2))
                noise_std = math.sqrt(sig_power / vs.snr)
                noisy = clean + rng.normal(scale=noise_std, size=clean.shape)
                views[v][i] = noisy.astype(np.float32)
            labels[i] = cls
            i += 1

    if spec.fraction_unlabeled > 0:
        n_unlab = int(round(spec.fraction_unlabeled * n_total))
        drop = rng.permutation(n_total)[:n_unlab]
        labels[drop] = -1

    mask = np.ones((n_total, spec.num_views), dtype=bool)
    return Dataset(views, labels, mask, list(spec.views), spec.num_classes)


def sliding_window(series: np.ndarray, window: int, stride: int) -> list[np.ndarray]:
    """Windows of a [channels, length] series: floor((L-W)/stride)+1 of them."""
    length = series.shape[-1]
    if window > length:
        raise ValueError(f"window {window} exceeds series length {length}")
    return [
        series[..., start : start + window]
        for start in range(0, length - window + 1, stride)
    ]


def _apply_drops(ds: Dataset, drops: np.ndarray) -> Dataset:
    mask = ds.mask & ~drops
    keep = mask.any(axis=1)
    out = ds.subset(np.nonzero(keep)[0])
    out.mask = mask[keep]
    return out


def drop_views_uniform(ds: Dataset, seed: int) -> Dataset:
    """Drop each (sample, view) independently with p = 10^(-3/V), so a
    sample loses all views with probability 0.1%. All-dropped samples are
    removed."""
    p = uniform_drop_rate(ds.num_views)
    rng = np.random.default_rng(seed)
    drops = rng.random(ds.mask.shape) < p
    return _apply_drops(ds, drops)


def uniform_drop_rate(num_views: int) -> float:
    return 10.0 ** (-3.0 / num_views)


def drop_views_rates(ds: Dataset, rates, seed: int) -> Dataset:
    """Independent per-view Bernoulli drops at the given rates."""
    rates = np.asarray(rates, dtype=np.float64)
    if rates.shape != (ds.num_views,):
        raise ValueError(f"need {ds.num_views} rates, got shape {rates.shape}")
    if (rates < 0).any() or (rates >= 1).any():
        raise ValueError("drop rates must be in [0, 1)")
    rng = np.random.default_rng(seed)
    drops = rng.random(ds.mask.shape) < rates[None, :]
    return _apply_drops(ds, drops)


def _warp_function(rng: np.random.Generator, length: int, strength: float = 0.2):
    """Monotone time-warp map [0, L-1] -> [0, L-1] with fixed endpoints."""
    n_knots = 4
    knots_x = np.linspace(0, length - 1, n_knots)
    deltas = rng.uniform(1 - strength, 1 + strength, n_knots - 1)
    knots_y = np.concatenate([[0.0], np.cumsum(deltas * np.diff(knots_x))])
    knots_y *= (length - 1) / knots_y[-1]
    return np.interp(np.arange(length), knots_x, knots_y)


def _random_rotation_3d(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def augment(window: np.ndarray, modality_tag: str, seed: int) -> np.ndarray:
    """Label-preserving augmentation: random amplitude scaling and smooth
    monotone time warping for all modalities, plus a random 3-D rotation
    for inertial (3-channel) views."""
    if modality_tag not in ("inertial", "pose"):
        raise ValueError(f"unknown modality tag {modality_tag!r}")
    rng = np.random.default_rng(seed)
    out = window.astype(np.float64)
    out = out * rng.uniform(0.8, 1.2)
    warp = _warp_function(rng, out.shape[-1])
    out = np.stack([np.interp(warp, np.arange(out.shape[-1]), ch) for ch in out])
    if modality_tag == "inertial":
        if out.shape[0] % 3 != 0:
            raise ValueError("inertial views need channel count divisible by 3")
        rot = _random_rotation_3d(rng)
        for g in range(out.shape[0] // 3):
            out[3 * g : 3 * g + 3] = rot @ out[3 * g : 3 * g + 3]
    return out.astype(window.dtype)


def split_dataset(ds: Dataset, fractions, seed: int):
    """Shuffle and split a dataset into len(fractions)+1 parts; the last
    part takes the remainder."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(ds.num_samples)
    counts = [int(round(f * ds.num_samples)) for f in fractions]
    parts = []
    start = 0
    for c in counts:
        parts.append(ds.subset(np.sort(order[start : start + c])))
        start += c
    parts.append(ds.subset(np.sort(order[start:])))
    return parts


# ---------------------------------------------------------------------------
# on-disk format


def _write_view_bin(path: Path, arr: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<i", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}i", *arr.shape))
        f.write(arr.astype("<f4").tobytes())


def _read_view_bin(path: Path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != MAGIC:
            raise ValueError(f"{path} is not an aliad view file")
        (ndim,) = struct.unpack("<i", f.read(4))
        shape = struct.unpack(f"<{ndim}i", f.read(4 * ndim))
        data = np.frombuffer(f.read(), dtype="<f4")
    return data.reshape(shape).copy()


def save_dataset(ds: Dataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": FORMAT_VERSION,
        "num_views": ds.num_views,
        "views": [
            {"name": vs.name, "modality": vs.modality, "channels": vs.channels}
            for vs in ds.view_specs
        ],
        "window": ds.window,
        "num_classes": ds.num_classes,
        "num_samples": ds.num_samples,
        "has_labels": bool((ds.labels >= 0).any()),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    with open(out / "labels.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_id", "class"])
        for i, y in enumerate(ds.labels):
            writer.writerow([i, "" if y < 0 else int(y)])
    with open(out / "mask.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_id"] + [vs.name for vs in ds.view_specs])
        for i in range(ds.num_samples):
            writer.writerow([i] + [int(b) for b in ds.mask[i]])
    for k, arr in enumerate(ds.views):
        _write_view_bin(out / f"view_{k}.bin", arr)


def load_dataset(in_dir) -> Dataset:
    src = Path(in_dir)
    manifest = json.loads((src / "manifest.json").read_text())
    view_specs = [
        ViewSpec(name=v["name"], modality=v["modality"], channels=v["channels"])
        for v in manifest["views"]
    ]
    n = manifest["num_samples"]
    labels = np.full(n, -1, dtype=np.int64)
    with open(src / "labels.csv", newline="") as f:
        for row in csv.DictReader(f):
            if row["class"] != "":
                labels[int(row["sample_id"])] = int(row["class"])
    mask = np.zeros((n, manifest["num_views"]), dtype=bool)
    with open(src / "mask.csv", newline="") as f:
        reader = csv.reader(f)
        next(reader)
        for row in reader:
            mask[int(row[0])] = [bool(int(x)) for x in row[1:]]
    views = [_read_view_bin(src / f"view_{k}.bin") for k in range(manifest["num_views"])]
    return Dataset(views, labels, mask, view_specs, manifest["num_classes"])
