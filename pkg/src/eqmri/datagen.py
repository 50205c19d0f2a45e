"""Synthetic data: phantoms, coil maps, measurement pairs, dataset files.

Every training sample is a pair of retrospective measurements of the same
image drawn with two independent masks from one family, plus independent
complex Gaussian noise on the sampled entries. The groundtruth image is
stored in every dataset but handed out only through an access-checked
accessor, so self-supervised training provably never touches it.

On-disk layout (one directory per dataset): a flat ``manifest.txt`` with the
keys version, h, w, coils, R, variant, acs, sigma, n_pairs, master_seed plus
a sha256 line per array file, and raw little-endian arrays: complex data as
interleaved float32 re/im, masks as 0/1 bytes. Nothing in the directory
depends on wall-clock time, so identical inputs give byte-identical output.
"""

import hashlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .linops import forward_op
from .sampling import MaskFamily, SamplingMask, draw_mask, make_family


class DatasetFormatError(Exception):
    """Raised when a dataset directory is malformed, truncated or corrupt."""


class GroundtruthAccessError(RuntimeError):
    """Raised when groundtruth is read from a dataset that has it locked."""


# fixed texture band shared by every phantom: (cycles across the field of
# view, orientation in radians) of the oriented ripples added below
_TEXTURE_BAND = ((6.0, 0.40), (8.5, 1.05), (9.5, 1.85), (11.0, 2.50), (7.5, 2.95))


def generate_phantom(seed: int, h: int, w: int) -> np.ndarray:
    """Random piecewise-smooth complex phantom, magnitude in [0, 1].

    A head-like support ellipse carries a handful of random ellipses (sharp
    edges), smooth Gaussian bumps (gentle shading) and oriented mid-frequency
    ripples drawn from a band shared by the whole family (tissue-like fine
    texture), with a slowly varying phase. Deterministic in the seed.
    """
    if h < 2 or w < 2:
        raise ValueError(f"phantom grid must be at least 2x2, got {h}x{w}")
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(-1.0, 1.0, h), np.linspace(-1.0, 1.0, w), indexing="ij")

    def ellipse(cy, cx, ay, ax, angle):
        c, s = np.cos(angle), np.sin(angle)
        u = (c * (yy - cy) + s * (xx - cx)) / ay
        v = (-s * (yy - cy) + c * (xx - cx)) / ax
        return (u * u + v * v <= 1.0).astype(np.float64)

    support = ellipse(0.0, 0.0, 0.82, 0.78, 0.0)
    mag = 0.45 * support
    for _ in range(int(rng.integers(4, 9))):
        cy, cx = rng.uniform(-0.45, 0.45, size=2)
        ay, ax = rng.uniform(0.08, 0.42, size=2)
        angle = rng.uniform(0.0, np.pi)
        amp = rng.uniform(0.15, 0.45) * rng.choice([-1.0, 1.0, 1.0])
        mag += amp * ellipse(cy, cx, ay, ax, angle)
    for _ in range(int(rng.integers(2, 5))):
        cy, cx = rng.uniform(-0.5, 0.5, size=2)
        width = rng.uniform(0.12, 0.35)
        amp = rng.uniform(-0.25, 0.35)
        mag += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * width**2))
    base = np.clip(mag * support, 0.0, None)
    peak = base.max()
    base = base / peak if peak > 0 else support
    # family-consistent oriented texture: every phantom carries the same
    # mid-frequency wave vectors with per-image random phase, amplitude and
    # smooth spatial envelope. The base is normalized first so the texture
    # amplitude is not diluted by the peak of the random structures.
    # Edge-preserving smoothers pay for retaining this band; a learned prior
    # can exploit its consistency across the family.
    mag = 0.80 * base
    for cyc, ang in _TEXTURE_BAND:
        psi = rng.uniform(0.0, 2.0 * np.pi)
        amp = rng.uniform(0.07, 0.15)
        cy, cx = rng.uniform(-0.35, 0.35, size=2)
        width = rng.uniform(0.4, 0.9)
        env = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * width**2))
        mag += amp * env * np.cos(np.pi * cyc * (np.sin(ang) * yy + np.cos(ang) * xx) + psi)
    mag = np.clip(mag * support, 0.0, 1.0)

    phase = rng.uniform(-0.4, 0.4) * np.ones_like(mag)
    for _ in range(3):
        fy, fx = rng.uniform(0.2, 0.9, size=2)
        psi = rng.uniform(0.0, 2.0 * np.pi)
        phase += rng.uniform(0.1, 0.3) * np.sin(np.pi * (fy * yy + fx * xx) + psi)
    return mag * np.exp(1j * phase)


def simulate_coils(h: int, w: int, coils: int) -> np.ndarray:
    """Deterministic coil maps: Gaussian lobes on a ring, linear phases.

    Normalized so sum_c |S_c|^2 == 1 at every pixel; a single coil therefore
    has unit magnitude everywhere.
    """
    if coils < 1:
        raise ValueError(f"need at least one coil, got {coils}")
    yy, xx = np.meshgrid((np.arange(h) + 0.5) / h, (np.arange(w) + 0.5) / w, indexing="ij")
    maps = np.empty((coils, h, w), dtype=np.complex128)
    for j in range(coils):
        if coils == 1:
            cy = cx = 0.5
            ang = 0.0
        else:
            ang = 2.0 * np.pi * (j + 0.5) / coils
            cy = 0.5 - 0.27 * np.cos(ang)
            cx = 0.5 + 0.27 * np.sin(ang)
        mag = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * 0.3**2))
        phase = 0.45 * np.pi * (np.sin(ang) * (xx - 0.5) - np.cos(ang) * (yy - 0.5))
        maps[j] = mag * np.exp(1j * phase)
    rss = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return maps / rss


@dataclass
class TrainingPair:
    """Two measurements of one image under independently drawn masks."""

    y: np.ndarray
    mask: SamplingMask
    y_prime: np.ndarray
    mask_prime: SamplingMask
    groundtruth: np.ndarray | None = None


def simulate_pair(
    x: np.ndarray,
    smaps: np.ndarray,
    family: MaskFamily,
    sigma: float,
    rng: np.random.Generator,
) -> TrainingPair:
    """Draw (mask, mask') and noisy measurements of x; arrays in complex64.

    Draw order is fixed (mask, mask', noise, noise') and the noise arrays are
    always full-size, so the random stream consumed does not depend on the
    masks. Noise is i.i.d. Gaussian with std sigma per real component, on
    sampled entries only.
    """
    if sigma < 0:
        raise ValueError(f"noise level must be non-negative, got {sigma}")
    gt = np.ascontiguousarray(x, dtype=np.complex64)
    gt64 = gt.astype(np.complex128)
    mask = draw_mask(family, rng)
    mask_prime = draw_mask(family, rng)
    ys = []
    for m in (mask, mask_prime):
        clean = forward_op(gt64, smaps, m)
        noise = rng.standard_normal(clean.shape) + 1j * rng.standard_normal(clean.shape)
        ys.append(((clean + sigma * noise * m.lines)).astype(np.complex64))
    return TrainingPair(ys[0], mask, ys[1], mask_prime, groundtruth=gt)


@dataclass(frozen=True)
class DatasetMeta:
    h: int
    w: int
    coils: int
    accel: int
    variant: str
    acs: int
    sigma: float
    n_pairs: int
    master_seed: int


class Dataset:
    """Pairs plus coil maps, with access-checked groundtruth.

    ``pair(i)`` never exposes groundtruth; it is reachable only through
    ``groundtruth(i)``, which raises once the dataset is locked. Coil maps
    are stored in the file precision (complex64) and renormalized to float64
    on access so the partition-of-unity invariant survives storage rounding.
    """

    def __init__(self, meta, smaps, pairs, groundtruth, groundtruth_allowed=True):
        self.meta = meta
        self.smaps = np.ascontiguousarray(smaps, dtype=np.complex64)
        self._pairs = list(pairs)
        self._groundtruth = groundtruth
        self.groundtruth_allowed = groundtruth_allowed
        self._coil_maps64 = None

    @classmethod
    def from_pairs(cls, meta: DatasetMeta, smaps: np.ndarray, pairs: list[TrainingPair]):
        if len(pairs) != meta.n_pairs:
            raise ValueError(f"meta says {meta.n_pairs} pairs but got {len(pairs)}")
        gt = np.stack([p.groundtruth for p in pairs]).astype(np.complex64) if pairs else (
            np.zeros((0, meta.h, meta.w), dtype=np.complex64)
        )
        stripped = [replace(p, groundtruth=None) for p in pairs]
        return cls(meta, smaps, stripped, gt)

    def __len__(self) -> int:
        return len(self._pairs)

    def pair(self, i: int) -> TrainingPair:
        return self._pairs[i]

    def groundtruth(self, i: int) -> np.ndarray:
        if not self.groundtruth_allowed:
            raise GroundtruthAccessError(
                "groundtruth is locked for this dataset view (self-supervised arm)"
            )
        return self._groundtruth[i]

    def with_groundtruth_locked(self) -> "Dataset":
        view = Dataset(self.meta, self.smaps, self._pairs, self._groundtruth, False)
        return view

    def coil_maps(self) -> np.ndarray:
        """Float64 coil maps, renormalized to sum_c |S_c|^2 == 1 exactly."""
        if self._coil_maps64 is None:
            maps = self.smaps.astype(np.complex128)
            rss = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
            self._coil_maps64 = maps / rss
        return self._coil_maps64

    def family(self) -> MaskFamily:
        m = self.meta
        return make_family(m.w, m.accel, m.acs, m.variant)


def make_dataset(
    n_pairs: int,
    h: int,
    w: int,
    coils: int,
    accel: int,
    acs: int,
    sigma: float,
    master_seed: int,
    variant: str = "full",
) -> Dataset:
    """Generate a dataset of independent phantoms, fully seeded."""
    meta = DatasetMeta(h, w, coils, accel, variant, acs, sigma, n_pairs, master_seed)
    family = make_family(w, accel, acs, variant)
    smaps = simulate_coils(h, w, coils)
    pairs = []
    for child in np.random.SeedSequence(master_seed).spawn(n_pairs):
        ph_seq, pair_seq = child.spawn(2)
        x = generate_phantom(int(ph_seq.generate_state(1, np.uint64)[0]), h, w)
        pairs.append(simulate_pair(x, smaps, family, sigma, np.random.default_rng(pair_seq)))
    return Dataset.from_pairs(meta, smaps, pairs)


_MANIFEST = "manifest.txt"
_FORMAT = "eqmri-dataset"
_VERSION = 1
_ARRAY_FILES = ("y.bin", "y_prime.bin", "groundtruth.bin", "smaps.bin", "masks.bin", "masks_prime.bin")


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def write_manifest(path: Path, entries: list[tuple[str, str]]) -> None:
    path.write_text("".join(f"{k}: {v}\n" for k, v in entries))


def read_manifest(path: Path) -> dict[str, str]:
    if not path.is_file():
        raise DatasetFormatError(f"missing manifest {path}")
    out = {}
    for ln, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, sep, val = line.partition(":")
        if not sep:
            raise DatasetFormatError(f"{path}:{ln}: expected 'key: value', got {line!r}")
        out[key.strip()] = val.strip()
    return out


def write_dataset(path, dataset: Dataset) -> None:
    """Write a dataset directory; byte-for-byte deterministic in its inputs."""
    if dataset._groundtruth is None:
        raise ValueError("datasets are always written with groundtruth")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = dataset.meta
    n = len(dataset)
    blobs = {
        "y.bin": np.stack([dataset.pair(i).y for i in range(n)]) if n else
        np.zeros((0, meta.coils, meta.h, meta.w), np.complex64),
        "y_prime.bin": np.stack([dataset.pair(i).y_prime for i in range(n)]) if n else
        np.zeros((0, meta.coils, meta.h, meta.w), np.complex64),
        "groundtruth.bin": dataset._groundtruth,
        "smaps.bin": dataset.smaps,
        "masks.bin": np.stack([dataset.pair(i).mask.lines for i in range(n)]) if n else
        np.zeros((0, meta.w), bool),
        "masks_prime.bin": np.stack([dataset.pair(i).mask_prime.lines for i in range(n)]) if n else
        np.zeros((0, meta.w), bool),
    }
    checksums = []
    for name in _ARRAY_FILES:
        arr = blobs[name]
        dtype = "u1" if arr.dtype == bool else "<c8"
        raw = np.ascontiguousarray(arr).astype(dtype).tobytes()
        (path / name).write_bytes(raw)
        checksums.append((f"sha256.{name}", _sha256(raw)))
    entries = [
        ("format", _FORMAT),
        ("version", str(_VERSION)),
        ("h", str(meta.h)),
        ("w", str(meta.w)),
        ("coils", str(meta.coils)),
        ("R", str(meta.accel)),
        ("variant", meta.variant),
        ("acs", str(meta.acs)),
        ("sigma", repr(float(meta.sigma))),
        ("n_pairs", str(meta.n_pairs)),
        ("master_seed", str(meta.master_seed)),
    ] + checksums
    write_manifest(path / _MANIFEST, entries)


def _require(fields: dict, key: str, path) -> str:
    if key not in fields:
        raise DatasetFormatError(f"{path}: manifest is missing key {key!r}")
    return fields[key]


def read_dataset(path) -> Dataset:
    """Read a dataset directory, verifying sizes and checksums."""
    path = Path(path)
    fields = read_manifest(path / _MANIFEST)
    if fields.get("format") != _FORMAT:
        raise DatasetFormatError(f"{path}: not an {_FORMAT} directory")
    if fields.get("version") != str(_VERSION):
        raise DatasetFormatError(f"{path}: unsupported version {fields.get('version')!r}")
    try:
        meta = DatasetMeta(
            h=int(_require(fields, "h", path)),
            w=int(_require(fields, "w", path)),
            coils=int(_require(fields, "coils", path)),
            accel=int(_require(fields, "R", path)),
            variant=_require(fields, "variant", path),
            acs=int(_require(fields, "acs", path)),
            sigma=float(_require(fields, "sigma", path)),
            n_pairs=int(_require(fields, "n_pairs", path)),
            master_seed=int(_require(fields, "master_seed", path)),
        )
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: malformed manifest value ({exc})") from None

    def load(name, dtype, shape):
        f = path / name
        if not f.is_file():
            raise DatasetFormatError(f"{path}: missing array file {name}")
        raw = f.read_bytes()
        expected = int(np.prod(shape)) * np.dtype(dtype).itemsize
        if len(raw) != expected:
            raise DatasetFormatError(
                f"{path}: {name} has {len(raw)} bytes, expected {expected} (truncated or corrupt)"
            )
        if _sha256(raw) != _require(fields, f"sha256.{name}", path):
            raise DatasetFormatError(f"{path}: checksum mismatch for {name}")
        return np.frombuffer(raw, dtype=dtype).reshape(shape)

    n, c, h, w = meta.n_pairs, meta.coils, meta.h, meta.w
    y = load("y.bin", "<c8", (n, c, h, w))
    y_prime = load("y_prime.bin", "<c8", (n, c, h, w))
    gt = load("groundtruth.bin", "<c8", (n, h, w))
    smaps = load("smaps.bin", "<c8", (c, h, w))
    masks = load("masks.bin", "u1", (n, w))
    masks_prime = load("masks_prime.bin", "u1", (n, w))
    if not np.all((masks <= 1) & (masks_prime <= 1)):
        raise DatasetFormatError(f"{path}: mask files must contain only 0/1 bytes")
    acs_range = None
    if meta.acs > 0:
        start = (w - meta.acs) // 2
        acs_range = (start, start + meta.acs)
    pairs = [
        TrainingPair(
            y[i].copy(),
            SamplingMask(masks[i].astype(bool), acs_range),
            y_prime[i].copy(),
            SamplingMask(masks_prime[i].astype(bool), acs_range),
        )
        for i in range(n)
    ]
    return Dataset(meta, smaps.copy(), pairs, gt.copy())
