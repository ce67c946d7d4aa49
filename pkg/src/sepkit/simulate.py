"""Spatialized reverberant mixture simulation.

Shoebox rooms with mirror-image sources: a uniform wall reflection
coefficient comes from inverting Sabine's formula for the requested decay
time, every image lands on its nearest sample (no fractional-delay
interpolation at desk scale), and amplitudes fall off as beta^order /
(4*pi*d).  Scenes are sampled under the recipe constraints (wall margins,
angle-difference buckets, speaker distance range) with per-scene RNG
streams derived from (master seed, scene index).

References are the reverberant source images at microphone 1, which makes
mixture[0] == sum of references hold sample-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from . import audio_io
from .errors import GeometryError, InfeasibleRulesError, InputError

SPEED_OF_SOUND = 343.0
WALL_MARGIN = 0.3
ANGLE_BUCKETS = ((0.0, 15.0), (15.0, 45.0), (45.0, 90.0), (90.0, 180.0))
BUCKET_NAMES = ("0-15", "15-45", "45-90", "90-180")


@dataclass
class RoomSpec:
    dimensions: tuple  # (length, width, height) in metres
    t60: float
    fs: int = 16000
    c: float = SPEED_OF_SOUND

    def __post_init__(self):
        self.dimensions = tuple(float(d) for d in self.dimensions)
        if len(self.dimensions) != 3 or min(self.dimensions) <= 0:
            raise GeometryError(f"bad room dimensions {self.dimensions}")
        if self.t60 <= 0:
            raise GeometryError("T60 must be positive")

    @property
    def volume(self):
        lx, ly, lz = self.dimensions
        return lx * ly * lz

    @property
    def surface(self):
        lx, ly, lz = self.dimensions
        return 2.0 * (lx * ly + lx * lz + ly * lz)


def reflection_coefficient(room: RoomSpec) -> float:
    """Uniform wall beta from Sabine: alpha = 0.161 V / (T60 * S).

    Very short T60 in a small room can demand alpha > 1; it is clamped
    (beta -> 0, effectively anechoic) rather than rejected.
    """
    alpha = 0.161 * room.volume / (room.t60 * room.surface)
    alpha = min(alpha, 1.0)
    return float(np.sqrt(1.0 - alpha))


@dataclass
class ArraySpec:
    """Six microphones equally spaced on a 7 cm diameter circle."""

    center: tuple
    orientation: float = 0.0
    radius: float = 0.035
    n_mics: int = 6

    def positions(self) -> np.ndarray:
        angles = self.orientation + 2.0 * np.pi * np.arange(self.n_mics) / self.n_mics
        cx, cy, cz = self.center
        return np.stack(
            [cx + self.radius * np.cos(angles), cy + self.radius * np.sin(angles), np.full(self.n_mics, cz)],
            axis=1,
        )


def _check_inside(room: RoomSpec, point, margin: float, what: str):
    for coord, dim in zip(point, room.dimensions):
        if coord < margin or coord > dim - margin:
            raise GeometryError(f"{what} at {tuple(point)} violates the {margin} m wall margin")


def _axis_images(length: float, src: float, mic: float, max_order: int, reach: float):
    """Per-axis image offsets (coord - mic) and reflection counts.

    Offsets are evaluated as 2mL + (s - m) and 2mL - (s + m); both forms
    are exactly antisymmetric/symmetric under src<->mic exchange, which
    makes RIR reciprocity bit-exact.
    """
    offsets, counts = [], []
    m_plus = max_order // 2
    m = np.arange(-m_plus, m_plus + 1)
    off = 2.0 * m * length + (src - mic)
    cnt = 2 * np.abs(m)
    keep = np.abs(off) <= reach
    offsets.append(off[keep])
    counts.append(cnt[keep])
    m_lo = -((max_order - 1) // 2)
    m_hi = (max_order + 1) // 2
    m = np.arange(m_lo, m_hi + 1)
    off = 2.0 * m * length - (src + mic)
    cnt = np.abs(2 * m - 1)
    keep = (cnt <= max_order) & (np.abs(off) <= reach)
    offsets.append(off[keep])
    counts.append(cnt[keep])
    return np.concatenate(offsets), np.concatenate(counts)


def image_method_rir(
    room: RoomSpec,
    src,
    mic,
    max_order: int,
    duration: float | None = None,
    beta: float | None = None,
) -> np.ndarray:
    """Mirror-image room impulse response, nearest-sample placement.

    Each image contributes beta^order / (4*pi*d) at sample round(fs*d/c).
    ``duration`` additionally caps the response length in seconds
    (images arriving later are dropped); without it the length is set by
    the farthest retained image.
    """
    src = np.asarray(src, dtype=np.float64)
    mic = np.asarray(mic, dtype=np.float64)
    if np.array_equal(src, mic):
        raise GeometryError("source and microphone coincide")
    _check_inside(room, src, 0.0, "source")
    _check_inside(room, mic, 0.0, "microphone")
    if beta is None:
        beta = reflection_coefficient(room)
    reach = room.c * duration if duration is not None else np.inf
    per_axis = [
        _axis_images(room.dimensions[a], src[a], mic[a], max_order, reach) for a in range(3)
    ]
    ox, cx = per_axis[0]
    oy, cy = per_axis[1]
    oz, cz = per_axis[2]
    count = cx[:, None, None] + cy[None, :, None] + cz[None, None, :]
    keep = count <= max_order
    d2 = ox[:, None, None] ** 2 + oy[None, :, None] ** 2 + oz[None, None, :] ** 2
    dist = np.sqrt(d2[keep])
    order = count[keep]
    if duration is not None:
        sel = dist <= room.c * duration
        dist, order = dist[sel], order[sel]
    delays = np.round(room.fs * dist / room.c).astype(np.int64)
    if duration is not None:
        n = int(round(room.fs * duration))
        sel = delays < n
        delays, dist, order = delays[sel], dist[sel], order[sel]
    else:
        n = int(delays.max()) + 1
    amps = beta**order / (4.0 * np.pi * dist)
    rir = np.zeros(n)
    np.add.at(rir, delays, amps)
    return rir


@dataclass
class SceneRules:
    """Recipe parameters for scene sampling."""

    name: str = "wsj0"
    room_min: tuple = (3.0, 3.0, 2.5)
    room_max: tuple = (8.0, 10.0, 6.0)
    t60_range: tuple = (0.05, 0.5)
    bucket_proportions: tuple = (0.16, 0.29, 0.26, 0.29)
    distance_range: tuple = (0.5, 6.0)
    n_sources: int = 2
    first_source_azimuth: tuple | None = None  # degrees in the array frame
    duration: float = 2.0
    f0_range: tuple = (90.0, 320.0)
    fs: int = 16000
    rir_max_order: int = 60
    rir_duration: float = 0.25

    def __post_init__(self):
        if abs(sum(self.bucket_proportions) - 1.0) > 1e-6:
            raise InputError("bucket proportions must sum to 1")
        if self.duration < 0.5:
            raise InputError("scene duration must be at least 0.5 s")

    @classmethod
    def wsj0(cls, **overrides):
        return cls(name="wsj0", **overrides)

    @classmethod
    def librispeech(cls, **overrides):
        defaults = dict(
            name="ls",
            room_max=(10.0, 8.0, 6.0),
            t60_range=(0.05, 0.7),
            bucket_proportions=(0.11, 0.20, 0.20, 0.49),
            first_source_azimuth=(225.0, 315.0),
        )
        defaults.update(overrides)
        return cls(**defaults)

    @classmethod
    def from_name(cls, name: str, **overrides):
        if name == "wsj0":
            return cls.wsj0(**overrides)
        if name in ("ls", "librispeech"):
            return cls.librispeech(**overrides)
        raise InputError(f"unknown rules name {name!r}")


@dataclass
class SceneGeometry:
    room: RoomSpec
    array: ArraySpec
    source_positions: np.ndarray  # [S x 3]
    bucket: int
    angle_diff_deg: float
    seed: int


@dataclass
class MixtureScene:
    geometry: SceneGeometry
    rirs: list  # rirs[s][c] -> np.ndarray
    sources: np.ndarray  # [S x T] dry signals
    mixture: np.ndarray  # [C x T']
    references: np.ndarray  # [S x T'] reverberant images at mic 1


_REJECTION_CAP = 10_000


def sample_scene(rules: SceneRules, seed: int) -> SceneGeometry:
    """Geometry satisfying the recipe constraints, deterministic per seed."""
    rng = np.random.default_rng([int(seed), 0x5EED])
    dims = tuple(rng.uniform(lo, hi) for lo, hi in zip(rules.room_min, rules.room_max))
    t60 = float(rng.uniform(*rules.t60_range))
    room = RoomSpec(dimensions=dims, t60=t60, fs=rules.fs)
    bucket = int(rng.choice(len(ANGLE_BUCKETS), p=np.asarray(rules.bucket_proportions)))
    lo, hi = ANGLE_BUCKETS[bucket]

    margin = WALL_MARGIN
    array = None
    for _ in range(_REJECTION_CAP):
        center = tuple(
            rng.uniform(margin + 0.05, d - margin - 0.05) for d in dims
        )
        candidate = ArraySpec(center=center, orientation=float(rng.uniform(0, 2 * np.pi)))
        try:
            for pos in candidate.positions():
                _check_inside(room, pos, margin, "microphone")
        except GeometryError:
            continue
        array = candidate
        break
    if array is None:
        raise InfeasibleRulesError("array placement: wall margins cannot be met")

    for _ in range(_REJECTION_CAP):
        diff = rng.uniform(lo, hi)
        if rules.first_source_azimuth is not None:
            a_lo, a_hi = np.deg2rad(rules.first_source_azimuth)
            az1 = array.orientation + rng.uniform(a_lo, a_hi)
        else:
            az1 = rng.uniform(0, 2 * np.pi)
        az2 = az1 + np.deg2rad(diff) * (1 if rng.uniform() < 0.5 else -1)
        positions = []
        ok = True
        for az in (az1, az2):
            dist = rng.uniform(*rules.distance_range)
            p = np.array(
                [
                    array.center[0] + dist * np.cos(az),
                    array.center[1] + dist * np.sin(az),
                    array.center[2],
                ]
            )
            try:
                _check_inside(room, p, margin, "source")
            except GeometryError:
                ok = False
                break
            positions.append(p)
        if not ok:
            continue
        return SceneGeometry(
            room=room,
            array=array,
            source_positions=np.stack(positions),
            bucket=bucket,
            angle_diff_deg=float(diff),
            seed=int(seed),
        )
    raise InfeasibleRulesError("source placement: distance range does not fit the sampled rooms")


def angle_difference_deg(geometry: SceneGeometry) -> float:
    """Azimuth separation of the two sources seen from the array center."""
    c = np.asarray(geometry.array.center)
    az = [np.arctan2(p[1] - c[1], p[0] - c[0]) for p in geometry.source_positions]
    diff = np.rad2deg(abs(az[0] - az[1])) % 360.0
    return min(diff, 360.0 - diff)


def compute_rirs(geometry: SceneGeometry, rules: SceneRules) -> list:
    beta = reflection_coefficient(geometry.room)
    mics = geometry.array.positions()
    return [
        [
            image_method_rir(
                geometry.room,
                src,
                mic,
                max_order=rules.rir_max_order,
                duration=rules.rir_duration,
                beta=beta,
            )
            for mic in mics
        ]
        for src in geometry.source_positions
    ]


def spatialize_and_mix(sources, rirs):
    """Convolve each source with its per-mic RIRs and sum.

    Returns (mixture [C x T'], references [S x T']); the reference for
    source s is its reverberant image at microphone 1, so
    mixture[0] == references.sum(axis=0) exactly.
    """
    sources = [np.asarray(s, dtype=np.float64) for s in sources]
    t = max(len(s) for s in sources)
    sources = [np.pad(s, (0, t - len(s))) for s in sources]
    n_mics = len(rirs[0])
    rir_len = max(len(r) for per_src in rirs for r in per_src)
    t_out = t + rir_len - 1
    images = np.zeros((len(sources), n_mics, t_out))
    for s, src in enumerate(sources):
        for c in range(n_mics):
            conv = fftconvolve(src, rirs[s][c])
            images[s, c, : len(conv)] = conv
    mixture = images.sum(axis=0)
    references = images[:, 0, :].copy()
    return mixture, references


def _pink_noise(rng, n):
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n)
    spec[1:] /= np.sqrt(freqs[1:])
    spec[0] = 0.0
    return np.fft.irfft(spec, n)


def synth_source(seed: int, duration: float = 2.0, f0_range=(90.0, 320.0), fs: int = 16000) -> np.ndarray:
    """Amplitude-modulated harmonic stack plus -20 dB pink noise.

    Randomized slow f0 trajectory, 4-8 harmonics, peak-normalized to 0.5;
    different seeds decorrelate (normalized cross-correlation < 0.3).
    """
    if duration < 0.5:
        raise InputError("source duration must be at least 0.5 s")
    rng = np.random.default_rng([int(seed), 0xF0])
    n = int(round(duration * fs))
    t = np.arange(n) / fs
    f0_base = rng.uniform(*f0_range)
    # slow random-walk vibrato, +/- ~4 %
    drift = np.cumsum(rng.standard_normal(32))
    drift = np.interp(np.linspace(0, 1, n), np.linspace(0, 1, 32), drift)
    drift = drift / (np.abs(drift).max() + 1e-12)
    f0 = f0_base * (1.0 + 0.04 * drift)
    phase = 2.0 * np.pi * np.cumsum(f0) / fs
    n_harm = int(rng.integers(4, 9))
    sig = np.zeros(n)
    for h in range(1, n_harm + 1):
        amp = rng.uniform(0.4, 1.0) / h
        mod_rate = rng.uniform(1.0, 4.0)
        mod_phase = rng.uniform(0, 2 * np.pi)
        envelope = 0.55 + 0.45 * np.sin(2 * np.pi * mod_rate * t + mod_phase)
        sig += amp * envelope * np.cos(h * phase + rng.uniform(0, 2 * np.pi))
    noise = _pink_noise(rng, n)
    noise *= (10 ** (-20.0 / 20.0)) * sig.std() / (noise.std() + 1e-12)
    sig += noise
    return 0.5 * sig / np.abs(sig).max()


def simulate_scene(rules: SceneRules, seed: int) -> MixtureScene:
    """Full scene: geometry, RIRs, synthetic sources, mixture, references.

    The emitted mixture is peak-normalized to 0.5 with the same gain
    applied to the references, so mixture[0] == sum(references) stays
    exact and levels are comparable across scenes regardless of
    source-array distance.
    """
    geometry = sample_scene(rules, seed)
    rirs = compute_rirs(geometry, rules)
    src_rng_base = 1000003  # distinct stream per source within the scene
    sources = np.stack(
        [
            synth_source(seed * src_rng_base + s, duration=rules.duration, f0_range=rules.f0_range, fs=rules.fs)
            for s in range(rules.n_sources)
        ]
    )
    mixture, references = spatialize_and_mix(list(sources), rirs)
    peak = np.abs(mixture).max()
    if peak > 0:
        gain = 0.5 / peak
        mixture *= gain
        references *= gain
    return MixtureScene(geometry=geometry, rirs=rirs, sources=sources, mixture=mixture, references=references)


# ---------------------------------------------------------------------------
# dataset emission: WAV files plus JSON manifest
# ---------------------------------------------------------------------------

MANIFEST_VERSION = 1


def scene_record(scene: MixtureScene, scene_id: str, files: dict) -> dict:
    geom = scene.geometry
    return {
        "id": scene_id,
        "seed": geom.seed,
        "bucket": BUCKET_NAMES[geom.bucket],
        "angle_diff_deg": round(geom.angle_diff_deg, 4),
        "t60": round(geom.room.t60, 6),
        "room": [round(d, 6) for d in geom.room.dimensions],
        "array_center": [round(c, 6) for c in geom.array.center],
        "array_orientation": round(geom.array.orientation, 6),
        "source_positions": [[round(v, 6) for v in p] for p in geom.source_positions],
        "samples": int(scene.mixture.shape[1]),
        "files": files,
    }


def write_scene(scene: MixtureScene, out_dir: Path, scene_id: str) -> dict:
    scene_dir = out_dir / scene_id
    scene_dir.mkdir(parents=True, exist_ok=True)
    fs = scene.geometry.room.fs
    audio_io.write_wav(scene_dir / "mixture.wav", fs, scene.mixture)
    files = {"mixture": f"{scene_id}/mixture.wav", "references": []}
    for s in range(scene.references.shape[0]):
        name = f"{scene_id}/ref_{s}.wav"
        audio_io.write_wav(out_dir / name, fs, scene.references[s])
        files["references"].append(name)
    return scene_record(scene, scene_id, files)


def build_dataset(rules: SceneRules, count: int, seed: int, out_dir, threads: int = 1) -> dict:
    """Simulate ``count`` scenes and emit WAVs plus an index manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(i: int):
        scene = simulate_scene(rules, seed + i)
        return write_scene(scene, out_dir, f"scene_{i:05d}")

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(one, range(count)))
    else:
        records = [one(i) for i in range(count)]

    manifest = {
        "version": MANIFEST_VERSION,
        "fs": rules.fs,
        "rules": rules.name,
        "count": count,
        "master_seed": int(seed),
        "scenes": records,
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def load_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except FileNotFoundError as exc:
        raise InputError(f"manifest not found: {path}") from exc
    manifest["_dir"] = str(path.parent)
    return manifest


def load_scene_audio(manifest: dict, record: dict):
    """Returns (mixture [C x T], references [S x T]) for one manifest entry."""
    base = Path(manifest["_dir"])
    from .errors import ManifestError

    mix_path = base / record["files"]["mixture"]
    if not mix_path.exists():
        raise ManifestError(f"missing mixture file {mix_path}")
    _, mixture = audio_io.read_wav(mix_path)
    refs = []
    for rel in record["files"]["references"]:
        ref_path = base / rel
        if not ref_path.exists():
            raise ManifestError(f"missing reference file {ref_path}")
        _, ref = audio_io.read_wav(ref_path)
        refs.append(ref[0])
    return mixture, np.stack(refs)
