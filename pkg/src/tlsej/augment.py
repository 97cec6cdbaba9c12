"""
Corruption of clean speech with additive noise and simulated reverberation.

Online augmentation draws one corruption per utterance from an
:class:`AugmentationPolicy`; every draw is captured in a
:class:`CorruptionRecord` that regenerates the corrupted waveform exactly
via :func:`corrupt`. Offline evaluation sets are produced by
:func:`generate_test_sets`.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.signal import butter, sosfilt

from .errors import ConfigError, EstimationError, InvalidInputError
from .protocol import ManifestEntry, write_manifest
from .signal import Waveform, convolve, power, read_wav, write_wav

log = logging.getLogger(__name__)

SPEED_OF_SOUND = 343.0
RIR_HIGHPASS_HZ = 80.0
PEAK_LIMIT = 0.999
WALL_MARGIN = 0.1

# noise type -> inventory category
NOISE_CATEGORIES = {"babble": "speech", "music": "music", "noise": "environmental"}
CATEGORIES = ("speech", "music", "environmental")

TEST_SNRS = (20, 15, 10, 5, 0)
TEST_RT60S = (0.25, 0.5, 0.75, 1.0)
TEST_ROOM_RANGE = ((10.0, 8.0, 2.8), (15.0, 10.0, 4.0))


def noise_condition_name(kind, snr_db):
    return f"{kind}_{int(snr_db)}db"


def reverb_condition_name(rt60):
    return f"rt60_{int(round(rt60 * 100)):03d}"


TEST_CONDITIONS = tuple(
    [noise_condition_name(k, s) for k in NOISE_CATEGORIES for s in TEST_SNRS]
    + [reverb_condition_name(t) for t in TEST_RT60S]
)


@dataclass
class NoiseClip:
    clip_id: str
    waveform: Waveform

    @property
    def duration(self):
        return self.waveform.duration

    @property
    def digest(self):
        return hashlib.sha1(self.waveform.samples.tobytes()).hexdigest()


@dataclass
class NoiseInventory:
    """Noise clips grouped into ``speech`` (babble source), ``music`` and ``environmental``."""

    clips: dict = field(default_factory=lambda: {c: [] for c in CATEGORIES})

    @classmethod
    def from_dir(cls, root):
        """Load ``root/<category>/*.wav``; clip ids are ``<category>/<stem>``."""
        root = Path(root)
        inv = cls()
        for cat in CATEGORIES:
            for p in sorted((root / cat).glob("*.wav")):
                inv.clips[cat].append(NoiseClip(f"{cat}/{p.stem}", read_wav(p)))
        return inv

    def category(self, name):
        clips = self.clips.get(name, [])
        if not clips:
            raise ConfigError(f"noise inventory category {name!r} is empty")
        return clips

    def get(self, clip_id):
        cat = clip_id.split("/", 1)[0]
        for c in self.clips.get(cat, []):
            if c.clip_id == clip_id:
                return c
        raise KeyError(clip_id)

    def __len__(self):
        return sum(len(v) for v in self.clips.values())

    def check_disjoint(self, other):
        """Raise if any clip (by content) appears in both inventories."""
        mine = {c.digest: c.clip_id for v in self.clips.values() for c in v}
        shared = [(mine[c.digest], c.clip_id) for v in other.clips.values() for c in v if c.digest in mine]
        if shared:
            raise ConfigError(f"training and evaluation noise inventories overlap: {shared[:5]}")


@dataclass
class AugmentationPolicy:
    p_augment: float = 0.7
    noise_type_probs: dict = field(default_factory=lambda: {"babble": 1 / 3, "music": 1 / 3, "noise": 1 / 3})
    snr_range_db: tuple = (0.0, 20.0)
    babble_k_range: tuple = (3, 8)
    room_dims_range: tuple = ((3.0, 3.0, 2.5), (10.0, 6.0, 4.0))
    rt60_range_s: tuple = (0.2, 1.0)
    mode: str = "noise"  # noise | reverb | mixed
    mixed_noise_prob: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.p_augment <= 1.0:
            raise ConfigError(f"p_augment must be in [0, 1], got {self.p_augment}")
        if self.mode not in ("noise", "reverb", "mixed"):
            raise ConfigError(f"unknown augmentation mode {self.mode!r}")
        if set(self.noise_type_probs) - set(NOISE_CATEGORIES):
            raise ConfigError(f"unknown noise types {set(self.noise_type_probs) - set(NOISE_CATEGORIES)}")
        if abs(sum(self.noise_type_probs.values()) - 1.0) > 1e-9 or min(self.noise_type_probs.values()) < 0:
            raise ConfigError("noise_type_probs must be non-negative and sum to 1")
        lo, hi = self.snr_range_db
        if not lo < hi:
            raise ConfigError("snr_range_db must be non-degenerate")
        k0, k1 = self.babble_k_range
        if not 1 <= k0 <= k1:
            raise ConfigError("babble_k_range must satisfy 1 <= lo <= hi")
        if not 0 < self.rt60_range_s[0] < self.rt60_range_s[1]:
            raise ConfigError("rt60_range_s must be positive and non-degenerate")
        dmin, dmax = self.room_dims_range
        if any(a <= 2 * WALL_MARGIN or a > b for a, b in zip(dmin, dmax)):
            raise ConfigError("room_dims_range must be ordered and larger than the wall margin")


@dataclass
class RoomSpec:
    dims: tuple
    source_pos: tuple
    mic_pos: tuple
    rt60_target: float
    max_image_order: int | None = None

    def __post_init__(self):
        self.dims = tuple(float(v) for v in self.dims)
        self.source_pos = tuple(float(v) for v in self.source_pos)
        self.mic_pos = tuple(float(v) for v in self.mic_pos)
        if len(self.dims) != 3 or min(self.dims) <= 0:
            raise InvalidInputError(f"room dims must be three positive lengths, got {self.dims}")
        for name, pos in (("source_pos", self.source_pos), ("mic_pos", self.mic_pos)):
            if len(pos) != 3 or any(
                not WALL_MARGIN - 1e-12 <= x <= d - WALL_MARGIN + 1e-12 for x, d in zip(pos, self.dims)
            ):
                raise InvalidInputError(f"{name} {pos} must lie at least {WALL_MARGIN} m inside {self.dims}")
        if not self.rt60_target > 0:
            raise InvalidInputError(f"rt60_target must be positive, got {self.rt60_target}")
        if self.max_image_order is not None and self.max_image_order < 0:
            raise InvalidInputError("max_image_order must be non-negative")

    @property
    def distance(self):
        return math.dist(self.source_pos, self.mic_pos)

    @classmethod
    def random(cls, rng, dims_range, rt60, margin=0.5):
        lo, hi = (np.asarray(v, dtype=float) for v in dims_range)
        dims = rng.uniform(lo, hi)
        m = np.minimum(margin, dims / 4)
        src = rng.uniform(m, dims - m)
        mic = rng.uniform(m, dims - m)
        return cls(tuple(dims), tuple(src), tuple(mic), float(rt60))


@dataclass
class CorruptionRecord:
    """Everything needed to regenerate a corrupted utterance from its clean source."""

    utt_id: str
    kind: str  # none | babble | music | noise | reverb
    seed: int
    noise_clips: list = field(default_factory=list)
    snr_db: float | None = None
    room: RoomSpec | None = None
    rt60_s: float | None = None
    scale: float = 1.0  # peak renormalisation applied to the output

    def to_dict(self):
        d = asdict(self)
        if self.room is not None:
            d["room"] = asdict(self.room)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("room") is not None:
            d["room"] = RoomSpec(**d["room"])
        return cls(**d)


def noise_gain(clean, noise, snr_db):
    """Gain ``g`` so that ``10 log10(P_clean / (g^2 P_noise)) == snr_db`` (mean-square powers)."""
    pc, pn = power(clean), power(noise)
    if pc <= 0:
        raise InvalidInputError("clean signal is silent")
    if pn <= 0:
        raise InvalidInputError("noise signal is silent")
    return math.sqrt(pc / (pn * 10.0 ** (snr_db / 10.0)))


def fit_length(x, length, rng):
    """Random crop when ``x`` is long enough, otherwise loop from a random phase offset."""
    x = np.asarray(x)
    if x.size >= length:
        start = int(rng.integers(0, x.size - length + 1))
        return x[start:start + length]
    start = int(rng.integers(0, x.size))
    idx = (start + np.arange(length)) % x.size
    return x[idx]


def peak_normalize(x, limit=PEAK_LIMIT):
    peak = float(np.max(np.abs(x)))
    if peak > 1.0:
        s = limit / peak
        return x * s, s
    return x, 1.0


def _mix(clean, noise_segment, snr_db):
    g = noise_gain(clean, noise_segment, snr_db)
    return clean.samples + g * noise_segment


def add_noise(clean, noise, snr_db, rng):
    """Mix ``noise`` into ``clean`` at ``snr_db``.

    ``snr_db = inf`` is the no-augmentation path and returns ``clean`` untouched.
    The mixture is peak-renormalised to 0.999 only if it would clip.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return clean
    if clean.sample_rate != noise.sample_rate:
        raise InvalidInputError("sample rate mismatch between clean and noise")
    seg = fit_length(noise.samples, len(clean), rng)
    y, _ = peak_normalize(_mix(clean, seg, snr_db))
    return clean.with_samples(y)


def _babble(clips, k, rng, length):
    lo, hi = 3, 8
    if not lo <= k <= hi:
        raise InvalidInputError(f"babble k must be in [{lo}, {hi}], got {k}")
    if len(clips) < k:
        raise InvalidInputError(f"babble needs {k} distinct clips, only {len(clips)} available")
    picked = sorted(int(i) for i in rng.choice(len(clips), size=k, replace=False))
    total = np.zeros(length)
    for i in picked:
        total += fit_length(clips[i].samples, length, rng)
    return total, picked


def make_babble(speech_clips, k, rng, length=None):
    """Sum of ``k`` distinct randomly chosen speech clips, each cropped or looped to ``length``."""
    clips = list(speech_clips)
    if not clips:
        raise InvalidInputError("no speech clips given")
    length = len(clips[0]) if length is None else length
    total, _ = _babble(clips, k, rng, length)
    return Waveform(total, clips[0].sample_rate)


def eyring_absorption(dims, rt60):
    lx, ly, lz = dims
    volume = lx * ly * lz
    surface = 2.0 * (lx * ly + ly * lz + lx * lz)
    return 1.0 - math.exp(-24.0 * math.log(10.0) * volume / (SPEED_OF_SOUND * surface * rt60))


def _sphere_directions(n=2048):
    # Fibonacci lattice, quasi-uniform on the unit sphere
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    rho = np.sqrt(1.0 - z * z)
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)


_DIRECTIONS = _sphere_directions()


def _model_t20(log_beta, spec, sample_rate, step=8):
    """T20 that :func:`estimate_rt60` would report for the expected image-source response.

    Image density is uniform in space and spherical spreading cancels against
    the shell area, so the reverberant energy per unit time is the direction
    average of beta**(2 k) with k = c t sum_i |u_i| / L_i wall hits. The unit
    direct path is added as a lump at the start.
    """
    c = SPEED_OF_SOUND
    dims = np.asarray(spec.dims)
    r_d = max(spec.distance, c / sample_rate)
    hits_per_m = np.abs(_DIRECTIONS) @ (1.0 / dims)
    dt = step / sample_rate
    t = r_d / c + np.arange(0.0, spec.rt60_target, dt)
    env = np.exp(2.0 * log_beta * c * t[:, None] * hits_per_m[None, :]).mean(axis=1)
    energy = env * (4.0 * math.pi * r_d ** 2 * c / np.prod(dims)) * dt
    energy[0] += 1.0
    e = np.cumsum(energy[::-1])[::-1]
    edb = 10.0 * np.log10(e / e[0])
    i0 = np.flatnonzero(edb <= -5.0)
    i1 = np.flatnonzero(edb <= -25.0)
    if i0.size == 0 or i1.size == 0 or i1[0] - i0[0] < 2:
        return 0.0 if i1.size else np.inf
    sel = slice(i0[0], i1[0] + 1)
    slope = np.polyfit(t[sel], edb[sel], 1)[0]
    return -60.0 / slope


def reflection_coefficient(spec, sample_rate=16000):
    """Wall reflection coefficient whose image-source response has T20 equal to ``spec.rt60_target``.

    Eyring's absorption gives the starting point. A shoebox's image-source
    tail decays slower than the diffuse-field formula assumes (late energy
    comes from directions with few wall hits), so the coefficient is then
    solved numerically against the expected decay.
    """
    rt60 = spec.rt60_target
    log_beta0 = 0.5 * math.log(max(1e-300, 1.0 - eyring_absorption(spec.dims, rt60)))
    if log_beta0 < -20:
        return math.exp(log_beta0)

    def err(lb):
        return _model_t20(lb, spec, sample_rate) - rt60

    lo, hi = log_beta0 * 16.0, log_beta0 / 16.0
    if err(hi) <= 0:
        return math.exp(hi)
    if err(lo) >= 0:
        return math.exp(lo)
    return math.exp(brentq(err, lo, hi, xtol=1e-10, rtol=1e-8))


def _axis_images(length, src, mic, order):
    """Image offsets along one axis and their wall-hit counts for indices -order..order."""
    n = np.arange(-order, order + 1)
    # q = 0: x = 2nL + src, hits |2n|; q = 1: x = 2nL - src, hits |2n - 1|
    offsets = np.concatenate([2 * n * length + src - mic, 2 * n * length - src - mic])
    hits = np.concatenate([np.abs(2 * n), np.abs(2 * n - 1)])
    return offsets, hits


def simulate_rir(spec, sample_rate=16000):
    """
    Image-source impulse response of a shoebox room.

    Walls share one frequency-independent reflection coefficient, see
    :func:`reflection_coefficient`. Images are kept up to the
    travel time at which the modeled decay reaches -60 dB. The response is
    scaled so the direct path has unit amplitude.

    Returns
    -------
    Waveform
    """
    c = SPEED_OF_SOUND
    beta = reflection_coefficient(spec, sample_rate)
    r_direct = spec.distance
    t_max = r_direct / c + spec.rt60_target
    radius = c * t_max
    n_taps = int(math.ceil(t_max * sample_rate)) + 1
    r_ref = max(r_direct, c / sample_rate)

    axes = []
    for length, s, m in zip(spec.dims, spec.source_pos, spec.mic_pos):
        order = int(math.ceil(radius / (2 * length))) + 1
        if spec.max_image_order is not None:
            order = min(order, spec.max_image_order)
        axes.append(_axis_images(length, s, m, order))
    (dx, hx), (dy, hy), (dz, hz) = axes

    h = np.zeros(n_taps)
    log_beta = math.log(beta) if beta > 0 else -np.inf
    yz2 = dy[:, None] ** 2 + dz[None, :] ** 2
    hyz = hy[:, None] + hz[None, :]
    for x, kx in zip(dx, hx):
        r2 = x * x + yz2
        keep = r2 <= radius * radius
        if not keep.any():
            continue
        r = np.sqrt(r2[keep])
        k = kx + hyz[keep]
        if beta > 0:
            amp = np.exp(k * log_beta) * np.minimum(1.0, r_ref / np.maximum(r, 1e-12))
        else:
            amp = np.where(k == 0, np.minimum(1.0, r_ref / np.maximum(r, 1e-12)), 0.0)
        idx = np.rint(r / c * sample_rate).astype(np.int64)
        ok = idx < n_taps
        h += np.bincount(idx[ok], weights=amp[ok], minlength=n_taps)
    # all-positive image amplitudes stack coherently at low frequency; remove that build-up
    h = sosfilt(butter(2, RIR_HIGHPASS_HZ, btype="highpass", fs=sample_rate, output="sos"), h)
    return Waveform(h, sample_rate)


def schroeder_curve(h):
    """Backward-integrated energy decay in dB relative to total energy."""
    e = np.cumsum(np.square(np.asarray(h, dtype=np.float64))[::-1])[::-1]
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(e / e[0])


def estimate_rt60(rir, lo_db=-5.0, hi_db=-25.0):
    """T20 reverberation time: line fit of the Schroeder curve between -5 and -25 dB, extrapolated to -60 dB."""
    h = rir.samples
    if not np.any(h):
        raise EstimationError("impulse response is silent")
    start = int(np.argmax(np.abs(h)))
    edb = schroeder_curve(h[start:])
    below_lo = np.flatnonzero(edb <= lo_db)
    below_hi = np.flatnonzero(edb <= hi_db)
    if below_lo.size == 0 or below_hi.size == 0:
        raise EstimationError("decay never reaches the fit range")
    i0, i1 = int(below_lo[0]), int(below_hi[0])
    if i1 - i0 + 1 < 10:
        raise EstimationError(f"decay segment has {i1 - i0 + 1} samples, need at least 10")
    t = np.arange(i0, i1 + 1) / rir.sample_rate
    seg = edb[i0:i1 + 1]
    if not np.all(np.isfinite(seg)):
        raise EstimationError("non-finite values in decay segment")
    slope, _ = np.polyfit(t, seg, 1)
    if slope >= 0:
        raise EstimationError("energy decay is not decreasing")
    return -60.0 / slope


def add_reverb(clean, rir):
    y, _ = peak_normalize(convolve(clean, rir).samples)
    return clean.with_samples(y)


def corrupt(clean, record, inventory=None, rir=None):
    """Apply ``record`` to ``clean``; deterministic, so it doubles as replay.

    ``rir`` may carry an already simulated response for a reverb record.
    """
    rng = np.random.default_rng(record.seed)
    if record.kind == "none":
        return clean
    if record.kind == "reverb":
        if rir is None:
            rir = simulate_rir(record.room, clean.sample_rate)
        y = convolve(clean, rir).samples
    elif record.kind == "babble":
        if inventory is None:
            raise ConfigError("babble corruption needs a noise inventory")
        clips = [inventory.get(c).waveform.samples for c in record.noise_clips]
        seg = np.zeros(len(clean))
        for c in clips:
            seg += fit_length(c, len(clean), rng)
        y = _mix(clean, seg, record.snr_db)
    elif record.kind in ("music", "noise"):
        if inventory is None:
            raise ConfigError(f"{record.kind} corruption needs a noise inventory")
        (clip_id,) = record.noise_clips
        seg = fit_length(inventory.get(clip_id).waveform.samples, len(clean), rng)
        y = _mix(clean, seg, record.snr_db)
    else:
        raise ConfigError(f"unknown corruption kind {record.kind!r}")
    y, record.scale = peak_normalize(y)
    return clean.with_samples(y)


def draw_corruption(policy, rng, inventory=None, utt_id=""):
    """Sample a :class:`CorruptionRecord` from ``policy``; no audio is touched."""
    seed = int(rng.integers(0, 2**63 - 1))
    if rng.random() >= policy.p_augment:
        return CorruptionRecord(utt_id, "none", seed)
    if policy.mode == "noise":
        use_noise = True
    elif policy.mode == "reverb":
        use_noise = False
    else:
        use_noise = bool(rng.random() < policy.mixed_noise_prob)
    if not use_noise:
        rt60 = float(rng.uniform(*policy.rt60_range_s))
        room = RoomSpec.random(rng, policy.room_dims_range, rt60)
        return CorruptionRecord(utt_id, "reverb", seed, room=room, rt60_s=rt60)

    kinds = list(policy.noise_type_probs)
    kind = kinds[int(rng.choice(len(kinds), p=[policy.noise_type_probs[k] for k in kinds]))]
    snr = float(rng.uniform(*policy.snr_range_db))
    if inventory is None:
        raise ConfigError("noise augmentation needs a noise inventory")
    clips = inventory.category(NOISE_CATEGORIES[kind])
    if kind == "babble":
        k = int(rng.integers(policy.babble_k_range[0], policy.babble_k_range[1] + 1))
        if len(clips) < k:
            raise ConfigError(f"babble needs {k} speech clips, inventory has {len(clips)}")
        picked = sorted(int(i) for i in rng.choice(len(clips), size=k, replace=False))
        ids = [clips[i].clip_id for i in picked]
    else:
        ids = [clips[int(rng.integers(0, len(clips)))].clip_id]
    return CorruptionRecord(utt_id, kind, seed, noise_clips=ids, snr_db=snr)


def augment_online(clean, policy, rng, inventory=None, utt_id=""):
    """Corrupt ``clean`` with probability ``policy.p_augment``.

    Returns ``(waveform, record)``; ``corrupt(clean, record, inventory)``
    reproduces the waveform bit-exactly.
    """
    record = draw_corruption(policy, rng, inventory, utt_id)
    return corrupt(clean, record, inventory), record


def worker_rng(global_seed, worker_id, epoch):
    """Independent stream per data-loading worker and epoch."""
    return np.random.default_rng([int(global_seed), int(worker_id), int(epoch)])


def generate_test_sets(entries, out_dir, inventory, seed=0, force=False, conditions=TEST_CONDITIONS,
                       room_range=TEST_ROOM_RANGE, babble_k_range=(3, 8), save_rirs=True):
    """
    Write one corrupted copy of every evaluation utterance per condition.

    Parameters
    ----------
    entries : list of ManifestEntry
        Clean evaluation utterances.
    out_dir : path
        Receives ``<condition>/`` directories, each with WAVs and ``manifest.tsv``.
    inventory : NoiseInventory
        Evaluation noise; must be disjoint from the training inventory.
    seed : int
        Dataset seed; output is a deterministic function of it.
    force : bool
        Overwrite an existing non-empty ``out_dir``.

    Returns
    -------
    dict
        Condition name to its manifest path.
    """
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()):
        if not force:
            raise FileExistsError(f"{out_dir} exists and is not empty; pass force=True to overwrite")
        shutil.rmtree(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    clean = [(e, read_wav(e.path)) for e in entries]
    written = {}
    for ci, cond in enumerate(conditions):
        cdir = out_dir / cond
        cdir.mkdir()
        rows = []
        for ui, (entry, wav) in enumerate(clean):
            rng = np.random.default_rng([int(seed), ci, ui])
            rec_seed = int(rng.integers(0, 2**63 - 1))
            if cond.startswith("rt60_"):
                rt60 = int(cond.split("_")[1]) / 100.0
                room = RoomSpec.random(rng, room_range, rt60)
                record = CorruptionRecord(entry.utt_id, "reverb", rec_seed, room=room, rt60_s=rt60)
            else:
                kind, snr = cond.split("_")
                snr = float(snr[:-2])
                clips = inventory.category(NOISE_CATEGORIES[kind])
                if kind == "babble":
                    k = int(rng.integers(babble_k_range[0], babble_k_range[1] + 1))
                    k = min(k, len(clips))
                    ids = [clips[int(i)].clip_id for i in sorted(rng.choice(len(clips), size=k, replace=False))]
                else:
                    ids = [clips[int(rng.integers(0, len(clips)))].clip_id]
                record = CorruptionRecord(entry.utt_id, kind, rec_seed, noise_clips=ids, snr_db=snr)
            rir = simulate_rir(record.room, wav.sample_rate) if record.kind == "reverb" else None
            y = corrupt(wav, record, inventory, rir=rir)
            wav_path = cdir / f"{entry.utt_id}.wav"
            write_wav(wav_path, y)
            if save_rirs and record.kind == "reverb":
                (cdir / "rirs").mkdir(exist_ok=True)
                np.save(cdir / "rirs" / f"{entry.utt_id}.npy", rir.samples)
            rows.append(ManifestEntry(entry.utt_id, wav_path, entry.label,
                                      dict(record.to_dict(), clean_path=str(Path(entry.path).resolve()))))
        write_manifest(cdir / "manifest.tsv", rows)
        written[cond] = cdir / "manifest.tsv"
        log.info("wrote condition %s (%d utterances)", cond, len(rows))
    return written
