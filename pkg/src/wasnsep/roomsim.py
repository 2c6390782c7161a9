"""Shoebox acoustics: image-source RIRs, scene sampling and rendering.

Reflections are enumerated as mirror images of the source; each image
contributes an attenuated, fractionally delayed pulse to the impulse
response. Fractional delays use an 81-tap Hann-windowed sinc so that
integer delays stay exact single pulses. The per-image accumulation is
the hot loop of the whole pipeline and runs in a numba kernel.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit
from scipy.signal import fftconvolve, lfilter

SPEED_OF_SOUND = 343.0

SINC_HALF = 40            # taps span [-40, 40] around the arrival sample
SINC_SUBSTEPS = 1024      # fractional-delay quantization of the tap table

_CRITICAL_DISTANCE_COEFF = 0.057


@dataclass(frozen=True)
class Room:
    """Rectangular room with a frequency-flat wall reflection coefficient."""

    dims: tuple[float, float, float]
    t60: float
    speed_of_sound: float = SPEED_OF_SOUND
    sample_rate: int = 16000

    def __post_init__(self):
        if len(self.dims) != 3 or any(d <= 0 for d in self.dims):
            raise ValueError("room dims must be three positive lengths")
        if self.t60 < 0:
            raise ValueError("t60 must be nonnegative")

    @property
    def volume(self) -> float:
        x, y, z = self.dims
        return x * y * z

    @property
    def surface_area(self) -> float:
        x, y, z = self.dims
        return 2.0 * (x * y + x * z + y * z)


def critical_distance(room: Room) -> float:
    """Distance at which direct and reverberant energy are equal."""
    if room.t60 <= 0:
        raise ValueError("critical distance is undefined for an anechoic room")
    return _CRITICAL_DISTANCE_COEFF * np.sqrt(room.volume / room.t60)


def reflection_coefficient(room: Room) -> float:
    """Pressure reflection coefficient from the Eyring reverberation formula."""
    if room.t60 == 0:
        return 0.0
    return float(np.exp(-0.0805 * room.volume / (room.surface_area * room.t60)))


@dataclass(frozen=True)
class Rir:
    """Sampled impulse response plus the integer arrival sample of the direct path."""

    taps: np.ndarray
    direct_delay: int
    sample_rate: int


def _tap_table() -> np.ndarray:
    """Hann-windowed sinc rows indexed by quantized fractional delay.

    Row s holds the 81 taps for a delay of (integer + s/SINC_SUBSTEPS)
    samples. Row 0 is an exact unit pulse, so integer delays survive the
    interpolation untouched.
    """
    width = 2 * SINC_HALF + 1
    j = np.arange(width)[None, :]
    s = np.arange(SINC_SUBSTEPS)[:, None]
    t = j - SINC_HALF - s / SINC_SUBSTEPS
    window = 0.5 * (1.0 + np.cos(2.0 * np.pi * t / width))
    return window * np.sinc(t)


_TABLE = _tap_table()


@njit(cache=True, fastmath=True)
def _accumulate_taps(taps, images, beta_pow, mic, samples_per_meter, dist_cap, table):
    half = (table.shape[1] - 1) // 2
    width = table.shape[1]
    substeps = table.shape[0]
    n_taps = taps.shape[0]
    for i in range(images.shape[0]):
        dx = images[i, 0] - mic[0]
        dy = images[i, 1] - mic[1]
        dz = images[i, 2] - mic[2]
        d = np.sqrt(dx * dx + dy * dy + dz * dz)
        if d > dist_cap or d < 1e-9:
            continue
        amp = beta_pow[i] / (12.566370614359172 * d)  # 4*pi*d spherical spreading
        delay = d * samples_per_meter
        center = int(delay)
        frac_idx = int((delay - center) * substeps + 0.5)
        if frac_idx == substeps:
            center += 1
            frac_idx = 0
        base = center - half
        lo = -base if base < 0 else 0
        hi = n_taps - base
        if hi > width:
            hi = width
        row = table[frac_idx]
        for j in range(lo, hi):
            taps[base + j] += amp * row[j]


def _check_inside(room: Room, pos, what: str):
    p = np.asarray(pos, dtype=np.float64)
    if p.shape != (3,):
        raise ValueError(f"{what} must be a 3-D position")
    if np.any(p <= 0) or np.any(p >= np.asarray(room.dims)):
        raise ValueError(f"{what} {tuple(p)} lies outside the room {room.dims}")
    return p


def _image_set(room: Room, source, dist_cap: float, max_order=None):
    """All mirror-image positions within reach, with their reflection counts.

    Returns (positions [n, 3], orders [n]). The per-axis repetition bound
    comes from dist_cap; max_order additionally filters on the total
    reflection count when given.
    """
    src = np.asarray(source, dtype=np.float64)
    dims = np.asarray(room.dims)
    reps = np.ceil(dist_cap / (2.0 * dims) + 0.5).astype(np.int64) + 1
    if max_order is not None:
        # |r_i| > max_order alone already exceeds the order budget
        reps = np.minimum(reps, max_order + 1)

    axes_r = [np.arange(-int(r), int(r) + 1) for r in reps]
    grid = np.stack(np.meshgrid(*axes_r, indexing="ij"), axis=-1).reshape(-1, 3)
    flips = np.array(list(itertools.product((0, 1), repeat=3)), dtype=np.int64)

    # image = (1 - 2p) * (src + 2 r L) per axis; the wall at 0 is hit
    # |r + p| times and the far wall |r| times, which for uniform beta
    # collapses into a single power of the reflection coefficient
    pos = ((1 - 2 * flips)[None, :, :]
           * (src[None, None, :] + 2.0 * grid[:, None, :] * dims[None, None, :]))
    orders = (np.abs(grid[:, None, :] + flips[None, :, :])
              + np.abs(grid[:, None, :])).sum(axis=2)
    pos = pos.reshape(-1, 3)
    orders = orders.reshape(-1)
    if max_order is not None:
        keep = orders <= max_order
        pos = pos[keep]
        orders = orders[keep]
    return np.ascontiguousarray(pos), orders


def _beta_powers(room: Room, orders) -> np.ndarray:
    beta = reflection_coefficient(room)
    table = beta ** np.arange(int(orders.max()) + 1, dtype=np.float64)
    return table[orders]


def _rir_length(room: Room, direct_dist: float) -> int:
    tail = int(np.ceil(room.t60 * room.sample_rate))
    direct = int(round(direct_dist * room.sample_rate / room.speed_of_sound))
    return direct + tail + 2 * SINC_HALF + 1


def generate_rir(room: Room, source, mic, max_order=None) -> Rir:
    """Image-source impulse response between one source and one mic.

    Each image at distance d adds beta^order / (4 pi d) times the windowed
    sinc at delay d * fs / c. The tap count covers the direct arrival plus
    one T60 of tail; images beyond that are dropped. max_order=None keeps
    every image the tap window can hold, max_order=0 is the direct path
    alone.

    Args:
        room: geometry, T60 and rates.
        source, mic: positions strictly inside the room, not coincident.
        max_order: optional cap on the total reflection count per image.

    Returns:
        Rir whose taps start at sample 0 of the propagation time axis.
    """
    src = _check_inside(room, source, "source")
    m = _check_inside(room, mic, "mic")
    direct = float(np.linalg.norm(src - m))
    if direct < 1e-6:
        raise ValueError("source and mic positions coincide")
    if max_order is not None and max_order < 0:
        raise ValueError("max_order must be nonnegative")

    n_taps = _rir_length(room, direct)
    samples_per_meter = room.sample_rate / room.speed_of_sound
    dist_cap = (n_taps - SINC_HALF - 2) / samples_per_meter
    pos, orders = _image_set(room, src, dist_cap, max_order)
    beta_pow = _beta_powers(room, orders)

    taps = np.zeros(n_taps)
    _accumulate_taps(taps, pos, beta_pow, m, samples_per_meter, dist_cap, _TABLE)
    return Rir(
        taps=taps,
        direct_delay=int(round(direct * samples_per_meter)),
        sample_rate=room.sample_rate,
    )


# ---------------------------------------------------------------------------
# scene sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplerConfig:
    """Ranges for the random scene samplers. Lengths in meters, times in seconds."""

    dims_lo: tuple[float, float, float] = (5.0, 4.0, 2.5)
    dims_hi: tuple[float, float, float] = (8.0, 7.0, 3.0)
    t60_range: tuple[float, float] = (0.3, 0.6)
    snr_range_db: tuple[float, float] = (0.0, 20.0)
    n_mics: int = 16
    min_near_mics: int = 3
    source_margin: float = 0.3
    mic_margin: float = 0.1
    square_side: float = 2.0
    satellite_mics: int = 4
    sample_rate: int = 16000

    def __post_init__(self):
        if any(hi < lo for lo, hi in zip(self.dims_lo, self.dims_hi)):
            raise ValueError("dims_hi must dominate dims_lo")
        if self.t60_range[0] < 0 or self.t60_range[1] < self.t60_range[0]:
            raise ValueError("bad t60 range")
        if self.n_mics < 2 * self.min_near_mics:
            raise ValueError("need enough mics to cover both sources")


@dataclass(frozen=True)
class Scenario:
    """One sampled acoustic scene: geometry plus mixing parameters.

    mic_groups and reference_mics are set by the clustered sampler and
    record which source each mic was placed around and which mic of each
    group is the designated reference; the blind pipeline never reads
    them, they exist for evaluation.
    """

    room: Room
    sources: tuple
    mics: tuple
    snr_db: float
    seed: int
    kind: str
    mic_groups: tuple | None = None
    reference_mics: tuple | None = None

    @property
    def n_mics(self) -> int:
        return len(self.mics)


def _uniform_in(rng, lo, hi):
    return lo + (hi - lo) * rng.random(3)


def _point_in_ball(rng, center, radius, lo, hi, attempts=1000):
    # rejection sampling keeps the density uniform over ball & box
    for _ in range(attempts):
        direction = rng.standard_normal(3)
        norm = np.linalg.norm(direction)
        if norm < 1e-12:
            continue
        p = center + direction / norm * radius * rng.random() ** (1.0 / 3.0)
        if np.all(p > lo) and np.all(p < hi):
            return p
    raise RuntimeError("could not place a point inside the ball and the room")


def _sample_room(cfg: SamplerConfig, rng) -> Room:
    dims = tuple(
        float(lo + (hi - lo) * rng.random())
        for lo, hi in zip(cfg.dims_lo, cfg.dims_hi)
    )
    t60 = float(cfg.t60_range[0] + (cfg.t60_range[1] - cfg.t60_range[0]) * rng.random())
    return Room(dims=dims, t60=t60, sample_rate=cfg.sample_rate)


def _sample_sources(cfg: SamplerConfig, room: Room, rng):
    """Two source positions in opposite halves of the room's first axis."""
    lx, ly, lz = room.dims
    m = cfg.source_margin
    z_hi = min(2.0, lz - m)
    out = []
    for half in (0, 1):
        x_lo = m if half == 0 else lx / 2.0
        x_hi = lx / 2.0 if half == 0 else lx - m
        pos = np.array([
            x_lo + (x_hi - x_lo) * rng.random(),
            m + (ly - 2 * m) * rng.random(),
            1.0 + (z_hi - 1.0) * rng.random(),
        ])
        out.append(pos)
    return out


def sample_unclustered_scenario(cfg: SamplerConfig, seed: int) -> Scenario:
    """Mics scattered over the whole room, sources constrained to be covered.

    Each source must have at least cfg.min_near_mics mics inside its
    critical distance. Source placement is retried up to 100 times; if the
    mic cloud still leaves a source uncovered, the nearest non-essential
    mics are pulled into the critical ball.
    """
    rng = np.random.default_rng((seed, 0x5CE0))
    room = _sample_room(cfg, rng)
    d_crit = critical_distance(room)
    dims = np.asarray(room.dims)
    lo = np.full(3, cfg.mic_margin)
    hi = dims - cfg.mic_margin

    mics = np.stack([_uniform_in(rng, lo, hi) for _ in range(cfg.n_mics)])

    sources = []
    for half in (0, 1):
        placed = None
        for _ in range(100):
            cand = _sample_sources(cfg, room, rng)[half]
            dists = np.linalg.norm(mics - cand[None, :], axis=1)
            if int((dists < d_crit).sum()) >= cfg.min_near_mics:
                placed = cand
                break
        if placed is None:
            placed = _sample_sources(cfg, room, rng)[half]
        sources.append(placed)

    # repair pass: drag the nearest uncommitted mics inside the critical ball
    for j, src in enumerate(sources):
        dists = np.linalg.norm(mics - src[None, :], axis=1)
        deficit = cfg.min_near_mics - int((dists < d_crit).sum())
        if deficit <= 0:
            continue
        other = sources[1 - j]
        other_dists = np.linalg.norm(mics - other[None, :], axis=1)
        movable = np.flatnonzero((dists >= d_crit) & (other_dists >= d_crit))
        order = movable[np.argsort(dists[movable])]
        for m_idx in order[:deficit]:
            mics[m_idx] = _point_in_ball(rng, src, d_crit * 0.95, lo, hi)

    snr_lo, snr_hi = cfg.snr_range_db
    return Scenario(
        room=room,
        sources=tuple(tuple(float(v) for v in s) for s in sources),
        mics=tuple(tuple(float(v) for v in m) for m in mics),
        snr_db=float(snr_lo + (snr_hi - snr_lo) * rng.random()),
        seed=seed,
        kind="unclustered",
    )


def sample_clustered_scenario(cfg: SamplerConfig, seed: int) -> Scenario:
    """Mics placed in two groups around the sources.

    Per source: cfg.min_near_mics mics inside the critical distance (the
    nearest one is that group's reference) and cfg.satellite_mics more in
    a square_side x square_side square around the source, clipped to the
    room interior.
    """
    rng = np.random.default_rng((seed, 0x5CE1))
    room = _sample_room(cfg, rng)
    d_crit = critical_distance(room)
    dims = np.asarray(room.dims)
    lo = np.full(3, cfg.mic_margin)
    hi = dims - cfg.mic_margin
    sources = _sample_sources(cfg, room, rng)

    mics = []
    groups = []
    refs = []
    for j, src in enumerate(sources):
        inner = [_point_in_ball(rng, src, d_crit, lo, hi)
                 for _ in range(cfg.min_near_mics)]
        inner.sort(key=lambda p: np.linalg.norm(p - src))
        refs.append(len(mics))  # nearest-in-ball mic leads its group
        sq = cfg.square_side / 2.0
        for _ in range(cfg.satellite_mics):
            # planar square at the talker's height, clipped into the room
            p = np.array([
                src[0] - sq + cfg.square_side * rng.random(),
                src[1] - sq + cfg.square_side * rng.random(),
                src[2],
            ])
            inner.append(np.clip(p, lo, hi))
        mics.extend(inner)
        groups.extend([j] * len(inner))

    snr_lo, snr_hi = cfg.snr_range_db
    return Scenario(
        room=room,
        sources=tuple(tuple(float(v) for v in s) for s in sources),
        mics=tuple(tuple(float(v) for v in m) for m in mics),
        snr_db=float(snr_lo + (snr_hi - snr_lo) * rng.random()),
        seed=seed,
        kind="clustered",
        mic_groups=tuple(groups),
        reference_mics=tuple(refs),
    )


def subset_mics(scenario: Scenario, seed: int) -> Scenario:
    """Random mic subset that keeps the structurally important mics.

    Unclustered scenes keep every mic inside either source's critical
    distance and draw the total count uniformly from [8, 16]. Clustered
    scenes draw 3..7 mics per group, always retaining the group's three
    in-critical mics (the reference among them). Relative mic order is
    preserved.
    """
    rng = np.random.default_rng((scenario.seed, seed, 0x5B5E))
    mics = np.asarray(scenario.mics)
    if scenario.kind == "unclustered":
        d = np.stack([
            np.linalg.norm(mics - np.asarray(s)[None, :], axis=1)
            for s in scenario.sources
        ])
        essential = set(np.flatnonzero((d < critical_distance(scenario.room)).any(axis=0)))
        n_keep = max(int(rng.integers(8, 17)), len(essential))
        n_keep = min(n_keep, len(mics))
        pool = [i for i in range(len(mics)) if i not in essential]
        extra = rng.permutation(len(pool))[:n_keep - len(essential)]
        keep = sorted(essential | {pool[i] for i in extra})
        return replace(
            scenario,
            mics=tuple(scenario.mics[i] for i in keep),
            mic_groups=None,
            reference_mics=None,
        )

    if scenario.kind == "clustered":
        if scenario.mic_groups is None or scenario.reference_mics is None:
            raise ValueError("clustered scenario lacks group annotations")
        keep = []
        groups = np.asarray(scenario.mic_groups)
        d_crit = critical_distance(scenario.room)
        for j in range(len(scenario.sources)):
            members = np.flatnonzero(groups == j)
            ref = int(scenario.reference_mics[j])
            src = np.asarray(scenario.sources[j])
            d = np.linalg.norm(mics[members] - src[None, :], axis=1)
            # the in-critical trio stays so the scene keeps its structure
            core = [int(m) for m, dm in zip(members, d) if dm < d_crit or int(m) == ref]
            sats = [int(m) for m in members if int(m) not in core]
            n_keep = int(rng.integers(3, min(7, len(members)) + 1))
            n_keep = max(n_keep, len(core))
            chosen = rng.permutation(len(sats))[:n_keep - len(core)]
            keep.extend(core + [sats[i] for i in chosen])
        keep = sorted(keep)
        remap = {old: new for new, old in enumerate(keep)}
        return replace(
            scenario,
            mics=tuple(scenario.mics[i] for i in keep),
            mic_groups=tuple(int(scenario.mic_groups[i]) for i in keep),
            reference_mics=tuple(remap[r] for r in scenario.reference_mics),
        )

    raise ValueError(f"unknown scenario kind {scenario.kind!r}")


def validate_scenario(scenario: Scenario):
    """Check the geometric contract of a sampled scene; raises on violation."""
    room = scenario.room
    for j, s in enumerate(scenario.sources):
        _check_inside(room, s, f"source {j}")
    for m_idx, m in enumerate(scenario.mics):
        _check_inside(room, m, f"mic {m_idx}")
    if len(scenario.sources) != 2:
        raise ValueError("expected exactly two sources")
    half = room.dims[0] / 2.0
    if not (scenario.sources[0][0] < half <= scenario.sources[1][0]):
        raise ValueError("sources must occupy different halves of the room")

    d_crit = critical_distance(room)
    mics = np.asarray(scenario.mics)
    if scenario.kind == "unclustered":
        for j, s in enumerate(scenario.sources):
            near = np.linalg.norm(mics - np.asarray(s)[None, :], axis=1) < d_crit
            if int(near.sum()) < 3:
                raise ValueError(f"source {j} has fewer than 3 mics inside the critical distance")
    elif scenario.kind == "clustered":
        for j, ref in enumerate(scenario.reference_mics or ()):
            d = np.linalg.norm(np.asarray(scenario.mics[ref]) - np.asarray(scenario.sources[j]))
            if d >= d_crit:
                raise ValueError(f"reference mic of group {j} lies outside the critical distance")


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def scenario_to_json(scenario: Scenario) -> str:
    doc = {
        "kind": scenario.kind,
        "seed": scenario.seed,
        "snr_db": scenario.snr_db,
        "room": {
            "dims": list(scenario.room.dims),
            "t60": scenario.room.t60,
            "speed_of_sound": scenario.room.speed_of_sound,
            "sample_rate": scenario.room.sample_rate,
        },
        "sources": [list(s) for s in scenario.sources],
        "mics": [list(m) for m in scenario.mics],
        "mic_groups": list(scenario.mic_groups) if scenario.mic_groups is not None else None,
        "reference_mics": (list(scenario.reference_mics)
                           if scenario.reference_mics is not None else None),
    }
    return json.dumps(doc, sort_keys=True, indent=2)


def scenario_from_json(text: str) -> Scenario:
    doc = json.loads(text)
    room = Room(
        dims=tuple(doc["room"]["dims"]),
        t60=doc["room"]["t60"],
        speed_of_sound=doc["room"].get("speed_of_sound", SPEED_OF_SOUND),
        sample_rate=doc["room"].get("sample_rate", 16000),
    )
    return Scenario(
        room=room,
        sources=tuple(tuple(s) for s in doc["sources"]),
        mics=tuple(tuple(m) for m in doc["mics"]),
        snr_db=doc["snr_db"],
        seed=doc["seed"],
        kind=doc["kind"],
        mic_groups=tuple(doc["mic_groups"]) if doc.get("mic_groups") is not None else None,
        reference_mics=(tuple(doc["reference_mics"])
                        if doc.get("reference_mics") is not None else None),
    )


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RenderedScene:
    """Mic mixtures plus the per-source reverberant images used for scoring.

    mix is [n_mics, n_samples]; targets is [n_sources, n_mics, n_samples]
    and sums (with the noise) to mix.
    """

    mix: np.ndarray
    targets: np.ndarray


def speech_shaped_source(n_samples: int, sample_rate: int, seed,
                         mod_phase: float = 0.0) -> np.ndarray:
    """Synthetic dry source: low-shelf shaped noise with slow amplitude modulation.

    The spectral tilt concentrates energy below ~500 Hz like speech, and a
    4 Hz raised-cosine envelope (floor 0.05) gives syllable-rate level
    variation. Output is unit RMS. Handing the two talkers opposite
    mod_phase values keeps them from peaking at the same time.
    """
    rng = np.random.default_rng(seed)
    white = rng.standard_normal(n_samples)

    # RBJ low-shelf biquad, f0 = 500 Hz, +15 dB, slope 1
    a_gain = 10.0 ** (15.0 / 40.0)
    w0 = 2.0 * np.pi * 500.0 / sample_rate
    alpha = np.sin(w0) / 2.0 * np.sqrt(2.0)  # shelf slope 1
    cw = np.cos(w0)
    sq = 2.0 * np.sqrt(a_gain) * alpha
    b = np.array([
        a_gain * ((a_gain + 1) - (a_gain - 1) * cw + sq),
        2 * a_gain * ((a_gain - 1) - (a_gain + 1) * cw),
        a_gain * ((a_gain + 1) - (a_gain - 1) * cw - sq),
    ])
    a = np.array([
        (a_gain + 1) + (a_gain - 1) * cw + sq,
        -2 * ((a_gain - 1) + (a_gain + 1) * cw),
        (a_gain + 1) + (a_gain - 1) * cw - sq,
    ])
    shaped = lfilter(b / a[0], a / a[0], white)

    t = np.arange(n_samples) / sample_rate
    env = 0.05 + 0.95 * 0.5 * (1.0 - np.cos(2.0 * np.pi * 4.0 * t + mod_phase))
    out = shaped * env
    return out / np.sqrt(np.mean(out * out))


def render_scene(scenario: Scenario, dry_sources) -> RenderedScene:
    """Convolve dry sources with the scene's RIRs and add sensor noise.

    The image set of each source is enumerated once and shared across all
    mics. Sensor noise is spatially white with variance set so that the
    speech power at the mic closest to the room center over the noise
    power hits scenario.snr_db (the SNR is defined with respect to the
    middle of the room); an infinite SNR renders noiseless.

    Args:
        scenario: geometry and SNR.
        dry_sources: [n_sources, n_samples] with nonzero energy per row.

    Returns:
        RenderedScene; all signals have n_samples samples.
    """
    dry = np.asarray(dry_sources, dtype=np.float64)
    if dry.ndim != 2 or dry.shape[0] != len(scenario.sources):
        raise ValueError("dry_sources must be [n_sources, n_samples]")
    if np.any(np.sqrt(np.mean(dry * dry, axis=1)) < 1e-12):
        raise ValueError("dry source with (near) zero energy")
    n_samples = dry.shape[1]

    room = scenario.room
    mics = np.asarray(scenario.mics)
    samples_per_meter = room.sample_rate / room.speed_of_sound
    targets = np.zeros((len(scenario.sources), len(scenario.mics), n_samples))

    for j, src in enumerate(scenario.sources):
        src = np.asarray(src, dtype=np.float64)
        direct = np.linalg.norm(mics - src[None, :], axis=1)
        cap_global = (_rir_length(room, float(direct.max())) - SINC_HALF - 2) / samples_per_meter
        pos, orders = _image_set(room, src, cap_global)
        beta_pow = _beta_powers(room, orders)
        for m_idx in range(len(scenario.mics)):
            n_taps = _rir_length(room, float(direct[m_idx]))
            cap = (n_taps - SINC_HALF - 2) / samples_per_meter
            taps = np.zeros(n_taps)
            _accumulate_taps(taps, pos, beta_pow, mics[m_idx],
                             samples_per_meter, cap, _TABLE)
            targets[j, m_idx] = fftconvolve(dry[j], taps)[:n_samples]

    mix = targets.sum(axis=0)
    if np.isfinite(scenario.snr_db):
        center = np.asarray(room.dims) / 2.0
        middle = int(np.argmin(np.linalg.norm(mics - center[None, :], axis=1)))
        speech_power = float(np.mean(mix[middle] * mix[middle]))
        noise_var = speech_power / 10.0 ** (scenario.snr_db / 10.0)
        rng = np.random.default_rng((scenario.seed, 0x401E))
        mix = mix + np.sqrt(noise_var) * rng.standard_normal(mix.shape)
    return RenderedScene(mix=mix, targets=targets)
