"""Synthetic radar pulse-descriptor-word generation.

Seven emitter classes, three operating modes. A mode fixes the PRI
pattern family (VS constant, TAS stagger, STT jitter); each emitter
carries its own per-mode PRI program plus RF/PW signatures that survive
per-sequence min-max normalization, so classes stay separable inside a
mode while the PRI structure shifts across modes.

Everything is a pure function of (spec, seed): same inputs, identical
samples, bytewise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InsufficientDataError

SEQ_LEN = 512
N_CLASSES = 7
DEFAULT_RATIO = (100, 50, 25, 15, 10, 5, 1)
DEFAULT_TEST_TOTAL = 200

MODE_NAMES = ("VS", "TAS", "STT")


@dataclass(frozen=True)
class PulseDescriptor:
    """One received pulse: time of arrival, carrier, width, amplitude."""

    toa: float
    rf: float
    pw: float
    amplitude: float


@dataclass(frozen=True)
class ModeSpec:
    mode_id: int
    name: str
    pri_pattern: str  # constant | stagger | jitter

    def __post_init__(self):
        if self.pri_pattern not in ("constant", "stagger", "jitter"):
            raise ConfigError(f"unknown PRI pattern {self.pri_pattern!r}")


@dataclass(frozen=True)
class PriProgram:
    """One emitter's PRI behaviour in one mode.

    ``base_band`` widens the base PRI into a per-sequence uniform draw
    base * (1 +- band). The default registry uses it to make PRI
    uninformative about the emitter class: a classifier that latches
    onto PRI fingerprints instead of the RF/PW content collapses the
    moment the operating mode changes.
    """

    pattern: str
    base: float
    stagger_ratios: tuple = ()
    jitter_pct: float = 0.0
    base_band: float = 0.0

    def __post_init__(self):
        if self.base <= 0:
            raise ConfigError("PRI base must be positive")
        if self.pattern == "stagger" and not 2 <= len(self.stagger_ratios) <= 8:
            raise ConfigError("stagger programs need 2..8 levels")
        if self.pattern == "jitter" and not 0.0 < self.jitter_pct <= 0.3:
            raise ConfigError("jitter percentage must be in (0, 0.3]")
        if not 0.0 <= self.base_band < 1.0:
            raise ConfigError("base_band must lie in [0, 1)")


@dataclass(frozen=True)
class EmitterSpec:
    """A radar emitter: RF/PW signature plus a PRI program per mode.

    ``rf_offsets`` are deviations from ``rf_center`` cycled pulse by
    pulse (a single 0 entry means a fixed carrier); ``pw_levels`` are
    multipliers on ``pw_nominal`` cycled the same way. ``rf_drift``
    is a slow sweep (shape, amplitude Hz, cycles, tilt Hz) spread over
    the whole sequence; it is what makes individual patches carry their
    position, since fast cyclic patterns repeat identically patch to
    patch. Drift shapes double as class signatures that survive min-max
    normalization.
    """

    emitter_id: int
    rf_center: float
    rf_agility: str  # fixed | hop-set
    rf_offsets: tuple
    pw_nominal: float
    pw_levels: tuple
    pri_programs: tuple  # indexed by mode_id
    rf_drift: tuple = ("none", 0.0, 0.0, 0.0)

    def program_for(self, mode: ModeSpec) -> PriProgram:
        if not 0 <= mode.mode_id < len(self.pri_programs):
            raise ConfigError(f"emitter {self.emitter_id} has no program for mode {mode.mode_id}")
        prog = self.pri_programs[mode.mode_id]
        if prog.pattern != mode.pri_pattern:
            raise ConfigError(
                f"emitter {self.emitter_id}: program {prog.pattern!r} does not match "
                f"mode {mode.name} ({mode.pri_pattern!r})"
            )
        return prog


@dataclass(frozen=True)
class NoiseParams:
    """Measurement-noise standard deviations (Gaussian, per pulse)."""

    toa_sigma: float = 50e-9
    rf_sigma: float = 1e6
    pw_sigma: float = 20e-9
    amp_sigma: float = 0.05

    @staticmethod
    def zero() -> "NoiseParams":
        return NoiseParams(0.0, 0.0, 0.0, 0.0)


@dataclass
class SampleRecord:
    """Model-ready sample: 2x512 normalized features plus the raw TOA track."""

    features: np.ndarray  # float32 (2, 512) in [0, 1]
    toa_track: np.ndarray  # float64 (512,), toa_track[0] == 0
    label: int
    mode: int


@dataclass
class DatasetSplit:
    train: list
    test: list
    ratio: tuple
    seed: int


def default_modes() -> tuple:
    return (
        ModeSpec(0, "VS", "constant"),
        ModeSpec(1, "TAS", "stagger"),
        ModeSpec(2, "STT", "jitter"),
    )


def default_emitters() -> tuple:
    """Seven emitters whose normalized RF/PW trajectories are pairwise distinct."""
    ghz = 1e9
    mhz = 1e6
    us = 1e-6

    # One PRI program per mode, shared by every emitter, with a wide
    # per-sequence base band: PRI tells you the mode, never the class.
    programs = (
        PriProgram("constant", 100 * us, base_band=0.3),
        PriProgram("stagger", 95 * us, stagger_ratios=(1.0, 1.15, 1.3), base_band=0.25),
        PriProgram("jitter", 100 * us, jitter_pct=0.15, base_band=0.25),
    )

    return (
        EmitterSpec(0, 9.10 * ghz, "fixed", (0.0,), 1.0 * us, (1.0,), programs,
                    rf_drift=("ramp", 80 * mhz, 0.0, 0.0)),
        EmitterSpec(1, 9.25 * ghz, "hop-set", (-25 * mhz, 25 * mhz), 0.8 * us, (1.0,), programs,
                    rf_drift=("ramp", -80 * mhz, 0.0, 0.0)),
        EmitterSpec(2, 9.00 * ghz, "fixed", (0.0,), 1.2 * us, (1.0,), programs,
                    rf_drift=("sin", 40 * mhz, 1.0, 30 * mhz)),
        EmitterSpec(3, 9.40 * ghz, "fixed", (0.0,), 1.0 * us, (0.5, 1.5), programs,
                    rf_drift=("ramp", 60 * mhz, 0.0, 0.0)),
        EmitterSpec(4, 9.20 * ghz, "fixed", (0.0,), 1.0 * us, (0.6, 1.0, 1.4), programs,
                    rf_drift=("sin", 40 * mhz, 2.0, 40 * mhz)),
        EmitterSpec(5, 9.32 * ghz, "fixed", (0.0,), 0.7 * us, (1.0,), programs,
                    rf_drift=("saw", 30 * mhz, 2.0, 50 * mhz)),
        EmitterSpec(6, 9.15 * ghz, "hop-set", (-15 * mhz, -15 * mhz, 15 * mhz, 15 * mhz),
                    1.0 * us, (0.9, 1.1), programs,
                    rf_drift=("cos", 40 * mhz, 1.0, 30 * mhz)),
    )


def _rf_drift(drift: tuple, n_pulses: int) -> np.ndarray:
    """Slow RF sweep over the whole sequence; u runs 0..1."""
    shape, amp, cycles, tilt = drift
    u = np.arange(n_pulses) / max(n_pulses - 1, 1)
    if shape == "none":
        return np.zeros(n_pulses)
    if shape == "ramp":
        return amp * u
    if shape == "sin":
        return amp * np.sin(2 * np.pi * cycles * u) + tilt * u
    if shape == "cos":
        return amp * np.cos(2 * np.pi * cycles * u) + tilt * u
    if shape == "saw":
        return amp * np.mod(cycles * u, 1.0) + tilt * u
    raise ConfigError(f"unknown drift shape {shape!r}")


def _rng_from_seed(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    return np.random.default_rng(np.random.SeedSequence(seed))


def generate_sequence(emitter: EmitterSpec, mode: ModeSpec, n_pulses: int,
                      noise: NoiseParams, seed) -> list:
    """Generate ``n_pulses`` PulseDescriptors for one emitter in one mode.

    TOAs start at 0 and follow the mode's PRI program; jitter draws are
    uniform in +-jitter_pct so all noiseless deltas stay inside the
    stated band. Gaussian measurement noise is added on top.
    """
    if n_pulses < 1:
        raise ConfigError("n_pulses must be positive")
    prog = emitter.program_for(mode)
    rng = _rng_from_seed(seed)

    base = prog.base
    if prog.base_band > 0:
        base = base * (1.0 + rng.uniform(-prog.base_band, prog.base_band))

    idx = np.arange(n_pulses)
    if prog.pattern == "constant":
        deltas = np.full(n_pulses - 1, base)
    elif prog.pattern == "stagger":
        ratios = np.asarray(prog.stagger_ratios)
        deltas = base * ratios[idx[:-1] % len(ratios)]
    else:
        jit = rng.uniform(-prog.jitter_pct, prog.jitter_pct, n_pulses - 1)
        deltas = base * (1.0 + jit)

    toa = np.concatenate(([0.0], np.cumsum(deltas)))
    if noise.toa_sigma > 0:
        toa = toa + rng.normal(0.0, noise.toa_sigma, n_pulses)
    if np.any(np.diff(toa) <= 0):
        raise ConfigError("TOA noise too large for the PRI program: sequence not increasing")

    offsets = np.asarray(emitter.rf_offsets)
    rf = emitter.rf_center + offsets[idx % len(offsets)] + _rf_drift(emitter.rf_drift, n_pulses)
    levels = np.asarray(emitter.pw_levels)
    pw = emitter.pw_nominal * levels[idx % len(levels)]
    amp = np.ones(n_pulses)
    if noise.rf_sigma > 0:
        rf = rf + rng.normal(0.0, noise.rf_sigma, n_pulses)
    if noise.pw_sigma > 0:
        pw = pw + rng.normal(0.0, noise.pw_sigma, n_pulses)
    if noise.amp_sigma > 0:
        amp = amp + rng.normal(0.0, noise.amp_sigma, n_pulses)
    if np.any(pw <= 0) or np.any(rf <= 0):
        raise ConfigError("noise drove RF or PW non-positive; lower the sigmas")

    return [PulseDescriptor(float(t), float(f), float(w), float(a))
            for t, f, w, a in zip(toa, rf, pw, amp)]


def _minmax_channel(values: np.ndarray) -> np.ndarray:
    lo = values.min()
    hi = values.max()
    if hi == lo:
        return np.full_like(values, 0.5)
    return (values - lo) / (hi - lo)


def to_sample(seq, label: int = -1, mode: int = -1) -> SampleRecord:
    """First 512 pulses -> normalized (RF, PW) channels plus raw TOA track.

    Channels are min-max normalized per sequence; a constant channel maps
    to 0.5. The TOA track is shifted so it starts at exactly 0.
    """
    if len(seq) < SEQ_LEN:
        raise InsufficientDataError(f"need at least {SEQ_LEN} pulses, got {len(seq)}")
    head = seq[:SEQ_LEN]
    rf = np.array([p.rf for p in head], dtype=np.float64)
    pw = np.array([p.pw for p in head], dtype=np.float64)
    toa = np.array([p.toa for p in head], dtype=np.float64)
    features = np.stack([_minmax_channel(rf), _minmax_channel(pw)]).astype(np.float32)
    return SampleRecord(features=features, toa_track=toa - toa[0], label=label, mode=mode)


def largest_remainder_allocation(total: int, parts: int) -> list:
    """Split ``total`` into ``parts`` near-equal integers, earlier parts larger."""
    base = total // parts
    extra = total % parts
    return [base + 1 if i < extra else base for i in range(parts)]


def make_split(mode: ModeSpec, ratio=DEFAULT_RATIO, test_total: int = DEFAULT_TEST_TOTAL,
               seed: int = 0, emitters=None, noise: NoiseParams = NoiseParams(),
               n_pulses: int = SEQ_LEN) -> DatasetSplit:
    """Long-tailed train split plus a near-balanced test split for one mode.

    Train counts equal ``ratio`` entry-for-entry (class order = emitter id);
    the test split allocates ``test_total`` samples by largest remainder.
    """
    if any(r <= 0 for r in ratio):
        raise ConfigError("ratio entries must be positive")
    if len(ratio) != N_CLASSES:
        raise ConfigError(f"ratio must have {N_CLASSES} entries")
    emitters = default_emitters() if emitters is None else emitters
    test_counts = largest_remainder_allocation(test_total, N_CLASSES)

    train, test = [], []
    for cls in range(N_CLASSES):
        em = emitters[cls]
        for i in range(ratio[cls]):
            seq = generate_sequence(em, mode, n_pulses, noise,
                                    np.random.SeedSequence([seed, mode.mode_id, cls, 0, i]))
            train.append(to_sample(seq, label=cls, mode=mode.mode_id))
        for j in range(test_counts[cls]):
            seq = generate_sequence(em, mode, n_pulses, noise,
                                    np.random.SeedSequence([seed, mode.mode_id, cls, 1, j]))
            test.append(to_sample(seq, label=cls, mode=mode.mode_id))
    return DatasetSplit(train=train, test=test, ratio=tuple(ratio), seed=seed)


def build_pretrain_pool(total: int, seed: int = 0, modes=None, emitters=None,
                        noise: NoiseParams = NoiseParams(),
                        n_pulses: int = SEQ_LEN) -> list:
    """Unlabeled-style pool spread near-evenly over all (emitter, mode) cells."""
    modes = default_modes() if modes is None else modes
    emitters = default_emitters() if emitters is None else emitters
    cells = [(m, e) for m in modes for e in emitters]
    counts = largest_remainder_allocation(total, len(cells))
    pool = []
    for (mode, em), count in zip(cells, counts):
        for i in range(count):
            seq = generate_sequence(em, mode, n_pulses, noise,
                                    np.random.SeedSequence([seed, 2, mode.mode_id, em.emitter_id, i]))
            pool.append(to_sample(seq, label=em.emitter_id, mode=mode.mode_id))
    return pool
