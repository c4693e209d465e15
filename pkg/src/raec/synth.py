"""Mixture synthesis: event-into-background mixing at a controlled EBR.

Covers seeded training corpora, position-sensitivity grids, a toy asset
generator, and the line-delimited manifest format.

Asset identifiers double as relative paths inside an asset directory: event
``"<class>/<name>"`` lives at ``events/<class>/<name>.wav`` and background
``"<name>"`` at ``backgrounds/<name>.wav``.  The event class (the target the
classifier is trained for) is the first path component of the event id.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from raec.dsp import Waveform, read_wav, write_wav

MANIFEST_VERSION = 1
MANIFEST_COLUMNS = ("id", "split", "event_path", "background_path", "ebr_db", "onset_s", "label", "seed")
SPLITS = ("train", "dev", "test", "sensitivity")
DEFAULT_EBRS = (-6.0, 0.0, 6.0)


class SynthError(ValueError):
    pass


class UnusableAssetError(SynthError):
    pass


class PlacementError(SynthError):
    pass


class ManifestError(SynthError):
    pass


# -- assets ------------------------------------------------------------------


def event_class(event_id: str) -> str:
    return event_id.split("/", 1)[0]


@dataclass
class AssetPool:
    events: dict[str, Waveform]
    backgrounds: dict[str, Waveform]

    @property
    def sample_rate(self) -> int:
        rates = {w.sample_rate for w in (*self.events.values(), *self.backgrounds.values())}
        if len(rates) != 1:
            raise SynthError(f"asset pool mixes sample rates {sorted(rates)}")
        return rates.pop()

    @property
    def classes(self) -> list[str]:
        return sorted({event_class(e) for e in self.events})

    def events_of(self, cls: str) -> list[str]:
        return sorted(e for e in self.events if event_class(e) == cls)

    def save(self, root) -> None:
        root = Path(root)
        for eid, w in self.events.items():
            write_wav(root / "events" / f"{eid}.wav", w)
        for bid, w in self.backgrounds.items():
            write_wav(root / "backgrounds" / f"{bid}.wav", w)

    @classmethod
    def load(cls, root) -> "AssetPool":
        root = Path(root)
        if not (root / "events").is_dir() or not (root / "backgrounds").is_dir():
            raise FileNotFoundError(f"{root}: expected events/ and backgrounds/ subdirectories")
        events = {
            p.relative_to(root / "events").with_suffix("").as_posix(): read_wav(p)
            for p in sorted((root / "events").glob("*/*.wav"))
        }
        backgrounds = {p.stem: read_wav(p) for p in sorted((root / "backgrounds").glob("*.wav"))}
        if not events or not backgrounds:
            raise SynthError(f"{root}: no event or background WAV files found")
        return cls(events, backgrounds)


@dataclass(frozen=True)
class ToyAssetConfig:
    sample_rate: int = 8000
    classes: tuple[str, ...] = ("tone", "chirp", "burst")
    events_per_class: int = 40
    event_dur: tuple[float, float] = (0.1, 0.5)
    n_backgrounds: int = 60
    background_s: float = 3.0
    background_rms: tuple[float, float] = (0.05, 0.2)


def _as_f32(x: np.ndarray) -> np.ndarray:
    # keeps toy assets lossless through a float32 WAV round trip
    return x.astype(np.float32).astype(np.float64)


def _envelope(n: int) -> np.ndarray:
    ramp = max(2, int(0.01 * n) + 2)
    env = np.ones(n)
    env[:ramp] = np.linspace(0.0, 1.0, ramp)
    env[-ramp:] = np.linspace(1.0, 0.0, ramp)
    return env


def _toy_tone(n: int, sr: int, rng) -> np.ndarray:
    # harmonic tone with vibrato and a syllabic amplitude modulation
    t = np.arange(n) / sr
    f0 = rng.uniform(350.0, 550.0)
    vib = 1.0 + 0.03 * np.sin(2 * np.pi * rng.uniform(4.0, 7.0) * t)
    phase = 2 * np.pi * np.cumsum(f0 * vib) / sr
    x = sum(a * np.sin(k * phase) for k, a in ((1, 1.0), (2, 0.5), (3, 0.25)))
    am = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(6.0, 10.0) * t + rng.uniform(0, 2 * np.pi))
    return x * am * _envelope(n)


def _toy_chirp(n: int, sr: int, rng) -> np.ndarray:
    # exponential sweep confined to the upper band
    t = np.arange(n) / sr
    f_a, f_b = rng.uniform(1000.0, 1400.0), rng.uniform(2800.0, 3500.0)
    if rng.random() < 0.5:
        f_a, f_b = f_b, f_a
    dur = n / sr
    k = math.log(f_b / f_a) / dur
    phase = 2 * np.pi * f_a * (np.exp(k * t) - 1.0) / k
    return np.sin(phase) * _envelope(n)


def _toy_burst(n: int, sr: int, rng) -> np.ndarray:
    # broadband impulsive noise: sharp attack, exponential decay
    t = np.arange(n) / sr
    tau = rng.uniform(0.03, 0.1)
    return rng.standard_normal(n) * np.exp(-t / tau) * _envelope(n)


_TOY_EVENTS = {"tone": _toy_tone, "chirp": _toy_chirp, "burst": _toy_burst}


def _colored_noise(n: int, rng, alpha: float) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.size, dtype=np.float64)
    f[0] = 1.0
    spec *= f ** (-alpha / 2.0)
    x = np.fft.irfft(spec, n=n)
    return x / np.sqrt(np.mean(x * x))


def gen_toy_assets(seed: int, config: ToyAssetConfig = ToyAssetConfig()) -> AssetPool:
    """Seeded stand-in for real event / background recordings."""
    rng = np.random.default_rng(seed)
    sr = config.sample_rate
    lo, hi = config.event_dur
    events = {}
    for cls in config.classes:
        try:
            make = _TOY_EVENTS[cls]
        except KeyError:
            raise SynthError(f"no toy generator for event class {cls!r}; known: {sorted(_TOY_EVENTS)}") from None
        for k in range(config.events_per_class):
            n = int(round(rng.uniform(lo, hi) * sr))
            x = make(n, sr, rng)
            x = 0.5 * x / np.max(np.abs(x))
            events[f"{cls}/{cls}_{k:03d}"] = Waveform(_as_f32(x), sr)
    backgrounds = {}
    n_bg = int(round(config.background_s * sr))
    t = np.arange(n_bg) / sr
    for k in range(config.n_backgrounds):
        x = _colored_noise(n_bg, rng, rng.uniform(0.0, 2.0))
        # slow level drift so the scene is not stationary
        drift = 1.0 + rng.uniform(0.1, 0.4) * np.sin(2 * np.pi * rng.uniform(0.2, 1.0) * t + rng.uniform(0, 2 * np.pi))
        x = x * drift * rng.uniform(*config.background_rms)
        backgrounds[f"bg_{k:03d}"] = Waveform(_as_f32(x), sr)
    return AssetPool(events, backgrounds)


# -- mixing ------------------------------------------------------------------


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def ebr_gain(event: Waveform, background_segment: Waveform, ebr_db: float, mode: str = "rms") -> float:
    """Gain that puts ``event`` at ``ebr_db`` relative to the background it overlays."""
    if mode == "rms":
        ev, bg = _rms(event.samples), _rms(background_segment.samples)
    elif mode == "peak":
        ev, bg = float(np.max(np.abs(event.samples))), float(np.max(np.abs(background_segment.samples)))
    else:
        raise ValueError(f"unknown EBR mode {mode!r}")
    if ev == 0.0:
        raise UnusableAssetError("unusable event asset: event is silent")
    if bg == 0.0:
        raise UnusableAssetError("EBR undefined: background segment is silent")
    return 10.0 ** (ebr_db / 20.0) * bg / ev


def onset_sample(onset_s: float, sample_rate: int) -> int:
    return int(round(onset_s * sample_rate))


def fits(event_len: int, background_len: int, onset: int) -> bool:
    return onset >= 0 and onset + event_len <= background_len


def mix(event: Waveform, background: Waveform, ebr_db: float, onset_s: float, mode: str = "rms") -> Waveform:
    """Add the scaled event into a copy of the background; nothing outside the event window changes."""
    if event.sample_rate != background.sample_rate:
        raise SynthError(f"sample rate mismatch: event {event.sample_rate} Hz, background {background.sample_rate} Hz")
    start = onset_sample(onset_s, background.sample_rate)
    n = len(event)
    if not fits(n, len(background), start):
        raise PlacementError(
            f"placement out of range: {n} event samples at sample {start} exceed background length {len(background)}"
        )
    out = background.samples.copy()
    if not np.any(event.samples):
        return Waveform(out, background.sample_rate)
    segment = Waveform(background.samples[start : start + n], background.sample_rate)
    gain = ebr_gain(event, segment, ebr_db, mode)
    out[start : start + n] += gain * event.samples
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return Waveform(out, background.sample_rate)


def measure_ebr(mixture: Waveform, background: Waveform, onset_s: float, event_len: int) -> float:
    start = onset_sample(onset_s, background.sample_rate)
    window = slice(start, start + event_len)
    added = mixture.samples[window] - background.samples[window]
    return 20.0 * math.log10(_rms(added) / _rms(background.samples[window]))


# -- manifests ---------------------------------------------------------------


@dataclass(frozen=True)
class MixtureSpec:
    id: str
    split: str
    event_id: str | None
    background_id: str
    ebr_db: float
    onset_s: float
    label: int
    seed: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ManifestError(f"{self.id}: label must be 0 or 1")
        if (self.event_id is not None) != (self.label == 1):
            raise ManifestError(f"{self.id}: label must be 1 exactly when an event is present")
        if self.onset_s < 0:
            raise ManifestError(f"{self.id}: negative onset")

    @property
    def event_class(self) -> str | None:
        return None if self.event_id is None else event_class(self.event_id)


@dataclass
class CorpusManifest:
    split: str
    specs: list[MixtureSpec]
    seed: int
    assets: str = ""
    version: int = MANIFEST_VERSION
    meta: dict[str, str] = field(default_factory=dict)

    def __len__(self):
        return len(self.specs)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.specs], dtype=np.float64)

    def dumps(self) -> str:
        header = ["#raec-manifest", f"version={self.version}", f"split={self.split}", f"seed={self.seed}", f"assets={self.assets}"]
        header += [f"{k}={v}" for k, v in sorted(self.meta.items())]
        lines = ["\t".join(header), "\t".join(MANIFEST_COLUMNS)]
        for s in self.specs:
            event_path = "-" if s.event_id is None else f"events/{s.event_id}.wav"
            lines.append(
                "\t".join(
                    [
                        s.id,
                        s.split,
                        event_path,
                        f"backgrounds/{s.background_id}.wav",
                        repr(float(s.ebr_db)),
                        repr(float(s.onset_s)),
                        str(s.label),
                        str(s.seed),
                    ]
                )
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "CorpusManifest":
        lines = text.splitlines()
        if len(lines) < 2 or not lines[0].startswith("#raec-manifest"):
            raise ManifestError("not a raec manifest (missing header)")
        header = dict(item.split("=", 1) for item in lines[0].split("\t")[1:])
        if int(header.get("version", -1)) != MANIFEST_VERSION:
            raise ManifestError(f"unsupported manifest version {header.get('version')}")
        if tuple(lines[1].split("\t")) != MANIFEST_COLUMNS:
            raise ManifestError(f"unexpected manifest columns: {lines[1]!r}")
        specs = []
        for lineno, line in enumerate(lines[2:], start=3):
            parts = line.split("\t")
            if len(parts) != len(MANIFEST_COLUMNS):
                raise ManifestError(f"line {lineno}: expected {len(MANIFEST_COLUMNS)} fields, got {len(parts)}")
            sid, split, ev, bg, ebr, onset, label, seed = parts
            event_id = None if ev == "-" else _strip(ev, "events/")
            specs.append(MixtureSpec(sid, split, event_id, _strip(bg, "backgrounds/"), float(ebr), float(onset), int(label), int(seed)))
        known = {"version", "split", "seed", "assets"}
        meta = {k: v for k, v in header.items() if k not in known}
        return cls(header["split"], specs, int(header["seed"]), header.get("assets", ""), MANIFEST_VERSION, meta)

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "CorpusManifest":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"manifest not found: {path}")
        return cls.loads(path.read_text(encoding="utf-8"))


def _strip(path: str, prefix: str) -> str:
    if not path.startswith(prefix) or not path.endswith(".wav"):
        raise ManifestError(f"asset path {path!r} is not of the form {prefix}<id>.wav")
    return path[len(prefix) : -len(".wav")]


# -- corpus generation -------------------------------------------------------


def gen_training_corpus(
    assets: AssetPool,
    n_mixtures: int,
    target_class: str,
    ebr_set=DEFAULT_EBRS,
    positive_ratio: float = 0.5,
    seed: int = 0,
    split: str = "train",
    background_ids=None,
) -> CorpusManifest:
    """Balanced corpus of positives (target event at random onset and EBR) and raw-background negatives."""
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    if n_mixtures < 1:
        raise ValueError("n_mixtures must be >= 1")
    rng = np.random.default_rng(seed)
    events = assets.events_of(target_class)
    backgrounds = sorted(assets.backgrounds) if background_ids is None else list(background_ids)
    if not events or not backgrounds:
        raise SynthError(f"no assets for class {target_class!r} or no backgrounds")
    pairs = []
    skipped = 0
    for e in events:
        for b in backgrounds:
            if len(assets.events[e]) <= len(assets.backgrounds[b]):
                pairs.append((e, b))
            else:
                skipped += 1
    if skipped:
        warnings.warn(f"{skipped} event/background pairs skipped: event longer than background", stacklevel=2)
    if not pairs:
        raise SynthError("no feasible event/background placement")
    n_pos = int(round(n_mixtures * positive_ratio))
    labels = rng.permutation(np.r_[np.ones(n_pos, dtype=int), np.zeros(n_mixtures - n_pos, dtype=int)])
    ebrs = [float(e) for e in ebr_set]
    specs = []
    for i, label in enumerate(labels):
        sid = f"{split}-{i:06d}"
        spec_seed = int(rng.integers(2**31))
        if label:
            e, b = pairs[int(rng.integers(len(pairs)))]
            ebr = ebrs[int(rng.integers(len(ebrs)))]
            slack = len(assets.backgrounds[b]) - len(assets.events[e])
            onset = int(rng.integers(slack + 1)) / assets.backgrounds[b].sample_rate
            specs.append(MixtureSpec(sid, split, e, b, ebr, onset, 1, spec_seed))
        else:
            b = backgrounds[int(rng.integers(len(backgrounds)))]
            specs.append(MixtureSpec(sid, split, None, b, 0.0, 0.0, 0, spec_seed))
    return CorpusManifest(split, specs, seed, meta={"target": target_class})


def grid_positions(clip_s: float, n_positions: int) -> list[float]:
    """Evenly spaced onsets ``k * clip_s / n``; whole seconds for a 30 s clip and 30 positions."""
    return [round(k * clip_s / n_positions, 6) for k in range(n_positions)]


def grid_upper_bound(n_events: int, n_backgrounds: int, n_positions: int, n_ebrs: int) -> int:
    return n_events * n_backgrounds * n_positions * n_ebrs


def gen_position_grid(
    assets: AssetPool,
    event_ids,
    background_ids,
    positions,
    ebr_set=DEFAULT_EBRS,
    seed: int = 0,
) -> CorpusManifest:
    """Every (event, background, position, EBR) cell whose event fits; all labels are 1."""
    specs = []
    for e in event_ids:
        ev_len = len(assets.events[e])
        for b in background_ids:
            bg = assets.backgrounds[b]
            for pos in positions:
                if not fits(ev_len, len(bg), onset_sample(pos, bg.sample_rate)):
                    continue
                for ebr in ebr_set:
                    i = len(specs)
                    specs.append(MixtureSpec(f"sens-{i:07d}", "sensitivity", e, b, float(ebr), float(pos), 1, seed + i))
    return CorpusManifest("sensitivity", specs, seed)


def render(spec: MixtureSpec, assets: AssetPool, mode: str = "rms") -> Waveform:
    bg = assets.backgrounds[spec.background_id]
    if spec.event_id is None:
        return Waveform(bg.samples.copy(), bg.sample_rate)
    return mix(assets.events[spec.event_id], bg, spec.ebr_db, spec.onset_s, mode)


def render_to_dir(manifest: CorpusManifest, assets: AssetPool, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    paths = []
    for spec in manifest.specs:
        path = out_dir / f"{spec.id}.wav"
        write_wav(path, render(spec, assets))
        paths.append(path)
    return paths
