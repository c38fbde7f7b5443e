"""
Desk-scale training data: synthetic stems, activity gating, on-the-fly mixing.

Synthetic sources are built to occupy mostly separate spectral regions:

- vocals: phrases of harmonic tones (180-450 Hz fundamentals) with vibrato
- bass: smooth low notes, 41-110 Hz fundamental plus a weak octave
- drums: kick sweeps and exponentially decaying noise bursts on a beat grid
- other: band-limited noise pad (400-5000 Hz) with slow tremolo

Any other source name falls back to the "other" generator with its own band.
"""
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from tsbsmamba.core.exceptions import ShapeMismatchError
from tsbsmamba.models.config_models import DEFAULT_SOURCES, DataConfig, SadConfig
from tsbsmamba.models.result_models import Segment
from tsbsmamba.utils.audio_io import read_wav
from tsbsmamba.utils.logger import get_logger

logger = get_logger(__name__)

Pools = Dict[str, List[Segment]]

_TARGET_RMS = 0.1


def _note_grid(rng: np.random.Generator, n_samples: int, sample_rate: int, lengths: Tuple[float, float],
               rest_prob: float) -> List[Tuple[int, int]]:
    """Consecutive (start, length) note slots; some slots are rests."""
    notes, pos = [], 0
    while pos < n_samples:
        length = int(rng.uniform(*lengths) * sample_rate)
        length = max(1, min(length, n_samples - pos))
        if rng.random() >= rest_prob:
            notes.append((pos, length))
        pos += length
    return notes


def _hann_envelope(length: int) -> np.ndarray:
    return np.hanning(length + 2)[1:-1]


def _harmonic_note(f0: np.ndarray, sample_rate: int, amplitudes: Sequence[float]) -> np.ndarray:
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate
    nyquist_guard = 0.45 * sample_rate
    out = np.zeros_like(f0)
    for h, amp in enumerate(amplitudes, start=1):
        if h * f0.max() < nyquist_guard:
            out += amp * np.sin(h * phase)
    return out


def _vocals(rng: np.random.Generator, n_samples: int, sample_rate: int) -> np.ndarray:
    out = np.zeros(n_samples)
    for start, length in _note_grid(rng, n_samples, sample_rate, (0.25, 0.6), rest_prob=0.25):
        t = np.arange(length) / sample_rate
        vibrato = 1 + 0.015 * np.sin(2 * np.pi * 5.5 * t + rng.uniform(0, 2 * np.pi))
        f0 = rng.uniform(180, 450) * vibrato
        note = _harmonic_note(f0, sample_rate, [1 / h for h in range(1, 7)])
        out[start:start + length] += note * _hann_envelope(length)
    return out


def _bass(rng: np.random.Generator, n_samples: int, sample_rate: int) -> np.ndarray:
    out = np.zeros(n_samples)
    for start, length in _note_grid(rng, n_samples, sample_rate, (0.4, 0.8), rest_prob=0.1):
        f0 = np.full(length, rng.uniform(41, 110))
        note = _harmonic_note(f0, sample_rate, [1.0, 0.3])
        out[start:start + length] += note * _hann_envelope(length)
    return out


def _drums(rng: np.random.Generator, n_samples: int, sample_rate: int) -> np.ndarray:
    out = np.zeros(n_samples)
    beat = int(60.0 / rng.uniform(100, 140) * sample_rate)
    for i, pos in enumerate(range(0, n_samples, max(1, beat // 2))):
        length = min(int(0.25 * sample_rate), n_samples - pos)
        t = np.arange(length) / sample_rate
        if i % 4 == 0:
            sweep = 50 + 70 * np.exp(-t / 0.03)
            hit = np.sin(2 * np.pi * np.cumsum(sweep) / sample_rate) * np.exp(-t / 0.12)
        else:
            decay = rng.uniform(0.03, 0.08)
            hit = rng.standard_normal(length) * np.exp(-t / decay) * (0.6 if i % 2 else 0.3)
        out[pos:pos + length] += hit
    return out


def _band_noise(rng: np.random.Generator, n_samples: int, sample_rate: int, band: Tuple[float, float]) -> np.ndarray:
    spectrum = np.fft.rfft(rng.standard_normal(n_samples))
    freqs = np.fft.rfftfreq(n_samples, d=1.0 / sample_rate)
    hi = min(band[1], 0.45 * sample_rate)
    spectrum[(freqs < band[0]) | (freqs > hi)] = 0.0
    noise = np.fft.irfft(spectrum, n=n_samples)
    t = np.arange(n_samples) / sample_rate
    return noise * (0.6 + 0.4 * np.sin(2 * np.pi * 0.3 * t + rng.uniform(0, 2 * np.pi)))


def _other(rng: np.random.Generator, n_samples: int, sample_rate: int) -> np.ndarray:
    return _band_noise(rng, n_samples, sample_rate, (400.0, 5000.0))


_GENERATORS: Dict[str, Callable[[np.random.Generator, int, int], np.ndarray]] = {
    "vocals": _vocals,
    "bass": _bass,
    "drums": _drums,
    "other": _other,
}


def _stereo(mono: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    angle = rng.uniform(0.2, 0.8) * np.pi / 2
    stereo = np.stack([np.cos(angle) * mono, np.sin(angle) * mono])
    rms = np.sqrt(np.mean(stereo ** 2))
    return stereo * (_TARGET_RMS / rms) if rms > 0 else stereo


def make_synthetic_tracks(
    seed: int,
    seconds: float,
    sample_rate: int = 44100,
    n_songs: int = 1,
    sources: Sequence[str] = tuple(DEFAULT_SOURCES),
) -> Dict[str, List[np.ndarray]]:
    """
    Deterministic synthetic multitrack songs.

    Args:
        seed: Base seed; every (song, source) pair gets its own spawned stream
        seconds: Song length, at least 3 s
        sample_rate: Output rate in Hz
        n_songs: Songs per source
        sources: Source names

    Returns:
        {source: [stereo stem [2, L] per song]}
    """
    if seconds < 3:
        raise ValueError(f"synthetic songs must last at least 3 s, got {seconds}")
    n_samples = int(round(seconds * sample_rate))
    streams = np.random.SeedSequence(seed).spawn(n_songs * len(sources))
    tracks: Dict[str, List[np.ndarray]] = {name: [] for name in sources}
    for song in range(n_songs):
        for j, name in enumerate(sources):
            rng = np.random.default_rng(streams[song * len(sources) + j])
            if name in _GENERATORS:
                mono = _GENERATORS[name](rng, n_samples, sample_rate)
            else:
                low = 300.0 * (j + 1)
                mono = _band_noise(rng, n_samples, sample_rate, (low, 2 * low))
            tracks[name].append(_stereo(mono, rng))
    return tracks


def load_stem_tracks(stems_dir: Path, sources: Sequence[str], sample_rate: int) -> Dict[str, List[np.ndarray]]:
    """Read `<stems_dir>/<song>/<source>.wav` for every song directory."""
    stems_dir = Path(stems_dir)
    songs = sorted(p for p in stems_dir.iterdir() if p.is_dir())
    if not songs:
        raise FileNotFoundError(f"no song directories under {stems_dir}")
    tracks: Dict[str, List[np.ndarray]] = {name: [] for name in sources}
    for song in songs:
        for name in sources:
            audio, _ = read_wav(song / f"{name}.wav", expected_rate=sample_rate)
            tracks[name].append(audio)
    logger.info(f"Loaded {len(songs)} songs from {stems_dir}")
    return tracks


def sad_filter(track: np.ndarray, cfg: SadConfig, song: int = 0) -> List[Segment]:
    """
    Energy-based activity gate.

    Windows whose RMS falls below `threshold` times the RMS of the whole track
    are dropped; survivors keep their original offsets.
    """
    track = np.asarray(track)
    if track.ndim != 2:
        raise ShapeMismatchError(f"expected a [channel, sample] track, got shape {track.shape}")
    n_samples = track.shape[-1]
    if n_samples < cfg.window:
        raise ValueError(f"track has {n_samples} samples, shorter than the SAD window ({cfg.window})")

    track_rms = float(np.sqrt(np.mean(track ** 2)))
    if track_rms == 0.0:
        return []
    kept = []
    for offset in range(0, n_samples - cfg.window + 1, cfg.hop):
        window = track[:, offset:offset + cfg.window]
        if np.sqrt(np.mean(window ** 2)) >= cfg.threshold * track_rms:
            kept.append(Segment(song=song, offset=offset, audio=window))
    return kept


def build_pools(
    tracks: Dict[str, List[np.ndarray]], segment_samples: int, threshold: float
) -> Pools:
    """Cut every track into non-overlapping segments and keep the active ones."""
    sad = SadConfig(window=segment_samples, hop=segment_samples, threshold=threshold)
    pools: Pools = {}
    for name, songs in tracks.items():
        pools[name] = [seg for song, track in enumerate(songs) for seg in sad_filter(track, sad, song=song)]
        logger.debug(f"Pool '{name}': {len(pools[name])} active segments")
    return pools


def train_validation_split(pools: Pools, fraction: float) -> Tuple[Pools, Pools]:
    """
    Time-ordered split per song: the last `fraction` of every song's segments
    go to validation. A source left without validation segments reuses its
    training pool.
    """
    train: Pools = {}
    valid: Pools = {}
    for name, segments in pools.items():
        by_song: Dict[int, List[Segment]] = {}
        for seg in segments:
            by_song.setdefault(seg.song, []).append(seg)
        train[name], valid[name] = [], []
        for song_segments in by_song.values():
            song_segments.sort(key=lambda s: s.offset)
            n_valid = int(round(fraction * len(song_segments)))
            n_valid = min(n_valid, len(song_segments) - 1)
            cut = len(song_segments) - n_valid
            train[name] += song_segments[:cut]
            valid[name] += song_segments[cut:]
        if not valid[name]:
            logger.warning(f"No validation segments for '{name}', validating on training segments")
            valid[name] = list(train[name])
    return train, valid


def mix_batch(
    pools: Pools,
    batch_size: int,
    gain_db: Tuple[float, float],
    seed: int,
    sources: Optional[Sequence[str]] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Draw random stems per item, scale them and sum to a mixture.

    Args:
        pools: Segments per source, all of the same shape
        batch_size: Items in the batch
        gain_db: Uniform gain range in dB applied per stem
        seed: Batch seed; item i uses the i-th spawned stream
        sources: Source order (defaults to the pool order)

    Returns:
        (mixtures [B, 2, L], stems [B, S, 2, L]) where mixture == stems.sum(axis=1)
    """
    sources = list(sources or pools.keys())
    for name in sources:
        if not pools.get(name):
            raise ValueError(f"pool for source '{name}' is empty")
    streams = np.random.SeedSequence(seed).spawn(batch_size)

    items = []
    for stream in streams:
        rng = np.random.default_rng(stream)
        stems = []
        for name in sources:
            pool = pools[name]
            segment = pool[rng.integers(len(pool))]
            gain = 10.0 ** (rng.uniform(*gain_db) / 20.0)
            stems.append(gain * segment.audio)
        items.append(np.stack(stems))
    stems = np.stack(items)
    return stems.sum(axis=1), stems


def prepare_pools(data: DataConfig, sources: Sequence[str], sample_rate: int, seed: int) -> Tuple[Pools, Pools]:
    """Tracks (synthetic or from disk) -> SAD pools -> train/validation split."""
    if data.stems_dir:
        tracks = load_stem_tracks(Path(data.stems_dir), sources, sample_rate)
    else:
        tracks = make_synthetic_tracks(seed, data.song_seconds, sample_rate, data.n_songs, sources)
    segment_samples = int(round(data.segment_seconds * sample_rate))
    pools = build_pools(tracks, segment_samples, data.sad_threshold)
    return train_validation_split(pools, data.validation_fraction)
