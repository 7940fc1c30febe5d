"""Datasets: synthetic EEG-like generation, binary files, subject folds.

Dataset file (little-endian)::

    b"EEGW" | u16 version | u16 K | u16 C | u32 N | f64 fs
    then per window: u32 subject | i16 label (-1 = unlabeled) | C*N f32 samples

Bundle file (little-endian)::

    b"KDFB" | u16 version | f64 alpha | u16 len + registry token
    u32 F | F f64 feature means | F f64 feature stds
    SDT block: u16 depth | u32 F | u16 K | f64 beta | inner weights, biases, leaf logits (f64)
    ViT block: 8 x u32 config | every parameter array in canonical order (f64)
    u32 len + UTF-8 JSON metadata (resolved config, seed)
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .features import EegWindow
from .errors import ConfigError, FormatError
from .kdf import ModelBundle
from .sdt import SoftDecisionTree
from .vit import VisionTransformer, VitConfig

DATASET_MAGIC = b"EEGW"
BUNDLE_MAGIC = b"KDFB"
FORMAT_VERSION = 1


# ---------------------------------------------------------------- datasets
@dataclass
class EegDataset:
    """Windows ``(n, C, N)`` with labels (-1 unlabeled) and subject ids."""

    windows: np.ndarray
    labels: np.ndarray
    subjects: np.ndarray
    fs: float
    n_classes: int
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.windows = np.asarray(self.windows, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.subjects = np.asarray(self.subjects, dtype=np.int64)
        if not self.class_names:
            self.class_names = [f"class{k}" for k in range(self.n_classes)]
        if self.windows.ndim != 3:
            raise ValueError("windows must be (n, C, N)")
        n = len(self.windows)
        if self.labels.shape != (n,) or self.subjects.shape != (n,):
            raise ValueError("labels/subjects length mismatch")
        if ((self.labels < -1) | (self.labels >= self.n_classes)).any():
            raise ValueError("label outside -1..K-1")

    def __len__(self):
        return len(self.labels)

    @property
    def n_channels(self) -> int:
        return self.windows.shape[1]

    @property
    def n_samples(self) -> int:
        return self.windows.shape[2]

    def subset(self, idx) -> "EegDataset":
        idx = np.asarray(idx)
        return EegDataset(self.windows[idx], self.labels[idx], self.subjects[idx], self.fs,
                          self.n_classes, list(self.class_names))

    def window(self, i: int) -> EegWindow:
        return EegWindow(self.windows[i], self.fs, int(self.labels[i]), int(self.subjects[i]))

    def equals(self, other: "EegDataset") -> bool:
        return (self.fs == other.fs and self.n_classes == other.n_classes
                and self.class_names == other.class_names
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.subjects, other.subjects)
                and self.windows.shape == other.windows.shape
                and np.array_equal(self.windows, other.windows))


# ---------------------------------------------------------------- synthetic data
@dataclass(frozen=True)
class ShiftSpec:
    """Target-domain distortion applied on top of the class signatures.

    ``freq_jitter_hz`` speeds up every rhythm of a subject by a
    subject-specific offset drawn uniformly from ``[0.5, 1] * freq_jitter_hz``.
    """

    amplitude_scale: float = 1.0
    noise_sigma: float = 0.0
    freq_jitter_hz: float = 0.0
    channel_drop_p: float = 0.0

    def __post_init__(self):
        vals = (self.amplitude_scale, self.noise_sigma, self.freq_jitter_hz, self.channel_drop_p)
        if not all(np.isfinite(v) for v in vals):
            raise ConfigError("shift parameters must be finite")
        if self.amplitude_scale <= 0:
            raise ConfigError("amplitude_scale must be positive")
        if self.noise_sigma < 0 or self.freq_jitter_hz < 0:
            raise ConfigError("noise_sigma and freq_jitter_hz must be >= 0")
        if not 0 <= self.channel_drop_p < 1:
            raise ConfigError("channel_drop_p must lie in [0, 1)")

    @classmethod
    def identity(cls) -> "ShiftSpec":
        return cls()

    @classmethod
    def default_target(cls) -> "ShiftSpec":
        return cls(amplitude_scale=1.6, noise_sigma=0.5, freq_jitter_hz=1.5)


@dataclass(frozen=True)
class ClassSignature:
    """Rhythm of one class: a carrier with an amplitude-modulating burst envelope."""

    freq_hz: float
    amplitude: float
    burst_hz: float
    burst_depth: float
    channel_gain: tuple[float, ...]


def default_signatures(n_classes: int = 4, n_channels: int = 8, seed: int = 1234,
                       base_hz: float = 4.0, spacing_hz: float = 4.5,
                       amplitudes: tuple[float, float] = (1.0, 1.25),
                       burst_depth: float = 0.6) -> list[ClassSignature]:
    """Rhythms ``spacing_hz`` apart from ``base_hz`` up, sharing one scalp topography.

    With a common topography the classes differ only in rhythm, burst rate
    and amplitude (alternating between the two ``amplitudes``), so a
    frequency shift of the target moves every class.
    """
    rng = np.random.default_rng(seed)
    freqs = base_hz + spacing_hz * np.arange(n_classes)
    gain = 0.4 + 0.6 * rng.random(n_channels)
    sigs = []
    for k in range(n_classes):
        sigs.append(ClassSignature(
            freq_hz=float(freqs[k]),
            amplitude=float(amplitudes[k % 2]),
            burst_hz=float(0.5 + 0.5 * k),
            burst_depth=float(burst_depth),
            channel_gain=tuple(float(g) for g in gain),
        ))
    return sigs


def _pink_noise(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    n = shape[-1]
    spec = rng.standard_normal(shape[:-1] + (n // 2 + 1,)) \
        + 1j * rng.standard_normal(shape[:-1] + (n // 2 + 1,))
    f = np.arange(n // 2 + 1, dtype=np.float64)
    f[0] = 1.0
    x = np.fft.irfft(spec / np.sqrt(f), n=n)
    return x / x.std(axis=-1, keepdims=True)


def generate_synthetic(n_per_class: int = 60, n_channels: int = 8, n_samples: int = 256,
                       fs: float = 256.0, signatures: list[ClassSignature] | None = None,
                       shift: ShiftSpec | None = None, seed: int = 0,
                       n_subjects: int = 12, background_sigma: float = 0.5,
                       white_fraction: float = 0.8, subject_gain_sd: float = 0.4,
                       phase_lag_sd: float = 0.3) -> EegDataset:
    """Labelled synthetic windows; a pure function of its arguments.

    Window ``i`` of class ``k`` is one source rhythm with a burst envelope,
    projected onto the channels through the class gains with small random
    phase lags, plus background noise of standard deviation
    ``background_sigma`` mixing white (``white_fraction``) and pink noise,
    all times a log-normal subject gain with log-sd ``subject_gain_sd``. ``shift`` then scales amplitudes, adds extra white noise, speeds up
    rhythms per subject and zeroes random channels. Samples are rounded to
    float32 so files round-trip exactly.
    """
    shift = ShiftSpec.identity() if shift is None else shift
    sigs = default_signatures(4, n_channels) if signatures is None else signatures
    k_classes = len(sigs)
    if k_classes < 2 or n_per_class < 1 or n_subjects < 1:
        raise ConfigError("need >= 2 classes, >= 1 window per class and >= 1 subject")
    if min(background_sigma, subject_gain_sd, phase_lag_sd) < 0 or not 0 <= white_fraction <= 1:
        raise ConfigError("noise, gain and phase spreads must be >= 0, white_fraction in [0, 1]")
    if any(len(s.channel_gain) != n_channels for s in sigs):
        raise ConfigError("signature channel gains do not match n_channels")
    rng = np.random.default_rng(seed)
    subj_gain = np.exp(rng.normal(0.0, subject_gain_sd, n_subjects))
    subj_shift = shift.freq_jitter_hz * rng.uniform(0.5, 1.0, n_subjects)
    t = np.arange(n_samples) / fs
    n = n_per_class * k_classes
    labels = np.repeat(np.arange(k_classes), n_per_class)
    subjects = np.arange(n) % n_subjects
    out = np.empty((n, n_channels, n_samples))
    for i in range(n):
        s = sigs[labels[i]]
        subj = subjects[i]
        f0 = s.freq_hz * (1.0 + 0.05 * rng.standard_normal()) + subj_shift[subj]
        phase = rng.uniform(0, 2 * np.pi) + phase_lag_sd * rng.standard_normal((n_channels, 1))
        burst_phase = rng.uniform(0, 2 * np.pi)
        env = 1.0 + s.burst_depth * np.sin(2 * np.pi * s.burst_hz * t + burst_phase)
        carrier = np.sin(2 * np.pi * f0 * t[None, :] + phase)
        gain = np.asarray(s.channel_gain)[:, None]
        sig = s.amplitude * gain * carrier * env[None, :]
        pink = _pink_noise(rng, (n_channels, n_samples))
        white = rng.standard_normal((n_channels, n_samples))
        noise = background_sigma * ((1.0 - white_fraction) * pink + white_fraction * white)
        x = subj_gain[subj] * (sig + noise)
        x = shift.amplitude_scale * x
        if shift.noise_sigma > 0:
            x = x + shift.noise_sigma * rng.standard_normal(x.shape)
        if shift.channel_drop_p > 0:
            x = x * (rng.random(n_channels) >= shift.channel_drop_p)[:, None]
        out[i] = x
    out = out.astype(np.float32).astype(np.float64)
    return EegDataset(out, labels, subjects, float(fs), k_classes)


# ---------------------------------------------------------------- splits
def make_folds(subjects, k_folds: int, seed: int) -> np.ndarray:
    """Fold index per window; every subject lands in exactly one fold."""
    subjects = np.asarray(subjects)
    uniq = np.unique(subjects)
    if k_folds < 2 or uniq.size < k_folds:
        raise ConfigError(f"{uniq.size} subjects cannot fill {k_folds} folds")
    order = np.random.default_rng(seed).permutation(uniq)
    fold_of_subject = {int(s): i % k_folds for i, s in enumerate(order)}
    return np.array([fold_of_subject[int(s)] for s in subjects], dtype=np.int64)


def sample_few_shot(labels, shots: int, seed: int, n_classes: int | None = None) -> np.ndarray:
    """``shots`` indices per class drawn without replacement, sorted."""
    labels = np.asarray(labels)
    n_classes = int(labels.max()) + 1 if n_classes is None else n_classes
    if shots < 0:
        raise ConfigError("shots must be >= 0")
    rng = np.random.default_rng(seed)
    picked = []
    for k in range(n_classes):
        pool = np.flatnonzero(labels == k)
        if pool.size < shots:
            raise ConfigError(f"class {k} has {pool.size} samples, fewer than shots={shots}")
        picked.append(rng.choice(pool, size=shots, replace=False))
    return np.sort(np.concatenate(picked)).astype(np.int64) if picked else np.array([], np.int64)


# ---------------------------------------------------------------- binary reader
class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("truncated file", self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def floats(self, count: int, dtype="<f8") -> np.ndarray:
        start = self.pos
        width = np.dtype(dtype).itemsize
        arr = np.frombuffer(self.take(count * width), dtype=dtype).astype(np.float64)
        bad = np.flatnonzero(~np.isfinite(arr))
        if bad.size:
            raise FormatError("non-finite value", start + int(bad[0]) * width)
        return arr


def save_dataset(ds: EegDataset, path):
    buf = io.BytesIO()
    buf.write(DATASET_MAGIC)
    buf.write(struct.pack("<HHHId", FORMAT_VERSION, ds.n_classes, ds.n_channels,
                          ds.n_samples, ds.fs))
    samples = ds.windows.astype("<f4")
    for i in range(len(ds)):
        buf.write(struct.pack("<Ih", int(ds.subjects[i]), int(ds.labels[i])))
        buf.write(samples[i].tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_dataset(path) -> EegDataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    r = _Reader(raw)
    if r.take(4) != DATASET_MAGIC:
        raise FormatError("bad magic, expected EEGW", 0)
    version, k, c, n, fs = r.unpack("HHHId")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if k < 1 or c < 1 or n < 1 or not (np.isfinite(fs) and fs > 0):
        raise FormatError("invalid header values", 6)
    rec = 6 + 4 * c * n
    body = len(raw) - r.pos
    if body % rec:
        raise FormatError("truncated window record", r.pos + (body // rec) * rec)
    count = body // rec
    windows = np.empty((count, c, n))
    labels = np.empty(count, dtype=np.int64)
    subjects = np.empty(count, dtype=np.int64)
    for i in range(count):
        rec_start = r.pos
        subjects[i], labels[i] = r.unpack("Ih")
        if labels[i] < -1 or labels[i] >= k:
            raise FormatError(f"label {labels[i]} out of range", rec_start + 4)
        windows[i] = r.floats(c * n, "<f4").reshape(c, n)
    return EegDataset(windows, labels, subjects, fs, k)


# ---------------------------------------------------------------- bundles
def bundle_to_bytes(bundle: ModelBundle) -> bytes:
    buf = io.BytesIO()
    buf.write(BUNDLE_MAGIC)
    buf.write(struct.pack("<Hd", FORMAT_VERSION, bundle.alpha))
    reg = bundle.registry_version.encode("utf-8")
    buf.write(struct.pack("<H", len(reg)) + reg)
    buf.write(struct.pack("<I", bundle.feat_mean.size))
    buf.write(bundle.feat_mean.astype("<f8").tobytes())
    buf.write(bundle.feat_std.astype("<f8").tobytes())
    sdt = bundle.sdt
    buf.write(struct.pack("<HIHd", sdt.depth, sdt.n_features, sdt.n_classes, sdt.beta))
    for name in ("inner_w", "inner_b", "leaf_logits"):
        buf.write(sdt.params[name].data.astype("<f8").tobytes())
    cfg = bundle.vit.config
    buf.write(struct.pack("<8I", cfg.n_channels, cfg.n_samples, cfg.n_classes, cfg.patch_len,
                          cfg.d_model, cfg.n_layers, cfg.n_heads, cfg.d_ff))
    for tensor in bundle.vit.params.values():
        buf.write(tensor.data.astype("<f8").tobytes())
    meta = json.dumps(bundle.meta, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(meta)) + meta)
    return buf.getvalue()


def bundle_from_bytes(raw: bytes) -> ModelBundle:
    r = _Reader(raw)
    if r.take(4) != BUNDLE_MAGIC:
        raise FormatError("bad magic, expected KDFB", 0)
    version, alpha = r.unpack("Hd")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if not (np.isfinite(alpha) and alpha >= 0):
        raise FormatError("invalid alpha", 6)
    (reg_len,) = r.unpack("H")
    registry = r.take(reg_len).decode("utf-8")
    (n_feat,) = r.unpack("I")
    mean = r.floats(n_feat)
    std = r.floats(n_feat)
    pos = r.pos
    depth, sdt_feat, k, beta = r.unpack("HIHd")
    if depth < 1 or depth > 16 or sdt_feat != n_feat or k < 1:
        raise FormatError("inconsistent tree header", pos)
    sdt = SoftDecisionTree(sdt_feat, k, depth=depth, beta=beta)
    for name in ("inner_w", "inner_b", "leaf_logits"):
        shape = sdt.params[name].shape
        sdt.params[name].data = r.floats(int(np.prod(shape))).reshape(shape)
    pos = r.pos
    vals = r.unpack("8I")
    try:
        cfg = VitConfig(*vals)
    except ValueError as exc:
        raise FormatError(f"invalid transformer config: {exc}", pos) from exc
    if cfg.n_classes != k:
        raise FormatError("class count differs between tree and transformer", pos)
    vit = VisionTransformer(cfg)
    for tensor in vit.params.values():
        tensor.data = r.floats(tensor.data.size).reshape(tensor.shape)
    (meta_len,) = r.unpack("I")
    meta_pos = r.pos
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError("unreadable metadata", meta_pos) from exc
    if r.pos != len(raw):
        raise FormatError("trailing bytes", r.pos)
    return ModelBundle(sdt, vit, float(alpha), mean, std, registry, meta)


def save_bundle(bundle: ModelBundle, path):
    with open(path, "wb") as fh:
        fh.write(bundle_to_bytes(bundle))


def load_bundle(path) -> ModelBundle:
    with open(path, "rb") as fh:
        return bundle_from_bytes(fh.read())
