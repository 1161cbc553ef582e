"""Corpus layer: records, tokenization, vocabulary, feature files, synthetic data.

The synthetic generator stands in for a full-scale video dataset: it emits
feature matrices with the production geometry (appearance 28x2048, motion
28x1024, audio 28x128) whose content is tied to short event sequences, plus
template captions describing those events in both language tracks. Everything
is deterministic given the seed, down to the feature file bytes.
"""

from __future__ import annotations

import json
import string
from collections import Counter
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ["<pad>", "<bos>", "<eos>", "<unk>"]

MODALITIES = ("appearance", "motion", "audio")
DEFAULT_DIMS = {"appearance": 2048, "motion": 1024, "audio": 128}
DEFAULT_FRAMES = 28

TRACKS = ("english", "chinese")


class FeatureFormatError(ValueError):
    """Feature file does not match the declared geometry."""


class FeatureDataError(ValueError):
    """Feature file contains non-finite values."""


# ---------------------------------------------------------------------------
# Frame sampling and tokenization
# ---------------------------------------------------------------------------

def sample_frame_indices(n_frames: int, k: int = 28) -> list[int]:
    """Pick k frame indices from a video with n_frames frames.

    Uniform stride floor(i*n/k) when enough frames exist; short videos are
    looped cyclically (index i mod n_frames) until k indices are filled.
    """
    if n_frames <= 0:
        raise ValueError(f"n_frames must be positive, got {n_frames}")
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    if n_frames >= k:
        return [i * n_frames // k for i in range(k)]
    return [i % n_frames for i in range(k)]


_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def tokenize(text: str, track: str = "english") -> list[str]:
    """Split raw caption text into tokens for the given language track.

    english: lowercase, ASCII punctuation removed, whitespace split.
    chinese: whitespace and ASCII punctuation removed, one token per
    code point (no word segmentation).
    """
    if track == "english":
        return text.lower().translate(_PUNCT_TABLE).split()
    if track == "chinese":
        stripped = text.translate(_PUNCT_TABLE)
        return [ch for ch in stripped if not ch.isspace()]
    raise ValueError(f"unknown track {track!r}")


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------

@dataclass
class Vocabulary:
    token_to_id: dict[str, int]
    id_to_token: list[str]
    min_count: int = 1

    def __len__(self) -> int:
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def encode_tokens(self, tokens: list[str]) -> list[int]:
        return [self.lookup(t) for t in tokens]

    def decode_ids(self, ids) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    @classmethod
    def from_id_to_token(cls, id_to_token: list[str], min_count: int = 1) -> "Vocabulary":
        return cls({t: i for i, t in enumerate(id_to_token)}, list(id_to_token), min_count)


def build_vocabulary(captions, min_count: int = 1) -> Vocabulary:
    """Build a vocabulary over token sequences.

    Tokens seen at least min_count times get ids from 4 upward, ordered by
    descending count with lexicographic tie-break, after the fixed specials.
    """
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counts = Counter()
    for seq in captions:
        counts.update(seq)
    kept = sorted(
        (t for t, c in counts.items() if c >= min_count),
        key=lambda t: (-counts[t], t),
    )
    id_to_token = SPECIAL_TOKENS + kept
    return Vocabulary({t: i for i, t in enumerate(id_to_token)}, id_to_token, min_count)


def encode_caption(tokens: list[str], vocab: Vocabulary, max_len: int) -> list[int]:
    """Map tokens to [BOS, ids..., EOS], truncated to max_len ids total."""
    if max_len < 2:
        raise ValueError(f"max_len must be >= 2, got {max_len}")
    body = vocab.encode_tokens(tokens)[: max_len - 2]
    return [BOS] + body + [EOS]


# ---------------------------------------------------------------------------
# Feature files
# ---------------------------------------------------------------------------

@dataclass
class FeatureBundle:
    """Frame-aligned feature matrices for one video, one row per key frame."""

    appearance: np.ndarray
    motion: np.ndarray
    audio: np.ndarray

    def validate(self) -> "FeatureBundle":
        t = self.appearance.shape[0]
        for name in MODALITIES:
            mat = getattr(self, name)
            if mat.ndim != 2:
                raise FeatureFormatError(f"{name}: expected a 2-D matrix, got shape {mat.shape}")
            if mat.shape[0] != t:
                raise FeatureFormatError(
                    f"{name}: frame count {mat.shape[0]} does not match appearance frame count {t}"
                )
            if not np.isfinite(mat).all():
                raise FeatureDataError(f"{name}: non-finite values present")
        return self

    @property
    def n_frames(self) -> int:
        return self.appearance.shape[0]


def feature_filename(video_id: str, modality: str) -> str:
    return f"{video_id}.{modality}.f32"


def save_feature_matrix(mat: np.ndarray, path: Path) -> None:
    """Write a matrix as raw row-major little-endian float32, no header."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(np.ascontiguousarray(mat, dtype="<f4").tobytes())


def load_feature_matrix(path: Path, modality: str, rows: int, cols: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    expected = rows * cols * 4
    if len(raw) != expected:
        actual_rows = len(raw) / (cols * 4)
        raise FeatureFormatError(
            f"{modality}: expected {rows}x{cols} ({expected} bytes), "
            f"got {len(raw)} bytes ({actual_rows:g} rows of {cols})"
        )
    mat = np.frombuffer(raw, dtype="<f4").reshape(rows, cols)
    if not np.isfinite(mat).all():
        raise FeatureDataError(f"{modality}: non-finite values in {path}")
    return mat


def load_feature_bundle(paths: dict[str, Path], dims: dict[str, tuple[int, int]]) -> FeatureBundle:
    """Load the three modality files, checking each against its declared shape."""
    mats = {}
    for modality in MODALITIES:
        rows, cols = dims[modality]
        mats[modality] = load_feature_matrix(paths[modality], modality, rows, cols)
    return FeatureBundle(**mats).validate()


# ---------------------------------------------------------------------------
# Records and manifests
# ---------------------------------------------------------------------------

@dataclass
class VideoRecord:
    video_id: str
    topic_id: int
    captions: dict[str, list[list[str]]]  # track -> token sequences
    feature_paths: dict[str, str]  # modality -> path relative to dataset root
    dims: dict[str, tuple[int, int]]

    def validate(self, n_topics: int | None = None) -> "VideoRecord":
        if not self.captions or not any(self.captions.values()):
            raise ValueError(f"{self.video_id}: no captions")
        for track, seqs in self.captions.items():
            if not seqs or any(len(s) == 0 for s in seqs):
                raise ValueError(f"{self.video_id}: empty caption in track {track}")
        if self.topic_id < 0 or (n_topics is not None and self.topic_id >= n_topics):
            raise ValueError(f"{self.video_id}: topic_id {self.topic_id} out of range")
        return self

    def load_features(self, root: Path) -> FeatureBundle:
        paths = {m: Path(root) / p for m, p in self.feature_paths.items()}
        return load_feature_bundle(paths, self.dims)


@dataclass
class DatasetSplit:
    train: list[VideoRecord]
    val: list[VideoRecord]
    test: list[VideoRecord]

    def validate(self) -> "DatasetSplit":
        ids = [r.video_id for part in (self.train, self.val, self.test) for r in part]
        if len(ids) != len(set(ids)):
            raise ValueError("video ids are not disjoint across splits")
        return self

    def part(self, name: str) -> list[VideoRecord]:
        try:
            return getattr(self, name)
        except AttributeError:
            raise ValueError(f"unknown split {name!r}") from None


def record_to_manifest_line(rec: VideoRecord, caption_strings: dict[str, list[str]]) -> str:
    obj = {
        "video_id": rec.video_id,
        "topic_id": rec.topic_id,
        "captions": caption_strings,
        "features": rec.feature_paths,
        "dims": {m: list(rec.dims[m]) for m in MODALITIES},
    }
    return json.dumps(obj, ensure_ascii=False, sort_keys=True)


def read_manifest(path: Path) -> list[VideoRecord]:
    """Read a JSON-lines manifest, tokenizing caption strings per track."""
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        captions = {
            track: [tokenize(s, track) for s in strings]
            for track, strings in obj["captions"].items()
        }
        records.append(
            VideoRecord(
                video_id=obj["video_id"],
                topic_id=int(obj["topic_id"]),
                captions=captions,
                feature_paths=obj["features"],
                dims={m: tuple(obj["dims"][m]) for m in obj["dims"]},
            ).validate()
        )
    return records


def load_dataset(dataset_dir: Path) -> DatasetSplit:
    dataset_dir = Path(dataset_dir)
    parts = {}
    for name in ("train", "val", "test"):
        manifest = dataset_dir / f"{name}.jsonl"
        if not manifest.exists():
            raise FileNotFoundError(f"missing manifest {manifest}")
        parts[name] = read_manifest(manifest)
    return DatasetSplit(**parts).validate()


# ---------------------------------------------------------------------------
# Synthetic dataset
# ---------------------------------------------------------------------------

SUBJECT_EN = "a person"
SUBJECT_ZH = "一个人"
VERBS_EN = ["kicks", "lifts", "throws", "catches", "pushes", "pulls",
            "opens", "closes", "spins", "drops", "carries", "taps"]
NOUNS_EN = ["ball", "box", "door", "chair", "rope", "drum",
            "bottle", "flag", "wheel", "broom", "ladder", "basket"]
VERBS_ZH = ["踢", "举", "扔", "接", "推", "拉", "开", "关", "转", "放", "搬", "敲"]
NOUNS_ZH = ["球", "箱", "门", "椅", "绳", "鼓", "瓶", "旗", "轮", "帚", "梯", "篮"]
CONNECTORS_EN = ["then", "and"]
CONNECTORS_ZH = ["然后", "接着"]
CONNECTOR_SKEW = 0.75  # probability of the first connector at each junction

N_SYMBOLS = 18
SYMBOLS_PER_TOPIC = 6


@dataclass
class SynthConfig:
    n_train: int = 50
    n_val: int = 10
    n_test: int = 10
    n_topics: int = 6
    t_frames: int = DEFAULT_FRAMES
    d_app: int = DEFAULT_DIMS["appearance"]
    d_mot: int = DEFAULT_DIMS["motion"]
    d_aud: int = DEFAULT_DIMS["audio"]
    captions_per_video: int = 10
    tracks: tuple[str, ...] = TRACKS
    min_events: int = 2
    max_events: int = 4
    noise_sigma: float = 0.1
    seed: int = 0

    def dims(self) -> dict[str, tuple[int, int]]:
        return {
            "appearance": (self.t_frames, self.d_app),
            "motion": (self.t_frames, self.d_mot),
            "audio": (self.t_frames, self.d_aud),
        }

    def validate(self) -> "SynthConfig":
        if min(self.n_train, self.n_val, self.n_test) < 0 or self.n_train < 1:
            raise ValueError("split sizes invalid")
        if min(self.t_frames, self.d_app, self.d_mot, self.d_aud) < 1:
            raise ValueError("feature dims must be positive")
        if not (1 <= self.min_events <= self.max_events <= SYMBOLS_PER_TOPIC):
            raise ValueError("event count range invalid")
        if self.n_topics < 1 or self.captions_per_video < 1:
            raise ValueError("n_topics and captions_per_video must be positive")
        unknown = set(self.tracks) - set(TRACKS)
        if unknown:
            raise ValueError(f"unknown tracks {sorted(unknown)}")
        return self

    def to_json(self) -> str:
        obj = asdict(self)
        obj["tracks"] = list(self.tracks)
        return json.dumps(obj, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "SynthConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown synth config keys {sorted(unknown)}")
        cfg = cls(**obj)
        cfg.tracks = tuple(cfg.tracks)
        return cfg.validate()


def _event_spans(t_frames: int, n_events: int) -> list[tuple[int, int]]:
    bounds = [i * t_frames // n_events for i in range(n_events + 1)]
    return [(bounds[i], bounds[i + 1]) for i in range(n_events)]


def _caption_en(symbols: list[tuple[int, int]], connectors: list[int]) -> str:
    clauses = [f"{VERBS_EN[v]} the {NOUNS_EN[n]}" for v, n in symbols]
    parts = [SUBJECT_EN, clauses[0]]
    for clause, c in zip(clauses[1:], connectors):
        parts.append(CONNECTORS_EN[c])
        parts.append(clause)
    return " ".join(parts)


def _caption_zh(symbols: list[tuple[int, int]], connectors: list[int]) -> str:
    clauses = [f"{VERBS_ZH[v]}{NOUNS_ZH[n]}" for v, n in symbols]
    out = SUBJECT_ZH + clauses[0]
    for clause, c in zip(clauses[1:], connectors):
        out += CONNECTORS_ZH[c] + clause
    return out


def synth_dataset(config: SynthConfig, out_dir: Path, seed: int | None = None) -> DatasetSplit:
    """Generate manifests and feature files for a synthetic caption corpus.

    Each video gets a topic and a sequence of 2-4 events drawn from the
    topic's symbol pool. Every event owns a contiguous span of frames whose
    rows are that (topic, symbol) pair's fixed unit direction vector plus
    Gaussian noise, independently per modality, so the captions are fully
    recoverable from the features. Captions are template realizations of the
    event sequence with a skewed connector-word choice as the paraphrase axis.
    """
    config.validate()
    if seed is None:
        seed = config.seed
    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.Generator(np.random.PCG64(seed))

    # Fixed grammar state, drawn once: symbol inventory, per-topic pools,
    # per-(topic, slot) direction vectors for all three modalities.
    pairs = rng.choice(len(VERBS_EN) * len(NOUNS_EN), size=N_SYMBOLS, replace=False)
    symbols = [divmod(int(p), len(NOUNS_EN)) for p in pairs]
    topic_pools = [
        sorted(int(i) for i in rng.choice(N_SYMBOLS, size=SYMBOLS_PER_TOPIC, replace=False))
        for _ in range(config.n_topics)
    ]
    dim_by_modality = {"appearance": config.d_app, "motion": config.d_mot, "audio": config.d_aud}
    directions: dict[tuple[int, int, str], np.ndarray] = {}
    for topic in range(config.n_topics):
        for sym in topic_pools[topic]:
            for modality in MODALITIES:
                vec = rng.standard_normal(dim_by_modality[modality])
                directions[(topic, sym, modality)] = vec / np.linalg.norm(vec)

    counts = {"train": config.n_train, "val": config.n_val, "test": config.n_test}
    parts: dict[str, list[VideoRecord]] = {"train": [], "val": [], "test": []}
    manifest_lines: dict[str, list[str]] = {"train": [], "val": [], "test": []}
    video_index = 0
    for split_name in ("train", "val", "test"):
        for _ in range(counts[split_name]):
            video_id = f"video_{video_index:05d}"
            video_index += 1
            topic = int(rng.integers(config.n_topics))
            n_events = int(rng.integers(config.min_events, config.max_events + 1))
            picked = rng.choice(topic_pools[topic], size=n_events, replace=False)
            events = [int(s) for s in picked]
            event_syms = [symbols[s] for s in events]

            caption_strings: dict[str, list[str]] = {}
            for track in config.tracks:
                realize = _caption_en if track == "english" else _caption_zh
                variants = []
                for _ in range(config.captions_per_video):
                    connectors = [
                        0 if rng.random() < CONNECTOR_SKEW else 1
                        for _ in range(n_events - 1)
                    ]
                    variants.append(realize(event_syms, connectors))
                caption_strings[track] = variants

            spans = _event_spans(config.t_frames, n_events)
            feature_paths = {}
            for modality in MODALITIES:
                d = dim_by_modality[modality]
                mat = np.zeros((config.t_frames, d))
                for sym, (lo, hi) in zip(events, spans):
                    mat[lo:hi] = directions[(topic, sym, modality)]
                mat += rng.standard_normal((config.t_frames, d)) * config.noise_sigma
                rel = f"features/{feature_filename(video_id, modality)}"
                save_feature_matrix(mat, out_dir / rel)
                feature_paths[modality] = rel

            rec = VideoRecord(
                video_id=video_id,
                topic_id=topic,
                captions={t: [tokenize(s, t) for s in caption_strings[t]] for t in config.tracks},
                feature_paths=feature_paths,
                dims=config.dims(),
            ).validate(config.n_topics)
            parts[split_name].append(rec)
            manifest_lines[split_name].append(record_to_manifest_line(rec, caption_strings))

    for split_name in ("train", "val", "test"):
        payload = "\n".join(manifest_lines[split_name])
        if payload:
            payload += "\n"
        (out_dir / f"{split_name}.jsonl").write_text(payload, encoding="utf-8")
    effective = SynthConfig(**{**asdict(config), "seed": seed})
    effective.tracks = tuple(effective.tracks)
    (out_dir / "synth_config.json").write_text(effective.to_json(), encoding="utf-8")

    return DatasetSplit(**parts).validate()
