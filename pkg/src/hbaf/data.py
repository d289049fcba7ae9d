"""On-disk data model for precomputed dialogue features.

A dataset root holds a JSON ``manifest`` (labels, dims, split lists) and one
binary file per dialogue under ``dialogues/<id>.bin``:

    magic "HBAF" | version u16 | N u32 | D_a u32 | D_text u32
    then per utterance, in dialogue order:
        audio_vec   D_a   float32 LE
        text_ctx    D_text float32 LE   (sentence-context vector)
        cs_external D_text float32 LE   (commonsense relations)
        cs_internal D_text float32 LE
        cs_purpose  D_text float32 LE
        label       u16

Vectors are stored as float32; model code promotes to float64 at ingestion.
The synthetic generator plants a controllable cross-modal signal so that
learnability and ablation-direction tests have a known ground truth.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_MAGIC = b"HBAF"
_VERSION = 1

SIGNAL_MODES = ("audio_only", "text_only", "agreement")


class DataError(Exception):
    """Malformed manifest, record, or generation spec."""


@dataclass(frozen=True)
class EmotionLabelSet:
    names: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise DataError("label names must be unique")
        if len(self.names) < 2:
            raise DataError("need at least two emotion classes")

    @property
    def C(self) -> int:
        return len(self.names)


MELD_LABELS = EmotionLabelSet(("anger", "joy", "sadness", "neutral", "disgust", "fear", "surprise"))
IEMOCAP_LABELS = EmotionLabelSet(("happy", "sad", "neutral", "angry", "excited", "frustrated"))


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class UtteranceFeatures:
    audio_vec: np.ndarray        # (D_a,) float32
    text_context_vec: np.ndarray  # (D_text,)
    cs_external: np.ndarray
    cs_internal: np.ndarray
    cs_purpose: np.ndarray
    label: int


@dataclass(frozen=True)
class DialogueRecord:
    dialogue_id: str
    utterances: tuple[UtteranceFeatures, ...]

    def __post_init__(self):
        if len(self.utterances) < 1:
            raise DataError(f"dialogue {self.dialogue_id} has no utterances")

    def __len__(self) -> int:
        return len(self.utterances)

    def arrays(self):
        """Per-dialogue feature matrices: audio, text_ctx, cs_e, cs_i, cs_p, labels."""
        audio = np.stack([u.audio_vec for u in self.utterances])
        text = np.stack([u.text_context_vec for u in self.utterances])
        cs_e = np.stack([u.cs_external for u in self.utterances])
        cs_i = np.stack([u.cs_internal for u in self.utterances])
        cs_p = np.stack([u.cs_purpose for u in self.utterances])
        labels = np.array([u.label for u in self.utterances], dtype=np.int64)
        return audio, text, cs_e, cs_i, cs_p, labels


@dataclass(frozen=True)
class FeatureManifest:
    dataset_name: str
    label_set: EmotionLabelSet
    audio_dim: int
    text_dim: int
    splits: dict[str, tuple[str, ...]]  # train/val/test -> dialogue ids
    provenance: str = ""
    root: Path | None = None
    utterance_counts: dict[str, int] = field(default_factory=dict)

    def split_ids(self, split: str) -> tuple[str, ...]:
        if split not in self.splits:
            raise DataError(f"unknown split {split!r}; have {sorted(self.splits)}")
        return self.splits[split]


# ---------------------------------------------------------------------------
# binary dialogue files
# ---------------------------------------------------------------------------


def write_dialogue(path, record: DialogueRecord, audio_dim: int, text_dim: int) -> None:
    n = len(record.utterances)
    buf = bytearray()
    buf += _MAGIC
    buf += struct.pack("<HIII", _VERSION, n, audio_dim, text_dim)
    for u in record.utterances:
        for vec, dim in (
            (u.audio_vec, audio_dim),
            (u.text_context_vec, text_dim),
            (u.cs_external, text_dim),
            (u.cs_internal, text_dim),
            (u.cs_purpose, text_dim),
        ):
            if vec.shape != (dim,):
                raise DataError(f"vector shape {vec.shape} does not match declared dim {dim}")
            buf += np.ascontiguousarray(vec, dtype="<f4").tobytes()
        buf += struct.pack("<H", u.label)
    Path(path).write_bytes(bytes(buf))


def read_dialogue(path, dialogue_id: str) -> tuple[DialogueRecord, int, int]:
    blob = Path(path).read_bytes()
    if len(blob) < 18 or blob[:4] != _MAGIC:
        raise DataError(f"not a dialogue feature file: {path}")
    version, n, audio_dim, text_dim = struct.unpack_from("<HIII", blob, 4)
    if version != _VERSION:
        raise DataError(f"unsupported dialogue file version {version} in {path}")
    off = 18
    per_utt = 4 * (audio_dim + 4 * text_dim) + 2
    if len(blob) != off + n * per_utt:
        raise DataError(f"truncated dialogue file: {path}")
    utts = []
    for _ in range(n):
        vecs = []
        for dim in (audio_dim, text_dim, text_dim, text_dim, text_dim):
            vecs.append(_frozen(np.frombuffer(blob, dtype="<f4", count=dim, offset=off)))
            off += 4 * dim
        (label,) = struct.unpack_from("<H", blob, off)
        off += 2
        utts.append(UtteranceFeatures(*vecs, label=int(label)))
    return DialogueRecord(dialogue_id, tuple(utts)), audio_dim, text_dim


# ---------------------------------------------------------------------------
# manifest + dataset IO
# ---------------------------------------------------------------------------


def write_dataset(root, manifest: FeatureManifest, records) -> None:
    """Write manifest + all dialogue files under ``root``."""
    root = Path(root)
    (root / "dialogues").mkdir(parents=True, exist_ok=True)
    doc = {
        "dataset_name": manifest.dataset_name,
        "labels": list(manifest.label_set.names),
        "dims": {"d_a": manifest.audio_dim, "d_text": manifest.text_dim},
        "splits": {k: list(v) for k, v in manifest.splits.items()},
        "provenance": manifest.provenance,
    }
    (root / "manifest").write_text(json.dumps(doc, indent=2) + "\n")
    for rec in records:
        write_dialogue(root / "dialogues" / f"{rec.dialogue_id}.bin", rec, manifest.audio_dim, manifest.text_dim)


def load_manifest(root) -> FeatureManifest:
    """Parse and validate ``<root>/manifest``; checks every dialogue file."""
    root = Path(root)
    mpath = root / "manifest"
    if not mpath.exists():
        raise DataError(f"manifest not found: {mpath}")
    try:
        doc = json.loads(mpath.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"manifest is not valid JSON: {e}") from e
    for key in ("dataset_name", "labels", "dims", "splits"):
        if key not in doc:
            raise DataError(f"manifest missing key {key!r}")
    label_set = EmotionLabelSet(tuple(doc["labels"]))
    dims = doc["dims"]
    audio_dim, text_dim = int(dims["d_a"]), int(dims["d_text"])
    splits = {k: tuple(v) for k, v in doc["splits"].items()}
    for name in ("train", "val", "test"):
        splits.setdefault(name, ())
    all_ids = [i for ids in splits.values() for i in ids]
    if len(all_ids) != len(set(all_ids)):
        raise DataError("split lists overlap or repeat dialogue ids")
    counts = {}
    for split, ids in splits.items():
        total = 0
        for did in ids:
            fpath = root / "dialogues" / f"{did}.bin"
            if not fpath.exists():
                raise DataError(f"dialogue file missing: {fpath}")
            rec, da, dt = read_dialogue(fpath, did)
            if da != audio_dim or dt != text_dim:
                raise DataError(
                    f"dim mismatch in {did}: file has (d_a={da}, d_text={dt}), manifest declares ({audio_dim}, {text_dim})"
                )
            for u in rec.utterances:
                if not (0 <= u.label < label_set.C):
                    raise DataError(f"unknown label index {u.label} in {did} (C={label_set.C})")
                for v in (u.audio_vec, u.text_context_vec, u.cs_external, u.cs_internal, u.cs_purpose):
                    if not np.all(np.isfinite(v)):
                        raise DataError(f"non-finite feature values in {did}")
            total += len(rec)
        counts[split] = total
    return FeatureManifest(
        dataset_name=doc["dataset_name"],
        label_set=label_set,
        audio_dim=audio_dim,
        text_dim=text_dim,
        splits=splits,
        provenance=doc.get("provenance", ""),
        root=root,
        utterance_counts=counts,
    )


def load_split(manifest: FeatureManifest, split: str) -> tuple[DialogueRecord, ...]:
    if manifest.root is None:
        raise DataError("manifest has no root directory")
    recs = []
    for did in manifest.split_ids(split):
        rec, _, _ = read_dialogue(manifest.root / "dialogues" / f"{did}.bin", did)
        recs.append(rec)
    return tuple(recs)


def dataset_checksum(root) -> str:
    """SHA-256 over the manifest and every dialogue file, in sorted order."""
    root = Path(root)
    h = hashlib.sha256()
    h.update((root / "manifest").read_bytes())
    for f in sorted((root / "dialogues").glob("*.bin")):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# synthetic datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Controls for the synthetic dialogue generator.

    signal_mode:
      * ``audio_only`` / ``text_only`` -- class means live in one modality,
        the other modality is label-independent noise;
      * ``agreement`` -- the audio carries cluster ``a``, the sentence-context
        and commonsense vectors carry cluster ``b``, and
        ``label = (a + b) mod C``.  Either modality alone is chance-level;
        only a cross-modal interaction recovers the label.  The audio
        additionally carries a smooth per-dialogue AR(1) drift (scaled by
        noise_std) that context models can cancel but per-utterance maps
        cannot.
    """

    n_dialogues: int
    utterances_per_dialogue: int
    C: int
    D_a: int
    D_text: int
    signal_mode: str = "agreement"
    noise_std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for f in ("n_dialogues", "utterances_per_dialogue", "C", "D_a", "D_text"):
            if getattr(self, f) < 1:
                raise DataError(f"{f} must be positive")
        if self.C < 2:
            raise DataError("need at least two classes")
        if self.signal_mode not in SIGNAL_MODES:
            raise DataError(f"signal_mode must be one of {SIGNAL_MODES}")
        if self.noise_std < 0:
            raise DataError("noise_std must be nonnegative")
        if self.D_a < self.C or self.D_text < self.C:
            raise DataError("feature dims must be >= C so class means can be separated")


def _orthonormal_means(rng: np.random.Generator, count: int, dim: int, scale: float) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((dim, count)))
    return (q.T * scale).astype(np.float64)


def generate_synthetic(spec: SynthSpec) -> tuple[FeatureManifest, tuple[DialogueRecord, ...]]:
    """Deterministic synthetic dataset with the requested cross-modal signal.

    Class means are mutually orthogonal with norm >= 2*sqrt(2)*noise_std, so
    the minimum pairwise mean separation is at least 4*noise_std and the
    dataset is learnable by construction.
    """
    rng = np.random.default_rng(spec.seed)
    scale = max(1.0, 4.0 * spec.noise_std / np.sqrt(2.0))
    means_audio = _orthonormal_means(rng, spec.C, spec.D_a, scale)
    means_text = _orthonormal_means(rng, spec.C, spec.D_text, scale)
    means_cs = [_orthonormal_means(rng, spec.C, spec.D_text, scale) for _ in range(3)]

    records = []
    for d in range(spec.n_dialogues):
        utts = []
        drift = np.zeros(spec.D_a)
        for _t in range(spec.utterances_per_dialogue):
            label = int(rng.integers(spec.C))
            noise = spec.noise_std
            if spec.signal_mode == "audio_only":
                audio = means_audio[label] + noise * rng.standard_normal(spec.D_a)
                text = rng.standard_normal(spec.D_text)
                cs = [rng.standard_normal(spec.D_text) for _ in range(3)]
            elif spec.signal_mode == "text_only":
                audio = rng.standard_normal(spec.D_a)
                text = means_text[label] + noise * rng.standard_normal(spec.D_text)
                cs = [m[label] + noise * rng.standard_normal(spec.D_text) for m in means_cs]
            else:  # agreement
                b = int(rng.integers(spec.C))
                a = (label - b) % spec.C
                drift = 0.7 * drift + noise * rng.standard_normal(spec.D_a)
                audio = means_audio[a] + drift + noise * rng.standard_normal(spec.D_a)
                text = means_text[b] + noise * rng.standard_normal(spec.D_text)
                cs = [m[b] + noise * rng.standard_normal(spec.D_text) for m in means_cs]
            utts.append(
                UtteranceFeatures(
                    audio_vec=_frozen(audio),
                    text_context_vec=_frozen(text),
                    cs_external=_frozen(cs[0]),
                    cs_internal=_frozen(cs[1]),
                    cs_purpose=_frozen(cs[2]),
                    label=label,
                )
            )
        records.append(DialogueRecord(f"dlg-{d:04d}", tuple(utts)))

    splits: dict[str, list[str]] = {"train": [], "val": [], "test": []}
    for i, rec in enumerate(records):
        slot = i % 8
        if spec.n_dialogues >= 3 and slot == 6:
            splits["val"].append(rec.dialogue_id)
        elif spec.n_dialogues >= 3 and slot == 7:
            splits["test"].append(rec.dialogue_id)
        else:
            splits["train"].append(rec.dialogue_id)
    if spec.n_dialogues >= 3 and not splits["val"]:
        splits["val"].append(splits["train"].pop())
    if spec.n_dialogues >= 3 and not splits["test"]:
        splits["test"].append(splits["train"].pop())

    label_set = EmotionLabelSet(tuple(f"class_{i}" for i in range(spec.C)))
    manifest = FeatureManifest(
        dataset_name=f"synth-{spec.signal_mode}",
        label_set=label_set,
        audio_dim=spec.D_a,
        text_dim=spec.D_text,
        splits={k: tuple(v) for k, v in splits.items()},
        provenance=f"generate_synthetic(seed={spec.seed}, noise_std={spec.noise_std}, mode={spec.signal_mode})",
        utterance_counts={k: sum(spec.utterances_per_dialogue for _ in v) for k, v in splits.items()},
    )
    return manifest, tuple(records)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


def batch_dialogues(records, batch_size: int, seed: int) -> list[list[DialogueRecord]]:
    """Shuffle dialogues deterministically and chunk into whole-dialogue batches."""
    if not records:
        raise DataError("no records to batch")
    if batch_size < 1:
        raise DataError("batch_size must be positive")
    order = np.random.default_rng(seed).permutation(len(records))
    shuffled = [records[i] for i in order]
    return [shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)]


def standardize(records, stats=None):
    """Per-dimension standardisation of all five feature streams.

    Returns (new_records, stats); pass the returned ``stats`` to apply the
    same transform to another split.  Off by default in training; the
    ingested features' normalisation is the extractor's business.
    """
    fields = ("audio_vec", "text_context_vec", "cs_external", "cs_internal", "cs_purpose")
    if stats is None:
        stats = {}
        for f in fields:
            x = np.concatenate([np.stack([getattr(u, f) for u in r.utterances]) for r in records])
            mean = x.mean(axis=0)
            std = x.std(axis=0)
            std[std < 1e-8] = 1.0
            stats[f] = (mean, std)
    out = []
    for r in records:
        utts = []
        for u in r.utterances:
            kw = {f: _frozen((getattr(u, f) - stats[f][0]) / stats[f][1]) for f in fields}
            utts.append(UtteranceFeatures(label=u.label, **kw))
        out.append(DialogueRecord(r.dialogue_id, tuple(utts)))
    return tuple(out), stats
