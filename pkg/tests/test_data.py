"""Feature store: binary round-trips, manifest validation, synthesis, batching."""

import numpy as np
import pytest

from hbaf.data import (
    DataError,
    DialogueRecord,
    EmotionLabelSet,
    FeatureManifest,
    MELD_LABELS,
    SynthSpec,
    UtteranceFeatures,
    batch_dialogues,
    dataset_checksum,
    generate_synthetic,
    load_manifest,
    load_split,
    standardize,
    write_dataset,
    write_dialogue,
)

from oracles import linear_probe_accuracy


def _record(rng, did, n, d_a, d_text, c):
    utts = []
    for _ in range(n):
        utts.append(
            UtteranceFeatures(
                audio_vec=rng.standard_normal(d_a).astype(np.float32),
                text_context_vec=rng.standard_normal(d_text).astype(np.float32),
                cs_external=rng.standard_normal(d_text).astype(np.float32),
                cs_internal=rng.standard_normal(d_text).astype(np.float32),
                cs_purpose=rng.standard_normal(d_text).astype(np.float32),
                label=int(rng.integers(c)),
            )
        )
    return DialogueRecord(did, tuple(utts))


def _manifest(records, labels, d_a, d_text, splits):
    return FeatureManifest("toy", labels, d_a, d_text, {k: tuple(v) for k, v in splits.items()})


def test_roundtrip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    recs = [_record(rng, f"d{i}", 4, 6, 5, 3) for i in range(3)]
    labels = EmotionLabelSet(("a", "b", "c"))
    man = _manifest(recs, labels, 6, 5, {"train": ["d0", "d1"], "val": ["d2"], "test": []})
    write_dataset(tmp_path, man, recs)
    loaded = load_manifest(tmp_path)
    back = load_split(loaded, "train") + load_split(loaded, "val")
    for orig, got in zip(recs, back):
        assert orig.dialogue_id == got.dialogue_id
        for u0, u1 in zip(orig.utterances, got.utterances):
            assert u0.label == u1.label
            for f in ("audio_vec", "text_context_vec", "cs_external", "cs_internal", "cs_purpose"):
                assert getattr(u0, f).tobytes() == getattr(u1, f).tobytes()


def test_meld_sized_manifest_counts(tmp_path):
    # Table-level bookkeeping: 2610 test utterances, 11098 train+val.
    rng = np.random.default_rng(1)
    train = [_record(rng, f"tr{i}", 5549, 4, 4, 7) for i in range(2)]
    test = [_record(rng, f"te{i}", 522, 4, 4, 7) for i in range(5)]
    man = _manifest(
        train + test, MELD_LABELS, 4, 4, {"train": [r.dialogue_id for r in train], "val": [], "test": [r.dialogue_id for r in test]}
    )
    write_dataset(tmp_path, man, train + test)
    loaded = load_manifest(tmp_path)
    assert loaded.utterance_counts["test"] == 2610
    assert loaded.utterance_counts["train"] + loaded.utterance_counts["val"] == 11098
    assert loaded.label_set.C == 7


def test_empty_split_lists_are_valid(tmp_path):
    labels = EmotionLabelSet(("x", "y"))
    man = _manifest([], labels, 4, 4, {"train": [], "val": [], "test": []})
    write_dataset(tmp_path, man, [])
    loaded = load_manifest(tmp_path)
    assert loaded.utterance_counts == {"train": 0, "val": 0, "test": 0}


def test_dim_mismatch_is_rejected(tmp_path):
    rng = np.random.default_rng(2)
    rec = _record(rng, "d0", 2, 511, 8, 3)
    labels = EmotionLabelSet(("a", "b", "c"))
    man = _manifest([rec], labels, 512, 8, {"train": ["d0"], "val": [], "test": []})
    (tmp_path / "dialogues").mkdir(parents=True)
    write_dialogue(tmp_path / "dialogues" / "d0.bin", rec, 511, 8)
    import json

    doc = {
        "dataset_name": "toy",
        "labels": list(labels.names),
        "dims": {"d_a": 512, "d_text": 8},
        "splits": {"train": ["d0"], "val": [], "test": []},
    }
    (tmp_path / "manifest").write_text(json.dumps(doc))
    with pytest.raises(DataError, match="dim mismatch"):
        load_manifest(tmp_path)
    assert man is not None


def test_unknown_label_is_rejected(tmp_path):
    rng = np.random.default_rng(3)
    rec = _record(rng, "d0", 2, 4, 4, 3)
    bad = DialogueRecord(
        "d0",
        tuple(
            UtteranceFeatures(u.audio_vec, u.text_context_vec, u.cs_external, u.cs_internal, u.cs_purpose, label=7)
            for u in rec.utterances
        ),
    )
    labels = EmotionLabelSet(("a", "b", "c"))
    man = _manifest([bad], labels, 4, 4, {"train": ["d0"], "val": [], "test": []})
    write_dataset(tmp_path, man, [bad])
    with pytest.raises(DataError, match="unknown label"):
        load_manifest(tmp_path)


def test_missing_dialogue_file(tmp_path):
    labels = EmotionLabelSet(("a", "b"))
    man = _manifest([], labels, 4, 4, {"train": ["ghost"], "val": [], "test": []})
    write_dataset(tmp_path, man, [])
    with pytest.raises(DataError, match="missing"):
        load_manifest(tmp_path)


def test_overlapping_splits_rejected(tmp_path):
    rng = np.random.default_rng(4)
    rec = _record(rng, "d0", 2, 4, 4, 2)
    labels = EmotionLabelSet(("a", "b"))
    man = _manifest([rec], labels, 4, 4, {"train": ["d0"], "val": ["d0"], "test": []})
    write_dataset(tmp_path, man, [rec])
    with pytest.raises(DataError, match="overlap"):
        load_manifest(tmp_path)


# -- synthetic generation ----------------------------------------------------


def test_synthetic_determinism(tmp_path):
    spec = SynthSpec(n_dialogues=5, utterances_per_dialogue=4, C=3, D_a=8, D_text=8, seed=11)
    man1, recs1 = generate_synthetic(spec)
    man2, recs2 = generate_synthetic(spec)
    write_dataset(tmp_path / "a", man1, recs1)
    write_dataset(tmp_path / "b", man2, recs2)
    assert dataset_checksum(tmp_path / "a") == dataset_checksum(tmp_path / "b")


def test_audio_only_noiseless_probe_is_perfect():
    spec = SynthSpec(n_dialogues=6, utterances_per_dialogue=8, C=4, D_a=8, D_text=8, signal_mode="audio_only", noise_std=0.0, seed=5)
    _, recs = generate_synthetic(spec)
    x = np.concatenate([np.stack([u.audio_vec for u in r.utterances]) for r in recs])
    y = np.concatenate([[u.label for u in r.utterances] for r in recs]).astype(int)
    assert linear_probe_accuracy(x.astype(np.float64), y, 4) == 1.0
    # the other modality carries no signal
    xt = np.concatenate([np.stack([u.text_context_vec for u in r.utterances]) for r in recs])
    assert linear_probe_accuracy(xt.astype(np.float64), y, 4) < 0.8


def test_text_only_noiseless_probe_is_perfect():
    spec = SynthSpec(n_dialogues=6, utterances_per_dialogue=8, C=4, D_a=8, D_text=8, signal_mode="text_only", noise_std=0.0, seed=6)
    _, recs = generate_synthetic(spec)
    x = np.concatenate([np.stack([u.text_context_vec for u in r.utterances]) for r in recs])
    y = np.concatenate([[u.label for u in r.utterances] for r in recs]).astype(int)
    assert linear_probe_accuracy(x.astype(np.float64), y, 4) == 1.0


def test_agreement_single_modality_probes_below_one():
    spec = SynthSpec(n_dialogues=8, utterances_per_dialogue=6, C=4, D_a=8, D_text=8, signal_mode="agreement", noise_std=0.0, seed=7)
    _, recs = generate_synthetic(spec)
    y = np.concatenate([[u.label for u in r.utterances] for r in recs]).astype(int)
    for f in ("audio_vec", "text_context_vec"):
        x = np.concatenate([np.stack([getattr(u, f) for u in r.utterances]) for r in recs]).astype(np.float64)
        assert linear_probe_accuracy(x, y, 4) < 1.0
    # jointly, the pair identifies the label exactly
    xa = np.concatenate([np.stack([u.audio_vec for u in r.utterances]) for r in recs]).astype(np.float64)
    xt = np.concatenate([np.stack([u.text_context_vec for u in r.utterances]) for r in recs]).astype(np.float64)
    assert _joint_agreement_decode(xa, xt, y, 4) == 1.0


def _joint_agreement_decode(xa, xt, y, c):
    # At noise 0 each modality takes exactly C distinct values; the pair of
    # cluster identities must determine the label, while either alone must not.
    key_a = [row.tobytes() for row in xa]
    key_t = [row.tobytes() for row in xt]
    joint = {}
    for ka, kt, label in zip(key_a, key_t, y):
        joint.setdefault((ka, kt), set()).add(int(label))
    assert all(len(s) == 1 for s in joint.values()), "joint pair must determine the label"
    for keys in (key_a, key_t):
        single = {}
        for k, label in zip(keys, y):
            single.setdefault(k, set()).add(int(label))
        assert any(len(s) > 1 for s in single.values()), "single modality must stay ambiguous"
    return 1.0


def test_class_mean_separation_scales_with_noise():
    noise = 0.5
    spec = SynthSpec(
        n_dialogues=40, utterances_per_dialogue=10, C=3, D_a=8, D_text=8, signal_mode="audio_only", noise_std=noise, seed=8
    )
    _, recs = generate_synthetic(spec)
    x = np.concatenate([np.stack([u.audio_vec for u in r.utterances]) for r in recs]).astype(np.float64)
    y = np.concatenate([[u.label for u in r.utterances] for r in recs]).astype(int)
    means = np.stack([x[y == c].mean(axis=0) for c in range(3)])
    dists = [np.linalg.norm(means[i] - means[j]) for i in range(3) for j in range(i + 1, 3)]
    assert min(dists) >= 4.0 * noise - 0.5  # sample-mean tolerance


def test_spec_validation():
    with pytest.raises(DataError):
        SynthSpec(n_dialogues=0, utterances_per_dialogue=4, C=3, D_a=8, D_text=8)
    with pytest.raises(DataError):
        SynthSpec(n_dialogues=2, utterances_per_dialogue=4, C=1, D_a=8, D_text=8)
    with pytest.raises(DataError):
        SynthSpec(n_dialogues=2, utterances_per_dialogue=4, C=3, D_a=8, D_text=8, noise_std=-0.1)
    with pytest.raises(DataError):
        SynthSpec(n_dialogues=2, utterances_per_dialogue=4, C=3, D_a=2, D_text=8)
    with pytest.raises(DataError):
        SynthSpec(n_dialogues=2, utterances_per_dialogue=4, C=3, D_a=8, D_text=8, signal_mode="nope")


# -- batching -----------------------------------------------------------------


def test_batch_sizes():
    rng = np.random.default_rng(9)
    recs = [_record(rng, f"d{i}", 2, 4, 4, 2) for i in range(5)]
    batches = batch_dialogues(recs, 2, seed=0)
    assert [len(b) for b in batches] == [2, 2, 1]
    assert len(batch_dialogues(recs, 10, seed=0)) == 1


def test_batch_shuffle_is_a_permutation():
    rng = np.random.default_rng(10)
    recs = [_record(rng, f"d{i}", 2, 4, 4, 2) for i in range(7)]
    b1 = [r.dialogue_id for batch in batch_dialogues(recs, 3, seed=1) for r in batch]
    b2 = [r.dialogue_id for batch in batch_dialogues(recs, 3, seed=2) for r in batch]
    assert sorted(b1) == sorted(b2) == sorted(r.dialogue_id for r in recs)
    assert b1 != b2


def test_epoch_coverage_property():
    rng = np.random.default_rng(11)
    for trial in range(100):
        n = int(rng.integers(1, 12))
        recs = [_record(rng, f"d{i}", 1, 4, 4, 2) for i in range(n)]
        bs = int(rng.integers(1, 8))
        seed = int(rng.integers(10000))
        batches = batch_dialogues(recs, bs, seed=seed)
        flat = [r.dialogue_id for b in batches for r in b]
        assert sorted(flat) == sorted(r.dialogue_id for r in recs)
        assert all(len(b) <= bs for b in batches)


def test_batching_same_seed_is_deterministic():
    rng = np.random.default_rng(12)
    recs = [_record(rng, f"d{i}", 1, 4, 4, 2) for i in range(9)]
    a = [[r.dialogue_id for r in b] for b in batch_dialogues(recs, 4, seed=3)]
    b = [[r.dialogue_id for r in b] for b in batch_dialogues(recs, 4, seed=3)]
    assert a == b


def test_standardize_train_statistics():
    spec = SynthSpec(n_dialogues=10, utterances_per_dialogue=6, C=3, D_a=8, D_text=8, noise_std=0.3, seed=13)
    _, recs = generate_synthetic(spec)
    out, stats = standardize(recs)
    x = np.concatenate([np.stack([u.audio_vec for u in r.utterances]) for r in out]).astype(np.float64)
    assert np.all(np.abs(x.mean(axis=0)) < 1e-5)
    assert np.all(np.abs(x.std(axis=0) - 1.0) < 1e-4)
    out2, _ = standardize(recs, stats)
    assert out2[0].utterances[0].audio_vec.tobytes() == out[0].utterances[0].audio_vec.tobytes()
