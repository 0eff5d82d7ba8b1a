import numpy as np
import pytest

from stkws.audio import read_feature_cache, write_wav
from stkws.data import (KEYWORDS, SILENCE, UNKNOWN, Entry, FeatureStore, SplitManifest, label_for_word,
                        make_batches, scan_dataset)
from stkws.exceptions import ConfigError
from stkws.synthetic import write_fixture


@pytest.fixture(scope="module")
def fixture_root(tmp_path_factory):
    return write_fixture(tmp_path_factory.mktemp("ds"), per_word=5, seed=1)


def test_label_mapping():
    assert [label_for_word(w) for w in KEYWORDS] == list(range(10))
    assert label_for_word("bed") == UNKNOWN
    assert label_for_word("marvin") == UNKNOWN


def test_splits_follow_list_files_and_are_disjoint(fixture_root):
    m = scan_dataset(fixture_root, seed=0)
    dev_list = set((fixture_root / "validation_list.txt").read_text().split())
    test_list = set((fixture_root / "testing_list.txt").read_text().split())
    assert dev_list and test_list
    word_paths = {s: {e.path for e in m.split(s) if e.offset is None} for s in ("train", "dev", "test")}
    assert not word_paths["train"] & word_paths["dev"]
    assert not word_paths["train"] & word_paths["test"]
    assert not word_paths["dev"] & word_paths["test"]
    assert {p for p in word_paths["dev"]} <= dev_list
    assert {p for p in word_paths["test"]} <= test_list
    keyword_files = {str(p.relative_to(fixture_root)) for w in KEYWORDS for p in (fixture_root / w).glob("*.wav")}
    assigned = {e.path for s in ("train", "dev", "test") for e in m.split(s) if e.label < 10}
    assert assigned == keyword_files
    assert sum(m.word_counts.values()) == 14 * 5


def test_unknown_and_silence_proportions(fixture_root):
    m = scan_dataset(fixture_root, seed=0)
    train = m.split("train")
    n_kw = sum(e.label < 10 for e in train)
    assert sum(e.label == UNKNOWN for e in train) == int(np.ceil(0.1 * n_kw))
    silence = [e for e in train if e.label == SILENCE]
    assert len(silence) == int(np.ceil(0.1 * n_kw))
    assert all(e.path.startswith("_background_noise_/") for e in silence)


def test_scan_is_deterministic_and_dev_labels_fixed(fixture_root):
    a, b = scan_dataset(fixture_root, seed=3), scan_dataset(fixture_root, seed=3)
    assert a.split("dev") == b.split("dev") and a.split("train") == b.split("train")
    c = scan_dataset(fixture_root, seed=4)
    assert [e.path for e in c.split("dev") if e.offset is None] == [e.path for e in a.split("dev") if e.offset is None]


def test_missing_list_file_is_config_error(tmp_path):
    (tmp_path / "yes").mkdir()
    with pytest.raises(ConfigError, match="validation_list"):
        scan_dataset(tmp_path)


def test_unreadable_wav_skipped(tmp_path):
    root = write_fixture(tmp_path, per_word=2, words=["yes", "no"], seed=0)
    (root / "yes" / "broken.wav").write_bytes(b"nope")
    write_wav(root / "no" / "slow.wav", np.zeros(8000), sample_rate=8000)
    m = scan_dataset(root)
    assert sorted(m.skipped) == ["no/slow.wav", "yes/broken.wav"]


def _synthetic_manifest(n):
    return SplitManifest("", train=[Entry("", SILENCE, i) for i in range(n)])


def test_batch_partition_arithmetic():
    m = _synthetic_manifest(250)
    # every silence entry without noise files decodes to zeros; shapes are what matter here
    sizes = [len(y) for _, y in make_batches(m, "train", 100, seed=0)]
    assert sizes == [100, 100, 50]


def test_batch_order_is_seeded_per_epoch():
    m = SplitManifest("", train=[Entry("", k % 12, k) for k in range(30)])

    def order(seed, epoch):
        store = FeatureStore("")
        return [tuple(y) for _, y in make_batches(m, "train", 7, seed, epoch, store)]

    assert order(1, 0) == order(1, 0)
    assert order(1, 0) != order(1, 1)
    assert order(1, 0) != order(2, 0)


def test_batch_shapes_on_twenty_file_fixture(tmp_path):
    root = write_fixture(tmp_path, per_word=2, words=list(KEYWORDS), seed=5)
    m = scan_dataset(root)
    assert sum(m.word_counts.values()) == 20
    for split in ("train", "dev", "test"):
        assert m.split(split)
        for X, y in make_batches(m, split, 4, seed=0):
            assert X.shape == (len(y), 98, 40)
            assert X.dtype == np.float32


def test_empty_split_is_config_error():
    with pytest.raises(ConfigError):
        next(make_batches(SplitManifest(""), "dev", 10, 0))
    with pytest.raises(ConfigError):
        SplitManifest("").split("holdout")


def test_feature_cache_reuse_is_bit_exact(fixture_root, tmp_path):
    m = scan_dataset(fixture_root)
    entries = m.split("train")[:3] + [e for e in m.split("train") if e.label == SILENCE][:1]
    first = FeatureStore(fixture_root, tmp_path / "cache")
    a, _ = first.arrays(entries)
    cached = sorted((tmp_path / "cache").rglob("*.feat"))
    assert len(cached) == 4
    again, _ = FeatureStore(fixture_root, tmp_path / "cache").arrays(entries)
    assert a.tobytes() == again.tobytes()
    assert read_feature_cache(cached[0]).shape == (98, 40)


def test_augmentation_changes_features_deterministically(fixture_root):
    m = scan_dataset(fixture_root)
    plain = next(make_batches(m, "train", 5, seed=0))[0].data
    aug1 = next(make_batches(m, "train", 5, seed=0, augmentation=True))[0].data
    aug2 = next(make_batches(m, "train", 5, seed=0, augmentation=True))[0].data
    assert aug1.tobytes() == aug2.tobytes()
    assert not np.array_equal(plain, aug1)
