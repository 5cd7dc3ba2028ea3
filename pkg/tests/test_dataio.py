import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from egogesture.codec import GestureRegistry
from egogesture.core import DataError, InputError, validate_sample
from egogesture.dataio import (SplitSpec, SyntheticConfig, expected_split_sizes, generate_synthetic, import_scut,
                               load_dataset, read_splits, split, split_class, write_dataset, write_splits)

# class: (test, val, train, total)
PUBLISHED_SPLITS = {
    "SingleOne": (337, 151, 2886, 3374),
    "SingleTwo": (376, 169, 3218, 3763),
    "SingleThree": (376, 169, 3223, 3768),
    "SingleFour": (376, 169, 3222, 3767),
    "SingleFive": (375, 169, 3211, 3755),
    "SingleSix": (375, 169, 3213, 3757),
    "SingleSeven": (377, 169, 3227, 3773),
    "SingleEight": (338, 152, 2890, 3380),
}


def _files(n, prefix="f"):
    return [f"{prefix}{i:05d}.png" for i in range(n)]


@pytest.mark.parametrize("name", PUBLISHED_SPLITS)
@pytest.mark.parametrize("mode", ["block", "uniform", "fixed"])
def test_published_split_sizes(name, mode):
    test, val, train, total = PUBLISHED_SPLITS[name]
    parts = split({name: _files(total)}, SplitSpec(mode=mode), seed=1)[name]
    assert (len(parts["test"]), len(parts["val"]), len(parts["train"])) == (test, val, train)
    assert expected_split_sizes(total) == (test, val, train)


def test_published_split_totals():
    assert sum(r[0] for r in PUBLISHED_SPLITS.values()) == 2930
    assert sum(r[1] for r in PUBLISHED_SPLITS.values()) == 1317
    assert sum(r[2] for r in PUBLISHED_SPLITS.values()) == 25090


def test_twenty_files():
    parts = split_class(_files(20), SplitSpec(), np.random.default_rng(0))
    assert (len(parts["test"]), len(parts["val"]), len(parts["train"])) == (2, 0, 18)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 500), st.integers(0, 1000), st.sampled_from(["block", "uniform", "fixed"]))
def test_split_partitions(n, seed, mode):
    files = _files(n)
    parts = split({"c": files}, SplitSpec(mode=mode), seed=seed)["c"]
    sets = [set(parts[k]) for k in ("test", "val", "train")]
    assert sum(len(s) for s in sets) == n and set.union(*sets) == set(files)
    assert (len(parts["test"]), len(parts["val"])) == expected_split_sizes(n)[:2]


def test_block_mode_one_per_block():
    files = _files(100)
    test = split({"c": files}, seed=4)["c"]["test"]
    assert sorted(int(f[1:6]) // 10 for f in test) == list(range(10))


def test_split_is_seeded():
    files = {"a": _files(300), "b": _files(300, "g")}
    assert split(files, seed=3) == split(files, seed=3)
    assert split(files, seed=3) != split(files, seed=4)


def test_bad_spec():
    with pytest.raises(InputError):
        SplitSpec(mode="random")
    with pytest.raises(InputError):
        SplitSpec(test_stride=1)


def test_splits_file_round_trip(tmp_path):
    parts = split({"a": _files(40)}, seed=2)
    write_splits(tmp_path / "s.json", parts, 2, SplitSpec())
    doc = read_splits(tmp_path / "s.json")
    assert doc["classes"] == parts and doc["seed"] == 2


def test_dataset_round_trip(tmp_path, synthetic8):
    write_dataset(tmp_path, synthetic8)
    ds = load_dataset(tmp_path)
    assert len(ds) == 8
    assert list(ds) == synthetic8
    assert ds.subset([synthetic8[3].name])[0] == synthetic8[3]


def test_empty_annotations(tmp_path):
    (tmp_path / "annotations.jsonl").write_text("")
    assert len(load_dataset(tmp_path)) == 0


def test_missing_annotations(tmp_path):
    with pytest.raises(DataError):
        load_dataset(tmp_path)


def test_four_fingertips_five_bits_is_load_error(tmp_path, synthetic8):
    write_dataset(tmp_path, synthetic8)
    lines = (tmp_path / "annotations.jsonl").read_text().splitlines()
    five = next(i for i, l in enumerate(lines) if json.loads(l)["class"] == "SingleFive")
    rec = json.loads(lines[five])
    rec["fingertips"][2] = None
    lines[five] = json.dumps(rec)
    (tmp_path / "annotations.jsonl").write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError) as e:
        load_dataset(tmp_path)
    assert e.value.line == five + 1


def test_bad_json_line(tmp_path, synthetic8):
    write_dataset(tmp_path, synthetic8[:2])
    with open(tmp_path / "annotations.jsonl", "a") as fh:
        fh.write("{oops\n")
    with pytest.raises(DataError) as e:
        load_dataset(tmp_path)
    assert e.value.line == 3


def test_synthetic_determinism():
    a = generate_synthetic(SyntheticConfig(seed=7), 5)
    b = generate_synthetic(SyntheticConfig(seed=7), 5)
    assert a == b
    assert generate_synthetic(SyntheticConfig(seed=8), 5) != a


def test_stratified_one_per_class():
    samples = generate_synthetic(SyntheticConfig(seed=1), 8)
    assert sorted(s.gesture_class for s in samples) == sorted(GestureRegistry.default().names)


def test_synthetic_invariants():
    for s in generate_synthetic(SyntheticConfig(seed=11, stratified=False), 24):
        assert validate_sample(s) == []
        assert s.code == GestureRegistry.default().code(s.gesture_class)


def test_fingertip_markers_are_drawn():
    s = generate_synthetic(SyntheticConfig(seed=2), 1)[0]
    from egogesture.dataio import FINGER_COLORS
    for f in s.code.visible():
        x, y = s.fingertips[f]
        px = s.image[int(round(y)), int(round(x))].astype(int)
        assert np.abs(px - np.array(FINGER_COLORS[f])).max() < 60


def test_import_scut(tmp_path):
    import cv2
    src = tmp_path / "corpus" / "SingleTwo"
    src.mkdir(parents=True)
    cv2.imwrite(str(src / "a.jpg"), np.zeros((48, 64, 3), np.uint8))
    (src / "labels.txt").write_text("a.jpg 5 6 40 44 10 12 20 22\n")
    n = import_scut(tmp_path / "corpus", tmp_path / "ds")
    assert n == 1
    s = load_dataset(tmp_path / "ds")[0]
    assert s.gesture_class == "SingleTwo"
    assert s.fingertips[1] == (10.0, 12.0) and s.fingertips[2] == (20.0, 22.0)
    (src / "labels.txt").write_text("a.jpg 5 6 40 44 10 12\n")
    with pytest.raises(DataError) as e:
        import_scut(tmp_path / "corpus", tmp_path / "ds2")
    assert e.value.line == 1


def test_import_missing_corpus(tmp_path):
    with pytest.raises(DataError):
        import_scut(tmp_path / "nothing", tmp_path / "out")
