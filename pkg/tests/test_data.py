import struct

import numpy as np
import pytest

from smelab import data
from smelab.data import IDXFormatError


def test_synth_deterministic_and_structured():
    a = data.synth_dataset("striped-patterns", 20, seed=4)
    b = data.synth_dataset("striped-patterns", 20, seed=4)
    assert np.array_equal(a.inputs, b.inputs) and np.array_equal(a.labels, b.labels)
    assert a.inputs.min() >= 0 and a.inputs.max() <= 1
    assert a.provenance["kind"] == "striped-patterns" and a.provenance["seed"] == 4
    m0 = data.synth_dataset("striped-patterns", 30, seed=1, labels=[0] * 30).inputs.mean(0)
    m1 = data.synth_dataset("striped-patterns", 30, seed=1, labels=[1] * 30).inputs.mean(0)
    assert np.linalg.norm(m0 - m1) > 0.1
    one = data.synth_dataset("gaussian-blobs", 1, shape=(3, 8, 8), seed=0)
    assert len(one) == 1 and 0 <= one.labels[0] < 10 and one.shape == (3, 8, 8)
    with pytest.raises(ValueError):
        data.synth_dataset("noise", 3)
    with pytest.raises(ValueError):
        data.synth_dataset("gaussian-blobs", 0)


def test_dataset_validation():
    with pytest.raises(ValueError):
        data.Dataset(np.full((1, 1, 2, 2), 2.0), [0], 2)
    with pytest.raises(ValueError):
        data.Dataset(np.zeros((1, 1, 2, 2)), [3], 2)


def write_fixture(path):
    imgs = path / "img.idx"
    labs = path / "lab.idx"
    imgs.write_bytes(struct.pack(">IIII", 0x803, 2, 2, 2) + bytes([0, 255, 255, 0, 0, 0, 255, 255]))
    labs.write_bytes(struct.pack(">II", 0x801, 2) + bytes([1, 0]))
    return imgs, labs


def test_idx_fixture(tmp_path):
    imgs, labs = write_fixture(tmp_path)
    ds = data.load_idx(imgs, labs)
    assert ds.inputs.shape == (2, 1, 2, 2) and list(ds.labels) == [1, 0]
    assert np.array_equal(ds.inputs[0, 0], [[0.0, 1.0], [1.0, 0.0]])
    x, y = data.load_idx(imgs, labs, normalize=False)
    assert x.max() == 255.0
    assert len(data.load_idx(imgs, labs, take=1)) == 1


def test_idx_errors(tmp_path):
    imgs, labs = write_fixture(tmp_path)
    with pytest.raises(IDXFormatError, match="magic"):
        data.load_idx(labs, labs)
    with pytest.raises(IDXFormatError, match="5.*2"):
        data.load_idx(imgs, labs, take=5)
    bad = tmp_path / "short.idx"
    bad.write_bytes(imgs.read_bytes()[:-3])
    with pytest.raises(IDXFormatError, match="truncated"):
        data.load_idx(bad, labs)
    three = tmp_path / "three.idx"
    three.write_bytes(struct.pack(">II", 0x801, 3) + bytes([0, 1, 2]))
    with pytest.raises(IDXFormatError, match="count"):
        data.load_idx(imgs, three)


def test_write_idx_round_trip(tmp_path, rng):
    raw = rng.integers(0, 256, size=(3, 5, 4)).astype(np.uint8)
    data.write_idx(tmp_path / "i", tmp_path / "l", raw, [2, 0, 1])
    ds = data.load_idx(tmp_path / "i", tmp_path / "l")
    assert np.array_equal(ds.inputs[:, 0] * 255, raw)


def test_dump_examples(tmp_path):
    [p] = data.dump_images(np.full((1, 1, 2, 2), 0.5), tmp_path, "g")
    raw = open(p, "rb").read()
    assert raw.startswith(b"P5\n2 2\n255\n") and raw[-4:] == bytes([128] * 4)
    [z] = data.dump_images(np.zeros((1, 1, 2, 3)), tmp_path, "z")
    assert open(z, "rb").read()[-6:] == bytes(6)
    [c] = data.dump_images(np.zeros((1, 3, 2, 2)), tmp_path, "c")
    assert c.endswith(".ppm") and open(c, "rb").read().startswith(b"P6")
    with pytest.raises(ValueError):
        data.dump_images(np.zeros((1, 2, 2, 2)), tmp_path)


def test_dump_round_trip_and_idempotence(tmp_path, rng):
    batch = rng.uniform(size=(3, 3, 5, 4))
    paths = data.dump_images(batch, tmp_path / "a")
    back = np.stack([data.read_pnm(p) for p in paths])
    assert np.max(np.abs(back - batch)) <= 1 / 255
    again = np.stack([data.read_pnm(p) for p in data.dump_images(back, tmp_path / "b")])
    assert np.array_equal(again, back)
    assert all(open(p, "rb").read() == open(q, "rb").read()
               for p, q in zip(paths, data.dump_images(batch, tmp_path / "c")))


def test_csv_quoting_and_append(tmp_path):
    path = tmp_path / "r.csv"
    data.write_csv(path, [{"a": "x,y", "b": 'say "hi"'}], ["a", "b"])
    data.write_csv(path, [{"a": 1, "b": 2}], ["a", "b"], append=True)
    assert path.read_bytes() == b'a,b\r\n"x,y","say ""hi"""\r\n1,2\r\n'
