import numpy as np
import pytest

from core.errors import DatasetError
from utils.datasets import dump_dataset
from utils.datasets import gen_dataset
from utils.datasets import load_csv
from utils.datasets import to_samples
from utils.datasets import two_moons


def test_two_moons_labels():
    X, y = two_moons(4, seed=0)
    assert X.shape == (4, 2)
    assert y.tolist() == [0, 0, 1, 1]
    X, y = two_moons(5, seed=0)
    assert y.tolist() == [0, 0, 1, 1, 1]


def test_two_moons_is_seeded():
    a, _ = two_moons(50, seed=3)
    b, _ = two_moons(50, seed=3)
    c, _ = two_moons(50, seed=4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_two_moons_without_noise_lies_on_the_arcs():
    X, y = two_moons(10, seed=0, noise=0.0)
    outer = X[y == 0]
    np.testing.assert_allclose(np.linalg.norm(outer, axis=1), 1.0)
    with pytest.raises(DatasetError):
        two_moons(1, seed=0)


def test_csv_round_trip(tmp_path):
    X, y = two_moons(20, seed=1)
    path = str(tmp_path / "moons.csv")
    dump_dataset(X, y, path)
    X2, y2 = load_csv(path)
    assert np.array_equal(X, X2)
    assert np.array_equal(y, y2)


def test_csv_named_labels_and_subsets(tmp_path):
    path = tmp_path / "flowers.csv"
    path.write_text(
        "a,b,species\n"
        "1.0,2.0,setosa\n"
        "1.5,2.5,versicolor\n"
        "2.0,3.0,virginica\n"
        "1.1,2.1,setosa\n"
        "1.6,2.6,versicolor\n"
    )
    X, y = load_csv(str(path))
    assert y.tolist() == [0, 1, 2, 0, 1]
    X, y = load_csv(str(path), classes=[1, 0])
    assert y.tolist() == [1, 0, 1, 0]
    X, y = load_csv(str(path), classes=[0, 1], balanced=4)
    assert y.tolist() == [0, 1, 0, 1]
    assert X[:, 0].tolist() == [1.0, 1.5, 1.1, 1.6]
    with pytest.raises(DatasetError):
        load_csv(str(path), classes=[0, 1], balanced=5)


def test_csv_errors_carry_the_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("1.0,2.0,0\n1.0,oops,1\n")
    with pytest.raises(DatasetError) as excinfo:
        load_csv(str(path))
    assert excinfo.value.payload["line"] == 2

    path.write_text("1.0,2.0,0\n1.0,1\n")
    with pytest.raises(DatasetError) as excinfo:
        load_csv(str(path))
    assert excinfo.value.payload["line"] == 2

    path.write_text("x,y,label\n")
    with pytest.raises(DatasetError):
        load_csv(str(path))


def test_gen_dataset(tmp_path):
    X, y = gen_dataset("two-moons", n=6, seed=2)
    assert len(y) == 6
    with pytest.raises(DatasetError):
        gen_dataset("two-moons")
    with pytest.raises(DatasetError):
        gen_dataset("csv")
    with pytest.raises(DatasetError):
        gen_dataset("mnist", n=3)
    samples = to_samples(X, y)
    assert samples[0].label == 0
    assert samples[0].x0.shape == (2,)
