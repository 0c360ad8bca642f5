import numpy as np
import pytest

from topicgrid.errors import ConfigError, ShapeError
from topicgrid.layout import (
    GridAssignment, GridSpec, apply_assignment, hellinger_features, invert_assignment,
    pca_embed, split_diffuse_map, validate_assignment,
)

from oracles import check_split_diffuse


def test_pca_line():
    t = np.linspace(-2, 3, 9)
    emb = pca_embed(np.stack([t, 2 * t], axis=1))
    assert np.allclose(emb.axes[:, 0], np.array([1, 2]) / np.sqrt(5), atol=1e-12)
    assert abs(emb.eigenvalues[1]) <= 1e-9
    assert emb.eigenvalues[0] > 0


def test_pca_two_dimensional_is_exact(rng):
    X = rng.normal(size=(30, 2))
    emb = pca_embed(X)
    centered = X - X.mean(0)
    recon = emb.points @ emb.axes.T
    assert np.abs(recon - centered).max() <= 1e-9
    assert abs(emb.eigenvalues.sum() - emb.total_variance) <= 1e-9


def test_pca_against_svd_oracle(rng):
    X = rng.random((16, 50))
    emb = pca_embed(X)
    centered = X - X.mean(0)
    s = np.linalg.svd(centered, compute_uv=False)
    oracle = s**2 / (16 - 1)
    assert np.allclose(emb.eigenvalues, oracle[:2], atol=1e-8, rtol=0)
    assert np.allclose(emb.axes.T @ emb.axes, np.eye(2), atol=1e-9, rtol=0)
    captured = emb.points.var(0, ddof=1).sum()
    assert captured == pytest.approx(oracle[0] + oracle[1], abs=1e-8)


def test_pca_sign_convention(rng):
    emb = pca_embed(rng.random((10, 6)))
    for j in range(2):
        lead = np.argmax(np.abs(emb.axes[:, j]))
        assert emb.axes[lead, j] > 0


def test_pca_rejects_bad_shapes():
    with pytest.raises(ConfigError):
        pca_embed(np.ones((1, 4)))
    with pytest.raises(ConfigError):
        pca_embed(np.ones((4, 1)))


def test_hellinger():
    assert np.array_equal(hellinger_features(np.array([[0.25, 0.75, 0.0]])), [[0.5, np.sqrt(0.75), 0.0]])


def test_single_topic():
    a = split_diffuse_map(np.zeros((1, 2)), GridSpec(1))
    assert a.cells.tolist() == [[0, 0]]


def test_four_corners():
    corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    a = split_diffuse_map(corners, GridSpec(2))
    # row 0 is the top of the grid, so the high-y corners land there
    assert a.cells.tolist() == [[1, 0], [1, 1], [0, 0], [0, 1]]
    assert a.topic_grid().tolist() == [[2, 3], [0, 1]]


def test_grid_preserves_coarse_geometry():
    g = np.arange(4)
    pts = np.array([(x, y) for y in g for x in g], float) + 0.01 * np.arange(16)[:, None]
    a = split_diffuse_map(pts, GridSpec(4))
    for t, (x, y) in enumerate(np.rint(pts).astype(int)):
        assert tuple(a.cells[t]) == (3 - y, x)


@pytest.mark.parametrize("K", [4, 9, 16, 25, 64])
def test_bijection_and_ordering(K, rng):
    k = int(np.sqrt(K))
    for _ in range(20):
        pts = rng.normal(size=(K, 2))
        a = split_diffuse_map(pts, GridSpec(k))
        validate_assignment(a)
        assert check_split_diffuse(pts, a.cells, k) == []


def test_ordering_with_ties():
    pts = np.zeros((16, 2))
    pts[:, 0] = np.repeat([0.0, 1.0], 8)
    a = split_diffuse_map(pts, GridSpec(4))
    assert check_split_diffuse(pts, a.cells, 4) == []
    assert set(a.topic_grid()[:, :2].ravel()) == set(range(8))


def test_recorded_splits_match_geometry(rng):
    pts = rng.random((16, 2))
    a = split_diffuse_map(pts, GridSpec(4))
    assert len(a.splits) == 15
    for s in a.splits:
        lo = max((pts[t, s.axis], t) for t in s.low)
        hi = min((pts[t, s.axis], t) for t in s.high)
        assert lo < hi


def test_oracle_catches_bad_assignment(rng):
    pts = rng.random((16, 2))
    a = split_diffuse_map(pts, GridSpec(4))
    cells = a.cells.copy()
    i, j = np.argmin(pts[:, 0]), np.argmax(pts[:, 0])
    cells[[i, j]] = cells[[j, i]]
    assert check_split_diffuse(pts, cells, 4)


def test_topic_count_must_be_square():
    with pytest.raises(ConfigError):
        split_diffuse_map(np.zeros((5, 2)), GridSpec(2))
    with pytest.raises(ConfigError):
        GridSpec.for_topics(10)
    assert GridSpec.for_topics(64).k == 8


def test_apply_assignment_identity_and_zero(rng):
    ident = GridAssignment.identity(3)
    v = rng.random(9)
    assert np.array_equal(apply_assignment(v, ident), v.reshape(3, 3))
    assert np.all(apply_assignment(np.zeros(9), ident) == 0)


def test_apply_is_permutation(rng):
    a = split_diffuse_map(rng.random((16, 2)), GridSpec(4))
    v = rng.random((5, 16))
    frames = apply_assignment(v, a)
    assert frames.shape == (5, 4, 4)
    assert np.array_equal(np.sort(frames.reshape(5, -1), 1), np.sort(v, 1))
    assert np.array_equal(invert_assignment(frames, a), v)
    with pytest.raises(ShapeError):
        apply_assignment(np.zeros(15), a)
    with pytest.raises(ShapeError):
        invert_assignment(np.zeros((3, 3)), a)


def test_assignment_json_roundtrip(tmp_path, rng):
    a = split_diffuse_map(rng.random((9, 2)), GridSpec(3))
    a.save(tmp_path / "a.json")
    back = GridAssignment.load(tmp_path / "a.json")
    assert np.array_equal(back.cells, a.cells)
    with pytest.raises(ConfigError):
        GridAssignment.from_json([[0, 0, 0], [1, 0, 0], [2, 1, 1], [3, 1, 0]])
