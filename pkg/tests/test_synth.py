import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from egpp.grid import flip_horizontal
from egpp.synth import (
    METHODS,
    SceneError,
    SceneParams,
    apply_occlusion_fading,
    band_mask,
    band_rmse,
    generate_scene,
    halo_metric,
    run_suite,
    step_edges,
)

FIXTURE_ROW = np.array([[0.05] * 5 + [0.2] * 5])


def test_flat_background():
    s = generate_scene(SceneParams(n_occluders=0, bg_range=(0.04, 0.04), border_fade_px=0))
    assert np.all(s.gt == 0.04)
    assert np.array_equal(s.d_l, s.gt) and np.array_equal(s.d_flip2, s.gt)


def test_single_rectangle_two_values():
    p = SceneParams(n_occluders=1, bg_range=(0.05, 0.05), occluder_range=(0.2, 0.2))
    assert set(np.unique(generate_scene(p).gt)) == {0.05, 0.2}


def test_determinism():
    a, b = generate_scene(SceneParams(seed=7)), generate_scene(SceneParams(seed=7))
    for f in ("gt", "d_l", "d_flip2", "edges"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    assert a.rects == b.rects
    assert not np.array_equal(a.gt, generate_scene(SceneParams(seed=8)).gt)


def test_nearer_occluders_on_top():
    s = generate_scene(SceneParams(seed=2, n_occluders=6))
    for r in sorted(s.rects, key=lambda r: r.disparity):
        patch = s.gt[r.top:r.bottom, r.left:r.right]
        assert np.all(patch >= r.disparity)


def test_occluders_exceed_background():
    s = generate_scene(SceneParams(seed=5))
    assert s.gt.max() >= 0.15
    for r in s.rects:
        assert r.disparity > 0.08


def test_params_validation():
    with pytest.raises(SceneError):
        SceneParams(occluder_range=(0.05, 0.3))
    with pytest.raises(SceneError):
        SceneParams(fade_px=-1)
    with pytest.raises(SceneError):
        SceneParams(width=10, occluder_width=(12, 32))


def test_fixture_ramp_values():
    d = apply_occlusion_fading(FIXTURE_ROW, "left", 3)
    np.testing.assert_allclose(d[0, 2:5], [0.0875, 0.125, 0.1625], rtol=0, atol=1e-15)
    assert np.array_equal(d[0, :2], FIXTURE_ROW[0, :2])
    assert np.array_equal(d[0, 5:], FIXTURE_ROW[0, 5:])


def test_min_ramp_single_column():
    d = apply_occlusion_fading(FIXTURE_ROW, "left", 1)
    changed = np.flatnonzero(d[0] != FIXTURE_ROW[0])
    assert changed.tolist() == [4]
    assert d[0, 4] == pytest.approx(0.125)


def test_border_fade():
    gt = np.full((2, 10), 0.08)
    d = apply_occlusion_fading(gt, "left", 3, L_b=4)
    np.testing.assert_allclose(d[0, :4], 0.08 * np.arange(4) / 4)
    assert np.array_equal(d[:, 4:], gt[:, 4:])
    r = apply_occlusion_fading(gt, "right", 3, L_b=4)
    np.testing.assert_allclose(r[0, -4:], 0.08 * np.arange(4)[::-1] / 4)


@given(st.integers(0, 30), st.integers(1, 8), st.integers(0, 5))
def test_mirror_construction(seed, L, L_b):
    s = generate_scene(SceneParams(seed=seed, fade_px=0, border_fade_px=0))
    gt = s.gt
    a = flip_horizontal(apply_occlusion_fading(gt, "left", L, L_b))
    b = apply_occlusion_fading(flip_horizontal(gt), "right", L, L_b)
    assert np.array_equal(a, b)


@given(st.integers(0, 40))
def test_fading_locality(seed):
    p = SceneParams(seed=seed)
    s = generate_scene(p)
    gt, L, L_b = s.gt, p.fade_px, p.border_fade_px
    allowed = np.zeros(gt.shape, bool)
    allowed[:, :L_b] = True
    ys, xs = np.nonzero(gt[:, 1:] > gt[:, :-1])
    for y, e in zip(ys, xs + 1):
        allowed[y, max(0, e - L):e] = True
    assert not np.any((s.d_l != gt) & ~allowed)
    # mirrored bands for the flipped-back prediction
    allowed_r = np.zeros(gt.shape, bool)
    allowed_r[:, gt.shape[1] - L_b:] = True
    ys, xs = np.nonzero(gt[:, :-1] > gt[:, 1:])
    for y, e in zip(ys, xs):
        allowed_r[y, e + 1:e + 1 + L] = True
    assert not np.any((s.d_flip2 != gt) & ~allowed_r)


def test_ramps_monotone():
    s = generate_scene(SceneParams(seed=1))
    ys, xs = np.nonzero(s.gt[:, 1:] > s.gt[:, :-1])
    for y, e in zip(ys, xs + 1):
        seg = s.d_l[y, max(0, e - 8):e + 1]
        assert np.all(np.diff(seg) >= 0)


# ---------------------------------------------------------------- halo / band metrics


def test_halo_zero_on_gt():
    s = generate_scene(SceneParams(seed=4))
    assert halo_metric(s.gt, s.gt, s.edges, 20) == 0


def test_halo_fixture_average_and_band_rmse():
    d_l = apply_occlusion_fading(FIXTURE_ROW, "left", 3)
    d_pp = apply_occlusion_fading(FIXTURE_ROW, "right", 3)  # occluder runs to the border: no right ramp
    assert np.array_equal(d_pp, FIXTURE_ROW)
    avg = 0.5 * (d_l + d_pp)
    edges = step_edges(FIXTURE_ROW)
    assert edges[0].tolist() == [False] * 5 + [True] + [False] * 4
    # averaged ramp stays inside the local [0.05, 0.2] envelope
    assert halo_metric(avg, FIXTURE_ROW, edges, 3) == 0
    # band = columns 2..8; errors 0.01875, 0.0375, 0.05625 then zeros
    want = np.sqrt((0.01875 ** 2 + 0.0375 ** 2 + 0.05625 ** 2) / 7)
    assert band_rmse(avg, FIXTURE_ROW, edges, 3) == pytest.approx(want, rel=1e-12)
    assert want == pytest.approx(0.0265165043, abs=1e-10)


def test_halo_uniform_offset():
    edges = step_edges(FIXTURE_ROW)
    # only band pixels sitting at their local maximum (columns 5..8) leave the envelope
    assert halo_metric(FIXTURE_ROW + 0.01, FIXTURE_ROW, edges, 3) == pytest.approx(4 * 0.01 / 7)
    # on a flat-topped band every pixel is at the local maximum
    flat = np.full((2, 9), 0.1)
    e = np.zeros((2, 9), bool)
    e[:, 4] = True
    assert halo_metric(flat + 0.01, flat, e, 2) == pytest.approx(0.01)


@given(st.integers(0, 20), st.floats(0.001, 0.1))
def test_halo_monotone_in_positive_offset(seed, c):
    s = generate_scene(SceneParams(seed=seed))
    h0 = halo_metric(s.d_l, s.gt, s.edges, 20)
    assert halo_metric(s.d_l + c, s.gt, s.edges, 20) >= h0


def test_empty_band_error():
    with pytest.raises(SceneError):
        halo_metric(np.ones((2, 3)), np.ones((2, 3)), np.zeros((2, 3), bool), 2)
    with pytest.raises(ValueError):
        band_mask(np.ones((2, 3), bool), 0)


# ---------------------------------------------------------------- suite


def test_suite_without_fading_ties_at_zero():
    rep = run_suite(SceneParams(fade_px=0, border_fade_px=0), n_scenes=3)
    assert len(rep.rows) == 9
    assert all(r.rmse == 0 and r.band_rmse == 0 and r.halo == 0 for r in rep.rows)


def test_suite_text_format():
    rep = run_suite(n_scenes=2)
    text = rep.to_text(aggregate=False)
    lines = text.splitlines()
    assert lines[0] == "seed\tmethod\trmse\tband_rmse\thalo"
    assert len(lines) == 1 + 2 * len(METHODS)
    assert rep.to_text(precision=4).splitlines()[-1].startswith("mean\tegpp\t")


def test_suite_deterministic():
    a, b = run_suite(n_scenes=3), run_suite(n_scenes=3)
    assert a.to_text() == b.to_text()


def load_fixture(path):
    rows = [line.split("\t") for line in path.read_text().splitlines()[1:]]
    return [(int(s), m, float(a), float(b), float(c)) for s, m, a, b, c in rows]


def test_default_suite_matches_frozen_table(fixtures_dir):
    rep = run_suite()
    frozen = load_fixture(fixtures_dir / "synth_default_suite.tsv")
    got = [(r.seed, r.method, r.rmse, r.band_rmse, r.halo) for r in rep.rows]
    assert got == frozen  # exact float equality


def test_default_suite_ordering(fixtures_dir):
    table = load_fixture(fixtures_dir / "synth_default_suite.tsv")
    by_seed = {}
    for seed, m, r, br, _ in table:
        by_seed.setdefault(seed, {})[m] = (r, br)
    assert len(by_seed) == 20
    for seed, v in by_seed.items():
        assert v["egpp"][0] < v["pp"][0] < v["raw"][0], seed
    band = {m: np.mean([v[m][1] for v in by_seed.values()]) for m in METHODS}
    assert band["egpp"] < band["pp"]
