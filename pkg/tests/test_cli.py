import json
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from egpp import cli
from egpp.edge_guided import edge_guided_pp
from egpp.formats import read_pfm, write_pfm, write_png16_disparity
from egpp.grid import flip_horizontal
from egpp.metrics import KITTI_CAMERA
from egpp.synth import SceneParams, generate_scene


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def scene_files(tmp_path):
    s = generate_scene(SceneParams(seed=11))
    write_pfm(tmp_path / "dl.pfm", s.d_l)
    # the tool expects the raw prediction from the mirrored image
    write_pfm(tmp_path / "dflip.pfm", flip_horizontal(s.d_flip2))
    return tmp_path


def test_pp_none_passthrough(scene_files, capsys):
    t = scene_files
    code, _, _ = run(["pp", str(t / "dl.pfm"), str(t / "dflip.pfm"), "-o", str(t / "o.pfm"),
                      "--mode", "none"], capsys)
    assert code == 0
    assert (t / "o.pfm").read_bytes() == (t / "dl.pfm").read_bytes()


def test_pp_conventional_on_consistent_pair(tmp_path, capsys):
    d = np.random.default_rng(0).random((16, 48)).astype(np.float32) * 0.3
    write_pfm(tmp_path / "a.pfm", d)
    write_pfm(tmp_path / "b.pfm", flip_horizontal(d))
    code, _, _ = run(["pp", str(tmp_path / "a.pfm"), str(tmp_path / "b.pfm"), "-o",
                      str(tmp_path / "o.pfm"), "--mode", "pp"], capsys)
    assert code == 0
    np.testing.assert_allclose(read_pfm(tmp_path / "o.pfm"), d, atol=1e-6)


def test_pp_egpp_matches_library(scene_files, capsys):
    t = scene_files
    code, _, _ = run(["pp", str(t / "dl.pfm"), str(t / "dflip.pfm"), "-o", str(t / "o.pfm"),
                      "--threads", "3"], capsys)
    assert code == 0
    d_l = read_pfm(t / "dl.pfm").astype(np.float64)
    d_pp = flip_horizontal(read_pfm(t / "dflip.pfm").astype(np.float64))
    want = edge_guided_pp(d_l, d_pp).astype(np.float32)
    assert read_pfm(t / "o.pfm").tobytes() == want.tobytes()


def test_pp_png16_units(tmp_path, capsys):
    d_px = np.full((8, 64), 20.0)
    write_png16_disparity(tmp_path / "a.png", d_px)
    write_png16_disparity(tmp_path / "b.png", d_px)
    code, _, err = run(["pp", str(tmp_path / "a.png"), str(tmp_path / "b.png"), "-o",
                        str(tmp_path / "o.png")], capsys)
    assert code == 0 and "normalized by width 64" in err
    assert np.array(Image.open(tmp_path / "o.png")).max() == 20 * 256


def test_pp_errors(scene_files, tmp_path, capsys):
    write_pfm(tmp_path / "small.pfm", np.zeros((3, 3)))
    code, _, err = run(["pp", str(scene_files / "dl.pfm"), str(tmp_path / "small.pfm"),
                        "-o", str(tmp_path / "o.pfm")], capsys)
    assert code == 2 and "shape mismatch" in err
    code, _, _ = run(["pp", str(tmp_path / "missing.pfm"), str(tmp_path / "small.pfm"),
                      "-o", str(tmp_path / "o.pfm")], capsys)
    assert code == 3
    code, _, _ = run(["pp", str(scene_files / "dl.pfm"), str(scene_files / "dl.pfm"),
                      "-o", str(tmp_path / "o.pfm"), "--radius", "0"], capsys)
    assert code == 2


def test_usage_error_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["pp", "--bogus"])
    assert exc.value.code == 2


def test_threads_env(monkeypatch, capsys):
    monkeypatch.setenv(cli.THREADS_ENV, "zero")
    code, _, err = run(["arch", "vggaspp"], capsys)
    assert code == 2 and cli.THREADS_ENV in err
    monkeypatch.setenv(cli.THREADS_ENV, "2")
    assert run(["arch", "vggaspp"], capsys)[0] == 0


# ---------------------------------------------------------------- eval


def make_eval_set(tmp_path, pred_scale=1.0, n=2, shape=(100, 100)):
    fb = KITTI_CAMERA.focal_px * KITTI_CAMERA.baseline_m
    rng = np.random.default_rng(1)
    lines = []
    for i in range(n):
        depth = rng.uniform(5, 75, shape)
        gt = fb / depth
        gt[0, 0] = 0  # one invalid pixel
        write_png16_disparity(tmp_path / f"gt{i}.png", gt)
        write_png16_disparity(tmp_path / f"pred{i}.png", gt * pred_scale)
        lines.append(f"pred{i}.png\tgt{i}.png")
    (tmp_path / "m.tsv").write_text("\n".join(lines) + "\n")
    return tmp_path / "m.tsv"


def test_eval_identity(tmp_path, capsys):
    m = make_eval_set(tmp_path)
    code, out, _ = run(["eval", str(m)], capsys)
    assert code == 0
    last = out.splitlines()[-1].split()
    assert last[0] == "mean"
    assert last[1:6] == ["0.0000"] * 5 and last[6:9] == ["1.0000"] * 3


def test_eval_max_depth_and_crop(tmp_path, capsys):
    m = make_eval_set(tmp_path, n=1)
    rows = {}
    for flags in ([], ["--max-depth", "50"], ["--crop", "garg"]):
        code, out, _ = run(["eval", str(m), "--report", "json"] + flags, capsys)
        assert code == 0
        rows[tuple(flags)] = json.loads(out)[-1]["n_valid"]
    full = rows[()]
    assert full == 100 * 100 - 1
    assert rows[("--max-depth", "50")] < full
    # crop keeps rows 40..98 and cols 3..95; the invalid pixel (0, 0) is outside it
    assert rows[("--crop", "garg")] == 59 * 93


def test_eval_empty_manifest(tmp_path, capsys):
    (tmp_path / "m.tsv").write_text("# nothing\n")
    code, _, err = run(["eval", str(tmp_path / "m.tsv")], capsys)
    assert code == 4 and "no entries" in err


def test_eval_missing_prediction_is_io_error(tmp_path, capsys):
    (tmp_path / "m.tsv").write_text("nope.png\tnope_gt.png\n")
    assert run(["eval", str(tmp_path / "m.tsv")], capsys)[0] == 3


def test_eval_raw_and_repeatable(tmp_path, capsys):
    m = make_eval_set(tmp_path, pred_scale=1.1)
    a = run(["eval", str(m), "--raw", "--report", "tsv"], capsys)[1]
    b = run(["eval", str(m), "--raw", "--report", "tsv"], capsys)[1]
    assert a == b
    assert len(a.splitlines()[-1].split("\t")[1]) > 6


# ---------------------------------------------------------------- other subcommands


def test_synth_default_rows(capsys):
    code, out, _ = run(["synth", "--report", "tsv"], capsys)
    lines = out.splitlines()
    assert code == 0 and len(lines) == 1 + 60
    assert lines[0].split("\t") == ["seed", "method", "rmse", "band_rmse", "halo"]


def test_losses_identical_zero(tmp_path, capsys):
    img = (np.random.default_rng(2).random((12, 24, 3)) * 255).astype(np.uint8)
    Image.fromarray(img).save(tmp_path / "l.png")
    Image.fromarray(img).save(tmp_path / "r.png")
    write_pfm(tmp_path / "z.pfm", np.zeros((12, 24)))
    code, out, _ = run(["losses", str(tmp_path / "l.png"), str(tmp_path / "r.png"),
                        str(tmp_path / "z.pfm"), str(tmp_path / "z.pfm"), "--report", "json"], capsys)
    assert code == 0
    assert json.loads(out) == [{"c_ap": 0.0, "c_ds": 0.0, "c_lr": 0.0, "c_total": 0.0}]


def test_arch_scales(capsys):
    code, out, _ = run(["arch", "vggaspp", "--report", "tsv"], capsys)
    assert code == 0
    rows = [line.split("\t") for line in out.splitlines()]
    assert [r[3] for r in rows[1:7]] == ["2", "4", "8", "16", "32", "32"]
    code, out, _ = run(["arch", "resaspp", "--report", "json"], capsys)
    assert json.loads(out)["layers"][-1]["out_ch"] == 256


def test_bench_json(capsys):
    code, out, _ = run(["bench", "--height", "32", "--width", "64", "--iters", "3",
                        "--report", "json"], capsys)
    res = json.loads(out)
    assert code == 0
    assert res["median_ms"] > 0 and res["p95_ms"] >= res["median_ms"]
    assert set(res["stages_ms"]) == {"filter", "confidences", "normalize", "synthesize"}
    assert run(["bench", "--iters", "0"], capsys)[0] == 2


def test_bench_scene_thread_determinism():
    d_l, d_pp = cli.bench_scene(256, 512)
    assert np.array_equal(edge_guided_pp(d_l, d_pp, threads=1), edge_guided_pp(d_l, d_pp, threads=4))


def test_console_script_entry():
    res = subprocess.run([sys.executable, "-m", "egpp.cli", "arch", "vggaspp"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "ASPP" in res.stdout
