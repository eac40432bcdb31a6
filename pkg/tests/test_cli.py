import csv
import io

import numpy as np
import pytest

import oracles
from fpqual import cli, synth
from fpqual import evaluation as ev
from fpqual.evaluation import ScoreSet, write_score_csv
from fpqual.imagecore import load_image, save_pgm
from fpqual.report import METRICS


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    img, _ = synth.generate_whorl(192, 192, 10)
    save_pgm(img, d / "a.pgm")
    save_pgm(synth.degrade(img, synth.DegradationSpec(noise_sigma=30), 1), d / "b.pgm")
    return d


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def parse_long(text):
    """image -> {metric: score} from long-form score output."""
    out, image = {}, None
    for line in text.splitlines():
        if line.startswith("# image="):
            image = line[len("# image="):]
            out[image] = {}
        elif line and not line.startswith("#") and line != "metric,global_score":
            m, v = line.split(",")
            out[image][m] = float(v)
    return out


# -------------------------------------------------------------------- score


def test_score_all_metrics_in_unit_interval(corpus, capsys):
    code, out, _ = run(["score", corpus / "a.pgm"], capsys)
    assert code == 0
    scores = parse_long(out)[str(corpus / "a.pgm")]
    assert list(scores) == list(METRICS)
    assert all(0 <= v <= 1 for v in scores.values())


def test_score_directory_with_corrupt_file(corpus, tmp_path, capsys):
    for name in ("a.pgm", "b.pgm"):
        (tmp_path / name).write_bytes((corpus / name).read_bytes())
    (tmp_path / "c.pgm").write_bytes(b"P5\n64 64\n255\n" + bytes(10))
    code, out, err = run(["score", tmp_path], capsys)
    assert code == cli.EXIT_PARTIAL
    assert len(parse_long(out)) == 2
    assert err.count("error:") == 1 and "c.pgm" in err


def test_same_image_twice_identical(corpus, capsys):
    _, out, _ = run(["score", "--wide", corpus / "a.pgm", corpus / "a.pgm"], capsys)
    rows = [line for line in out.splitlines() if line.startswith(str(corpus))]
    assert len(rows) == 2 and rows[0] == rows[1]


def test_score_selected_metrics_and_spectrum(corpus, tmp_path, capsys):
    code, out, _ = run(["score", "--metrics", "ocl,qf", "--dump-spectrum", tmp_path, corpus / "a.pgm"], capsys)
    assert code == 0
    assert list(parse_long(out)[str(corpus / "a.pgm")]) == ["ocl", "qf"]
    lines = (tmp_path / "a.spectrum.csv").read_text().splitlines()
    assert lines[0] == "ring,center_frequency,p" and len(lines) == 16


@pytest.mark.parametrize("argv", [["--metrics", "ocl,bogus"], ["--block-size", "3"], ["--dpi", "0"]])
def test_score_config_errors_exit_2(corpus, capsys, argv):
    code, _, err = run(["score", *argv, corpus / "a.pgm"], capsys)
    assert code == cli.EXIT_CONFIG and "error:" in err


def test_bad_config_file_exit_2(corpus, tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("gabor_sigma=-1\n")
    code, _, err = run(["score", "--config", cfg, corpus / "a.pgm"], capsys)
    assert code == cli.EXIT_CONFIG and "gabor_sigma" in err


def test_dump_config_roundtrip(corpus, tmp_path, capsys):
    code, dumped, _ = run(["--dpi", "600", "--dump-config"], capsys)
    assert code == 0 and "dpi=600" in dumped
    cfg = tmp_path / "c.cfg"
    cfg.write_text(dumped)
    _, again, _ = run(["--config", cfg, "--dump-config"], capsys)
    assert again == dumped
    _, a, _ = run(["score", "--dpi", "600", corpus / "a.pgm"], capsys)
    _, b, _ = run(["score", "--config", cfg, corpus / "a.pgm"], capsys)
    assert a == b


def test_no_command_is_usage_error(capsys):
    assert run([], capsys)[0] == cli.EXIT_CONFIG


# ---------------------------------------------------------------------- map


def test_map_with_heatmap(corpus, tmp_path, capsys):
    code, _, _ = run(["map", "--metric", "ocl", "--heatmap", "--out", tmp_path, corpus / "a.pgm"], capsys)
    assert code == 0
    rows = list(csv.reader(io.StringIO((tmp_path / "a.ocl.csv").read_text())))
    assert len(rows) == 12 and all(len(r) == 12 for r in rows)
    heat = load_image(tmp_path / "a.ocl.pgm").pixels
    assert heat.shape == (192, 192)
    for r, row in enumerate(rows):
        for c, cell in enumerate(row):
            expected = 0 if cell == "" else int(np.rint(float(cell) * 255))
            assert abs(int(heat[16 * r, 16 * c]) - expected) <= 1


def test_map_rejects_global_only_metric(corpus, tmp_path, capsys):
    assert run(["map", "--metric", "qf", "--out", tmp_path, corpus / "a.pgm"], capsys)[0] == cli.EXIT_CONFIG


# ------------------------------------------------------------------ compare


def test_compare_matrix(corpus, capsys):
    code, out, _ = run(["compare", "--metrics", "ocl,qs,gcs,qf", corpus], capsys)
    assert code == 0
    lines = [line for line in out.splitlines() if not line.startswith("#")]
    assert lines[0] == "metric,ocl,qs,gcs,qf"
    for i, line in enumerate(lines[1:]):
        assert line.split(",")[i + 1] == "1.000000"


def test_compare_identical_images_undefined(corpus, capsys):
    a = corpus / "a.pgm"
    code, out, err = run(["compare", "--metrics", "ocl,qs", a, a], capsys)
    assert code == 0
    assert "undefined" in err
    assert out.splitlines()[-1] == "qs,,"


def test_compare_needs_two_images(corpus, capsys):
    code, _, err = run(["compare", corpus / "a.pgm"], capsys)
    assert code == cli.EXIT_PARTIAL and "at least 2" in err


# ----------------------------------------------------------------- evaluate


def _write_scores(path, scores: ScoreSet):
    with open(path, "w", newline="") as fh:
        write_score_csv(scores, fh)


def _curve(text):
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["fraction", "eer", "far_at_frr", "frr_at_far"]
    return [[float(v) if v else float("nan") for v in r] for r in rows[1:]]


def test_evaluate_coupled_set(tmp_path, capsys):
    s = synth.generate_score_set(synth.SyntheticScoreSpec(1000, 1000, coupling=4.0, seed=3))
    path = tmp_path / "s.csv"
    _write_scores(path, s)
    code, out, err = run(["evaluate", path], capsys)
    assert code == 0
    curve = _curve(out.split("# separation")[0])
    assert len(curve) == 7
    assert curve[0][1] == pytest.approx(ev.compute_eer(s), abs=1e-10)
    assert curve[0][3] == pytest.approx(ev.error_at_operating_point(s, far=0.01), abs=1e-10)
    assert "quality key: pair" in err


def _same(value, oracle):
    try:
        expected = oracle()
    except oracles.Unattainable:
        return np.isnan(value)
    return value == pytest.approx(expected, abs=1e-9)


def test_evaluate_matches_oracle_on_small_set(tmp_path, capsys):
    rng = np.random.default_rng(11)
    gen = (rng.integers(0, 10, 10) / 10 + 0.3).tolist()
    imp = (rng.integers(0, 10, 10) / 10).tolist()
    q = rng.random(20)
    s = ScoreSet([True] * 10 + [False] * 10, gen + imp, q, np.ones(20))
    # with 10 impostors FAR 0.1 becomes unattainable once any impostor is dropped
    path = tmp_path / "small.csv"
    _write_scores(path, s)
    out_path = tmp_path / "curve.csv"
    code, _, _ = run(["evaluate", path, "--fractions", "0,0.1,0.2", "--fixed-far", "0.1", "--fixed-frr", "0.2",
                      "--out", out_path], capsys)
    assert code == 0
    pair_q = np.sqrt(q)
    for row in _curve(out_path.read_text()):
        drop = int(row[0] * 20 + 1e-9)
        keep = sorted(sorted(range(20), key=lambda i: pair_q[i])[drop:])
        g = [s.scores[i] for i in keep if s.genuine[i]]
        m = [s.scores[i] for i in keep if not s.genuine[i]]
        assert row[1] == pytest.approx(oracles.eer(g, m), abs=1e-9)
        assert _same(row[2], lambda: oracles.rate_at_frr(g, m, 0.2))
        assert _same(row[3], lambda: oracles.rate_at_far(g, m, 0.1))


def test_evaluate_missing_quality_key(tmp_path, capsys):
    path = tmp_path / "s.csv"
    path.write_text("kind,score,q_enrol,q_test,ocl\ngenuine,1,0.5,0.5,0.2\nimpostor,0,0.5,0.5,0.3\n")
    code, _, err = run(["evaluate", path, "--quality-key", "qf"], capsys)
    assert code == cli.EXIT_CONFIG and "available: pair, ocl" in err


def test_evaluate_bad_row(tmp_path, capsys):
    path = tmp_path / "s.csv"
    path.write_text("kind,score,q_enrol,q_test\ngenuine,1,0.5,0.5\nimpostor,x,0.5,0.5\n")
    code, _, err = run(["evaluate", path], capsys)
    assert code == cli.EXIT_PARTIAL and "row 3" in err


def test_evaluate_subject_separation(tmp_path, capsys):
    path = tmp_path / "s.csv"
    path.write_text("kind,score,q_enrol,q_test,subject\n"
                    "genuine,10,1,1,a\nimpostor,1,1,1,a\nimpostor,2,1,1,a\nimpostor,3,1,1,a\n"
                    "genuine,5,1,1,b\nimpostor,2,1,1,b\nimpostor,2,1,1,b\n")
    out_path = tmp_path / "curve.csv"
    code, _, _ = run(["evaluate", path, "--fractions", "0", "--fixed-far", "0.5", "--fixed-frr", "0.5",
                      "--out", out_path], capsys)
    assert code == 0
    rows = (tmp_path / "curve.csv.separation.csv").read_text().splitlines()
    assert rows[0] == "subject,genuine_score,separation,note"
    assert rows[1].startswith("a,10.0,9.797958971")
    assert rows[2].startswith("b,5.0,,") and "standard deviation" in rows[2]


# -------------------------------------------------------------------- synth


def test_synth_image_and_sidecar(tmp_path, capsys):
    out = tmp_path / "g.pgm"
    code, _, _ = run(["synth", "grating", "--width", "64", "--height", "64", "--period", "8", "--angle", "30",
                      "--noise", "5", "--seed", "4", "--out", out], capsys)
    assert code == 0
    meta = (tmp_path / "g.pgm.meta").read_text().splitlines()
    assert meta[:3] == ["generator=grating", "rng=numpy.PCG64", "seed=4"]
    assert "period=8.0" in meta and "noise_sigma=5.0" in meta
    img = load_image(out)
    expected = synth.degrade(synth.generate_grating(64, 64, np.deg2rad(30), 8), synth.DegradationSpec(5), 4)
    assert img == expected


def test_synth_scores(tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert run(["synth", "scores", "--n-genuine", "20", "--n-impostor", "30", "--out", out], capsys)[0] == 0
    assert len(out.read_text().splitlines()) == 51


def test_synth_invalid_parameters(tmp_path, capsys):
    code, _, _ = run(["synth", "grating", "--period", "1", "--out", tmp_path / "x.pgm"], capsys)
    assert code == cli.EXIT_CONFIG
