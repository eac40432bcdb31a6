import numpy as np
import pytest

from conftest import binary_grating, white_noise
from fpqual import localmetrics as lm
from fpqual import synth
from fpqual.errors import ConfigError
from fpqual.imagecore import BlockGrid, DirectionField, GrayImage, SegmentationMask, direction_field, segment_foreground
from fpqual.synth import DegradationSpec, degrade, generate_grating


def _setup(img):
    grid = BlockGrid.for_image(img)
    return grid, direction_field(img, grid), segment_foreground(img, grid)


FLAT = GrayImage(np.full((64, 64), 128, np.uint8))


# ------------------------------------------------------------------- maps


def test_map_csv_marks_background_empty():
    bqm = lm.BlockQualityMap(BlockGrid(16, 2, 2), np.array([[0.5, np.nan], [1.0, 0.25]]))
    assert bqm.to_csv() == "0.500000,\n1.000000,0.250000\n"
    assert bqm.heatmap().tolist() == [[128, 0], [255, 64]]


def test_map_shape_checked():
    with pytest.raises(ValueError):
        lm.BlockQualityMap(BlockGrid(16, 2, 2), np.zeros((3, 2)))


def test_maps_share_grid(whorl):
    img, _ = whorl
    grid, field, mask = _setup(img)
    shapes = {lm.ocl_map(img, grid, field, mask).map.values.shape,
              lm.coherence_map(img, grid, mask).map.values.shape,
              lm.loq_map(field, mask, grid).map.values.shape,
              lm.gabor_quality(img, grid, mask=mask).map.values.shape,
              lm.local_clarity(img, grid, field, mask).map.values.shape}
    assert shapes == {grid.shape}


# -------------------------------------------------------------------- OCL


def test_ocl_clean_grating(grating8):
    grid, field, mask = _setup(grating8)
    assert lm.ocl_map(grating8, grid, field, mask).score > 0.9


def test_ocl_white_noise():
    scores = [lm.ocl_map(img, BlockGrid.for_image(img)).score for img in (white_noise(s) for s in range(100))]
    assert np.percentile(scores, 99) < 0.3


def test_ocl_flat_image_warns():
    res = lm.ocl_map(FLAT, BlockGrid.for_image(FLAT))
    assert res.score == 0.0
    assert any("empty foreground" in w for w in res.warnings)


# --------------------------------------------------------------- geometry


@pytest.mark.parametrize("period", [8, 4])
def test_geometry_frequency(period):
    g = generate_grating(256, 256, np.deg2rad(30), period)
    grid, field, mask = _setup(g)
    geom = lm.ridge_geometry(g, grid, field, mask)
    inner = geom.frequency[2:-2, 2:-2]
    assert np.all(np.abs(inner - 1 / period) <= 1 / 32 + 1e-12)


def test_geometry_ratio_of_even_duty_grating(grating8):
    grid, field, mask = _setup(grating8)
    geom = lm.ridge_geometry(grating8, grid, field, mask)
    assert geom.defined.all()
    assert np.all(np.abs(geom.ratio - 1.0) <= 0.15)
    assert np.all(geom.thickness > 0) and np.all(geom.frequency > 0)


def test_geometry_of_uneven_duty():
    # 2 dark, 6 light per period; level 191 crossings on the linearly
    # interpolated samples give runs of 2.5 and 5.5 px
    rows = np.where(np.arange(256) % 8 < 2, 0, 255).astype(np.uint8)
    img = GrayImage(np.repeat(rows[:, None], 256, axis=1))
    grid, field, mask = _setup(img)
    geom = lm.ridge_geometry(img, grid, field, mask)
    assert np.nanmedian(geom.ratio) == pytest.approx(5 / 11, abs=0.01)


def test_geometry_undefined_on_flat_signature():
    assert np.isnan(lm.signature_geometry(np.full(32, 100.0))).all()


def test_dominant_frequency_of_pure_tone():
    t = np.arange(32)
    f, ratio = lm.dominant_frequency(np.cos(2 * np.pi * t / 8))
    assert f == 1 / 8 and ratio == pytest.approx(1.0)


# --------------------------------------------------------------------- S_L


def test_sl_clean_grating_all_good(grating8):
    grid, field, mask = _setup(grating8)
    ocl = lm.ocl_map(grating8, grid, field, mask)
    res = lm.block_classification_sl(ocl.map, lm.ridge_geometry(grating8, grid, field, mask))
    assert res.score == 1.0
    assert set(res.map.labels.ravel()) == {lm.GOOD}


def test_sl_all_blank_warns():
    grid, field, mask = _setup(FLAT)
    ocl = lm.ocl_map(FLAT, grid, field, mask)
    res = lm.block_classification_sl(ocl.map, lm.ridge_geometry(FLAT, grid, field, mask))
    assert res.score == 0.0 and res.warnings
    assert set(res.map.labels.ravel()) == {lm.BLANK}


def test_sl_formula():
    assert lm.sl_score([lm.GOOD, lm.BAD, lm.GOOD, lm.BAD, lm.BLANK]) == 0.5
    assert lm.sl_score([lm.GOOD, lm.UNDETERMINED]) == 0.75
    assert lm.sl_score([lm.BLANK]) == 0.0


def test_sl_labels_count_failures():
    grid = BlockGrid(16, 1, 3)
    ocl = lm.BlockQualityMap(grid, np.array([[0.9, 0.9, 0.1]]))
    geom = lm.RidgeGeometry(grid, np.array([[0.125, 0.125, 0.125]]), np.array([[4.0, 4.0, 30.0]]),
                            np.array([[1.0, 5.0, 1.0]]))
    res = lm.block_classification_sl(ocl, geom)
    assert res.map.labels.tolist() == [[lm.GOOD, lm.UNDETERMINED, lm.BAD]]
    assert res.score == pytest.approx(0.5)


# --------------------------------------------------------------------- LOQ


def test_loq_uniform_field():
    grid = BlockGrid(16, 4, 4)
    f = DirectionField(np.full((4, 4), 0.3), np.ones((4, 4)))
    res = lm.loq_map(f, SegmentationMask(np.ones((4, 4), bool)), grid)
    assert res.score == 1.0


def test_loq_checkerboard():
    ang = np.indices((4, 4)).sum(axis=0) % 2 * (np.pi / 2)
    grid = BlockGrid(16, 4, 4)
    res = lm.loq_map(DirectionField(ang, np.ones((4, 4))), SegmentationMask(np.ones((4, 4), bool)), grid)
    # diagonal neighbours share an angle, edge neighbours differ by pi/2
    q = res.map.values
    assert q[1, 1] == pytest.approx(0.5)
    full = lm.loq_map(DirectionField(ang, np.ones((4, 4))), SegmentationMask(np.ones((4, 4), bool)), grid)
    assert full.score < 0.6


def test_loq_isolated_block_excluded():
    mask = SegmentationMask(np.array([[True, False, False], [False, False, True], [False, False, True]]))
    res = lm.loq_map(DirectionField(np.zeros((3, 3)), np.ones((3, 3))), mask, BlockGrid(16, 3, 3))
    assert np.isnan(res.map.values[0, 0])
    assert res.score == 1.0


def test_goqs_whorl(whorl):
    img, _ = whorl
    grid, field, mask = _setup(img)
    assert lm.loq_map(field, mask, grid).score >= 0.85


# --------------------------------------------------------------- coherence


def test_qs_grating_and_noise(grating8):
    grid, _, mask = _setup(grating8)
    assert lm.coherence_map(grating8, grid, mask).score > 0.9
    noise = [lm.coherence_map(img, BlockGrid.for_image(img)).score for img in (white_noise(s) for s in range(20))]
    assert max(noise) < 0.3


def test_qs_flat_warns():
    res = lm.coherence_map(FLAT, BlockGrid.for_image(FLAT))
    assert res.score == 0.0 and res.warnings


# ------------------------------------------------------------------- Gabor


@pytest.mark.parametrize("k", [0, 2, 5])
def test_gabor_aligned_grating(k):
    g = generate_grating(256, 256, k * np.pi / 8, 10)
    assert lm.gabor_quality(g, BlockGrid.for_image(g)).score == 1.0


def test_gabor_white_noise():
    scores = [lm.gabor_quality(img, BlockGrid.for_image(img)).score for img in (white_noise(s) for s in range(20))]
    assert max(scores) < 0.2


@pytest.mark.parametrize("kwargs", [dict(sigma=0), dict(sigma=-1), dict(m=3), dict(frequency=0)])
def test_gabor_config_errors(grating8, kwargs):
    with pytest.raises(ConfigError):
        lm.gabor_quality(grating8, BlockGrid.for_image(grating8), **kwargs)


def test_gabor_kernels_have_zero_dc():
    k = lm.gabor_kernels(8, 0.1, 4.0)
    assert k.shape == (8, 25, 25)
    assert np.abs(k.sum(axis=(1, 2))).max() < 1e-12


# ------------------------------------------------------- variance, contrast


def test_variance_contrast_flat():
    grid, field, mask = _setup(FLAT)
    var, con = lm.variance_contrast(FLAT, grid, field, mask)
    assert var.score == 0.0 and con.score == 0.0


def test_contrast_full_grating(grating8):
    grid, field, mask = _setup(grating8)
    _, con = lm.variance_contrast(grating8, grid, field, mask)
    assert con.score > 0.9


def test_binary_block_variance_is_one():
    px = np.zeros((32, 32), np.uint8)
    px[:, 8:16] = px[:, 24:] = 255
    img = GrayImage(px)
    grid, field, mask = _setup(img)
    var, _ = lm.variance_contrast(img, grid, field, mask)
    assert np.all(var.map.values == 1.0)


def test_variance_discounts_white_noise(whorl):
    img, _ = whorl
    grid, field, mask = _setup(img)
    clean = lm.variance_contrast(img, grid, field, mask)[0].score
    noisy_img = degrade(img, DegradationSpec(noise_sigma=40), 1)
    noisy = lm.variance_contrast(noisy_img, grid, direction_field(noisy_img, grid), mask)[0].score
    assert noisy < clean


# ----------------------------------------------------------------- clarity


def test_binary_grating_alpha_zero():
    img = binary_grating()
    grid, field, mask = _setup(img)
    res = lm.local_clarity(img, grid, field, mask)
    assert np.all(lm.clarity_alpha(res) == 0.0)
    assert res.score == 1.0


def test_full_contrast_grating_alpha_small(grating8):
    grid, field, mask = _setup(grating8)
    alpha = lm.clarity_alpha(lm.local_clarity(grating8, grid, field, mask))
    assert np.nanmax(alpha) < 0.15


def test_clarity_overlap_identical_classes():
    proj = np.array([-1.0, -0.5, 0.5, 1.0])
    sig = np.array([0.0, 10.0])
    offs = np.array([-1.0, 1.0])
    assert lm.clarity_overlap(np.array([50, 50, 50, 50.0]), proj, sig, offs) == 1.0
    assert lm.clarity_overlap(np.array([0, 0, 255, 255.0]), proj, sig, offs) == 0.0


def test_clarity_one_sided_block_excluded():
    proj = np.array([0.5, 1.0])
    assert np.isnan(lm.clarity_overlap(np.array([1.0, 2.0]), proj, np.array([0.0, 10.0]), np.array([-1.0, 1.0])))


def test_low_contrast_noisy_block_overlaps_more():
    a = []
    for contrast in (0.15, 1.0):
        g = generate_grating(256, 256, 0.5, 8, contrast=contrast)
        vals = []
        for s in range(5):
            d = degrade(g, DegradationSpec(noise_sigma=15), s)
            grid, field, mask = _setup(d)
            vals.append(np.nanmean(lm.clarity_alpha(lm.local_clarity(d, grid, field, mask))))
        a.append(np.mean(vals))
    assert a[0] > a[1]


# ------------------------------------------------------------ sinusoid check


def test_sinusoid_in_band_all_pass(grating8):
    grid, field, mask = _setup(grating8)
    res = lm.sinusoid_spectrum_check(grating8, grid, field, mask=mask)
    assert res.score == 1.0


def test_sinusoid_out_of_band_all_fail():
    g = generate_grating(320, 320, np.deg2rad(10), 40)
    grid, field, _ = _setup(g)
    mask = SegmentationMask(np.ones(grid.shape, bool))
    res = lm.sinusoid_spectrum_check(g, grid, field, mask=mask)
    assert res.score == 0.0


def test_sinusoid_white_noise():
    scores = [lm.sinusoid_spectrum_check(img, *(_setup(img)[:2])).score for img in (white_noise(s) for s in range(20))]
    assert max(scores) < 0.2


def test_sinusoid_band_validated(grating8):
    grid, field, _ = _setup(grating8)
    with pytest.raises(ConfigError):
        lm.sinusoid_spectrum_check(grating8, grid, field, band=(0.3, 0.1))


# -------------------------------------------------------------- properties


def _globals(img):
    grid, field, mask = _setup(img)
    return {"ocl": lm.ocl_map(img, grid, field, mask).score,
            "qs": lm.coherence_map(img, grid, mask).score,
            "gcs": lm.local_clarity(img, grid, field, mask).score,
            "gabor_qi": lm.gabor_quality(img, grid, mask=mask).score}


@pytest.mark.parametrize("base", [0, 20, 45, 80])
def test_rotation_robustness(base):
    a = _globals(generate_grating(256, 256, np.deg2rad(base), 8))
    b = _globals(generate_grating(256, 256, np.deg2rad(base + 15), 8))
    for k in a:
        assert abs(a[k] - b[k]) <= 0.1, k


def test_ranking_survives_affine_contrast(whorl):
    img, _ = whorl
    good, bad = img, degrade(img, DegradationSpec(noise_sigma=60), 3)
    sg, sb = _globals(good), _globals(bad)
    for a in (0.8, 1.25):
        mg = _globals(GrayImage(np.clip(128 + a * (good.as_float() - 128), 0, 255)))
        mb = _globals(GrayImage(np.clip(128 + a * (bad.as_float() - 128), 0, 255)))
        for k in sg:
            if abs(sg[k] - sb[k]) > 0.2:
                assert (mg[k] > mb[k]) == (sg[k] > sb[k]), k


def test_scores_deterministic(whorl):
    img, _ = whorl
    assert _globals(img) == _globals(img)
