import numpy as np
import pytest
import scipy.fft

from qafilter.codec import (
    DatasetSpec,
    QuantizerConfig,
    dct2,
    encode_decode,
    extract_patches,
    fit_loglog_slope,
    idct2,
    level_entropy_bits,
    load_dataset,
    noise_power_scan,
    prepare_dataset,
    quantize_coeff,
    quantize_levels,
    read_pgm,
    read_sample_store,
    synthetic_image,
    write_pgm,
    write_sample_store,
)
from qafilter.modulation import qstep_from_qp


# ---------------------------------------------------------------------------
# transform


def test_dct_inverse_pair():
    rng = np.random.default_rng(0)
    b = rng.uniform(0, 255, size=(8, 8))
    np.testing.assert_allclose(idct2(dct2(b)), b, atol=1e-10)


def test_dct_constant_block_goes_to_dc():
    b = np.full((8, 8), 7.0)
    c = dct2(b)
    assert abs(c[0, 0] - 7.0 * 8) < 1e-10
    ac = c.copy()
    ac[0, 0] = 0
    assert np.abs(ac).max() < 1e-10


def test_dct_parseval():
    rng = np.random.default_rng(1)
    for _ in range(10):
        b = rng.standard_normal((8, 8)) * 50
        assert abs(np.sum(b * b) - np.sum(dct2(b) ** 2)) < 1e-8


def test_dct_matches_scipy_orthonormal():
    rng = np.random.default_rng(2)
    for n in (4, 8, 16):
        b = rng.standard_normal((n, n))
        want = scipy.fft.dctn(b, norm="ortho")
        np.testing.assert_allclose(dct2(b), want, atol=1e-12)
        np.testing.assert_allclose(idct2(b), scipy.fft.idctn(b, norm="ortho"), atol=1e-12)


def test_dct_rejects_non_square():
    with pytest.raises(ValueError):
        dct2(np.zeros((4, 8)))


# ---------------------------------------------------------------------------
# quantizer


def test_quantize_example_values():
    assert quantize_levels(10.3, 8.0, 0.5) == 1
    assert quantize_coeff(10.3, 8.0, 0.5) == 8.0
    assert quantize_coeff(-10.3, 8.0, 0.5) == -8.0
    assert quantize_coeff(0.0, 3.7) == 0.0


def test_unit_step_keeps_integers():
    # qp=4 gives qstep exactly 1; integers are fixed points of half-up rounding
    assert qstep_from_qp(4) == 1.0
    c = np.arange(-10, 11, dtype=np.float64)
    np.testing.assert_array_equal(quantize_coeff(c, 1.0, 0.5), c)


def test_quantizer_config_validation():
    with pytest.raises(ValueError):
        QuantizerConfig(qp=64)
    with pytest.raises(ValueError):
        QuantizerConfig(qp=22, block_size=1)
    with pytest.raises(ValueError):
        QuantizerConfig(qp=22, offset=0.7)


def test_level_entropy_zero_for_constant_alphabet():
    assert level_entropy_bits(np.zeros(100, dtype=np.int64)) == 0.0
    # two equiprobable symbols: exactly 1 bit
    assert abs(level_entropy_bits(np.array([0, 1] * 50)) - 1.0) < 1e-12


# ---------------------------------------------------------------------------
# codec round trip


def test_zero_image_has_zero_rate():
    recon, rate = encode_decode(np.zeros((16, 16)), QuantizerConfig(qp=30))
    assert rate == 0.0
    assert np.abs(recon).max() < 1e-9


def test_constant_image_survives_and_ac_adds_nothing():
    img = np.full((32, 32), 200.0)
    cfg = QuantizerConfig(qp=51)
    recon, _ = encode_decode(img, cfg)
    assert np.abs(recon - 200.0).max() < cfg.qstep / 8  # near-constant
    coeffs = dct2(img.reshape(4, 8, 4, 8).swapaxes(1, 2).reshape(-1, 8, 8))
    levels = quantize_levels(coeffs, cfg.qstep)
    ac = levels.reshape(-1, 64)[:, 1:]
    assert np.all(ac == 0)
    assert level_entropy_bits(ac) == 0.0  # all-zero levels carry no rate


def test_rate_and_distortion_monotone_in_qp():
    img = synthetic_image(128, seed=9).astype(np.float64)
    rates, mses = [], []
    for qp in (22, 27, 32, 37):
        recon, rate = encode_decode(img, QuantizerConfig(qp=qp))
        rates.append(rate)
        mses.append(float(np.mean((recon - img) ** 2)))
    assert rates[0] > rates[1] > rates[2] > rates[3]
    assert mses[0] < mses[1] < mses[2] < mses[3]


def test_noise_variance_tracks_uniform_model_on_images():
    # high-variance input keeps the quantizer out of its dead zone
    rng = np.random.default_rng(4)
    img = rng.uniform(0, 255, size=(256, 256))
    for qp in (22, 27, 32, 37):
        recon, _ = encode_decode(img, QuantizerConfig(qp=qp))
        mse = float(np.mean((recon - img) ** 2))
        model = qstep_from_qp(qp) ** 2 / 12.0
        assert model / 2 < mse < model * 2


def test_requantization_is_nearly_idempotent():
    img = synthetic_image(128, seed=5).astype(np.float64)
    cfg = QuantizerConfig(qp=32)
    recon1, _ = encode_decode(img, cfg)
    recon2, _ = encode_decode(recon1, cfg)
    mse1 = float(np.mean((recon1 - img) ** 2))
    mse2 = float(np.mean((recon2 - img) ** 2))
    assert abs(mse2 - mse1) / mse1 < 0.05


def test_encode_decode_rejects_empty_and_non_2d():
    with pytest.raises(ValueError):
        encode_decode(np.zeros((0, 8)), QuantizerConfig(qp=22))
    with pytest.raises(ValueError):
        encode_decode(np.zeros((4, 4, 1)), QuantizerConfig(qp=22))


# ---------------------------------------------------------------------------
# noise power law


def test_ideal_uniform_noise_slope_is_two():
    # var = step^2 / 12 exactly: the fitted log-log slope must be 2
    qsteps = np.array([qstep_from_qp(q) for q in (22, 27, 32, 37)])
    assert abs(fit_loglog_slope(qsteps, qsteps ** 2 / 12.0) - 2.0) < 1e-12


def test_measured_noise_slope():
    scan = noise_power_scan((22, 27, 32, 37), n_coeffs=1 << 20, seed=0)
    assert abs(scan.slope - 2.0) < 0.05
    assert np.all(scan.band_slopes > 1.8) and np.all(scan.band_slopes < 2.2)


def test_noise_scan_validation():
    with pytest.raises(ValueError):
        noise_power_scan((22, 27))
    with pytest.raises(ValueError):
        noise_power_scan((22, 27, 32), sigma=0.0)


# ---------------------------------------------------------------------------
# images and stores


def test_synthetic_image_deterministic_uint8():
    a = synthetic_image(64, seed=3, index=2)
    b = synthetic_image(64, seed=3, index=2)
    np.testing.assert_array_equal(a, b)
    assert a.dtype == np.uint8
    assert synthetic_image(64, seed=3, index=3).std() > 0


def test_pgm_roundtrip_and_comments(tmp_path):
    rng = np.random.default_rng(6)
    img = rng.integers(0, 256, size=(9, 13), dtype=np.uint8)
    path = tmp_path / "t.pgm"
    write_pgm(path, img)
    np.testing.assert_array_equal(read_pgm(path), img)
    # header comments are legal
    raw = (b"P5\n# a comment\n13 9\n# another\n255\n" + img.tobytes())
    path2 = tmp_path / "c.pgm"
    path2.write_bytes(raw)
    np.testing.assert_array_equal(read_pgm(path2), img)


def test_pgm_rejects_wrong_depth(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"P5\n2 2\n65535\n\x00\x00\x00\x00\x00\x00\x00\x00")
    with pytest.raises(ValueError, match="maxval"):
        read_pgm(path)


def test_sample_store_roundtrip(tmp_path):
    rng = np.random.default_rng(7)
    orig = rng.integers(0, 256, size=(4, 16, 16), dtype=np.uint8)
    recon = rng.integers(0, 256, size=(4, 16, 16), dtype=np.uint8)
    path = tmp_path / "s.qsim"
    write_sample_store(path, 16, 27, orig, recon)
    patch, qp, o2, r2 = read_sample_store(path)
    assert (patch, qp) == (16, 27)
    np.testing.assert_array_equal(o2, orig)
    np.testing.assert_array_equal(r2, recon)
    header = path.read_bytes().split(b"\n", 1)[0]
    assert header == b"QSIM1 16 27 4"


def test_extract_patches_counts_and_padding():
    img = np.arange(128 * 128, dtype=np.uint8).reshape(128, 128)
    assert extract_patches(img, 64).shape == (4, 64, 64)
    # 100x100 pads up to 128x128
    assert extract_patches(np.zeros((100, 100)), 64).shape == (4, 64, 64)
    with pytest.raises(ValueError, match="smaller"):
        extract_patches(np.zeros((40, 100)), 64)


def test_prepare_dataset_counts_split_and_determinism(tmp_path):
    spec = DatasetSpec(qps=(22, 37), patch=64, count=8, size=128, seed=1)
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    counts = prepare_dataset(spec, out_a)
    assert counts[22]["train"] + counts[22]["val"] == 8 * 4  # 4 patches per image
    prepare_dataset(spec, out_b)
    for fa in sorted(out_a.iterdir()):
        fb = out_b / fa.name
        assert fa.read_bytes() == fb.read_bytes()  # byte-identical regeneration
    train_imgs = {f.name.split("_")[1] for f in out_a.iterdir() if f.name.startswith("train_")}
    val_imgs = {f.name.split("_")[1] for f in out_a.iterdir() if f.name.startswith("val_")}
    assert train_imgs and val_imgs
    assert not (train_imgs & val_imgs)  # split is by image


def test_load_dataset_groups_by_split_and_qp(tmp_path):
    spec = DatasetSpec(qps=(22, 37), patch=32, count=4, size=64, seed=2)
    prepare_dataset(spec, tmp_path)
    data = load_dataset(tmp_path)
    assert data["patch"] == 32
    assert set(data["train"]) == {22, 37}
    orig, recon = data["train"][22]
    assert orig.shape == recon.shape
    assert orig.dtype == np.uint8
    n_train = orig.shape[0]
    n_val = data["val"][22][0].shape[0]
    assert n_train + n_val == 4 * 4


def test_dataset_from_pgm_directory(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    for i in range(3):
        write_pgm(src / f"im{i}.pgm", synthetic_image(96, seed=8, index=i))
    spec = DatasetSpec(qps=(32,), patch=32, source_dir=str(src), val_frac=0.34)
    counts = prepare_dataset(spec, tmp_path / "out")
    assert counts[32]["train"] == 2 * 9  # 96x96 -> 9 patches of 32
    assert counts[32]["val"] == 1 * 9
