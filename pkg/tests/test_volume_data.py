import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsmtae.exceptions import DSMTError, FormatError, MetadataError, ParameterError
from dsmtae.volume_data import (
    AugmentationConfig,
    PhantomConfig,
    VolumePreprocessor,
    VolumeSample,
    augment,
    crop_to_content,
    generate_cohort,
    generate_phantom,
    load_volume,
    make_split,
    normalize,
    phantom_geometry,
    preprocess_volume,
    read_label_table,
    read_manifest,
    read_phantom_file,
    resample_to_cube,
    sample_rng,
    write_label_table,
    write_manifest,
    write_phantom_file,
)
from dsmtae.volume_data.augment import erase_cube, flip

from .conftest import small_phantom_config


def _sample(v, age=40.0, sex=0, sid="s"):
    return VolumeSample(np.asarray(v, dtype=np.float32), age, sex, sid)


# ---- VolumeSample -------------------------------------------------------------

@pytest.mark.parametrize("age,sex", [(0.0, 0), (-3.0, 1), (30.0, 2)])
def test_sample_rejects_bad_labels(age, sex):
    with pytest.raises(DSMTError):
        VolumeSample(np.zeros((4, 4, 4)), age, sex)


def test_sample_rejects_non_3d():
    with pytest.raises(DSMTError):
        VolumeSample(np.zeros((4, 4)), 30.0, 0)


# ---- crop ---------------------------------------------------------------------

def test_crop_box_matches_brute_force_scan():
    v = np.zeros((64, 64, 64), dtype=np.float32)
    v[10:20, 10:20, 10:20] = 1.0
    res = crop_to_content(v, margin=2)
    # brute force: min / max nonzero index per axis
    idx = np.argwhere(v > 0)
    expected = tuple((int(idx[:, a].min()) - 2, int(idx[:, a].max()) + 1 + 2) for a in range(3))
    assert res.box == expected == ((8, 22),) * 3
    assert res.volume.shape == (14, 14, 14)
    assert not res.empty


def test_crop_tight_volume_margin_zero_is_identity():
    v = np.random.default_rng(0).uniform(0.1, 1.0, (7, 5, 6))
    res = crop_to_content(v, margin=0)
    np.testing.assert_array_equal(res.volume, v)


def test_crop_all_zero_returns_full_volume_with_flag():
    v = np.zeros((8, 8, 8))
    with pytest.warns(RuntimeWarning):
        res = crop_to_content(v, margin=2)
    assert res.empty
    assert res.volume.shape == v.shape


def test_crop_margin_clamped_to_bounds():
    v = np.zeros((10, 10, 10))
    v[0, 9, 5] = 1
    res = crop_to_content(v, margin=3)
    assert res.box == ((0, 4), (6, 10), (2, 9))


# ---- resample -----------------------------------------------------------------

def test_resample_constant_field_stays_constant():
    v = np.full((32, 32, 32), 0.37)
    out = resample_to_cube(v, 96)
    assert out.shape == (96, 96, 96)
    np.testing.assert_allclose(out, 0.37, atol=1e-12)


def test_resample_same_side_is_identity():
    v = np.random.default_rng(1).random((96, 96, 96))
    np.testing.assert_allclose(resample_to_cube(v, 96), v, atol=1e-6)


def test_resample_preserves_linear_ramp():
    n, side = 32, 16
    ramp = np.broadcast_to(np.arange(n, dtype=np.float64)[:, None, None], (n, n, n))
    out = resample_to_cube(ramp, side)
    # trilinear interpolation is exact on a linear field: value = sample coordinate
    coords = np.arange(side) * (n - 1) / (side - 1)
    np.testing.assert_allclose(out[:, 3, 7], coords, atol=1e-6)
    np.testing.assert_allclose(out, np.broadcast_to(coords[:, None, None], out.shape), atol=1e-6)


def test_resample_rejects_bad_side():
    with pytest.raises(ParameterError):
        resample_to_cube(np.zeros((4, 4, 4)), 1)


# ---- normalize ----------------------------------------------------------------

def test_normalize_halves_zero_to_two():
    v = np.array([0.0, 0.5, 1.0, 2.0]).reshape(1, 2, 2)
    np.testing.assert_allclose(normalize(v), v / 2)


def test_normalize_unit_range_unchanged():
    v = np.random.default_rng(2).random((5, 5, 5))
    v.flat[0], v.flat[1] = 0.0, 1.0
    np.testing.assert_allclose(normalize(v), v, atol=1e-15)


def test_normalize_constant_volume_is_zero():
    np.testing.assert_array_equal(normalize(np.full((3, 3, 3), 4.2)), 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-50, 50), st.floats(0.01, 100))
def test_preprocess_output_in_unit_cube(seed, shift, scale):
    v = np.random.default_rng(seed).random((9, 11, 7)) * scale + shift
    out = preprocess_volume(v, side=8, crop=False)
    assert out.shape == (8, 8, 8)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_preprocessor_transformer_stacks_volumes():
    rng = np.random.default_rng(0)
    X = [rng.random((10, 12, 9)), rng.random((8, 8, 8))]
    out = VolumePreprocessor(side=6, crop=False).fit(X).transform(X)
    assert out.shape == (2, 6, 6, 6)


# ---- augment ------------------------------------------------------------------

def test_identity_augmentation_returns_input():
    v = np.random.default_rng(0).random((12, 12, 12)).astype(np.float32)
    cfg = AugmentationConfig(flip_prob_per_axis=(0, 0, 0), rotation_range_deg=(0, 0), zoom_range=(1, 1),
                             erase_enabled=False)
    out = augment(_sample(v), cfg, np.random.default_rng(5))
    np.testing.assert_array_equal(out.voxels, v)


def test_flip_twice_is_involution():
    v = np.random.default_rng(0).random((6, 7, 8))
    np.testing.assert_array_equal(flip(flip(v, [0]), [0]), v)


def test_flip_always_along_axis0_twice_restores():
    v = np.random.default_rng(0).random((6, 6, 6)).astype(np.float32)
    cfg = AugmentationConfig(flip_prob_per_axis=(1, 0, 0), rotation_prob=0, zoom_prob=0, erase_enabled=False)
    once = augment(_sample(v), cfg, np.random.default_rng(1))
    twice = augment(once, cfg, np.random.default_rng(1))
    np.testing.assert_array_equal(twice.voxels, v)


def test_erase_quarter_of_96_zeroes_24_cube():
    v = np.full((96, 96, 96), 0.5, dtype=np.float32)
    cfg = AugmentationConfig(flip_prob_per_axis=(0, 0, 0), rotation_prob=0, zoom_prob=0,
                             erase_prob=1.0, erase_side_fraction_range=(0.25, 0.25))
    out = augment(_sample(v), cfg, np.random.default_rng(3)).voxels
    zero = np.argwhere(out == 0)
    assert len(zero) == 24 ** 3
    extent = zero.max(axis=0) - zero.min(axis=0) + 1
    np.testing.assert_array_equal(extent, [24, 24, 24])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_augment_keeps_labels_shape_and_range(seed):
    v = np.random.default_rng(seed).random((10, 10, 10)).astype(np.float32)
    s = _sample(v, age=55.5, sex=1)
    out = augment(s, AugmentationConfig(), np.random.default_rng(seed))
    assert out.voxels.shape == v.shape
    assert (out.age, out.sex, out.subject_id) == (55.5, 1, "s")
    assert out.voxels.min() >= 0.0 and out.voxels.max() <= 1.0


def test_erase_cube_stays_inside():
    out = erase_cube(np.ones((5, 5, 5)), 2, (3, 3, 3))
    assert (out == 0).sum() == 8


def test_augmentation_config_rejects_bad_ranges():
    with pytest.raises(ValueError):
        AugmentationConfig(zoom_range=(1.2, 0.9))
    with pytest.raises(ValueError):
        AugmentationConfig(flip_prob_per_axis=(0.5, 1.5, 0))


# ---- phantoms -----------------------------------------------------------------

def test_phantom_is_deterministic():
    cfg = PhantomConfig(side=32)
    a = generate_phantom(50.0, 1, cfg, sample_rng(7, 0))
    b = generate_phantom(50.0, 1, cfg, sample_rng(7, 0))
    np.testing.assert_array_equal(a.voxels, b.voxels)


def test_phantom_geometry_is_monotone_in_age():
    cfg = PhantomConfig(side=32)
    young = phantom_geometry(20.0, 0, cfg, sample_rng(1, 0))
    old = phantom_geometry(80.0, 0, cfg, sample_rng(1, 0))
    assert old.ventricle_radius > young.ventricle_radius
    assert old.cortex_thickness < young.cortex_thickness


@settings(max_examples=40, deadline=None)
@given(st.floats(8, 88), st.floats(8, 88), st.integers(0, 1), st.integers(0, 10_000))
def test_phantom_monotonicity_property(a1, a2, sex, seed):
    if a1 == a2:
        return
    lo, hi = sorted((a1, a2))
    cfg = PhantomConfig(side=32)
    g_lo = phantom_geometry(lo, sex, cfg, sample_rng(seed, 0))
    g_hi = phantom_geometry(hi, sex, cfg, sample_rng(seed, 0))
    assert g_hi.ventricle_radius > g_lo.ventricle_radius
    assert g_hi.cortex_thickness < g_lo.cortex_thickness


def test_phantom_sex_scale_matches_cubed_offset():
    cfg = PhantomConfig(side=64, noise_sigma=0.0)
    f = generate_phantom(45.0, 0, cfg, sample_rng(11, 0)).voxels
    m = generate_phantom(45.0, 1, cfg, sample_rng(11, 0)).voxels
    ratio = (m > 0).sum() / (f > 0).sum()
    expected = (1 + cfg.sex_scale_delta) ** 3
    assert abs(ratio / expected - 1) < 0.02


def test_phantom_rejects_out_of_range_age():
    with pytest.raises(ParameterError):
        generate_phantom(120.0, 0, PhantomConfig(side=32))


def test_phantom_voxels_in_unit_range():
    s = generate_phantom(33.0, 1, PhantomConfig(side=32), sample_rng(0, 0))
    assert s.voxels.shape == (32, 32, 32)
    assert s.voxels.min() >= 0 and s.voxels.max() <= 1


def test_cohort_is_balanced_and_reproducible():
    cfg = PhantomConfig(side=16, noise_sigma=0.0)
    a = generate_cohort(6, cfg, seed=4)
    b = generate_cohort(6, cfg, seed=4)
    assert [s.sex for s in a] == [0, 1, 0, 1, 0, 1]
    assert [s.subject_id for s in a] == [f"sub-{i:05d}" for i in range(6)]
    for x, y in zip(a, b):
        assert x.age == y.age
        np.testing.assert_array_equal(x.voxels, y.voxels)


# ---- split --------------------------------------------------------------------

def _labels_only(ages, sexes):
    return [_sample(np.zeros((1, 1, 1)), a, s, f"id{i}") for i, (a, s) in enumerate(zip(ages, sexes))]


def test_split_100_at_20_percent():
    rng = np.random.default_rng(0)
    samples = _labels_only(rng.uniform(10, 80, 100), rng.integers(0, 2, 100))
    sp = make_split(samples, 0.2, rng_seed=1)
    assert len(sp.train_ids) == 80 and len(sp.val_ids) == 20
    assert not set(sp.train_ids) & set(sp.val_ids)
    assert set(sp.train_ids) | set(sp.val_ids) == {s.subject_id for s in samples}


def test_split_single_cell_keeps_sex_proportion():
    samples = _labels_only([42.0] * 10, [1] * 10)
    sp = make_split(samples, 0.3, rng_seed=0)
    assert len(sp.val_ids) == 3
    by_id = {s.subject_id: s for s in samples}
    assert np.mean([by_id[i].sex for i in sp.val_ids]) == np.mean([by_id[i].sex for i in sp.train_ids])


def test_split_exact_two_per_cell():
    ages, sexes = [], []
    for b in range(10):
        for sex in (0, 1):
            ages += [b * 10 + 5.0] * 10
            sexes += [sex] * 10
    samples = _labels_only(ages, sexes)
    sp = make_split(samples, 0.2, rng_seed=9)
    val = set(sp.val_ids)
    counts = {}
    for s in samples:
        if s.subject_id in val:
            key = (int(s.age // 10), s.sex)
            counts[key] = counts.get(key, 0) + 1
    assert len(counts) == 20 and set(counts.values()) == {2}


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 60), st.floats(0.05, 0.95), st.integers(0, 1000))
def test_split_is_partition(n, frac, seed):
    rng = np.random.default_rng(seed)
    samples = _labels_only(rng.uniform(1, 95, n), rng.integers(0, 2, n))
    sp = make_split(samples, frac, rng_seed=seed)
    ids = [s.subject_id for s in samples]
    assert sorted(sp.train_ids + sp.val_ids) == sorted(ids)
    assert len(sp.val_ids) == round(frac * n)


def test_split_empty_input_rejected():
    with pytest.raises(ParameterError):
        make_split([], 0.2)


# ---- file formats -------------------------------------------------------------

def test_phantom_file_round_trip_is_bit_exact(tmp_path):
    s = generate_phantom(61.25, 1, small_phantom_config(), sample_rng(0, 0), subject_id="sub-7")
    path = tmp_path / "sub-7.dsmt"
    write_phantom_file(path, s)
    back = load_volume(path)
    assert back.voxels.tobytes() == s.voxels.astype("<f4").tobytes()
    assert (back.age, back.sex, back.subject_id) == (61.25, 1, "sub-7")


def test_truncated_phantom_file_is_format_error(tmp_path):
    s = _sample(np.zeros((4, 4, 4)), sid="x")
    path = tmp_path / "x.dsmt"
    write_phantom_file(path, s)
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(FormatError):
        read_phantom_file(path)
    path.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(FormatError):
        read_phantom_file(path)


def _write_nifti(path, data):
    import nibabel as nib

    nib.save(nib.Nifti1Image(np.asarray(data, dtype=np.float32), np.eye(4)), str(path))


def test_nifti_with_label_row_loads(tmp_path):
    data = np.random.default_rng(0).random((5, 6, 7))
    _write_nifti(tmp_path / "sub-01.nii.gz", data)
    write_label_table(tmp_path / "labels.tsv", [{"subject_id": "sub-01", "age": 33.5, "sex": "f", "site": "a", "split": ""}])
    labels = read_label_table(tmp_path / "labels.tsv")
    s = load_volume(tmp_path / "sub-01.nii.gz", labels)
    assert (s.age, s.sex) == (33.5, 0)
    np.testing.assert_allclose(s.voxels, data, atol=1e-7)


def test_nifti_without_label_row_is_metadata_error(tmp_path):
    _write_nifti(tmp_path / "sub-02.nii", np.ones((3, 3, 3)))
    with pytest.raises(MetadataError):
        load_volume(tmp_path / "sub-02.nii", {})
    with pytest.raises(MetadataError):
        load_volume(tmp_path / "sub-02.nii", None)


def test_truncated_nifti_is_format_error(tmp_path):
    path = tmp_path / "sub-03.nii"
    _write_nifti(path, np.ones((8, 8, 8)))
    path.write_bytes(path.read_bytes()[:200])
    with pytest.raises(FormatError):
        load_volume(path, {"sub-03": {"age": 30.0, "sex": 1}})


def test_unknown_extension_is_format_error(tmp_path):
    p = tmp_path / "a.txt"
    p.write_text("x")
    with pytest.raises(FormatError):
        load_volume(p)


def test_manifest_round_trip(tmp_path):
    rows = [("volumes/a.dsmt", "a", "train"), ("volumes/b.dsmt", "b", "val")]
    write_manifest(tmp_path / "manifest.csv", rows)
    back = read_manifest(tmp_path / "manifest.csv")
    assert [(str(p), i, s) for p, i, s in back] == [(str(tmp_path / r), i, s) for r, i, s in rows]


def test_phantom_io_shape_guard():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        v = preprocess_volume(np.ones((4, 4, 4)), side=4, crop=True)
    assert v.shape == (4, 4, 4)
