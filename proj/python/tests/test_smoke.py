import numpy as np
import pytest

import cxrpatch


def two_lungs(w=120, h=100):
    img = np.full((h, w), 200, dtype=np.uint8)
    img[10:90, 10:50] = 40
    img[10:90, 70:110] = 40
    return img


def test_segment_and_boxes():
    img = two_lungs()
    mask = cxrpatch.segment_lungs(img)
    assert mask.shape == img.shape
    assert cxrpatch.iou(mask, (img < 128).astype(np.uint8)) == 1.0
    left, right = cxrpatch.lung_boxes(mask)
    assert left == (10, 10, 40, 80)
    assert right == (70, 10, 40, 80)


def test_grid_and_labels():
    left, right = (0, 0, 100, 200), (150, 0, 100, 200)
    assert len(cxrpatch.build_grid(left, right)) == 16
    assert len(cxrpatch.build_grid(left, right, patches=6)) == 6
    grid = cxrpatch.build_grid(left, right, overlap=0.0)
    assert grid[0] == (0, 0, 50, 50)
    labels = cxrpatch.assign_patch_labels(left, right, [(10, 60, 10, 10)], overlap=0.0)
    assert [i for i, v in enumerate(labels) if v] == [2]


def test_metrics_fixture():
    scores, truth = [0.9, 0.4, 0.6, 0.2], [True, True, False, False]
    assert cxrpatch.auroc(scores, truth) == 0.75
    assert cxrpatch.aupr(scores, truth) == pytest.approx(5 / 6, abs=1e-15)
    assert cxrpatch.sens_spec(scores, truth, 0.9) == (0.0, 1.0)


def test_schedule():
    assert cxrpatch.lr_at(0) == 0.001
    assert cxrpatch.lr_at(20) == 0.001
    assert abs(cxrpatch.lr_at(40, eta_min=1e-4) - 0.00055) < 1e-15


def test_errors_carry_codes():
    with pytest.raises(cxrpatch.CxrError) as info:
        cxrpatch.segment_lungs(np.full((50, 50), 128, dtype=np.uint8))
    assert info.value.code == "segmentation-failed"
    with pytest.raises(cxrpatch.CxrError):
        cxrpatch.build_grid((0, 0, 10, 10), (20, 0, 10, 10), patches=9)


def test_synthetic_round_trip(tmp_path):
    ids = cxrpatch.generate_synthetic(3, 11, tmp_path)
    assert ids == ["case_0000", "case_0001", "case_0002"]
    img = cxrpatch.load_pgm(tmp_path / "images" / "case_0000.pgm")
    assert img.shape == (256, 256)
    assert cxrpatch.segment_lungs(img).max() == 1
    cxrpatch.save_pgm(img, tmp_path / "copy.pgm")
    assert (cxrpatch.load_pgm(tmp_path / "copy.pgm") == img).all()
