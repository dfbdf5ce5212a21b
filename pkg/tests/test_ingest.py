import math

import numpy as np
import pytest
from PIL import Image

from ratslam.data.ingest import (
    EARTH_RADIUS,
    OdometryKind,
    gps_to_local,
    load_dataset,
    local_to_gps,
    read_frame,
    synchronize,
)
from ratslam.errors import DatasetError


def _write_dataset(root, frames=(0.0, 1.0, 2.0, 3.0), odometry=None, groundtruth=None, manifest_extra="", fmt="pgm"):
    images = root / "images"
    images.mkdir(parents=True, exist_ok=True)
    lines = ["timestamp,filename"]
    for k, t in enumerate(frames):
        name = f"f{k}.{fmt}"
        Image.fromarray(np.full((6, 8), 10 * k, dtype=np.uint8)).save(images / name)
        lines.append(f"{t!r},{name}")
    (root / "frames.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    if odometry is None:
        odometry = [(0.5, 1.0, 0.0), (1.0, 2.0, 0.1), (2.5, 3.0, 0.0), (4.0, 4.0, 0.0)]
    rows = ["timestamp,delta_s,delta_theta"] + [",".join(repr(v) for v in r) for r in odometry]
    (root / "odometry.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")

    manifest = [f"image_format = {fmt}"]
    if groundtruth is not None:
        rows = ["timestamp,x,y"] + [",".join(repr(v) for v in r) for r in groundtruth]
        (root / "groundtruth.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
        manifest.append('groundtruth = "groundtruth.csv"')
    (root / "dataset.toml").write_text("\n".join(manifest) + "\n" + manifest_extra, encoding="utf-8")
    return root


def test_load_dataset_reads_all_streams(tmp_path):
    root = _write_dataset(tmp_path, groundtruth=[(0.1, 0.0, 0.0), (1.9, 1.0, 1.0)])
    stream = load_dataset(root)
    assert len(stream) == 4
    np.testing.assert_array_equal(stream.frame_times, [0.0, 1.0, 2.0, 3.0])
    assert stream.odometry.shape == (4, 3)
    assert stream.ground_truth.shape == (2, 3)
    frame = stream.load_frame(2)
    assert (frame.height, frame.width) == (6, 8)
    assert frame.intensities[0, 0] == pytest.approx(20 / 255)


def test_synchronize_windows_and_ground_truth_join(tmp_path):
    gt = [(0.1, 0.0, 0.5), (1.9, 1.0, 1.5), (10.0, 2.0, 2.5)]
    stream = load_dataset(_write_dataset(tmp_path, groundtruth=gt))
    steps = synchronize(stream, gt_join_window=0.75)
    assert [s.index for s in steps] == [0, 1, 2, 3]
    # (f[k-1], f[k]] windows; the row after the last frame folds into the last step
    assert [s.delta_s for s in steps] == [0.0, 3.0, 0.0, 7.0]
    assert steps[1].delta_theta == pytest.approx(0.1)
    assert steps[0].ground_truth == (0.0, 0.5)
    assert steps[1].ground_truth is None
    assert steps[2].ground_truth == (1.0, 1.5)
    assert steps[3].ground_truth is None


def test_dataset_without_ground_truth(tmp_path):
    stream = load_dataset(_write_dataset(tmp_path))
    assert stream.ground_truth is None
    assert stream.ground_truth_xy() is None
    assert all(s.ground_truth is None for s in synchronize(stream))


def test_png_frames_and_resize(tmp_path):
    stream = load_dataset(_write_dataset(tmp_path, fmt="png"), resize=(4, 3))
    frame = stream.load_frame(0)
    assert (frame.height, frame.width) == (3, 4)


def test_missing_manifest(tmp_path):
    with pytest.raises(DatasetError, match="manifest"):
        load_dataset(tmp_path)


def test_bad_manifest_value(tmp_path):
    root = _write_dataset(tmp_path, manifest_extra="odometry_kind = wheel\n")
    with pytest.raises(DatasetError):
        load_dataset(root)


def test_non_monotonic_odometry(tmp_path):
    root = _write_dataset(tmp_path, odometry=[(1.0, 1.0, 0.0), (1.0, 1.0, 0.0)])
    with pytest.raises(DatasetError, match="strictly increasing"):
        load_dataset(root)


def test_non_monotonic_frames(tmp_path):
    with pytest.raises(DatasetError, match="strictly increasing"):
        load_dataset(_write_dataset(tmp_path, frames=(0.0, 2.0, 1.0)))


def test_bad_csv_header(tmp_path):
    root = _write_dataset(tmp_path)
    (root / "odometry.csv").write_text("t,ds,dth\n1.0,1.0,0.0\n", encoding="utf-8")
    with pytest.raises(DatasetError, match="header"):
        load_dataset(root)


def test_unreadable_image(tmp_path):
    root = _write_dataset(tmp_path)
    (root / "images" / "f1.pgm").write_bytes(b"not an image")
    stream = load_dataset(root)
    with pytest.raises(DatasetError, match="unreadable image"):
        stream.load_frame(1)
    with pytest.raises(DatasetError):
        read_frame(root / "images" / "missing.pgm")


def test_heading_odometry_becomes_deltas(tmp_path):
    root = _write_dataset(tmp_path, frames=(0.0, 1.0, 2.0))
    (root / "odometry.csv").write_text(
        "timestamp,heading,speed\n0.0,3.0,2.0\n1.0,-3.0,2.0\n2.0,-3.0,0.0\n", encoding="utf-8"
    )
    with (root / "dataset.toml").open("a", encoding="utf-8") as fh:
        fh.write("odometry_kind = heading\n")
    stream = load_dataset(root)
    assert stream.manifest.odometry_kind is OdometryKind.HEADING
    steps = synchronize(stream)
    assert [s.delta_s for s in steps] == [0.0, 2.0, 2.0]
    # heading change wraps through pi
    assert steps[1].delta_theta == pytest.approx(2 * math.pi - 6.0)
    assert steps[2].delta_theta == 0.0


def test_latlon_ground_truth_projects_around_first_fix(tmp_path):
    root = _write_dataset(tmp_path)
    (root / "groundtruth.csv").write_text(
        "timestamp,lat,lon\n0.0,-27.5,153.0\n1.0,-27.49999,153.0\n", encoding="utf-8"
    )
    with (root / "dataset.toml").open("a", encoding="utf-8") as fh:
        fh.write("groundtruth = groundtruth.csv\ngroundtruth_kind = latlon\n")
    gt = load_dataset(root).ground_truth_xy()
    assert tuple(gt[0, 1:]) == (0.0, 0.0)
    assert gt[1, 1] == pytest.approx(0.0)
    assert gt[1, 2] == pytest.approx(EARTH_RADIUS * math.radians(1e-5), rel=1e-6)


def test_gps_projection():
    origin = (-27.5, 153.0)
    assert gps_to_local(*origin, origin) == (0.0, 0.0)
    x, y = gps_to_local(-27.5, 153.001, origin)
    assert y == 0.0
    assert x == pytest.approx(EARTH_RADIUS * math.cos(math.radians(27.5)) * math.radians(0.001))
    lat, lon = local_to_gps(x, 25.0, origin)
    assert lon == pytest.approx(153.001)
    assert gps_to_local(lat, lon, origin)[1] == pytest.approx(25.0)
    with pytest.raises(DatasetError):
        gps_to_local(91.0, 0.0, origin)
    with pytest.raises(DatasetError):
        gps_to_local(0.0, 0.0, (0.0, 181.0))
