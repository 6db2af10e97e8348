import math

import numpy as np
import pytest

from fusemod import annotation as ann
from fusemod.errors import (
    ConfigError,
    DimensionMismatch,
    FrameOutOfRange,
    IncompleteDrive,
)
from fusemod.geometry import BBox2D, CameraModel, RigidTransform, oxts_to_pose
from fusemod.kitti_ingest import OxtsRecord, Tracklet, write_u16_png

LAT0 = 49.0
EARTH = 6378137.0


def _record(lat=LAT0, lon=8.43, alt=112.0, yaw=0.0, vn=0.0, ve=0.0):
    return OxtsRecord(lat, lon, alt, 0.0, 0.0, yaw, vn, ve, 0.0, 0.0, 0.0, extra=())


def _eastward_drive(speed=10.0, n=10, dt=0.1):
    # constant latitude, so metres east are exactly linear in longitude
    scale = math.cos(math.radians(LAT0))
    dlon_deg = math.degrees(speed * dt / (scale * EARTH))
    records = [
        _record(lon=8.43 + i * dlon_deg, ve=speed, vn=0.0) for i in range(n)
    ]
    times = [i * dt for i in range(n)]
    return records, times


def _camera():
    # velodyne x forward, y left, z up -> camera x right, y down, z forward
    perm = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    p_rect = np.array([[30.0, 0, 30.0, 0], [0, 30.0, 20.0, 0], [0, 0, 1.0, 0]])
    return CameraModel(p_rect, np.eye(3), RigidTransform(perm, np.zeros(3)))


# ---------------------------------------------------------------------------
# ego velocity


def test_stationary_ego_zero_velocity():
    records = [_record()] * 5
    v = ann.ego_velocity(records, [0.1 * i for i in range(5)])
    np.testing.assert_allclose(v, 0.0, atol=1e-9)


def test_straight_drive_speed_both_modes():
    records, times = _eastward_drive(speed=10.0)
    v_pose = ann.ego_velocity(records, times, mode=ann.POSE_DIFF)
    v_chan = ann.ego_velocity(records, times, mode=ann.OXTS_CHANNELS)
    np.testing.assert_allclose(np.linalg.norm(v_pose, axis=1), 10.0, atol=0.01)
    np.testing.assert_allclose(np.linalg.norm(v_chan, axis=1), 10.0, atol=1e-12)


def test_modes_agree_on_smooth_drives():
    # gentle left curve at constant speed
    speed, dt, n = 8.0, 0.1, 30
    scale = math.cos(math.radians(LAT0))
    records = []
    lat, lon = LAT0, 8.43
    for i in range(n):
        heading = 0.02 * i  # radians from east, slowly turning
        ve, vn = speed * math.cos(heading), speed * math.sin(heading)
        records.append(_record(lat=lat, lon=lon, ve=ve, vn=vn))
        lon += math.degrees(ve * dt / (scale * EARTH))
        lat += math.degrees(vn * dt / EARTH / scale * scale)  # small-angle north step
    times = [i * dt for i in range(n)]
    v_pose = ann.ego_velocity(records, times, mode=ann.POSE_DIFF)
    v_chan = ann.ego_velocity(records, times, mode=ann.OXTS_CHANNELS)
    s_pose = np.linalg.norm(v_pose, axis=1)
    s_chan = np.linalg.norm(v_chan, axis=1)
    assert np.all(np.abs(s_pose - s_chan) / s_chan < 0.05)


def test_unknown_mode_rejected():
    with pytest.raises(ConfigError):
        ann.ego_velocity([_record()], [0.0], mode="kalman")


# ---------------------------------------------------------------------------
# object world velocity


def _tracklet(first_frame, velo_positions, rz=0.0):
    poses = np.array([[p[0], p[1], p[2], rz] for p in velo_positions])
    return Tracklet("Car", 1.5, 1.6, 3.8, first_frame, poses)


def test_parked_car_nearly_static_under_moving_ego():
    records, times = _eastward_drive(speed=10.0, n=8)
    poses = ann.ego_poses(records)
    world_point = np.array([50.0, 5.0, 0.0])
    velo = [poses[f].invert().apply(world_point) for f in range(8)]
    tr = _tracklet(0, velo)
    v = ann.object_world_velocity(tr, poses, times)
    assert np.linalg.norm(v, axis=1).max() < 0.2


def test_car_pacing_ego_moves_at_ego_speed():
    records, times = _eastward_drive(speed=10.0, n=8)
    poses = ann.ego_poses(records)
    tr = _tracklet(0, [np.array([20.0, 0.0, 0.0])] * 8)
    v = ann.object_world_velocity(tr, poses, times)
    np.testing.assert_allclose(np.linalg.norm(v, axis=1), 10.0, atol=0.05)


def test_static_ego_static_object_exactly_zero():
    records = [_record()] * 4
    poses = ann.ego_poses(records)
    tr = _tracklet(0, [np.array([12.0, 1.0, 0.0])] * 4)
    v = ann.object_world_velocity(tr, poses, [0.1 * i for i in range(4)])
    np.testing.assert_array_equal(v, 0.0)


def test_single_frame_tracklet_has_no_motion_evidence():
    records, times = _eastward_drive(n=5)
    poses = ann.ego_poses(records)
    tr = _tracklet(2, [np.array([10.0, 0.0, 0.0])])
    v = ann.object_world_velocity(tr, poses, times)
    np.testing.assert_array_equal(v, np.zeros((1, 3)))


def test_frame_out_of_range():
    records, times = _eastward_drive(n=4)
    poses = ann.ego_poses(records)
    tr = _tracklet(3, [np.array([10.0, 0.0, 0.0])] * 2)  # frames 3,4 vs 4 poses
    with pytest.raises(FrameOutOfRange) as info:
        ann.object_world_velocity(tr, poses, times)
    assert info.value.frame == 4


def test_labels_invariant_to_ego_speed_shift():
    # same object world trajectories observed from a 5 m/s and a 15 m/s ego
    times = [0.1 * i for i in range(8)]
    world_parked = np.array([40.0, 3.0, 0.0])

    def labels_for(speed):
        records, _ = _eastward_drive(speed=speed, n=8)
        poses = ann.ego_poses(records)
        world_mover = [np.array([20.0 + 8.0 * t, -4.0, 0.0]) for t in times]
        parked = _tracklet(0, [poses[f].invert().apply(world_parked) for f in range(8)])
        mover = _tracklet(0, [poses[f].invert().apply(world_mover[f]) for f in range(8)])
        out = []
        for tr in (parked, mover):
            v = ann.object_world_velocity(tr, poses, times)
            out.append(
                [ann.classify_motion(s) for s in np.linalg.norm(v, axis=1)]
            )
        return out

    assert labels_for(5.0) == labels_for(15.0)


# ---------------------------------------------------------------------------
# classification


def test_classify_zero_speed_static():
    assert ann.classify_motion(0.0) is ann.MotionLabel.STATIC


def test_classify_fast_object_moving():
    assert ann.classify_motion(8.0, threshold=1.0) is ann.MotionLabel.MOVING


def test_classify_at_threshold_is_static():
    assert ann.classify_motion(1.0, threshold=1.0) is ann.MotionLabel.STATIC


def test_classify_requires_positive_threshold():
    with pytest.raises(ConfigError):
        ann.classify_motion(1.0, threshold=0.0)


def test_threshold_sweep_monotone():
    speeds = [0.0, 2.0, 4.5, 8.0]
    previous = None
    for threshold in np.arange(0.5, 5.01, 0.25):
        moving = {
            i
            for i, s in enumerate(speeds)
            if ann.classify_motion(s, float(threshold)) is ann.MotionLabel.MOVING
        }
        if previous is not None:
            assert moving <= previous
        previous = moving
    assert previous == {3}


# ---------------------------------------------------------------------------
# mask refinement


def _label(bbox, moving=True, tid=0):
    return ann.ObjectMotionLabel(
        tracklet_id=tid,
        frame_index=0,
        speed_abs=5.0 if moving else 0.0,
        label=ann.MotionLabel.MOVING if moving else ann.MotionLabel.STATIC,
        bbox2d=BBox2D(*bbox, all_behind=False),
    )


def test_contained_instance_copied_verbatim():
    inst = np.zeros((20, 30), dtype=bool)
    inst[6:10, 7:12] = True
    out = ann.refine_mask(
        [_label((5.0, 4.0, 14.0, 11.0))],
        ann.InstanceMaskSet([inst], ["car"]),
        (30, 20),
    )
    np.testing.assert_array_equal(out, inst.astype(np.uint8))


def test_low_overlap_falls_back_to_rectangle():
    inst = np.zeros((20, 30), dtype=bool)
    inst[8:9, 12:22] = True  # 10 px, 3 inside the box
    out = ann.refine_mask(
        [_label((5.0, 4.0, 14.0, 11.0))],
        ann.InstanceMaskSet([inst], ["car"]),
        (30, 20),
    )
    want = np.zeros((20, 30), dtype=np.uint8)
    want[4:12, 5:15] = 1
    np.testing.assert_array_equal(out, want)


def test_static_box_claims_nothing():
    inst_moving = np.zeros((20, 30), dtype=bool)
    inst_moving[5:8, 6:10] = True
    inst_static = np.zeros((20, 30), dtype=bool)
    inst_static[14:18, 20:26] = True
    out = ann.refine_mask(
        [
            _label((5.0, 4.0, 11.0, 9.0), moving=True, tid=0),
            _label((19.0, 13.0, 27.0, 18.0), moving=False, tid=1),
        ],
        ann.InstanceMaskSet([inst_moving, inst_static], ["car", "car"]),
        (30, 20),
    )
    np.testing.assert_array_equal(out, inst_moving.astype(np.uint8))


def test_refined_mask_inside_union_invariant():
    rng = np.random.default_rng(0)
    for trial in range(5):
        masks = []
        for _ in range(3):
            m = np.zeros((20, 30), dtype=bool)
            r, c = rng.integers(0, 12), rng.integers(0, 20)
            m[r : r + rng.integers(2, 8), c : c + rng.integers(2, 8)] = True
            masks.append(m)
        boxes = [
            _label(
                (float(u), float(v), float(u + rng.integers(3, 10)), float(v + rng.integers(3, 8))),
                moving=bool(rng.integers(0, 2)),
                tid=i,
            )
            for i, (u, v) in enumerate(rng.integers(0, 15, size=(3, 2)))
        ]
        out = ann.refine_mask(boxes, ann.InstanceMaskSet(masks, ["x"] * 3), (30, 20))
        union = np.zeros((20, 30), dtype=bool)
        for m in masks:
            union |= m
        for label in boxes:
            if label.label is ann.MotionLabel.MOVING:
                window = ann._bbox_slice(label.bbox2d, 20, 30)
                if window is not None:
                    union[window] = True
        assert not np.any(out.astype(bool) & ~union)


def test_fallback_pixels_lie_in_dilated_boxes():
    labels = [_label((3.2, 2.7, 9.8, 7.4)), _label((15.0, 10.0, 22.0, 16.0))]
    out = ann.refine_mask(labels, None, (30, 20))
    covered = np.zeros((20, 30), dtype=bool)
    for label in labels:
        covered[
            max(0, int(label.bbox2d.v_min) - 2) : int(label.bbox2d.v_max) + 3,
            max(0, int(label.bbox2d.u_min) - 2) : int(label.bbox2d.u_max) + 3,
        ] = True
    assert not np.any(out.astype(bool) & ~covered)
    assert out.sum() > 0


def test_instance_shape_mismatch():
    with pytest.raises(DimensionMismatch):
        ann.refine_mask(
            [_label((1.0, 1.0, 5.0, 5.0))],
            ann.InstanceMaskSet([np.zeros((10, 10), dtype=bool)], ["car"]),
            (30, 20),
        )


# ---------------------------------------------------------------------------
# split


def test_split_exact_eighty_twenty():
    counts = {"a": 8, "b": 2}
    assignment = ann.split_drives(counts, seed=0)
    assert assignment == {"a": "train", "b": "test"}


def test_split_single_drive_goes_train():
    assert ann.split_drives({"only": 10}, seed=3) == {"only": "train"}


def test_split_deterministic_per_seed():
    counts = {f"d{i}": 10 + i for i in range(6)}
    a = ann.split_drives(counts, seed=42)
    b = ann.split_drives(counts, seed=42)
    assert a == b


def test_split_closest_achievable():
    counts = {f"d{i}": 10 for i in range(8)}  # sums are multiples of 10, target 64
    assignment = ann.split_drives(counts, seed=1)
    train_frames = sum(counts[k] for k, v in assignment.items() if v == "train")
    assert train_frames == 60


# ---------------------------------------------------------------------------
# drive loading and export

CAM_CALIB = (
    "P_rect_02: 30 0 30 0 0 30 20 0 0 0 1 0\n"
    "R_rect_00: 1 0 0 0 1 0 0 0 1\n"
)
VELO_CALIB = (
    "R: 0 -1 0 0 0 -1 1 0 0\n"
    "T: 0 0 0\n"
)


def _tracklet_xml(tracklets):
    items = []
    for obj_type, h, w, l, first, poses in tracklets:
        pose_items = "".join(
            "<item><tx>{}</tx><ty>{}</ty><tz>{}</tz>"
            "<rx>0</rx><ry>0</ry><rz>{}</rz>"
            "<state>1</state><occlusion>0</occlusion><occlusion_kf>0</occlusion_kf>"
            "<truncation>0</truncation><amt_occlusion>0</amt_occlusion>"
            "<amt_occlusion_kf>0</amt_occlusion_kf><amt_border_l>0</amt_border_l>"
            "<amt_border_r>0</amt_border_r><amt_border_kf>0</amt_border_kf>"
            "</item>".format(*pose)
            for pose in poses
        )
        items.append(
            f"<item><objectType>{obj_type}</objectType><h>{h}</h><w>{w}</w>"
            f"<l>{l}</l><first_frame>{first}</first_frame>"
            f"<poses><count>{len(poses)}</count><item_version>2</item_version>"
            f"{pose_items}</poses><finished>1</finished></item>"
        )
    return (
        '<?xml version="1.0" encoding="UTF-8" standalone="yes" ?>'
        "<boost_serialization signature=\"serialization::archive\" version=\"9\">"
        f"<tracklets class_id=\"0\" tracking_level=\"0\" version=\"0\">"
        f"<count>{len(tracklets)}</count><item_version>1</item_version>"
        f"{''.join(items)}</tracklets></boost_serialization>"
    )


def _write_drive(root, name, n=4, speed=10.0, with_instances=False):
    drive = root / name
    (drive / "oxts").mkdir(parents=True)
    (drive / "image_02" / "data").mkdir(parents=True)
    (drive / "flow").mkdir()
    (drive / "lidarflow").mkdir()
    (drive / "calib_cam_to_cam.txt").write_text(CAM_CALIB)
    (drive / "calib_velo_to_cam.txt").write_text(VELO_CALIB)

    records, _ = _eastward_drive(speed=speed, n=n)
    lines = []
    for r in records:
        fields = [r.lat, r.lon, r.alt, r.roll, r.pitch, r.yaw, r.vn, r.ve, r.vf, r.vl, r.vu]
        fields += [0.0] * 19
        lines.append(" ".join(repr(x) for x in fields))
    (drive / "oxts" / "data").mkdir()
    for i, line in enumerate(lines):
        (drive / "oxts" / "data" / f"{i:010d}.txt").write_text(line + "\n")
    stamps = "".join(f"2011-09-26 13:02:{44 + i // 10:02d}.{i % 10}00000000\n" for i in range(n))
    (drive / "oxts" / "timestamps.txt").write_text(stamps)

    # parked car left of the path, pacing car on the right
    poses = ann.ego_poses(records)
    parked_world = np.array([12.0, 2.0, 0.0])
    parked = [tuple(poses[f].invert().apply(parked_world)) + (0.0,) for f in range(n)]
    mover = [(15.0, -3.0, 0.0, 0.0)] * n
    xml = _tracklet_xml(
        [("Car", 1.5, 1.6, 3.8, 0, parked), ("Car", 1.5, 1.6, 3.8, 0, mover)]
    )
    (drive / "tracklet_labels.xml").write_text(xml)

    import cv2

    from fusemod.kitti_ingest import FlowMap, save_flow_file

    for i in range(n):
        img = np.full((40, 60, 3), 90, dtype=np.uint8)
        cv2.imwrite(str(drive / "image_02" / "data" / f"{i:010d}.png"), img)
        flow = FlowMap(np.zeros((40, 60)), np.zeros((40, 60)))
        save_flow_file(drive / "flow" / f"{i:010d}.flo", flow)
        save_flow_file(drive / "lidarflow" / f"{i:010d}.png", flow)

    if with_instances:
        (drive / "instances").mkdir()
        blob = np.zeros((40, 60), dtype=np.uint16)
        blob[17:20, 34:38] = 1
        (drive / "instances" / f"{0:010d}.png").write_bytes(write_u16_png(blob))
        (drive / "instances.txt").write_text("0 1 car\n")
    return drive


def test_load_drive_and_export(tmp_path):
    root = tmp_path / "raw"
    _write_drive(root, "drive_0001", n=4)
    drive = ann.load_drive(root / "drive_0001")
    assert drive.n_frames == 4
    assert drive.image_size == (60, 40)
    assert len(drive.tracklets) == 2
    assert all(p is not None for p in drive.flow_paths)
    assert all(p is None for p in drive.depth_paths)

    out = tmp_path / "out"
    manifest = ann.export_dataset([drive], out, split_seed=0)
    assert manifest.n_frames == 4
    assert {r.split for r in manifest.records} == {"train"}
    assert all(r.depth == "-" for r in manifest.records)

    from fusemod.kitti_ingest import load_mask_file

    mask = load_mask_file(out / manifest.records[0].mask)
    assert mask.shape == (40, 60)
    # mover sits right of image centre, parked car left; only the mover labels
    assert mask[:, 31:].sum() > 0
    assert mask[:, :30].sum() == 0


def test_export_instance_refinement(tmp_path):
    root = tmp_path / "raw"
    _write_drive(root, "drive_0002", n=4, with_instances=True)
    drive = ann.load_drive(root / "drive_0002")
    out = tmp_path / "out"
    manifest = ann.export_dataset([drive], out)
    from fusemod.kitti_ingest import load_mask_file

    mask0 = load_mask_file(out / manifest.records[0].mask)
    want = np.zeros((40, 60), dtype=np.uint8)
    want[17:20, 34:38] = 1
    np.testing.assert_array_equal(mask0, want)
    # frames without instances fall back to rectangles, so a wider region
    mask1 = load_mask_file(out / manifest.records[1].mask)
    assert mask1.sum() > want.sum()


def test_export_rerun_byte_identical(tmp_path):
    root = tmp_path / "raw"
    _write_drive(root, "drive_0003", n=3)
    drive = ann.load_drive(root / "drive_0003")
    out_a = tmp_path / "out_a"
    out_b = tmp_path / "out_b"
    man_a = ann.export_dataset([drive], out_a, split_seed=7)
    man_b = ann.export_dataset([drive], out_b, split_seed=7)
    assert man_a.path.read_bytes() == man_b.path.read_bytes()
    for rec_a, rec_b in zip(man_a.records, man_b.records):
        assert (out_a / rec_a.mask).read_bytes() == (out_b / rec_b.mask).read_bytes()


def test_export_multi_drive_split(tmp_path):
    root = tmp_path / "raw"
    sizes = {"drive_a": 8, "drive_b": 1, "drive_c": 1}
    drives = [
        ann.load_drive(_write_drive(root, name, n=n)) for name, n in sizes.items()
    ]
    manifest = ann.export_dataset(drives, tmp_path / "out", split_seed=0)
    frames_by_split = {"train": 0, "test": 0}
    for r in manifest.records:
        frames_by_split[r.split] += 1
    assert frames_by_split == {"train": 8, "test": 2}


def test_incomplete_drive_errors(tmp_path):
    root = tmp_path / "raw"
    drive_dir = _write_drive(root, "drive_0004", n=3)
    (drive_dir / "tracklet_labels.xml").unlink()
    with pytest.raises(IncompleteDrive) as info:
        ann.load_drive(drive_dir)
    assert "tracklet" in info.value.detail

    drive_dir2 = _write_drive(root, "drive_0005", n=3)
    (drive_dir2 / "oxts" / "data" / f"{2:010d}.txt").unlink()
    with pytest.raises(IncompleteDrive):
        ann.load_drive(drive_dir2)

    drive_dir3 = _write_drive(root, "drive_0006", n=3)
    (drive_dir3 / "calib_cam_to_cam.txt").unlink()
    with pytest.raises(IncompleteDrive):
        ann.load_drive(drive_dir3)
