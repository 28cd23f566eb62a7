import json

import numpy as np
import pytest
import yaml

from slimmap import mapstore
from slimmap.cli import EXIT_CONFIG, EXIT_OK, EXIT_STAGE, main, read_pose_file
from slimmap.config import ConfigError, RunConfig, config_from_dict, load_config

SMALL = {"world": {"seed": 3, "extent": 40.0, "building_ring": 1, "sessions": 2}}


def _report(path):
    out = {}
    for line in path.read_text().splitlines():
        stage, key, value = line.split(" ", 2)
        out[(stage, key)] = value
    return out


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.yaml"
    cfg.write_text(yaml.safe_dump(SMALL))
    world = root / "world"
    assert main(["generate", str(world), "--config", str(cfg), "--replay",
                 "--point-dump", str(root / "dump.bin"), "--report", str(root / "gen.txt")]) == EXIT_OK
    assert main(["merge", str(world / "session_00"), str(world / "session_01"), "--config", str(cfg),
                 "--out", str(root / "map.slim"), "--map-l", str(root / "map_l.slim"),
                 "--report", str(root / "merge.txt")]) == EXIT_OK
    return root


def test_generate_writes_sessions_and_dump(workspace):
    rep = _report(workspace / "gen.txt")
    assert int(rep[("generate", "landmarks")]) > 0
    assert (workspace / "world" / "session_01").is_dir()
    assert int(rep[("generate", "point_dump_bytes")]) == (workspace / "dump.bin").stat().st_size


def test_merge_reports_archive_sizes(workspace):
    rep = _report(workspace / "merge.txt")
    assert int(rep[("write", "bytes_full")]) == (workspace / "map.slim").stat().st_size
    assert int(rep[("write", "bytes_localization")]) == (workspace / "map_l.slim").stat().st_size
    assert float(rep[("ate", "ba_xy")]) < 0.5


def test_info_matches_archive(workspace):
    out = workspace / "info.txt"
    assert main(["info", str(workspace / "map.slim"), "--report", str(out)]) == EXIT_OK
    rep = _report(out)
    m = mapstore.deserialize(workspace / "map.slim")
    assert int(rep[("info", "sessions")]) == 2
    assert int(rep[("info", "landmarks")]) == len(m.landmarks)
    assert int(rep[("info", "file_bytes")]) == (workspace / "map.slim").stat().st_size


def test_eval_of_unmarginalized_map_against_truth(workspace):
    # marginalization keeps too few keyframes of a tiny session to score it
    full = workspace / "full.slim"
    world = workspace / "world"
    assert main(["merge", str(world / "session_00"), str(world / "session_01"), "--no-marginalization",
                 "--config", str(workspace / "small.yaml"), "--out", str(full),
                 "--report", str(workspace / "merge_full.txt")]) == EXIT_OK
    out = workspace / "eval.txt"
    assert main(["eval", str(full), str(world / "session_01"), "--report", str(out)]) == EXIT_OK
    assert int(_report(out)[("eval", "poses")]) == len(mapstore.deserialize(full).keyframe_ids(1))
    assert float(_report(out)[("eval", "ate_xy")]) < 0.5


def test_localize_replay_then_eval_pose_file(workspace):
    poses = workspace / "poses.txt"
    out = workspace / "loc.txt"
    code = main(["localize", str(workspace / "map_l.slim"), str(workspace / "world" / "replay"), str(poses),
                 "--init-frame", str(workspace / "world" / "session_00"), "--report", str(out)])
    assert code == EXIT_OK
    rep = _report(out)
    assert int(rep[("localize", "frames")]) == len(read_pose_file(poses))
    ev = workspace / "eval_poses.txt"
    assert main(["eval", str(poses), str(workspace / "world" / "replay"), "--report", str(ev)]) == EXIT_OK
    assert float(_report(ev)[("eval", "ate_xy")]) < 0.2


def test_localize_far_off_initial_pose_is_a_stage_failure(workspace, capsys):
    code = main(["localize", str(workspace / "map_l.slim"), str(workspace / "world" / "replay"),
                 str(workspace / "lost.txt"), "--init", "500", "500", "0", "0"])
    assert code == EXIT_STAGE
    assert "track" in capsys.readouterr().err


def test_missing_map_is_an_input_error(tmp_path):
    assert main(["info", str(tmp_path / "nope.slim")]) == EXIT_CONFIG


def test_corrupt_map_is_an_input_error(workspace, tmp_path):
    blob = (workspace / "map.slim").read_bytes()
    bad = tmp_path / "bad.slim"
    bad.write_bytes(blob[: len(blob) // 2])
    assert main(["info", str(bad)]) == EXIT_CONFIG


def test_unknown_config_key_is_an_input_error(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"world": {"sed": 1}}))
    assert main(["generate", str(tmp_path / "w"), "--config", str(cfg), "--sessions", "0"]) == EXIT_CONFIG
    assert "world.sed" in capsys.readouterr().err


def test_config_defaults_and_overrides():
    cfg = load_config(None)
    assert cfg == RunConfig()
    over = cfg.with_overrides(seed=9, marginalize=False, threads=2)
    assert over.world.seed == 9 and not over.pipeline.marginalize and over.pipeline.threads == 2
    assert cfg.world.seed == 0


def test_config_nested_sections_and_tuples():
    cfg = config_from_dict({"pipeline": {"sigma": [0.2, 0.3, 0.4], "registration": {"delta": 0.2}},
                            "tracking": {"min_inliers": 8}})
    assert cfg.pipeline.sigma == (0.2, 0.3, 0.4)
    assert cfg.pipeline.registration.delta == 0.2
    assert cfg.tracking.min_inliers == 8


@pytest.mark.parametrize("data", [
    {"world": {"extent": "wide"}},
    {"world": {"sessions": 2.5}},
    {"world": {"buildings": 1}},
    {"world": {"sigma_obs": -1.0}},
    {"pipeline": {"sigma": [0.1]}},
    {"world": 3},
])
def test_config_type_errors(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_config_yaml_roundtrip(tmp_path):
    cfg = RunConfig().with_overrides(seed=4)
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump(json.loads(json.dumps(cfg.to_dict()))))
    assert load_config(p) == cfg


def test_pose_file_column_check(tmp_path):
    p = tmp_path / "p.txt"
    np.savetxt(p, np.zeros((2, 7)))
    with pytest.raises(Exception) as exc:
        read_pose_file(p)
    assert "8 columns" in str(exc.value)
