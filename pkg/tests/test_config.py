import json

import pytest

from icsc_pose.config import (
    DEFAULT_CONFIG,
    bounds_from_config,
    cylinder_from_config,
    default_config,
    dump_defaults,
    intrinsics_from_config,
    load_config,
    model_from_config,
    scene_from_config,
    train_from_config,
)
from icsc_pose.renderer import Bounds


class TestDefaults:
    def test_no_path_gives_defaults(self):
        assert load_config(None) == DEFAULT_CONFIG

    def test_default_config_is_a_copy(self):
        cfg = default_config()
        cfg["dataset"]["count"] = 1
        assert DEFAULT_CONFIG["dataset"]["count"] == 2200

    def test_dump_parses_and_round_trips(self, tmp_path):
        text = dump_defaults()
        assert json.loads(text) == DEFAULT_CONFIG
        path = tmp_path / "cfg.json"
        path.write_text(text)
        assert load_config(str(path)) == DEFAULT_CONFIG


class TestMerging:
    def write(self, tmp_path, obj):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(obj))
        return str(path)

    def test_partial_override(self, tmp_path):
        cfg = load_config(self.write(tmp_path, {"dataset": {"count": 50}}))
        assert cfg["dataset"]["count"] == 50
        assert cfg["dataset"]["seed"] == DEFAULT_CONFIG["dataset"]["seed"]
        assert cfg["training"] == DEFAULT_CONFIG["training"]

    def test_unknown_top_level_key(self, tmp_path):
        with pytest.raises(ValueError, match="'datsaet'"):
            load_config(self.write(tmp_path, {"datsaet": {}}))

    def test_unknown_nested_key_dotted_path(self, tmp_path):
        with pytest.raises(ValueError, match="training.lr"):
            load_config(self.write(tmp_path, {"training": {"lr": 0.1}}))

    def test_wrong_schema(self, tmp_path):
        with pytest.raises(ValueError, match="schema"):
            load_config(self.write(tmp_path, {"schema": 99}))

    def test_non_object_root(self, tmp_path):
        with pytest.raises(ValueError, match="object"):
            load_config(self.write(tmp_path, [1, 2]))


class TestBuilders:
    def test_cylinder(self):
        cyl = cylinder_from_config(default_config())
        assert cyl.r0 == 2.0 and cyl.h0 == 3.5

    def test_scene(self):
        geo = scene_from_config(default_config())
        assert geo.wall_x == -6.0
        assert geo.y_span == (-17.25, 2.75)

    def test_bounds(self):
        assert bounds_from_config(default_config()) == Bounds()

    def test_intrinsics(self):
        intr = intrinsics_from_config(default_config())
        assert intr.resolution == (128, 72)
        assert intr.horizontal_fov == 61.6

    def test_model(self):
        model = model_from_config(default_config())
        assert model.input_size == 64
        assert model.conv_channels == (16, 32, 64, 64)

    def test_training(self):
        tc = train_from_config(default_config())
        assert tc.loss == "icsc"
        assert tc.epochs == 200
        assert tc.batch_size == 25
        assert tc.learning_rate == 1e-4

    def test_override_flows_to_builder(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"model": {"input_size": 32,
                                              "conv_channels": [8, 16]}}))
        model = model_from_config(load_config(str(path)))
        assert model.input_size == 32
        assert model.conv_channels == (8, 16)
