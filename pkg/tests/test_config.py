import json

import numpy as np
import pytest

from flowplugin.config import load_config
from flowplugin.errors import ConfigError
from flowplugin.storage import save_matrix


def write_config(tmp_path, body):
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps(body))
    return str(path)


def valid_body(tmp_path):
    save_matrix(str(tmp_path / "objects.fpnm"), np.full((4, 6), 0.5))
    (tmp_path / "labels.csv").write_text("0\n1\n0\n1\n")
    return {
        "seed": 5,
        "dataset": {"objects": "objects.fpnm", "labels": "labels.csv", "classes": 2},
        "autoencoder": {"latent_dim": 2, "hidden": [16, 8], "epochs": 3},
        "flow": {"family": "maf", "layers": 2, "hidden": 16},
        "train": {"epochs": 2, "batch_size": 4},
        "paths": {"autoencoder": "ae.fpn", "latent_dataset": "latents.fpn",
                  "flow": "flow.fpn", "loss_history": "loss.csv"},
        "tasks": {"prior": "empirical"},
    }


class TestLoadConfig:
    def test_valid_config(self, tmp_path):
        cfg = load_config(write_config(tmp_path, valid_body(tmp_path)))
        assert cfg.seed == 5
        assert cfg.flow_family == "maf"
        assert cfg.dataset_path("objects").endswith("objects.fpnm")
        ae_cfg = cfg.autoencoder_config(input_dim=6)
        assert ae_cfg.latent_dim == 2 and ae_cfg.hidden == (16, 8) and ae_cfg.seed == 5
        train = cfg.train_config()
        assert train.epochs == 2 and train.seed == 5

    def test_unknown_top_level_key(self, tmp_path):
        body = valid_body(tmp_path)
        body["surprise"] = 1
        with pytest.raises(ConfigError, match="surprise"):
            load_config(write_config(tmp_path, body))

    @pytest.mark.parametrize("section", ["dataset", "autoencoder", "flow",
                                         "train", "paths", "tasks"])
    def test_unknown_section_key(self, tmp_path, section):
        body = valid_body(tmp_path)
        body[section]["mystery_knob"] = 3
        with pytest.raises(ConfigError, match="mystery_knob"):
            load_config(write_config(tmp_path, body))

    def test_missing_dataset_file(self, tmp_path):
        body = valid_body(tmp_path)
        body["dataset"]["objects"] = "nowhere.fpnm"
        with pytest.raises(ConfigError, match="missing file"):
            load_config(write_config(tmp_path, body))

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_config(str(path))

    def test_relative_paths_resolve_against_config_dir(self, tmp_path):
        cfg = load_config(write_config(tmp_path, valid_body(tmp_path)))
        assert cfg.artifact_path("flow") == str(tmp_path / "flow.fpn")

    def test_prior_mode_validation(self, tmp_path):
        body = valid_body(tmp_path)
        body["tasks"]["prior"] = "oracle"
        cfg = load_config(write_config(tmp_path, body))
        with pytest.raises(ConfigError):
            cfg.prior_mode()

    def test_flow_kwargs_renames_clamp(self, tmp_path):
        body = valid_body(tmp_path)
        body["flow"]["log_scale_clamp"] = 3.5
        cfg = load_config(write_config(tmp_path, body))
        kwargs = cfg.flow_kwargs()
        assert kwargs["clamp"] == 3.5
        assert "family" not in kwargs

    def test_missing_sections_default(self, tmp_path):
        save_matrix(str(tmp_path / "objects.fpnm"), np.full((4, 6), 0.5))
        cfg = load_config(write_config(tmp_path, {
            "dataset": {"objects": "objects.fpnm"}}))
        assert cfg.seed == 0
        assert cfg.prior_mode() == "empirical"
        with pytest.raises(ConfigError, match="missing"):
            cfg.artifact_path("flow")
        with pytest.raises(ConfigError, match="missing"):
            cfg.dataset_path("labels")
        assert cfg.dataset_path("labels", required=False) is None
