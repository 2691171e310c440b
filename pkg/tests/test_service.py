import os

import numpy as np
import pytest
from fastapi.testclient import TestClient

from hashdistill.codes import BinaryCode, read_codes
from hashdistill.config import ExperimentConfig
from hashdistill.data import generate_synthetic
from hashdistill.pipeline import load_dataset
from hashdistill.retrieval import build_index, rank
from hashdistill.service import app


@pytest.fixture()
def client():
    return TestClient(app)


def tiny_payload(output_dir, **train_overrides):
    train = {
        "code_length": 8,
        "batch_size": 16,
        "epochs": 2,
        "seed": 5,
        "encoder": {"input_dim": 8, "hidden_dims": [16], "code_length": 8},
    }
    train.update(train_overrides)
    return {
        "output_dir": str(output_dir),
        "data": {
            "kind": "synthetic",
            "n_classes": 4,
            "dim": 8,
            "n_train": 48,
            "n_database": 40,
            "n_query": 12,
            "spread": 0.05,
            "seed": 0,
        },
        "train": train,
        "eval": {"m": 20, "top_ranks": [1, 5, 10]},
        "sweep": {"scales": [0.0, 1.0], "repeats": 1},
        "ablation": {"bit_lengths": [8], "variants": ["-sdh-bceq", "+sdh+bceq"]},
    }


class TestHealth:
    def test_health_reports_ok_and_version(self, client):
        response = client.get("/health")
        assert response.status_code == 200
        body = response.json()
        assert body["status"] == "ok"
        assert body["version"]


class TestGenerate:
    def test_generate_writes_tables(self, client, tmp_path):
        response = client.post(
            "/data/generate", json={"config": tiny_payload(tmp_path / "run")}
        )
        assert response.status_code == 200
        paths = response.json()["paths"]
        assert len(paths) == 6
        for p in paths.values():
            assert os.path.exists(p)


class TestTrainEncodeEval:
    def test_full_run_through_http(self, client, tmp_path):
        payload = tiny_payload(tmp_path / "run")
        response = client.post("/runs/train", json={"config": payload})
        assert response.status_code == 200
        body = response.json()
        assert body["epochs_run"] == 2
        assert body["total_epochs"] == 2
        assert len(body["history"]) == 2
        assert body["history"][0]["epoch"] == 1
        assert body["history"][0]["seconds"] >= 0.0

        response = client.post("/runs/encode", json={"config": payload})
        assert response.status_code == 200
        paths = response.json()["paths"]
        assert set(paths) == {"database_codes", "query_codes"}

        response = client.post("/runs/eval", json={"config": payload})
        assert response.status_code == 200
        body = response.json()
        assert 0.0 <= body["map_at_m"] <= 1.0
        assert body["m"] == 20
        assert len(body["pr_curve"]) == 9  # K+1 radii
        assert [r for r, _ in body["p_at_top"]] == [1, 5, 10]

    def test_overrides_apply(self, client, tmp_path):
        payload = tiny_payload(tmp_path / "run")
        response = client.post(
            "/runs/train",
            json={"config": payload, "overrides": ["train.epochs=1"]},
        )
        assert response.status_code == 200
        assert response.json()["epochs_run"] == 1

    def test_eval_before_encode_is_a_clean_400(self, client, tmp_path):
        payload = tiny_payload(tmp_path / "fresh")
        response = client.post("/runs/eval", json={"config": payload})
        assert response.status_code == 400
        assert "encode" in response.json()["detail"]

    def test_invalid_config_value_is_a_clean_400(self, client, tmp_path):
        payload = tiny_payload(tmp_path / "run", lambda1=-1.0)
        response = client.post("/runs/train", json={"config": payload})
        assert response.status_code == 400
        assert "lambda1" in response.json()["detail"]

    def test_malformed_request_shape_is_422(self, client):
        response = client.post("/runs/train", json={"config": "not a mapping"})
        assert response.status_code == 422


class TestStudies:
    def test_sweep_and_deform_and_ablate(self, client, tmp_path):
        payload = tiny_payload(tmp_path / "run")
        response = client.post("/runs/sweep-st", json={"config": payload})
        assert response.status_code == 200
        rows = response.json()["rows"]
        assert [row["s_t"] for row in rows] == [0.0, 1.0]
        assert rows[0]["shift_with_distillation"] == 0.0

        response = client.post("/runs/deform-eval", json={"config": payload})
        assert response.status_code == 200
        assert len(response.json()["rows"]) == 6

        response = client.post("/runs/ablate", json={"config": payload})
        assert response.status_code == 200
        rows = response.json()["rows"]
        assert [row["variant"] for row in rows] == ["-sdh-bceq", "+sdh+bceq"]


class TestSearch:
    def test_search_returns_expected_neighbors(self, client, tmp_path):
        payload = tiny_payload(tmp_path / "run")
        assert client.post("/runs/train", json={"config": payload}).status_code == 200
        assert client.post("/runs/encode", json={"config": payload}).status_code == 200

        cfg = ExperimentConfig.from_dict(payload)
        bundle = load_dataset(cfg)
        probe = bundle.db_features[3]
        response = client.post(
            "/search",
            json={"run_dir": str(tmp_path / "run"), "features": [probe.tolist()], "m": 5},
        )
        assert response.status_code == 200
        results = response.json()["results"]
        assert len(results) == 1 and len(results[0]) == 5

        words, k = read_codes(os.path.join(cfg.output_dir, "database_codes.bin"))
        index = build_index(words, bundle.db_labels, k)
        oracle = rank(index, BinaryCode(words[3], k), 5)
        assert [(hit["id"], hit["distance"]) for hit in results[0]] == [
            (i, d) for i, d in oracle
        ]
        assert results[0][0]["distance"] == 0

    def test_search_on_missing_run_is_a_clean_400(self, client, tmp_path):
        response = client.post(
            "/search",
            json={"run_dir": str(tmp_path / "nope"), "features": [[0.0] * 8], "m": 3},
        )
        assert response.status_code == 400
        assert "run" in response.json()["detail"]

    def test_search_wrong_dimension_is_a_clean_400(self, client, tmp_path):
        payload = tiny_payload(tmp_path / "run")
        client.post("/runs/train", json={"config": payload})
        client.post("/runs/encode", json={"config": payload})
        response = client.post(
            "/search",
            json={"run_dir": str(tmp_path / "run"), "features": [[0.0] * 5], "m": 3},
        )
        assert response.status_code == 400
        assert "input_dim" in response.json()["detail"]
