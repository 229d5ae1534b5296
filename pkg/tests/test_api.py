import pytest
from fastapi.testclient import TestClient

import config
from app import app
from utils.snapshot_io import write_json


@pytest.fixture
def client():
    return TestClient(app)


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    body = response.json()
    assert body["status"] == "healthy"
    assert body["version"] == config.VERSION


def test_unknown_command(client, coarse_config_text):
    response = client.post("/api/runs/plot", json={"config_text": coarse_config_text})
    assert response.status_code == 404


def test_request_needs_exactly_one_source(client, coarse_config_text):
    assert client.post("/api/runs/talenti", json={}).status_code == 422
    both = {"config_text": coarse_config_text, "config_path": "run.ini"}
    assert client.post("/api/runs/talenti", json=both).status_code == 422


def test_missing_config_file(client, tmp_path):
    response = client.post("/api/runs/talenti", json={"config_path": str(tmp_path / "absent.ini")})
    assert response.status_code == 400


def test_invalid_config_maps_to_400(client, tmp_path, coarse_config_text):
    bad = coarse_config_text.replace("p = 2", "p = 1.5")
    response = client.post("/api/runs/talenti", json={"config_text": bad, "out_dir": str(tmp_path)})
    assert response.status_code == 400
    assert response.json()["detail"]["exit_code"] == config.EXIT_CONFIG


def test_incomplete_inputs_map_to_409(client, tmp_path, coarse_config_text):
    response = client.post("/api/runs/rescale", json={"config_text": coarse_config_text, "out_dir": str(tmp_path)})
    assert response.status_code == 409


def test_talenti_run(client, tmp_path, coarse_config_text):
    response = client.post("/api/runs/talenti", json={"config_text": coarse_config_text, "out_dir": str(tmp_path)})
    assert response.status_code == 200
    body = response.json()
    assert body["exit_code"] == 0
    assert any(path.endswith("talenti.json") for path in body["artifacts"])


def test_report_lookup(client, tmp_path):
    assert client.get("/api/runs/report", params={"out_dir": str(tmp_path)}).status_code == 404
    write_json(tmp_path / config.REPORT_NAME, {"criteria": [], "tally": {}})
    response = client.get("/api/runs/report", params={"out_dir": str(tmp_path)})
    assert response.status_code == 200
    assert response.json() == {"criteria": [], "tally": {}}
