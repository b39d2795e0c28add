import threading
import time

import pytest
from saltext.csmt.service import api
from saltext.csmt.service import jobs
from saltext.csmt.service.jobs import JobQueue
from saltext.csmt.utils import bulletin
from saltext.csmt.utils.deployment import read_artifacts

CAG = {"id": "cag-bins", "kind": "bincount", "bins": [0, 11, 22, 33, 44, 55, 66, 77, 88, 99, 110, 121, 132]}
RECORDS = [["p-001", [44.0]], ["p-002", [18.0]], ["p-003", [51.0]]]
TOKEN = "s3cret"


@pytest.fixture
def app(deployment):
    queue = JobQueue(deployment, workers=2)
    app = api.create_app(deployment, queue)
    yield app
    queue.shutdown()


@pytest.fixture
def client(app):
    return app.test_client()


def _finish(client, job_id, timeout=60):
    deadline = time.monotonic() + timeout
    while True:
        response = client.get(f"/jobs/{job_id}/result")
        if response.status_code != 202 or time.monotonic() > deadline:
            return response
        time.sleep(0.02)


def _build(client):
    payload = {"study_id": "hd", "transform": CAG, "records": RECORDS}
    response = client.post("/jobs", json={"kind": "BUILD", "payload": payload})
    assert response.status_code == 202
    result = _finish(client, response.get_json()["job_id"])
    assert result.status_code == 200
    return result.get_json()["result"]


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    assert response.get_json() == {"status": "ok", "pipeline": None}


def test_job_lifecycle(client):
    built = _build(client)
    assert built["tree_id"] == "hd/cag-bins"
    response = client.post("/jobs", json={"kind": "LTR", "payload": {"study_id": "hd", "user_id": "p-002"}})
    job_id = response.get_json()["job_id"]
    result = _finish(client, job_id)
    assert result.status_code == 200
    assert result.get_json()["status"] == "done"
    assert client.get(f"/jobs/{job_id}").get_json()["kind"] == "LTR"


def test_failed_job_answers_conflict(client):
    response = client.post("/jobs", json={"kind": "MRP", "payload": {"h_leaf": "00" * 32, "index": 0, "nonce": "00"}})
    result = _finish(client, response.get_json()["job_id"])
    assert result.status_code == 409
    assert result.get_json()["error_type"] == "NotBuiltError"


def test_pending_job_answers_accepted(client, monkeypatch):
    release = threading.Event()

    def blocked(*_):
        release.wait(30)
        return {"released": True}

    monkeypatch.setitem(jobs.RUNNERS, jobs.JobKind.AUDIT, blocked)
    job_id = client.post("/jobs", json={"kind": "AUDIT", "payload": {}}).get_json()["job_id"]
    response = client.get(f"/jobs/{job_id}/result")
    assert response.status_code == 202
    assert response.get_json()["status"] in ("queued", "running")
    release.set()
    assert _finish(client, job_id).get_json()["result"] == {"released": True}


def test_bad_requests(client):
    assert client.post("/jobs", data="nope", content_type="text/plain").status_code == 400
    assert client.post("/jobs", json={"payload": {}}).status_code == 400
    response = client.post("/jobs", json={"kind": "SORT", "payload": {}})
    assert response.status_code == 400
    assert response.get_json()["error_type"] == "ConfigError"
    assert client.get("/jobs/missing").status_code == 404
    assert client.get("/jobs/missing/result").status_code == 404
    assert client.get("/deliveries?tree_id=hd/cag-bins").status_code == 400


def test_public_endpoints(client, deployment):
    _build(client)
    response = client.get("/bulletin?study_id=hd&kind=root")
    data = response.get_json()
    assert data["public_key"] == deployment.bulletin.public_key
    assert len(data["records"]) == 1
    assert bulletin.verify_record(data["records"][0], data["public_key"])
    entry = client.get("/phr/p-001").get_json()
    assert entry["h_raw"] == deployment.phr.entry("p-001").h_raw.hex()
    assert entry["phr_root"] == deployment.phr.root.hex()
    assert client.get("/phr/p-404").status_code == 404
    delivery = client.get("/deliveries?tree_id=hd/cag-bins&user_id=p-003").get_json()
    assert delivery["h_tau"] == deployment.phr.entry("p-003").h_tau.hex()
    assert client.get("/deliveries?tree_id=hd/cag-bins&user_id=p-404").status_code == 404


def test_artifacts_download(client, deployment):
    _build(client)
    response = client.get("/studies/hd/artifacts")
    assert response.status_code == 200
    assert response.mimetype == "application/zip"
    assert "hd.zip" in response.headers["Content-Disposition"]
    assert response.data == deployment.download_artifacts("hd")
    assert "bulletin_public_key.txt" in read_artifacts(response.data)
    assert client.get("/studies/unknown/artifacts").status_code == 404


def test_api_token(deployment):
    queue = JobQueue(deployment, workers=1)
    client = api.create_app(deployment, queue, api_token=TOKEN).test_client()
    try:
        assert client.get("/health").status_code == 401
        assert client.get("/health", headers={"Authorization": "Bearer wrong"}).status_code == 401
        assert client.get("/health", headers={"Authorization": f"Bearer {TOKEN}"}).status_code == 200
    finally:
        queue.shutdown()
