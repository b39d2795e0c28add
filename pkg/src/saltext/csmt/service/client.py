"""
HTTP client for a remote prover service, usable as verifier endpoints.
"""
import logging
import time

import requests
from requests.adapters import HTTPAdapter
from urllib3.util.retry import Retry

from saltext.csmt.utils import core
from saltext.csmt.utils.exceptions import CsmtError
from saltext.csmt.utils.exceptions import NotFoundError
from saltext.csmt.utils.exceptions import TransportError
from saltext.csmt.utils.proofsys import ProofArtifact

log = logging.getLogger(__name__)


class RemoteEndpoints:
    """
    base_url
        Service root, e.g. ``http://127.0.0.1:5013``.

    token
        Bearer token if the service requires one.

    retries
        Bounded retries for connection errors and 502/503/504 answers.
    """

    def __init__(self, base_url, token=None, retries=3, timeout=30.0, poll_interval=0.05):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.poll_interval = poll_interval
        self.session = requests.Session()
        retry = Retry(
            total=retries,
            backoff_factor=0.2,
            status_forcelist=(502, 503, 504),
            allowed_methods=frozenset({"GET", "POST"}),
        )
        self.session.mount("http://", HTTPAdapter(max_retries=retry))
        self.session.mount("https://", HTTPAdapter(max_retries=retry))
        if token:
            self.session.headers["Authorization"] = f"Bearer {token}"

    def _request(self, method, path, **kwargs):
        try:
            response = self.session.request(method, self.base_url + path, timeout=self.timeout, **kwargs)
        except requests.RequestException as exc:
            raise TransportError(f"{method} {path} failed: {exc}") from None
        if response.status_code == 404:
            raise NotFoundError(response.json().get("error", f"{path} not found"))
        return response

    def _json(self, method, path, **kwargs):
        response = self._request(method, path, **kwargs)
        if response.status_code >= 400:
            raise CsmtError(response.json().get("error", f"{method} {path} answered {response.status_code}"))
        return response.json()

    def run_job(self, kind, payload):
        """
        Submit a job and poll until it finishes; returns its result.
        """
        job_id = self._json("POST", "/jobs", json={"kind": kind, "payload": payload})["job_id"]
        deadline = time.monotonic() + self.timeout
        while True:
            response = self._request("GET", f"/jobs/{job_id}/result")
            if response.status_code == 200:
                return response.json()["result"]
            if response.status_code == 409:
                status = response.json()
                raise CsmtError(f"{kind} job failed: {status['error']}")
            if time.monotonic() > deadline:
                raise TransportError(f"{kind} job {job_id} did not finish in {self.timeout}s")
            time.sleep(self.poll_interval)

    def root_record(self, study_id, tree_id=None):
        records = self._json("GET", "/bulletin", params={"study_id": study_id, "kind": "root"})["records"]
        records = [record for record in records if tree_id is None or record["body"]["tree_id"] == tree_id]
        if not records:
            raise NotFoundError(f"Study {study_id} has no published tree")
        return records[-1]

    def statistic_record(self, study_id, kind=None):
        records = self._json("GET", "/bulletin", params={"study_id": study_id, "kind": "statistic"})["records"]
        records = [record for record in records if kind is None or record["body"]["kind"] == kind]
        if not records:
            raise NotFoundError(f"Study {study_id} has no published statistic")
        return records[-1]

    def bulletin_public_key(self):
        return self._json("GET", "/bulletin", params={"kind": "none"})["public_key"]

    def phr_entry(self, user_id):
        return self._json("GET", f"/phr/{user_id}")

    def delivery(self, study_id, tree_id, user_id):
        return self._json("GET", "/deliveries", params={"tree_id": tree_id, "user_id": user_id})["h_tau"]

    def ltr_prove(self, h_raw, h_tau, transform_id):
        result = self.run_job(
            "LTR", {"h_raw": bytes(h_raw).hex(), "h_tau": bytes(h_tau).hex(), "transform_id": transform_id}
        )
        return core.Digest.from_hex(result["h_leaf"]), int(result["index"]), ProofArtifact.from_dict(result["artifact"])

    def mrp_prove(self, h_leaf, index, nonce, h_root):
        payload = {"h_leaf": bytes(h_leaf).hex(), "index": index, "nonce": bytes(nonce).hex()}
        if h_root is not None:
            payload["root"] = bytes(h_root).hex()
        result = self.run_job("MRP", payload)
        return (
            core.Digest.from_hex(result["root"]),
            tuple(ProofArtifact.from_dict(hop) for hop in result["hops"]),
            tuple(result["path"]),
        )

    def download_artifacts(self, study_id):
        response = self._request("GET", f"/studies/{study_id}/artifacts")
        if response.status_code >= 400:
            raise CsmtError(f"Artifact download answered {response.status_code}")
        return response.content
