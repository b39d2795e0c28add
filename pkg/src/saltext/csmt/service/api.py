"""
HTTP API of the prover service.

.. code-block:: text

    POST /jobs                       {"kind": "LTR", "payload": {...}} -> 202 {"job_id": ...}
    GET  /jobs/<job_id>              job status
    GET  /jobs/<job_id>/result       result of a finished job
    GET  /studies/<study_id>/artifacts
    GET  /bulletin                   ?study_id=&kind=
    GET  /phr/<user_id>              public PHR digests of a user
    GET  /deliveries                 ?tree_id=&user_id=
"""
import hmac
import logging

from flask import Blueprint
from flask import Flask
from flask import Response
from flask import current_app
from flask import jsonify
from flask import request
from werkzeug.serving import make_server

from saltext.csmt.service.jobs import JobQueue
from saltext.csmt.service.jobs import JobStatus
from saltext.csmt.utils.deployment import Deployment
from saltext.csmt.utils.exceptions import ConfigError
from saltext.csmt.utils.exceptions import CsmtError
from saltext.csmt.utils.exceptions import NotFoundError

log = logging.getLogger(__name__)

main = Blueprint("main", __name__)


def _queue() -> JobQueue:
    return current_app.config["CSMT_QUEUE"]


def _deployment() -> Deployment:
    return current_app.config["CSMT_DEPLOYMENT"]


@main.before_request
def check_token():
    token = current_app.config.get("CSMT_API_TOKEN")
    if not token:
        return None
    supplied = request.headers.get("Authorization", "")
    if not hmac.compare_digest(supplied, f"Bearer {token}"):
        return jsonify({"error": "missing or invalid API token"}), 401
    return None


@main.route("/health", methods=["GET"])
def health():
    return jsonify({"status": "ok", "pipeline": current_app.config.get("CSMT_PIPELINE")})


@main.route("/jobs", methods=["POST"])
def submit_job():
    body = request.get_json(silent=True)
    if not isinstance(body, dict) or "kind" not in body:
        return jsonify({"error": "expected a JSON object with 'kind' and 'payload'"}), 400
    job_id = _queue().submit(body["kind"], body.get("payload", {}))
    return jsonify({"job_id": job_id}), 202


@main.route("/jobs/<job_id>", methods=["GET"])
def job_status(job_id):
    return jsonify(_queue().status(job_id)), 200


@main.route("/jobs/<job_id>/result", methods=["GET"])
def job_result(job_id):
    status = _queue().status(job_id)
    if status["status"] == JobStatus.DONE.value:
        return jsonify({"job_id": job_id, "status": status["status"], "result": _queue().result(job_id)}), 200
    if status["status"] == JobStatus.FAILED.value:
        return jsonify(status), 409
    return jsonify(status), 202


@main.route("/studies/<study_id>/artifacts", methods=["GET"])
def study_artifacts(study_id):
    data = _deployment().download_artifacts(study_id)
    return Response(
        data,
        mimetype="application/zip",
        headers={"Content-Disposition": f"attachment; filename={study_id}.zip"},
    )


@main.route("/bulletin", methods=["GET"])
def bulletin():
    records = _deployment().bulletin.records(request.args.get("study_id"), request.args.get("kind"))
    return jsonify({"public_key": _deployment().bulletin.public_key, "records": records})


@main.route("/phr/<user_id>", methods=["GET"])
def phr_entry(user_id):
    deployment = _deployment()
    return jsonify({**deployment.phr.entry(user_id).to_dict(), "phr_root": deployment.phr.root.hex()})


@main.route("/deliveries", methods=["GET"])
def delivery():
    tree_id = request.args.get("tree_id")
    user_id = request.args.get("user_id")
    if not tree_id or not user_id:
        return jsonify({"error": "tree_id and user_id are required"}), 400
    return jsonify({"h_tau": _deployment().cro.delivery(tree_id, user_id)})


@main.errorhandler(NotFoundError)
def not_found(exc):
    return jsonify({"error": str(exc), "error_type": type(exc).__name__}), 404


@main.errorhandler(ConfigError)
def bad_request(exc):
    return jsonify({"error": str(exc), "error_type": type(exc).__name__}), 400


@main.errorhandler(CsmtError)
def domain_error(exc):
    log.error(f"Request failed: {exc}")
    return jsonify({"error": str(exc), "error_type": type(exc).__name__}), 422


def create_app(deployment=None, queue=None, api_token=None, pipeline=None):
    """
    Flask application around a deployment.

    deployment
        :class:`Deployment`; a fresh in-memory one by default.

    queue
        :class:`JobQueue`; created with the deployment's worker count by default.

    api_token
        Static bearer token required on every request when set.
    """
    deployment = deployment or Deployment()
    queue = queue or JobQueue(deployment, deployment.settings.workers, pipeline)
    app = Flask(__name__)
    app.config["CSMT_DEPLOYMENT"] = deployment
    app.config["CSMT_QUEUE"] = queue
    app.config["CSMT_API_TOKEN"] = api_token if api_token is not None else deployment.settings.api_token
    app.config["CSMT_PIPELINE"] = pipeline
    app.register_blueprint(main)
    return app


def serve(settings, pipeline=None):
    """
    Run the service until interrupted. With ``pipeline`` the conventional port of that
    pipeline is used unless the port was set explicitly.
    """
    deployment = Deployment(settings)
    app = create_app(deployment, pipeline=pipeline)
    server = make_server(settings.host, settings.port, app, threaded=True)
    log.warning(f"Serving {pipeline or 'all'} pipelines on {settings.host}:{settings.port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
        app.config["CSMT_QUEUE"].shutdown()
