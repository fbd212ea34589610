import logging
import os
import traceback
from uuid import uuid4

from flask import Flask
from flask import g
from flask import jsonify
from flask import request
from werkzeug.exceptions import InternalServerError

import blueprints.api
import config
from core.errors import Error

app = Flask(__name__)
app.register_blueprint(blueprints.api.blueprint, url_prefix="/api")

logger = logging.getLogger(__name__)

# Hook up Flask logging with gunicorn
root_logger = logging.getLogger()
if os.getenv("FLASK_DEBUG") or config.DEBUG_MODE:
    logger.setLevel(logging.DEBUG)
    root_logger.setLevel(logging.DEBUG)
    root_logger.handlers = app.logger.handlers
else:
    gunicorn_logger = logging.getLogger("gunicorn.error")
    root_logger.handlers = gunicorn_logger.handlers
    root_logger.setLevel(gunicorn_logger.level)


def _error_response(doc, status_code):
    response = jsonify({**doc, "request_id": g.request_id})
    response.status_code = status_code
    return response


@app.before_request
def assign_request_id():
    g.request_id = uuid4().hex


@app.after_request
def set_response_headers(response):
    response.headers["X-Powered-By"] = f"certiq/{config.VERSION}"
    response.headers["X-Request-ID"] = g.request_id
    return response


@app.errorhandler(Error)
def handle_certiq_error(error):
    logger.warning(f"{request.method} {request.path} [{g.request_id}] rejected: {error!r}")
    if error.status_code >= 500:
        logger.error("".join(traceback.format_tb(error.__traceback__)))
    return _error_response(error.to_dict(), error.status_code)


# malformed request bodies surface as lookup or conversion errors
@app.errorhandler(ValueError)
@app.errorhandler(KeyError)
@app.errorhandler(TypeError)
def handle_bad_payload(error):
    logger.warning(f"{request.method} {request.path} [{g.request_id}] bad payload: {error!r}")
    message = error.args[0] if error.args else type(error).__name__
    if isinstance(error, KeyError):
        message = f"missing field {message}"
    return _error_response({"message": str(message)}, 400)


@app.errorhandler(InternalServerError)
def handle_500(e):
    tb = "".join(traceback.format_tb(e.__traceback__))
    logger.error(f"{request.method} {request.path} [{g.request_id}] failed: {e!r}, {tb}")
    return _error_response({"message": "internal error"}, 500)


@app.route("/")
def index():
    return jsonify(
        {"name": "certiq", "version": config.VERSION, "endpoints": ["/api/bounds", "/api/verify", "/api/transfer"]}
    )
