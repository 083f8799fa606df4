from flask import Flask, request, jsonify, send_file
from flask_cors import CORS
import math
import os
import re
import uuid

import experiment_manager
from config import (
    COMMAND_DEFAULTS,
    DEFAULTS,
    OUTPUT_DIR,
    build_experiment_config,
    configure_logging,
)
from errors import QSenseError

API_VERSION = "1"

configure_logging()

app = Flask(__name__)

# Enable CORS for all routes
# Set CORS_ORIGINS to a comma-separated list to restrict origins
cors_origins = os.environ.get('CORS_ORIGINS', '*')
if cors_origins == '*':
    CORS(app)
else:
    origins = [origin.strip() for origin in cors_origins.split(',')]
    CORS(app, origins=origins)

# fit needs an uploaded CSV and stays CLI only
API_KINDS = list(experiment_manager.RUNNERS)


def sanitize_filename(filename):
    """Sanitize filename to prevent path injection"""
    filename = os.path.basename(filename)
    filename = re.sub(r'[^\w\-_\.]', '_', filename)
    if filename.startswith('.'):
        filename = '_' + filename
    return filename


def temp_download_path(filename):
    """Unique scratch path for one download request"""
    return os.path.join(os.path.abspath(OUTPUT_DIR), f"{uuid.uuid4().hex}_{filename}")


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if hasattr(value, 'item'):
        return _json_safe(value.item())
    return value


def _run_from_request(kind):
    """
    Build a config from the JSON body and run the experiment
    Body: {"seed": int, "reps": int, "threads": int, "overrides": {key: value}}
    """
    data = request.get_json(silent=True) or {}
    overrides = {key: str(value) for key, value in (data.get('overrides') or {}).items()}
    cfg = build_experiment_config(
        kind,
        overrides=overrides,
        seed=data.get('seed'),
        reps=data.get('reps'),
        threads=data.get('threads'),
    )
    return cfg, experiment_manager.run(cfg)


def _error_response(kind, e):
    if isinstance(e, QSenseError):
        return jsonify({"error": str(e)}), 400
    print(f"Error in {kind} experiment: {str(e)}")
    return jsonify({"error": f"Failed to run {kind} experiment"}), 500


@app.route('/api/health', methods=['GET'])
def health_check():
    """Health check endpoint"""
    return jsonify({
        "status": "ok",
        "message": "qsense API is running",
        "version": API_VERSION,
        "experiments": API_KINDS,
    })


@app.route('/api/experiments', methods=['GET'])
def list_experiments():
    """Available experiment kinds with their default settings"""
    experiments = []
    for kind in API_KINDS:
        settings = dict(DEFAULTS)
        settings.update(COMMAND_DEFAULTS[kind])
        experiments.append({
            "kind": kind,
            "defaults": {key: _json_safe(value) if not isinstance(value, list)
                         else [_json_safe(v) for v in value]
                         for key, value in settings.items()},
        })
    return jsonify({"experiments": experiments})


@app.route('/api/experiments/<kind>/download', methods=['POST'])
def download_experiment(kind):
    """
    Run an experiment and return its versioned CSV as an attachment
    Expects JSON body with:
    - seed: unsigned 64-bit integer (required)
    - reps: variance measurements per point (optional)
    - overrides: flat parameter keys, e.g. {"probe.squeeze_db": -1.6} (optional)
    """
    if kind not in API_KINDS:
        return jsonify({"error": f"Unknown experiment '{kind}'"}), 404

    try:
        cfg, output = _run_from_request(kind)

        safe_filename = sanitize_filename(f"{kind}_seed{cfg.seed}.csv")
        temp_filepath = temp_download_path(safe_filename)
        output.write_csv(temp_filepath)

        if os.path.exists(temp_filepath):
            response = send_file(
                temp_filepath,
                as_attachment=True,
                download_name=safe_filename,
                mimetype='text/csv'
            )

            # Clean up file after sending
            @response.call_on_close
            def cleanup():
                try:
                    if os.path.exists(temp_filepath):
                        os.remove(temp_filepath)
                except Exception as e:
                    print(f"Error cleaning up file: {e}")

            return response
        else:
            return jsonify({"error": "File generation failed"}), 500

    except Exception as e:
        return _error_response(kind, e)


@app.route('/api/experiments/<kind>/preview', methods=['POST'])
def preview_experiment(kind):
    """
    Run an experiment and return the first 10 rows as JSON
    Expects same parameters as the download endpoint
    """
    if kind not in API_KINDS:
        return jsonify({"error": f"Unknown experiment '{kind}'"}), 404

    try:
        _, output = _run_from_request(kind)
        df = output.frame

        preview = [{key: _json_safe(value) for key, value in row.items()}
                   for row in df.head(10).to_dict(orient='records')]

        body = {
            "preview": preview,
            "total_rows": len(df),
            "columns": list(df.columns),
            "meta": {key: str(value) for key, value in output.meta.items()},
        }
        if output.fit is not None:
            body["fit"] = output.fit.summary()
        if output.passed is not None:
            body["passed"] = output.passed
        return jsonify(body)

    except Exception as e:
        return _error_response(kind, e)


if __name__ == '__main__':
    port = int(os.environ.get('PORT', 5000))
    app.run(debug=os.environ.get('DEBUG', 'False') == 'True', host='0.0.0.0', port=port)
