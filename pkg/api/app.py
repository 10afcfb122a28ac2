"""
DriveLens Flask Application
REST surface over the trip analysis pipeline
"""

import logging
import os
import sys
from datetime import datetime

from dotenv import load_dotenv
from flask import Flask, jsonify, request
from flask_cors import CORS

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from ml.config import load_config
from ml.errors import DriveLensError
from ml.explainer import Explainer, make_event
from ml.guards import AuditLogger
from ml.pipeline import DriveLensPipeline, RunConfig
from ml.som import GenerativeEvents, load_codebook
from ml.trip_model import load_trip

load_dotenv()

logger = logging.getLogger(__name__)

VERSION = "1.0.0"


def _error(message: str, status: int):
    return jsonify({'error': message, 'status': 'error'}), status


def create_app(config=None, data_dir=None):
    """Create and configure the Flask application"""
    app = Flask(__name__)
    CORS(app)

    app.drivelens_config = config or load_config(os.getenv('DRIVELENS_CONFIG'))
    app.audit_logger = AuditLogger(os.getenv('DRIVELENS_AUDIT_LOG'))
    app.data_dir = os.path.realpath(data_dir or os.getenv('DRIVELENS_DATA_DIR') or 'data')
    app.codebooks = {}
    app.explainer = None

    def resolve_data_path(path: str):
        """Request paths resolve under the data directory; anything outside is None"""
        full = os.path.realpath(os.path.join(app.data_dir, path))
        if os.path.commonpath([full, app.data_dir]) != app.data_dir:
            return None
        return full

    def get_explainer() -> Explainer:
        if app.explainer is None:
            cfg = app.drivelens_config.explain
            app.explainer = Explainer.from_paths(cfg.corpus_path, cfg.lexicon_path)
        return app.explainer

    def get_codebook(path: str, spec):
        key = (os.path.abspath(path), spec.spec_hash())
        if key not in app.codebooks:
            app.codebooks[key] = load_codebook(path, spec)
        return app.codebooks[key]

    # ========================
    # API Routes
    # ========================

    @app.route('/api/health', methods=['GET'])
    def health_check():
        """Health check endpoint"""
        return jsonify({
            'status': 'healthy',
            'timestamp': datetime.now().isoformat(),
            'version': VERSION
        })

    @app.route('/api/analyze', methods=['POST'])
    def analyze_trip():
        """
        Run the pipeline on one trip file.

        Paths in the body are relative to the data directory (DRIVELENS_DATA_DIR) and
        may not leave it. DRIVELENS_CODEBOOK is used as given when no codebook is named.

        Request body:
            {
                "trip_path": "trips/trip.jsonl",
                "codebook_path": "codebook.som",
                "topk": 5,
                "feature_set": "all"
            }
        """
        data = request.get_json(silent=True) or {}
        trip_path = data.get('trip_path')
        codebook_path = data.get('codebook_path') or os.getenv('DRIVELENS_CODEBOOK')
        if not trip_path or not codebook_path:
            return _error('trip_path and codebook_path are required', 400)

        trip_file = resolve_data_path(str(trip_path))
        codebook_file = resolve_data_path(str(data['codebook_path'])) if data.get('codebook_path') \
            else codebook_path
        for path, resolved in ((trip_path, trip_file), (codebook_path, codebook_file)):
            if resolved is None:
                return _error(f'Path outside the data directory: {path}', 403)
            if not os.path.exists(resolved):
                return _error(f'File not found: {path}', 404)

        try:
            run_config = RunConfig(config=app.drivelens_config, codebook_path=codebook_file,
                                   topk=data.get('topk'), feature_set=data.get('feature_set', 'all'))
            run_config.validate(needs_codebook=True)
            codebook = get_codebook(codebook_file, run_config.spec)
            pipeline = DriveLensPipeline(run_config, codebook, get_explainer(), app.audit_logger)
            reports = pipeline.run(load_trip(trip_file))
        except DriveLensError as e:
            return _error(str(e), 400)
        except Exception as e:
            logger.exception("Analysis failed")
            return _error(str(e), 500)

        return jsonify({
            'status': 'success',
            'trip_path': trip_path,
            'fluctuations': len(reports),
            'reports': [r.to_dict() for r in reports]
        })

    @app.route('/api/explain', methods=['POST'])
    def explain_events():
        """
        Render generative events into an explanation.

        Request body, either a stored F_GEN or feature names with levels:
            {"trip_id": "t1", "window_index": 3, "f_gen": {"k": 5, "bmu": 0, "events": [...]}}
            {"events": [{"feature": "A_J", "level": 1.0}, {"feature": "P"}]}
        """
        data = request.get_json(silent=True) or {}
        try:
            if 'f_gen' in data:
                f_gen = GenerativeEvents.from_dict(data['f_gen'])
            elif data.get('events'):
                events = tuple(make_event(str(e['feature']), float(e.get('level', 1.0)),
                                          float(e.get('weight', 1.0))) for e in data['events'])
                f_gen = GenerativeEvents(events, len(events), -1)
            else:
                return _error('f_gen or events is required', 400)
            report = get_explainer().explain(str(data.get('trip_id', '')),
                                             int(data.get('window_index', 0)), f_gen)
        except DriveLensError as e:
            return _error(str(e), 400)
        except (KeyError, TypeError, ValueError) as e:
            return _error(f'Malformed request: {e}', 400)
        except Exception as e:
            logger.exception("Explanation failed")
            return _error(str(e), 500)

        return jsonify({'status': 'success', 'report': report.to_dict()})

    @app.route('/api/audit-log', methods=['GET'])
    def get_audit_log():
        """Audit events of this server session"""
        limit = int(request.args.get('limit', 100))
        offset = int(request.args.get('offset', 0))

        events = app.audit_logger.events
        return jsonify({
            'status': 'success',
            'session_id': app.audit_logger.session_id,
            'total': len(events),
            'limit': limit,
            'offset': offset,
            'logs': events[offset:offset + limit]
        })

    return app


if __name__ == '__main__':
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    app = create_app()
    logger.info("DriveLens API on http://localhost:5000, data in %s", app.data_dir)
    logger.info("   * GET  /api/health     - Health check")
    logger.info("   * POST /api/analyze    - Explain the fluctuations of a trip")
    logger.info("   * POST /api/explain    - Render generative events")
    logger.info("   * GET  /api/audit-log  - Audit events of this session")
    app.run(debug=os.getenv('FLASK_DEBUG') == '1', host='0.0.0.0', port=int(os.getenv('PORT', 5000)))
