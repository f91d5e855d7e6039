import logging

from flask import Blueprint, current_app, jsonify, request

from config import ConfigError
from llm_backends import BackendError, GenerationParams, TraceExhausted

logger = logging.getLogger(__name__)

chat_bp = Blueprint('chat', __name__)


def _error(message, status):
    return jsonify({'error': {'message': message}}), status


@chat_bp.route('/chat/completions', methods=['POST'])
def chat_completions():
    data = request.get_json(silent=True)
    if not data or not isinstance(data.get('messages'), list) or not data['messages']:
        return _error('messages must be a non-empty list', 400)

    backend = current_app.config['MOCK_BACKEND']
    sampling = {k: data[k] for k in GenerationParams.__dataclass_fields__ if k in data}
    try:
        params = GenerationParams.from_dict(sampling)
        messages = [{'role': m['role'], 'content': m['content']} for m in data['messages']]
        reply = backend.generate(messages, params)
    except (KeyError, TypeError, ConfigError) as e:
        return _error(f'malformed request: {e}', 400)
    except TraceExhausted as e:
        return _error(str(e), 409)
    except BackendError as e:
        logger.error(f"Mock backend failed: {e}")
        return _error(str(e), 500)

    return jsonify({
        'object': 'chat.completion',
        'model': data.get('model', backend.name),
        'choices': [{
            'index': 0,
            'message': {'role': 'assistant', 'content': reply},
            'finish_reason': 'stop',
        }],
    }), 200


@chat_bp.route('/models', methods=['GET'])
def list_models():
    backend = current_app.config['MOCK_BACKEND']
    return jsonify({'object': 'list', 'data': [{'id': backend.name, 'object': 'model'}]}), 200
