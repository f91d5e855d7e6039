import logging
import os

from flask import Flask

from llm_backends import create_backend
from routes.chat import chat_bp


def create_app(mock_behavior=None):
    """Local OpenAI-compatible server answering with a mock backend."""
    app = Flask(__name__)

    behavior = mock_behavior or os.getenv('MOCK_BEHAVIOR', 'oracle')
    app.config['MOCK_BACKEND'] = create_backend(f"mock:{behavior}")

    app.register_blueprint(chat_bp, url_prefix='/v1')
    return app


if __name__ == '__main__':
    logging.basicConfig(level=logging.INFO)
    port = int(os.environ.get('PORT', 5000))
    create_app().run(host='127.0.0.1', port=port)
