"""Configuration: .env file, environment variables and experiment files.

Secrets (the API key) are read from the environment only; experiment files and
command-line flags never carry them, so run directories stay shareable.
"""
import json
import logging
import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

logger = logging.getLogger(__name__)

BASE_DIR = Path(__file__).parent
PROMPTS_DIR = Path(os.getenv("NICOL_PROMPTS_DIR", BASE_DIR / "prompts"))
DATA_DIR = Path(os.getenv("NICOL_DATA_DIR", BASE_DIR / "data"))

DEFAULT_REMOTE_URL = "https://api.openai.com/v1"
DEFAULT_LOCAL_URL = "http://localhost:11434/v1"
DEFAULT_REMOTE_MODEL = "gpt-3.5-turbo-0125"
DEFAULT_LOCAL_MODEL = "llama3:70b-instruct-q8_0"

# Keys an experiment file may set; anything else is a typo worth failing on.
EXPERIMENT_KEYS = {
    "mode", "trials", "memory", "backend", "worker_backend", "params",
    "strict_single_action", "seed", "workers", "tasks", "retention_scoring",
    "context_tokens", "chars_per_token",
}
SECRET_KEYS = {"api_key", "llm_api_key", "openai_api_key"}


class ConfigError(Exception):
    pass


def get_api_key():
    return os.getenv("LLM_API_KEY") or os.getenv("OPENAI_API_KEY")


def get_remote_url():
    return os.getenv("LLM_BASE_URL", DEFAULT_REMOTE_URL)


def get_local_url():
    return os.getenv("LOCAL_LLM_URL", DEFAULT_LOCAL_URL)


def get_remote_model():
    return os.getenv("LLM_MODEL", DEFAULT_REMOTE_MODEL)


def get_local_model():
    return os.getenv("LOCAL_LLM_MODEL", DEFAULT_LOCAL_MODEL)


def load_experiment_file(path):
    """Read a declarative experiment file (JSON) into a plain dict."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Experiment file not found: {path}")

    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"Experiment file {path} is not valid JSON: {e}") from e

    if not isinstance(data, dict):
        raise ConfigError(f"Experiment file {path} must hold a JSON object")

    secrets = SECRET_KEYS.intersection(k.lower() for k in data)
    if secrets:
        raise ConfigError(f"Secrets belong in environment variables, not in {path}: {sorted(secrets)}")

    unknown = set(data) - EXPERIMENT_KEYS
    if unknown:
        raise ConfigError(f"Unknown keys in {path}: {sorted(unknown)}")

    logger.info(f"Loaded experiment file {path}")
    return data


def read_fixture(name, directory=None):
    path = Path(directory or PROMPTS_DIR) / name
    try:
        return path.read_text(encoding="utf-8")
    except FileNotFoundError as e:
        raise ConfigError(f"Missing fixture file: {path}") from e
