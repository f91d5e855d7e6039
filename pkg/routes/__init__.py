# Flask blueprints for the local LLM shim
