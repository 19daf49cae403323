"""Exception types shared across the engine.

Everything raised on purpose derives from EngineError so the CLI can map
it to exit code 2; anything else escaping is a genuine bug.
"""


class EngineError(Exception):
    """Base class for expected runtime failures."""


class ParseError(EngineError):
    """Malformed input file; message names the offending line."""


class DataError(EngineError):
    """Structurally invalid dataset, vocabulary, or embedding table."""


class ConfigError(EngineError):
    """Bad configuration value or unknown config key."""


class CheckpointError(EngineError):
    """Unreadable checkpoint or dimension mismatch on load."""
