"""Error types that the CLI maps to distinct exit codes."""


class ConfigError(ValueError):
    """Invalid or infeasible configuration (CLI exit code 2)."""


class DataError(ValueError):
    """Malformed or unreadable corpus / prediction / checkpoint file (CLI exit code 3)."""


class CompatibilityError(ValueError):
    """Checkpoint does not match the corpus it is evaluated against (CLI exit code 4)."""


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss or gradients)."""
