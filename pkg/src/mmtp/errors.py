"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DegenerateRowError(ValueError):
    """A masked softmax row has no valid position to normalize over."""


class InvalidSceneError(ValueError):
    """A scene violates a structural requirement (e.g. no valid lane)."""


class SceneParseError(ValueError):
    """A scene file is not parseable JSON."""


class SceneSchemaError(ValueError):
    """A scene file parses but violates the scene schema."""


class CheckpointError(ValueError):
    """A checkpoint file is malformed or incompatible with the config."""


class ConfigError(ValueError):
    """A run configuration contains unknown or invalid keys."""
