class ExporterError(Exception):
    category = "error"


class ConfigError(ExporterError, ValueError):
    category = "invalid-input"


class ModelLoadError(ExporterError, RuntimeError):
    category = "model-load"


class SchemaError(ExporterError, ValueError):
    category = "trace-format"
