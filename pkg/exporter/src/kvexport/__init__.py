from .export import ExportConfig, UnsupportedArchitectureError, export_trace

__all__ = ["ExportConfig", "UnsupportedArchitectureError", "export_trace"]
