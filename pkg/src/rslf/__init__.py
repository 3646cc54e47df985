"""Rolling-shutter light-field structure from motion on sparse matched points."""

__version__ = "0.1.0"
TOOL_NAME = "rslf"
