"""Author-side toolchain for content-addressed, signed research bundles."""

__version__ = "0.1.0"
