"""tmaexport: TMA core images to engine-readable embedding bags."""

__version__ = "0.1.0"
