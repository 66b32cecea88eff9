"""Joint beamforming and fluid-antenna position optimization for MU-MIMO."""
try:
    import importlib.metadata as importlib_metadata
except ModuleNotFoundError:
    import importlib_metadata

try:
    __version__ = importlib_metadata.version("fluid-antenna-wsr")
except importlib_metadata.PackageNotFoundError:
    # running from a source checkout
    __version__ = "0.0.0"
