"""avatarforge: text-driven 3D avatar generation and animation toolkit."""

__version__ = "0.1.0"
