"""Cell-averaging periodic homogenization toolkit."""

__version__ = "1.0.0"
