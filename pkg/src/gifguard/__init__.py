"""GIFGuard: proactive watermarking for animated GIFs."""

__version__ = "0.1.0"
