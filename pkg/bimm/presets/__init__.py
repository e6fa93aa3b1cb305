"""Bundled run configurations (``toy``, ``desk``)."""
