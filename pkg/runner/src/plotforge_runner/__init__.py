"""Minimal in-runtime executor for one candidate plotting script.

Runs a single payload headlessly, captures figure artifacts (including
figures that were shown or drawn but never saved), and reports exactly one
JSON result line on stdout. Timeout enforcement lives in the parent
supervisor; this process just dies politely when interrupted, flushing its
result line if it still can.
"""

__version__ = "0.1.0"

from .runner import run_payload, main  # noqa: F401
