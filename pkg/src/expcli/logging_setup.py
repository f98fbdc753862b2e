"""
ログ設定 - rich の RichHandler をルートロガーに一度だけ取り付ける
"""

import logging
from typing import Optional

from rich.console import Console
from rich.logging import RichHandler

_HANDLER: Optional[RichHandler] = None


def setup_logging(level: str = "INFO", console: Optional[Console] = None) -> logging.Logger:
    global _HANDLER
    root = logging.getLogger()
    numeric = logging.getLevelName(level.upper())
    if not isinstance(numeric, int):
        numeric = logging.INFO
    if _HANDLER is None:
        _HANDLER = RichHandler(console=console or Console(stderr=True), show_path=False, rich_tracebacks=True)
        _HANDLER.setFormatter(logging.Formatter("%(name)s: %(message)s"))
        root.addHandler(_HANDLER)
    root.setLevel(numeric)
    return root
