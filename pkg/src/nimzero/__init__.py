"""Self-play tree search for nim, with exact oracles to grade it against."""

from nimzero.game import MoveAction, NimBoard

__version__ = "0.1.0"

__all__ = ["MoveAction", "NimBoard", "__version__"]
