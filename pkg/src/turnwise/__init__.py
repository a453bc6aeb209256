"""Turn-wise reasoning toolkit.

Data model and codec for multi-turn reasoning traces, segmentation of
monolithic think segments into units, reward and group-advantage math,
an SFT data pipeline, a streaming backend client, a halt/continue turn
controller, and an HTTP gateway exposing live sessions.
"""

from .controller import (
    HaltDecision,
    SessionConfig,
    SessionError,
    SessionResult,
    SessionState,
    TurnRecord,
    decide_halt,
    run_session,
    run_turn,
)
from .core import (
    FormatError,
    MultiTurnResponse,
    Query,
    ThinkTrace,
    ThinkingUnit,
    TokenStats,
    Turn,
    answers_equal,
    extract_boxed,
    normalize_answer,
    parse_multi_turn,
    render_multi_turn,
)

__version__ = "0.1.0"

__all__ = [
    "FormatError",
    "HaltDecision",
    "MultiTurnResponse",
    "Query",
    "SessionConfig",
    "SessionError",
    "SessionResult",
    "SessionState",
    "ThinkTrace",
    "ThinkingUnit",
    "TokenStats",
    "Turn",
    "TurnRecord",
    "answers_equal",
    "decide_halt",
    "extract_boxed",
    "normalize_answer",
    "parse_multi_turn",
    "render_multi_turn",
    "run_session",
    "run_turn",
    "__version__",
]
