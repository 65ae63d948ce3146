"""Offline attack pipeline: translate, anchor, match."""

from .baseline import controlled_channel_baseline, page_oracle
from .lis import NoAnchorError, find_anchor, longest_increasing_subsequence
from .matching import MatchResult, Segment, fuzzy_match, score
from .oracle import Oracle, Pattern, build_oracle, check_oracle, probe_offset
from .translate import CriticalTrace, find_bursts, translate_trace

__all__ = [
    "CriticalTrace", "MatchResult", "NoAnchorError", "Oracle", "Pattern", "Segment",
    "build_oracle", "check_oracle", "controlled_channel_baseline", "find_anchor", "find_bursts",
    "fuzzy_match", "longest_increasing_subsequence", "page_oracle", "probe_offset", "score",
    "translate_trace",
]
