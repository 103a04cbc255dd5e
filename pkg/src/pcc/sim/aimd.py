"""Window-based AIMD baseline, paced at cwnd / srtt.

Slow start adds one packet per ack until the first loss; after that each ack
adds ``1/cwnd`` (one packet per window of acks).  A loss multiplies the window
by ``decrease_factor``, at most once per smoothed RTT.
"""

from __future__ import annotations

import math
from typing import NamedTuple

from .scenario import AimdParams

# smoothing gain for per-ack RTT samples
SRTT_GAIN = 0.125


class AimdState(NamedTuple):
    cwnd: float
    ssthresh: float
    srtt: float
    last_decrease: float = -math.inf

    @property
    def rate(self) -> float:
        return self.cwnd / self.srtt


def aimd_initial(params: AimdParams, rtt: float) -> AimdState:
    ssthresh = math.inf if params.slow_start else params.initial_cwnd
    return AimdState(params.initial_cwnd, ssthresh, rtt)


def aimd_on_ack(state: AimdState, params: AimdParams, rtt_sample: float) -> AimdState:
    srtt = state.srtt + SRTT_GAIN * (rtt_sample - state.srtt)
    if state.cwnd < state.ssthresh:
        cwnd = state.cwnd + 1.0
    else:
        cwnd = state.cwnd + 1.0 / state.cwnd
    return AimdState(cwnd, state.ssthresh, srtt, state.last_decrease)


def aimd_on_loss(state: AimdState, params: AimdParams, now: float) -> AimdState:
    if now - state.last_decrease < state.srtt:
        return state
    cwnd = max(params.min_cwnd, state.cwnd * params.decrease_factor)
    return AimdState(cwnd, cwnd, state.srtt, now)
