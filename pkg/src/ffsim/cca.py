"""Congestion control: a window-based ECN scheme and a telemetry-driven one.

Both controllers expose a byte window ``cwnd``. The ECN scheme is ACK-clocked
and reports ``cwnd / srtt`` as its rate; the telemetry scheme controls a paced
rate directly and derives its window from it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence


class Variant(str, Enum):
    DctcpLike = "DctcpLike"
    HpccLike = "HpccLike"


class GuidanceInapplicable(Exception):
    pass


@dataclass(frozen=True)
class CcaParams:
    variant: Variant = Variant.HpccLike
    mtu: int = 1000
    g: float = 1 / 16          # ECN-fraction EWMA gain
    delta: float = 1.0         # additive increase, MSS per RTT
    beta: float = 0.8          # multiplicative factor of delay-based schemes (unused here)
    eta: float = 0.95          # target utilization
    w_ai: float | None = None  # HPCC additive step in bytes per reference RTT; None means 2 * delta * mtu
    max_stage: int = 5
    init_alpha: float = 1.0
    srtt_gain: float = 1 / 8
    rto_min: int = 500_000     # ns
    rto_mult: float = 4.0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if not 0 < self.g <= 1:
            raise ValueError("g must lie in (0, 1]")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        if self.mtu <= 0:
            raise ValueError("mtu must be positive")
        if self.w_ai is None:
            object.__setattr__(self, "w_ai", 2 * self.delta * self.mtu)


@dataclass
class CcaState:
    variant: Variant
    cwnd: float
    alpha: float
    rate: float
    srtt: float
    rtt_base: int
    inflight: int


@dataclass(frozen=True)
class CcaConstants:
    """Inputs of the closed-form oscillation model.

    ``capacity`` is in bytes/ns and ``ecn_k`` in bytes; ``ecn_k=None`` means
    K equals one bandwidth-delay product.
    """
    n_flows: int
    capacity: float
    ecn_k: float | None = None
    mtu: int = 1000
    variant: Variant = Variant.DctcpLike

    def __post_init__(self):
        if self.n_flows < 1:
            raise ValueError("N must be >= 1")
        if self.capacity <= 0:
            raise ValueError("capacity must be positive")


@dataclass(frozen=True)
class Fluctuation:
    eps_relative: float     # upper bound on relative rate fluctuation
    eps_estimate: float     # the tighter sqrt(N / 2(bdp + K)) approximation
    t_c: float              # oscillation period, RTTs
    t_c_ns: float
    w_star: float           # per-flow window at the fixed point, packets
    alpha: float
    amplitude: float        # D, packets


def theoretical_fluctuation(consts: CcaConstants, rtt: float | None = None, *,
                            bdp_pkts: float | None = None) -> Fluctuation:
    """Sawtooth model of ECN-driven window control on a shared bottleneck.

    Give either ``rtt`` (ns, with the bandwidth from ``consts``) or the
    bandwidth-delay product in packets directly.
    """
    if Variant(consts.variant) is not Variant.DctcpLike:
        raise GuidanceInapplicable(f"closed form is derived for DctcpLike only, not {consts.variant}")
    if bdp_pkts is None:
        if rtt is None or rtt <= 0:
            raise ValueError("need a positive rtt or bdp_pkts")
        bdp_pkts = consts.capacity * rtt / consts.mtu
    if rtt is None:
        rtt = bdp_pkts * consts.mtu / consts.capacity
    k_pkts = bdp_pkts if consts.ecn_k is None else consts.ecn_k / consts.mtu
    if k_pkts <= bdp_pkts / 7:
        raise GuidanceInapplicable(f"K={k_pkts:g} pkts must exceed bdp/7={bdp_pkts / 7:g} pkts")
    n = consts.n_flows
    w_star = (bdp_pkts + k_pkts) / n
    alpha = math.sqrt(2 / w_star)
    t_c = math.sqrt((bdp_pkts + k_pkts) / (2 * n))
    return Fluctuation(
        eps_relative=math.sqrt(7 * n / (16 * bdp_pkts)),
        eps_estimate=math.sqrt(n / (2 * (bdp_pkts + k_pkts))),
        t_c=t_c,
        t_c_ns=t_c * rtt,
        w_star=w_star,
        alpha=alpha,
        amplitude=(w_star + 1) * alpha / 2,
    )


@dataclass
class AckInfo:
    newly_acked: int
    ecn: bool
    rtt: int
    snd_una: int
    snd_nxt: int
    tel: Sequence[tuple[int, int, int]] | None = None
    bws: Sequence[float] | None = None
    now: int = 0    # sender-local clock


class Controller:
    variant: Variant
    paced = False

    def __init__(self, params: CcaParams, line_rate: float, base_rtt: int):
        self.p = params
        self.line_rate = line_rate
        self.base_rtt = base_rtt
        self.srtt = float(base_rtt)
        self.cwnd = float(params.mtu)
        self.timeouts = 0

    @property
    def rate(self) -> float:
        return self.cwnd / self.srtt

    @property
    def alpha(self) -> float:
        return 0.0

    def rto(self) -> int:
        return max(self.p.rto_min, int(self.p.rto_mult * self.srtt))

    def _rtt(self, sample: int) -> None:
        self.srtt += self.p.srtt_gain * (sample - self.srtt)

    def permitted(self, inflight: int) -> int:
        return max(0, int(self.cwnd) - inflight)

    def on_ack(self, info: AckInfo) -> int:
        raise NotImplementedError

    def on_timeout(self) -> None:
        raise NotImplementedError

    def set_rate(self, rate: float) -> None:
        """Jump to a known operating point (used when replaying a memoized transient)."""
        self.cwnd = max(float(self.p.mtu), rate * self.srtt)

    def state(self, inflight: int = 0) -> CcaState:
        return CcaState(self.variant, self.cwnd, self.alpha, self.rate, self.srtt, self.base_rtt, inflight)


class DctcpLike(Controller):
    """Slow start, then +1 MSS/RTT; cut by alpha/2 at most once per window on ECN."""

    variant = Variant.DctcpLike

    def __init__(self, params: CcaParams, line_rate: float, base_rtt: int):
        super().__init__(params, line_rate, base_rtt)
        self._alpha = params.init_alpha
        self.ssthresh = math.inf
        self._win_end = 0
        self._win_acked = 0
        self._win_marked = 0
        self._cut_guard = -1

    @property
    def alpha(self) -> float:
        return self._alpha

    def on_ack(self, info: AckInfo) -> int:
        mss = self.p.mtu
        self._rtt(info.rtt)
        acked = info.newly_acked
        self._win_acked += acked
        if info.ecn:
            self._win_marked += acked
        if info.snd_una >= self._win_end and self._win_acked > 0:
            frac = self._win_marked / self._win_acked
            self._alpha += self.p.g * (frac - self._alpha)
            self._win_acked = self._win_marked = 0
            self._win_end = info.snd_nxt
        if info.ecn:
            if info.snd_una > self._cut_guard:
                self.cwnd = max(float(mss), self.cwnd * (1 - self._alpha / 2))
                self.ssthresh = self.cwnd
                self._cut_guard = info.snd_nxt
        elif acked:
            if self.cwnd < self.ssthresh:
                self.cwnd += acked
            else:
                self.cwnd += self.p.delta * mss * acked / self.cwnd
        return self.permitted(info.snd_nxt - info.snd_una)

    def on_timeout(self) -> None:
        self.timeouts += 1
        self.ssthresh = max(float(self.p.mtu), self.cwnd / 2)
        self.cwnd = float(self.p.mtu)


class HpccLike(Controller):
    """Rate control from per-hop queue and tx-rate telemetry.

    The rate is the controlled variable; the window follows as
    ``rate * srtt`` plus one MTU of slack, and the sender is paced at ``rate``.
    """

    variant = Variant.HpccLike
    paced = True

    def __init__(self, params: CcaParams, line_rate: float, base_rtt: int, ref_rtt: int | None = None):
        super().__init__(params, line_rate, base_rtt)
        # one network-wide reference RTT keeps the additive step equal across path lengths
        self.t_ref = ref_rtt or base_rtt
        self.r = self.rc = line_rate
        self.r_ai = params.w_ai / self.t_ref
        self.r_min = params.mtu / (64 * self.t_ref)
        self.u = 0.0
        self.inc_stage = 0
        self._last_ref = -(1 << 62)
        self._prev: Sequence[tuple[int, int, int]] | None = None
        self._sync()

    @property
    def rate(self) -> float:
        return self.r

    def _sync(self) -> None:
        self.cwnd = self.r * self.srtt + self.p.mtu

    def _measure(self, tel, bws) -> float | None:
        prev = self._prev
        if prev is None or len(prev) != len(tel):
            return None
        T = self.t_ref
        u = -1.0
        tau = T
        for (q, txb, ts), (q0, txb0, ts0), bw in zip(tel, prev, bws):
            dt = ts - ts0
            if dt <= 0:
                continue
            u1 = min(q, q0) / (bw * T) + (txb - txb0) / dt / bw
            if u1 > u:
                u = u1
                tau = dt
        if u < 0:
            return None
        tau = min(tau, T)
        self.u = (1 - tau / T) * self.u + (tau / T) * u
        return self.u

    def _adjust(self, u: float, update_ref: bool) -> None:
        p = self.p
        if u >= p.eta or self.inc_stage >= p.max_stage:
            r = self.rc * p.eta / u + self.r_ai
            stage = 0
        else:
            r = self.rc + self.r_ai
            stage = self.inc_stage + 1
        r = min(max(r, self.r_min), self.line_rate)
        self.r = r
        if update_ref:
            self.rc = r
            self.inc_stage = stage

    def on_ack(self, info: AckInfo) -> int:
        self._rtt(info.rtt)
        tel = info.tel
        if tel is not None:
            u = self._measure(tel, info.bws)
            if u is not None and u > 0:
                # the reference rate moves once per reference RTT of elapsed time
                first = info.now - self._last_ref >= self.t_ref
                self._adjust(u, first)
                if first:
                    self._last_ref = info.now
            self._prev = tel
        self._sync()
        return self.permitted(info.snd_nxt - info.snd_una)

    def on_timeout(self) -> None:
        self.timeouts += 1
        self.r = self.rc = self.r_min
        self.inc_stage = 0
        self._sync()

    def set_rate(self, rate: float) -> None:
        self.r = self.rc = min(max(rate, self.r_min), self.line_rate)
        self._sync()


def make_controller(params: CcaParams, line_rate: float, base_rtt: int, ref_rtt: int | None = None) -> Controller:
    """``ref_rtt`` is the network-wide RTT the telemetry scheme normalises by."""
    if params.variant is Variant.DctcpLike:
        return DctcpLike(params, line_rate, base_rtt)
    return HpccLike(params, line_rate, base_rtt, ref_rtt)


def initial_rate(params: CcaParams, line_rate: float, base_rtt: int) -> float:
    """Rate a brand-new flow is credited with before any feedback."""
    if params.variant is Variant.HpccLike:
        return line_rate
    return params.mtu / base_rtt
