"""Total desired power profiles p*(t) and their magnitude and rate bounds.

Every profile is a list of contiguous segments starting at t = 0. A segment
evaluates ``offset + slope * t + amplitude * sin(frequency * t + phase)`` in
absolute time; a segment carries either a ramp or a sinusoid, not both.
Profiles return the magnitude convention of scenario files; the sign for
charging is applied by the controller configuration.
"""

from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

from .errors import OutOfDomain


class ProfileKind(enum.Enum):
    CASE1_SINUSOID = "case1_sinusoid"
    CASE2_PIECEWISE = "case2_piecewise"
    CONSTANT = "constant"
    PIECEWISE = "piecewise"


@dataclass(frozen=True)
class Segment:
    start: float
    end: float
    offset: float = 0.0
    slope: float = 0.0
    amplitude: float = 0.0
    frequency: float = 0.0
    phase: float = 0.0

    def __post_init__(self):
        if not self.end > self.start:
            raise ValueError(f"segment [{self.start}, {self.end}) is empty")
        if self.slope != 0.0 and self.amplitude != 0.0:
            raise ValueError("a segment is either a ramp or a sinusoid")

    def value(self, t: float) -> float:
        v = self.offset + self.slope * t
        if self.amplitude != 0.0:
            v += self.amplitude * math.sin(self.frequency * t + self.phase)
        return v

    def rate(self, t: float) -> float:
        d = self.slope
        if self.amplitude != 0.0:
            d += self.amplitude * self.frequency * math.cos(self.frequency * t + self.phase)
        return d


@dataclass(frozen=True)
class PowerProfile:
    kind: ProfileKind
    segments: tuple[Segment, ...]
    hold_after_end: bool = False
    periodic: bool = False
    params: tuple = field(default=(), compare=True)  # builder arguments, for re-emission

    def __post_init__(self):
        if not self.segments:
            raise ValueError("profile has no segments")
        if self.segments[0].start != 0.0:
            raise ValueError("first segment must start at t = 0")
        for a, b in zip(self.segments, self.segments[1:]):
            if a.end != b.start:
                raise ValueError(f"gap or overlap between segments at t = {a.end}")
        if self.periodic and math.isinf(self.end):
            raise ValueError("an unbounded profile cannot be periodic")

    @property
    def end(self) -> float:
        return self.segments[-1].end

    @cached_property
    def starts(self) -> list[float]:
        return [s.start for s in self.segments]


@dataclass(frozen=True)
class ProfileBounds:
    p_low: float
    p_high: float
    eps: float  # inf when the profile jumps inside the horizon
    eps_smooth: float  # largest rate between jumps
    jumps: tuple[float, ...] = ()


# -- builders -----------------------------------------------------------------


def case1_sinusoid(amplitude: float = 4200.0, offset: float = 4200.0, frequency: float = 1.0, phase: float = 0.0) -> PowerProfile:
    seg = Segment(0.0, math.inf, offset=offset, amplitude=amplitude, frequency=frequency, phase=phase)
    return PowerProfile(ProfileKind.CASE1_SINUSOID, (seg,), params=(amplitude, offset, frequency, phase))


def constant(value: float) -> PowerProfile:
    return PowerProfile(ProfileKind.CONSTANT, (Segment(0.0, math.inf, offset=value),), params=(value,))


def case2_piecewise(periodic: bool = False, hold_after_end: bool = True) -> PowerProfile:
    segments = (
        Segment(0.0, 0.25, offset=1000.0),
        Segment(0.25, 0.5, offset=2000.0, amplitude=1500.0, frequency=5.0),
        Segment(0.5, 0.75, slope=5000.0),
        Segment(0.75, 1.0, offset=6000.0, slope=-4000.0),
    )
    return PowerProfile(
        ProfileKind.CASE2_PIECEWISE, segments, hold_after_end=hold_after_end, periodic=periodic
    )


def piecewise(segments: Sequence[Segment], periodic: bool = False, hold_after_end: bool = False) -> PowerProfile:
    return PowerProfile(ProfileKind.PIECEWISE, tuple(segments), hold_after_end=hold_after_end, periodic=periodic)


# -- evaluation ---------------------------------------------------------------


def desired_power(profile: PowerProfile, t: float) -> float:
    if t < 0:
        raise OutOfDomain(f"profile evaluated at negative time {t}")
    if len(profile.segments) == 1 and t < profile.end:
        return profile.segments[0].value(t)
    if t >= profile.end:
        if profile.periodic:
            t = math.fmod(t, profile.end)
        elif profile.hold_after_end:
            last = profile.segments[-1]
            return last.value(last.end)
        else:
            raise OutOfDomain(f"t={t} is past the profile end {profile.end}")
    k = bisect.bisect_right(profile.starts, t) - 1
    return profile.segments[k].value(t)


def _window_extremes(seg: Segment, a: float, b: float) -> tuple[float, float, float]:
    """(min |p|, max |p|, max |dp/dt|) of one segment over the closed [a, b]."""
    if seg.amplitude == 0.0 or seg.frequency == 0.0:
        va, vb = seg.value(a), seg.value(b)
        lo = 0.0 if va * vb <= 0 else min(abs(va), abs(vb))
        return lo, max(abs(va), abs(vb)), abs(seg.rate(a))

    w, phi, amp = seg.frequency, seg.phase, abs(seg.amplitude)
    if (b - a) * abs(w) >= 2 * math.pi:
        vmax, vmin = seg.offset + amp, seg.offset - amp
        rate = amp * abs(w)
    else:
        values = [seg.value(a), seg.value(b)]
        rates = [abs(seg.rate(a)), abs(seg.rate(b))]
        lo_arg, hi_arg = sorted((w * a + phi, w * b + phi))
        # value extremes where the argument hits pi/2 + k pi, rate extremes at k pi
        k = math.ceil((lo_arg - math.pi / 2) / math.pi)
        while math.pi / 2 + k * math.pi <= hi_arg:
            values.append(seg.value((math.pi / 2 + k * math.pi - phi) / w))
            k += 1
        k = math.ceil(lo_arg / math.pi)
        while k * math.pi <= hi_arg:
            rates.append(abs(seg.rate((k * math.pi - phi) / w)))
            k += 1
        vmax, vmin, rate = max(values), min(values), max(rates)
    lo = 0.0 if vmin <= 0 <= vmax else min(abs(vmin), abs(vmax))
    return lo, max(abs(vmin), abs(vmax)), rate


def profile_bounds(profile: PowerProfile, horizon: float) -> ProfileBounds:
    """Magnitude bounds and rate bound of ``profile`` on [0, horizon]."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    windows = []
    span = min(horizon, profile.end)
    for seg in profile.segments:
        a, b = seg.start, min(seg.end, span)
        if b > a:
            windows.append((seg, a, b))
    if horizon > profile.end and profile.hold_after_end and not profile.periodic:
        last = profile.segments[-1]
        windows.append((Segment(0.0, 1.0, offset=last.value(last.end)), 0.0, 1.0))

    lows, highs, rates = zip(*(_window_extremes(s, a, b) for s, a, b in windows))

    jumps = []
    boundaries = [(a, b, a.end) for a, b in zip(profile.segments, profile.segments[1:])]
    if profile.periodic:
        n_periods = math.ceil(horizon / profile.end)
        wrap = (profile.segments[-1], profile.segments[0], profile.end)
        times = []
        for k in range(n_periods):
            for left, right, tt in boundaries + [wrap]:
                times.append((left, right, k * profile.end + tt))
    else:
        times = boundaries
    for left, right, absolute in times:
        if not 0 < absolute < horizon:
            continue
        lv = left.value(left.end)
        rv = right.value(right.start)
        if abs(lv - rv) > 1e-9 * max(1.0, abs(lv), abs(rv)):
            jumps.append(absolute)

    eps_smooth = max(rates)
    return ProfileBounds(
        p_low=min(lows),
        p_high=max(highs),
        eps=math.inf if jumps else eps_smooth,
        eps_smooth=eps_smooth,
        jumps=tuple(sorted(jumps)),
    )
