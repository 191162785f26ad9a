"""Log-log rate fits and the convergence table."""

from dataclasses import dataclass, field
import logging
import math

import numpy as np

log = logging.getLogger(__name__)


class RateError(ValueError):
    pass


@dataclass
class RateFit:
    slope: float
    intercept: float
    residual: float
    n: int
    excluded: int = 0

    def as_dict(self):
        return {"slope": self.slope, "intercept": self.intercept,
                "residual": self.residual, "n": self.n, "excluded": self.excluded}


def fit_rate(hs, values, min_rows=3):
    """Least-squares slope of log(value) against log(h).

    Nonpositive or non-finite values are dropped with a warning; fewer than
    min_rows usable rows is an error."""
    hs = np.asarray(hs, dtype=float)
    values = np.asarray(values, dtype=float)
    if hs.shape != values.shape:
        raise RateError("h and value arrays differ in length")
    ok = np.isfinite(values) & (values > 0) & (hs > 0)
    dropped = int(np.sum(~ok))
    if dropped:
        log.warning("fit_rate: %d nonpositive rows excluded", dropped)
    if ok.sum() < min_rows:
        raise RateError(f"need at least {min_rows} positive rows, have {int(ok.sum())}")
    x, y = np.log(hs[ok]), np.log(values[ok])
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    r = y - A @ coef
    return RateFit(float(coef[0]), float(coef[1]), float(math.sqrt(np.mean(r ** 2))),
                   int(ok.sum()), dropped)


@dataclass
class ConvergenceTable:
    rows: list = field(default_factory=list)       # (h, norm_name, value)
    digest: str = ""
    failures: dict = field(default_factory=dict)   # h -> message
    notes: dict = field(default_factory=dict)

    def add(self, h, name, value):
        self.rows.append((float(h), str(name), float(value)))

    def names(self):
        seen = []
        for _, n, _ in self.rows:
            if n not in seen:
                seen.append(n)
        return seen

    def series(self, name):
        pts = sorted(((h, v) for h, n, v in self.rows if n == name), key=lambda p: -p[0])
        return np.array([p[0] for p in pts]), np.array([p[1] for p in pts])

    def hs(self):
        return sorted({h for h, _, _ in self.rows}, reverse=True)

    def slope(self, name, min_rows=3):
        """RateFit or None when the series is too short or identically zero."""
        hs, vals = self.series(name)
        if len(hs) and not np.any(vals > 0):
            return None
        try:
            return fit_rate(hs, vals, min_rows)
        except RateError:
            return None

    def slopes(self, names=None):
        out = {}
        for n in names or self.names():
            f = self.slope(n)
            out[n] = f.as_dict() if f is not None else None
        return out

    def check_decreasing(self):
        hs = self.hs()
        if any(a <= b for a, b in zip(hs, hs[1:])):
            raise RateError("h values must be strictly decreasing")
        return True


def floor_protocol(coarse, fine, max_change=0.2):
    """Slopes from two grid resolutions agree to within max_change."""
    if coarse is None or fine is None:
        return {"accepted": False, "change": None}
    change = abs(coarse - fine)
    return {"accepted": bool(change < max_change), "change": float(change)}
