"""Periodic Euler-Bernoulli beam system solved mode by mode.

    d_t^2 v + diag(I2, I3) d_1^4 v = g,   v L-periodic,   v = (v2, v3).

A real field v(x1) is stored by its nonnegative Fourier coefficients
    v(x1) = sum_{k=-K}^{K} vhat_k exp(2 pi i k x1 / L),  vhat_{-k} = conj(vhat_k),
as a complex array of shape (2, K + 1).  Each mode is a forced harmonic
oscillator with frequency omega_k = sqrt(I_j) (2 pi k / L)^2 and is advanced
by variation of constants with g linear in t on every step.
"""

from dataclasses import dataclass, field
import math

import numpy as np


class CapabilityError(RuntimeError):
    """A requested derivative or quantity is not available."""


class BandLimitError(ValueError):
    pass


def wavenumbers(n_modes, L):
    return 2.0 * np.pi * np.arange(n_modes + 1) / L


# ---------------------------------------------------------------- forcing

@dataclass
class ForcingSpec:
    """Forcing g(x1, t) given by a callable returning Fourier coefficients.

    coeffs(t, order, n_modes) -> (2, n_modes + 1) complex array of
    d_t^order ghat(t).  `t_order` is the number of available time
    derivatives (None means unlimited).
    """
    name: str
    coeffs_fn: object = None
    t_order: int = None
    x_order: int = None
    params: dict = field(default_factory=dict)

    def coeffs(self, t, order=0, n_modes=0):
        if self.t_order is not None and order > self.t_order:
            raise CapabilityError(
                f"forcing {self.name!r} provides {self.t_order} time derivatives, {order} requested")
        if self.coeffs_fn is None:
            return np.zeros((2, n_modes + 1), dtype=complex)
        c = np.asarray(self.coeffs_fn(t, order, n_modes), dtype=complex)
        if np.any(np.abs(c[:, 0]) > 0):
            raise ValueError("forcing has a nonzero mean (mode 0); subtract it first")
        return c

    def scaled(self, factor):
        if self.coeffs_fn is None:
            return self
        fn = self.coeffs_fn
        return ForcingSpec(self.name, lambda t, o, n: factor * fn(t, o, n),
                           self.t_order, self.x_order, dict(self.params, scale=factor))


def zero_forcing():
    return ForcingSpec("zero")


def single_mode_forcing(k=1, amplitude=1.0, component=2, L=1.0, frequency=1.0,
                        phase=0.0, ramp=0.0):
    """g_j = amplitude * env(t) * cos(2 pi k x1 / L) with
    env(t) = cos(frequency t + phase) * (1 - exp(-t / ramp)) when ramp > 0,
    env(t) = cos(frequency t + phase) otherwise."""
    if k < 1:
        raise ValueError("single-mode forcing needs k >= 1 (mean-free)")
    j = {2: 0, 3: 1}[int(component)]

    def env(t, order):
        # derivatives of cos(w t + p) times the smooth ramp, by Leibniz
        def cosd(n):
            return frequency ** n * math.cos(frequency * t + phase + 0.5 * n * math.pi)

        if ramp <= 0:
            return cosd(order)
        out = 0.0
        for m in range(order + 1):
            e = math.exp(-t / ramp)
            rd = (1.0 - e) if m == 0 else -((-1.0 / ramp) ** m) * e
            out += math.comb(order, m) * rd * cosd(order - m)
        return out

    def fn(t, order, n_modes):
        c = np.zeros((2, n_modes + 1), dtype=complex)
        if k <= n_modes:
            c[j, k] = 0.5 * amplitude * env(t, order)
        return c

    return ForcingSpec("single-mode", fn, None, None,
                       dict(k=k, amplitude=amplitude, component=component, L=L,
                            frequency=frequency, phase=phase, ramp=ramp))


FORCING_REGISTRY = {"zero": zero_forcing, "none": zero_forcing,
                    "single-mode": single_mode_forcing}


def make_forcing(name, **params):
    try:
        return FORCING_REGISTRY[name](**params)
    except KeyError:
        raise ValueError(f"unknown forcing {name!r}") from None


# ---------------------------------------------------------------- data helpers

def single_mode(k, amplitude, component, n_modes, phase=0.0):
    """Coefficients of amplitude * cos(2 pi k x1 / L + phase) e_component."""
    c = np.zeros((2, n_modes + 1), dtype=complex)
    j = {2: 0, 3: 1}[int(component)]
    if k == 0:
        c[j, 0] = amplitude * math.cos(phase)
    else:
        c[j, k] = 0.5 * amplitude * np.exp(1j * phase)
    return c


def coeffs_from_samples(values, n_modes, tol=1e-12):
    """Fourier coefficients from samples on the uniform grid x1 = m L / n.

    values has shape (2, n).  Content above n_modes is rejected."""
    values = np.asarray(values, dtype=float)
    n = values.shape[-1]
    c = np.fft.rfft(values, axis=-1) / n
    if c.shape[-1] <= n_modes:
        raise BandLimitError("too few samples for the requested number of modes")
    scale = max(1.0, np.max(np.abs(c)))
    if np.any(np.abs(c[:, n_modes + 1:]) > tol * scale):
        raise BandLimitError(f"data contains modes above n_modes = {n_modes}")
    return c[:, :n_modes + 1].copy()


def check_band(c, n_modes, name="data"):
    c = np.asarray(c, dtype=complex)
    if c.ndim != 2 or c.shape[0] != 2:
        raise ValueError(f"{name} must have shape (2, K + 1)")
    if c.shape[1] > n_modes + 1:
        if np.any(np.abs(c[:, n_modes + 1:]) > 0):
            raise BandLimitError(f"{name} contains modes above n_modes = {n_modes}")
        c = c[:, :n_modes + 1]
    out = np.zeros((2, n_modes + 1), dtype=complex)
    out[:, :c.shape[1]] = c
    out[:, 0] = out[:, 0].real
    return out


def to_grid(c, L, n_points, order=0):
    """Real values of d_1^order v on x1 = m L / n_points, shape (2, n_points)."""
    c = np.asarray(c, dtype=complex)
    K = c.shape[-1] - 1
    if n_points < 2 * K + 1:
        raise ValueError("grid too coarse for the stored modes")
    kap = wavenumbers(K, L)
    d = c * (1j * kap) ** order
    full = np.zeros(c.shape[:-1] + (n_points // 2 + 1,), dtype=complex)
    full[..., :K + 1] = d
    return np.fft.irfft(full * n_points, n=n_points, axis=-1)


def sobolev_norm(c, L, m):
    """||v||_{H^m(0,L)} with sum_{q<=m} ||d^q v||^2 (negative m: dual weight)."""
    c = np.asarray(c, dtype=complex)
    K = c.shape[-1] - 1
    kap = wavenumbers(K, L)
    mult = np.full(K + 1, 2.0)
    mult[0] = 1.0
    if m >= 0:
        w = sum(kap ** (2 * q) for q in range(m + 1))
    else:
        w = (1.0 + kap ** 2) ** m
    return float(math.sqrt(L * np.sum(mult * w * np.abs(c) ** 2)))


def smallness_norms(v0, v1, g, L, n_modes):
    """The three smallness quantities the data are scaled against:
    ||v0||_{H^8}, ||v1||_{H^5} and max_s ||d_t^s g(0)||_{H^{2-2s}}."""
    gs = []
    for s in range(3):
        try:
            gs.append(sobolev_norm(g.coeffs(0.0, s, n_modes), L, 2 - 2 * s))
        except CapabilityError:
            break
    return {"v0_H8": sobolev_norm(v0, L, 8), "v1_H5": sobolev_norm(v1, L, 5),
            "g_max": max(gs) if gs else 0.0}


# ---------------------------------------------------------------- solver

def _phi(w, tau):
    """c = cos(w tau), s = sin(w tau)/w, p1 = (1 - cos)/w^2, p2 = (tau - sin/w)/w^2,
    stable for small w tau."""
    x = w * tau
    small = np.abs(x) < 1e-3
    ws = np.where(small, 1.0, w)
    c = np.cos(x)
    s = np.where(small, tau * (1 - x ** 2 / 6 + x ** 4 / 120), np.sin(x) / ws)
    p1 = np.where(small, tau ** 2 * (0.5 - x ** 2 / 24 + x ** 4 / 720),
                  2.0 * np.sin(0.5 * x) ** 2 / ws ** 2)
    p2 = np.where(small, tau ** 3 * (1.0 / 6 - x ** 2 / 120 + x ** 4 / 5040),
                  (tau - np.sin(x) / ws) / ws ** 2)
    return c, s, p1, p2


def _propagate(v, vt, g0, g1, w, tau, dt):
    """Exact step over tau for g linear from g0 (at 0) with slope (g1-g0)/dt."""
    c, s, p1, p2 = _phi(w, tau)
    b = (g1 - g0) / dt
    vn = c * v + s * vt + p1 * g0 + p2 * b
    # derivative: d/dtau of the above
    vtn = -w ** 2 * s * v + c * vt + s * g0 + p1 * b
    return vn, vtn


@dataclass
class BeamTrajectory:
    L: float
    T: float
    dt: float
    n_modes: int
    I2: float
    I3: float
    times: np.ndarray
    vhat: np.ndarray      # (n_t, 2, K + 1)
    vhat_t: np.ndarray    # (n_t, 2, K + 1)
    forcing: ForcingSpec
    derivatives: tuple = None   # v^0 .. v^4 coefficient arrays at t = 0

    @property
    def omega(self):
        kap = wavenumbers(self.n_modes, self.L)
        return np.sqrt(np.array([self.I2, self.I3]))[:, None] * kap[None, :] ** 2

    def state(self, t):
        """Exact (vhat, vhat_t, vhat_tt) at time t in [0, T]."""
        if t < -1e-12 * max(1.0, self.T) or t > self.T * (1 + 1e-12) + 1e-14:
            raise ValueError(f"t = {t} outside the horizon [0, {self.T}]")
        t = min(max(t, 0.0), self.T)
        n = min(int(math.floor(t / self.dt + 1e-9)), len(self.times) - 2)
        n = max(n, 0)
        tau = t - self.times[n]
        K = self.n_modes
        g0 = self.forcing.coeffs(self.times[n], 0, K)
        g1 = self.forcing.coeffs(self.times[n + 1], 0, K)
        w = self.omega
        v, vt = _propagate(self.vhat[n], self.vhat_t[n], g0, g1, w, tau, self.dt)
        gt = g0 + (g1 - g0) * tau / self.dt
        vtt = gt - w ** 2 * v
        return v, vt, vtt

    def energy(self):
        """Per-mode energies E_k(t) = |d_t v|^2 + I_j kappa^4 |v|^2, shape (n_t, 2, K + 1)."""
        w = self.omega
        return np.abs(self.vhat_t) ** 2 + (w ** 2) * np.abs(self.vhat) ** 2

    def export(self, path):
        with open(path, "w") as fh:
            fh.write("# t k Re_v2 Im_v2 Re_v3 Im_v3\n")
            for n, t in enumerate(self.times):
                for k in range(self.n_modes + 1):
                    a, b = self.vhat[n, 0, k], self.vhat[n, 1, k]
                    fh.write(f"{t:.12e} {k} {a.real:.16e} {a.imag:.16e} "
                             f"{b.real:.16e} {b.imag:.16e}\n")


def solve_beam(g, v0, v1, moments, L, T, n_modes, dt):
    """Advance every Fourier mode of the beam system from (v0, v1) to T."""
    if dt <= 0 or T < 0 or L <= 0:
        raise ValueError("need dt > 0, T >= 0 and L > 0")
    if moments.I2 <= 0 or moments.I3 <= 0:
        raise ValueError("bending weights must be positive")
    g = g if g is not None else zero_forcing()
    v0 = check_band(v0, n_modes, "v0")
    v1 = check_band(v1, n_modes, "v1")
    nt = max(1, int(math.ceil(T / dt - 1e-9)))
    dt_eff = T / nt if T > 0 else dt
    times = np.arange(nt + 1) * dt_eff
    kap = wavenumbers(n_modes, L)
    w = np.sqrt(np.array([moments.I2, moments.I3]))[:, None] * kap[None, :] ** 2
    V = np.empty((nt + 1, 2, n_modes + 1), dtype=complex)
    Vt = np.empty_like(V)
    V[0], Vt[0] = v0, v1
    g_prev = g.coeffs(times[0], 0, n_modes)
    for n in range(nt):
        g_next = g.coeffs(times[n + 1], 0, n_modes)
        V[n + 1], Vt[n + 1] = _propagate(V[n], Vt[n], g_prev, g_next, w, dt_eff, dt_eff)
        g_prev = g_next
    traj = BeamTrajectory(L, T, dt_eff, n_modes, moments.I2, moments.I3, times, V, Vt, g)
    try:
        traj.derivatives = beam_time_derivatives(v0, v1, g, moments, L)
    except CapabilityError:
        traj.derivatives = None
    return traj


def beam_time_derivatives(v0, v1, g, moments, L):
    """(v^0, ..., v^4) = d_t^j v at t = 0 from the beam equation."""
    v0 = np.asarray(v0, dtype=complex)
    v1 = np.asarray(v1, dtype=complex)
    K = v0.shape[-1] - 1
    g = g if g is not None else zero_forcing()
    kap4 = wavenumbers(K, L) ** 4
    Iw = np.array([moments.I2, moments.I3])[:, None] * kap4[None, :]
    gs = [g.coeffs(0.0, s, K) for s in range(3)]
    v2 = gs[0] - Iw * v0
    v3 = gs[1] - Iw * v1
    v4 = gs[2] - Iw * v2
    return (v0.copy(), v1.copy(), v2, v3, v4)


def evaluate_beam(traj, t, x1_orders, n_points, time_order=0):
    """{q: real values of d_t^time_order d_1^q v on the uniform grid}."""
    orders = sorted(set(int(q) for q in x1_orders))
    if orders and (orders[0] < 0 or orders[-1] > 5):
        raise CapabilityError("x1 derivative orders must lie in 0..5")
    if time_order not in (0, 1, 2):
        raise CapabilityError("time derivatives up to order 2 are available")
    c = traj.state(t)[time_order]
    return {q: to_grid(c, traj.L, n_points, q) for q in orders}
