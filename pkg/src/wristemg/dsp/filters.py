"""Butterworth band-pass design as second-order sections.

Design goes analog low-pass prototype -> prewarped band-pass -> bilinear
transform -> conjugate-pole sections.  ``order`` counts the band-pass
filter order by default (an order-4 band-pass comes from a 2nd-order
prototype, two sections); pass ``order_convention="prototype"`` to count
the prototype instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import sosfilt

from ..errors import FilterDesignError, NonFiniteError


@dataclass(frozen=True)
class FilterCoefficients:
    sos: np.ndarray  # sections x 6, rows [b0 b1 b2 1 a1 a2]
    fs: float
    lo: float
    hi: float
    order: int
    order_convention: str = "bandpass"

    @property
    def poles(self) -> np.ndarray:
        return np.concatenate([np.roots(s[3:]) for s in self.sos])

    def describe(self) -> dict:
        return {
            "type": "butterworth-bandpass",
            "fs": self.fs,
            "band_hz": [self.lo, self.hi],
            "order": self.order,
            "order_convention": self.order_convention,
            "sections": len(self.sos),
            "application": "causal, zero initial state",
        }


def _prototype_poles(n: int) -> np.ndarray:
    k = np.arange(n)
    return np.exp(1j * np.pi * (2 * k + n + 1) / (2 * n))


def design_bandpass(
    fs: float,
    lo: float = 20.0,
    hi: float = 450.0,
    order: int = 4,
    order_convention: str = "bandpass",
) -> FilterCoefficients:
    if not 0 < lo < hi:
        raise FilterDesignError(f"need 0 < lo < hi, got lo={lo}, hi={hi}")
    if hi >= fs / 2:
        raise FilterDesignError(f"band edge above Nyquist: hi={hi} Hz, fs={fs} Hz")
    if order_convention == "bandpass":
        if order < 2 or order % 2:
            raise FilterDesignError("band-pass order must be an even number >= 2")
        n = order // 2
    elif order_convention == "prototype":
        if order < 1:
            raise FilterDesignError("prototype order must be >= 1")
        n = order
    else:
        raise FilterDesignError(f"unknown order convention {order_convention!r}")

    fs2 = 2.0 * fs
    wl = fs2 * np.tan(np.pi * lo / fs)
    wh = fs2 * np.tan(np.pi * hi / fs)
    bw, w0sq = wh - wl, wl * wh

    # each prototype pole p maps to the two roots of s^2 - p*bw*s + w0^2
    pb = _prototype_poles(n) * bw / 2
    disc = np.sqrt(pb**2 - w0sq + 0j)
    poles_a = np.concatenate([pb + disc, pb - disc])
    gain_a = bw**n  # n analog zeros at s = 0, n at infinity

    poles_d = (fs2 + poles_a) / (fs2 - poles_a)
    gain_d = np.real(gain_a * fs2**n / np.prod(fs2 - poles_a))
    # digital zeros: n at z = +1 (from s = 0) and n at z = -1 (from infinity)

    upper = poles_d[poles_d.imag > 1e-12]
    real = np.sort(poles_d[np.abs(poles_d.imag) <= 1e-12].real)
    sections = [np.poly([p, np.conj(p)]).real for p in upper]
    sections += [np.poly(real[i : i + 2]) for i in range(0, len(real), 2)]
    if len(sections) != n:
        raise FilterDesignError("pole pairing failed")
    # sections nearest the unit circle go last
    sections.sort(key=lambda a: np.max(np.abs(np.roots(a))))
    sos = np.zeros((n, 6))
    for i, a in enumerate(sections):
        sos[i, :3] = [1.0, 0.0, -1.0]
        sos[i, 3:] = a
    sos[0, :3] *= gain_d

    coeffs = FilterCoefficients(sos, float(fs), float(lo), float(hi), order, order_convention)
    if np.any(np.abs(coeffs.poles) >= 1.0):
        raise FilterDesignError("designed filter is unstable")
    return coeffs


def frequency_response(coeffs: FilterCoefficients, freqs) -> np.ndarray:
    """Complex response H(e^{jw}) of the section cascade at ``freqs`` (Hz)."""
    z1 = np.exp(-2j * np.pi * np.asarray(freqs, dtype=float) / coeffs.fs)
    h = np.ones_like(z1)
    for b0, b1, b2, a0, a1, a2 in coeffs.sos:
        h *= (b0 + b1 * z1 + b2 * z1**2) / (a0 + a1 * z1 + a2 * z1**2)
    return h


def apply_filter(signal, coeffs: FilterCoefficients) -> np.ndarray:
    """Causal forward filtering along the last axis with zero initial state."""
    x = np.asarray(signal, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("signal contains non-finite samples")
    return sosfilt(coeffs.sos, x, axis=-1)
