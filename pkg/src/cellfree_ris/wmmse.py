"""Receive scalars, average MSE and WMMSE weights for the statistical rate.

For user k with deterministic receive scalar r_k, the received sample
y_k = sum_s sqrt(eta_ks) h_ks^T h_ks^* x_k + interference + noise gives

  E|r_k y_k - x_k|^2 = |r_k|^2 (A_k + sum_i B_ki + N0) - 2 Re(r_k^* m_k) + 1,

with m_k = sum_s sqrt(eta_ks) E||h_ks||^2 the mean signal amplitude.  The MMSE
scalar is r_k = m_k / (A_k + sum_i B_ki + N0) and the minimum is
1 - m_k^2 / (A_k + sum_i B_ki + N0).

Since A_k = m_k^2 + Var(signal) >= m_k^2, log2(1/MSE) is the rate that treats
the signal-gain fluctuation as noise (``mse_rate``); it is a lower bound on
the closed-form rate log2(1 + A_k / (sum_i B_ki + N0)) and coincides with it
only when the signal gain is deterministic.

Rates are in bits; the weight surrogate log2(kappa) - kappa*e + 1 is written
as (ln(kappa) - kappa*e + 1)/ln 2 so that kappa = 1/e is its exact maximizer.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rate import LN2, ClosedFormTerms, _eta


def signal_amplitude(terms: ClosedFormTerms, eta):
    """m_k = sum_s sqrt(eta_ks) E||h_ks||^2, shape (K,)."""
    return np.einsum("ks,ks->k", np.sqrt(_eta(eta)), terms.signal_mean)


def mmse_receiver(terms: ClosedFormTerms, eta, N0):
    """r_k = m_k / (A_k + sum_i B_ki + N0)."""
    den = terms.A + terms.interference + N0
    if np.any(den <= 0):
        raise ValueError("MMSE receiver denominator must be positive")
    return (signal_amplitude(terms, eta) / den).astype(complex)


def average_mse(r, terms: ClosedFormTerms, eta, N0):
    """Per-user E|r_k y_k - x_k|^2."""
    r = np.asarray(r, dtype=complex)
    m = signal_amplitude(terms, eta)
    return (np.abs(r) ** 2 * (terms.A + terms.interference + N0)
            - 2.0 * (r.conj() * m).real + 1.0)


def wmmse_weight(error):
    """kappa_k = 1 / e_k."""
    error = np.asarray(error, dtype=float)
    if np.any(error <= 0):
        raise ValueError("MSE values must be positive")
    return 1.0 / error


def wmmse_surrogate(kappa, error):
    """Per-user (ln kappa - kappa e + 1) / ln 2; equals log2(1/e) at kappa = 1/e."""
    kappa = np.asarray(kappa, dtype=float)
    return (np.log(kappa) - kappa * np.asarray(error) + 1.0) / LN2


def mse_rate(terms: ClosedFormTerms, eta, N0):
    """log2(1/MSE) at the MMSE receiver = log2(1 + m^2 / (A - m^2 + sum_i B + N0))."""
    m = signal_amplitude(terms, eta)
    return np.log2(1.0 + m ** 2 / (terms.A - m ** 2 + terms.interference + N0))


@dataclass
class WmmseState:
    r: np.ndarray        # (K,) complex receive scalars
    kappa: np.ndarray    # (K,) weights
    error: np.ndarray    # (K,) MSE at r
    A: np.ndarray
    interference: np.ndarray
    N0: float

    @classmethod
    def from_terms(cls, terms: ClosedFormTerms, eta, N0):
        r = mmse_receiver(terms, eta, N0)
        err = average_mse(r, terms, eta, N0)
        return cls(r, wmmse_weight(err), err, terms.A.copy(), terms.interference.copy(), N0)
