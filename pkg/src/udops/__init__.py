"""Unambiguous discrimination of quantum operations.

Modules: ``hilbert`` (states and oscillator operators), ``channels`` (Kraus
maps), ``discrimination`` (UD measurements and feasibility), ``dilation``
(binary-tree circuits), ``noisesim`` (noisy pipeline simulation),
``metrics`` (distance, fidelities, chi matrices), ``experiments`` (built-in
setups) and ``cli``.
"""

__version__ = "0.1.0"
