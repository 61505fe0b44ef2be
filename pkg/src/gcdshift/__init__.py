"""Category discovery under domain shift, desk scale.

Dual-level representation learning (shallow domain features, deep semantic
features) with embedding-space patch mixing, adversarial dependence
minimization, curriculum sampling over predicted domains, and error-bound
reporting, all on top of a small from-scratch autodiff engine and synthetic
domain-shifted datasets.
"""

__version__ = "0.1.0"
