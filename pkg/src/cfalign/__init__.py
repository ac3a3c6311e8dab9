"""Coarse-to-fine feature alignment for unsupervised domain adaptation.

The package trains a pixel-wise classifier on a labeled source domain and
adapts it to an unlabeled target domain by combining channel-statistics style
transfer (coarse alignment), entropy minimization, and class-wise contrastive
alignment against momentum class centers (fine alignment). Everything runs on
a small reverse-mode autodiff core over numpy float64 arrays.
"""

__version__ = "0.1.0"
