"""Hybrid tensor-network / variational-circuit classifier for multimodal anti-spoofing.

Submodules: ``tensor`` (labeled tensors, SVD/QR), ``mps`` (the MPS projector),
``vqc`` (statevector simulator and parameter shift), ``trainer`` (two-stage
training), ``datagen`` (synthetic embeddings and file formats), ``metrics``
(APCER/BPCER/ACER, ROC, TPR@FPR), ``checkpoint``, ``verify`` and ``cli``.
"""

__version__ = "0.1.0"
