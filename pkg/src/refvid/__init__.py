"""Desk-scale masked-guidance any-reference video generation.

Modules: latents (invertible codec), masking (reference canvas + region
masks), conditioning (channel concatenation), flowmatch (trajectory, loss,
Euler sampling), denoiser (velocity network with subject value injection),
sprites (synthetic corpus + descriptor), datapipe (four-stage curation),
metrics (six-metric evaluation), cli (train / generate / curate / eval /
ablate / selftest).
"""

__version__ = "0.1.0"
