"""Wavelet-domain detector components with verifiable numerics.

Modules:

- :mod:`wavedet.tensor`    NCHW float32 ops, T4F files, parameter/FLOP accounting
- :mod:`wavedet.wavelet`   Haar filter bank, WTConv, WTConv block
- :mod:`wavedet.swsa`      sliding-window self-attention encoder layer
- :mod:`wavedet.neck`      boundary aggregation, re-parameterized ELAN, top-down fusion
- :mod:`wavedet.boxloss`   IoU / CIoU / Inner-CIoU / NWD losses with gradients
- :mod:`wavedet.metrics`   matching, AP / mAP, curves, frame subsampling
- :mod:`wavedet.pipeline`  configured end-to-end forward pass
"""

__version__ = "0.1.0"
