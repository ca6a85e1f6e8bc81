"""Polyphase MuxOut convolutional image upscaler with filter analysis.

The package splits into small, composable modules:

* :mod:`muxscale.tensor`    rank-3 tensors and the conv kernels
* :mod:`muxscale.sampling`  polyphase grids, MuxOut / T-MuxOut
* :mod:`muxscale.netgraph`  model assembly, forward/masked/transposed runs
* :mod:`muxscale.analysis`  effective-filter extraction and atlases
* :mod:`muxscale.resample`  area/bicubic resamplers, BT.601 color
* :mod:`muxscale.metrics`   SSIM (with gradient) and PSNR
* :mod:`muxscale.training`  backprop engine, Adam, losses, loops
* :mod:`muxscale.systems`   the color upscaling systems and the critic
* :mod:`muxscale.cli`       the ``muxscale`` command

Hot convolution loops are numba-jitted with a pure-numpy fallback; set
``MUXSCALE_BACKEND=numpy`` (or ``numba``/``auto``) to choose.
"""

from .backend import active_backend

__version__ = "0.1.0"

__all__ = ["active_backend", "__version__"]
