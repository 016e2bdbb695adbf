"""liftkit: lift detection from wearable IMU recordings.

Modules:

* ``imu_core``: recordings, label files, clock alignment and repairs
* ``windowing``: sliding windows, labeling, balancing, dataset files
* ``fusion_filters``: Mahony and EKF attitude filters, gravity removal
* ``liftnet``: LSTM classifier with hand-written backprop and Adam
* ``attribution``: gradient saliency and channel rankings
* ``evalkit``: metrics plus grid, ablation and filter sweeps
* ``synthgen``: synthetic corpora with known lifts
* ``cli``: the ``liftkit`` command

Set ``LIFTKIT_DISABLE_NUMBA=1`` to run the pure-numpy kernels.
"""

__version__ = "0.1.0"

from ._jit import BACKEND  # noqa: E402

__all__ = ["BACKEND", "__version__"]
