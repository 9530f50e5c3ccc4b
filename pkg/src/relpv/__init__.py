"""ReLPV: local-phase 3D convolution blocks in numpy.

The block replaces a dense ``n x n x n`` convolution with a 1x1x1 channel
reduction, a fixed local 3D STFT at 13 frequencies, a ReLU and a learned
1x1x1 combination of the 26 real responses.
"""
from .autograd import Network, Tape, forward_backward
from .basis import FREQUENCY_SIGNS, NUM_CHANNELS, NUM_FREQUENCIES, StftBasis, build_basis, frequency_points
from .block import RelpvBlockParams, layer2_stft_direct, layer2_stft_separable, relpv_backward, relpv_forward
from .conv3d import Conv3dParams, conv3d_backward, conv3d_forward
from .cost import count_flops, count_params, savings_ratio
from .errors import DimensionError, FormatError, NumericError, ParameterError
from .models import LayerSpec, ModelSpec, build_model
from .train import LrSchedule, SgdState, load_checkpoint, save_checkpoint, sgd_step, train_loop

__version__ = "0.1.0"
