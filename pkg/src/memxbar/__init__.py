"""Training simulator for neural networks on memristive crossbar arrays."""
from .device import DeviceParams, MemristorState, ProgramPulse, apply_pulse, conductance, quantize
from .crossbar import CrossbarArray, PartitionPlan
from .activation import ActivationKind, activate, activate_deriv, output_threshold
from .network import MemristiveNetwork, NetworkConfig, decode_weight, encode_weight
from .nonideal import NoiseSpec, mismatch_update, offset_update
from .trainer import ExperimentResult, PulseMap, TrainSpec, apply_update, backward, bnn_step, loss, train
from .data import Dataset, load_image_dir, load_mnist, xor_dataset

__version__ = "0.1.0"
