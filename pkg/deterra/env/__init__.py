from .channel import ChannelState, build_codebook, channel_advance, channel_reset, compute_pbm
from .cmdp import CfMimoEnv, CmdpState, StepOutcome, observation
from .dataset import TransitionDataset, read_dataset, write_dataset
from .phy import DecodedAction, RawAction, compute_bits, compute_sinr, decode_action
from .queues import Packet, QueueBank, UeQueue, queue_step
