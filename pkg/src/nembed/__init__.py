"""Multi-worker node embedding: walk engine, partitioned SGNS trainer and ring schedule."""
from .errors import (ChannelClosed, DensityError, EdgeListFormatError, EdgeListParseError, ManifestError,
                     OwnershipError, ScheduleViolation)
from .graph import BlockGrid, Graph, PartitionMap, block_of, load_edge_list, partition_nodes, save_edge_list
from .walker import WalkConfig, augment, random_walk, run_walk_engine, EpisodeSampleStore
from .sgns import EmbeddingMatrix, TrainConfig, build_noise_table, negative_sample, sgns_update, train_block
from .scheduler import ClusterShape, build_schedule, ring_neighbors
from .runtime import CommChannel, StageTimeline, run_episode, run_epoch, sequential_replay
from .evaluator import auc, gen_negative_pairs, score_pairs, split_edges
from .perfmodel import CostInputs, arithmetic_intensity, memory_cost, timeline_estimate
from .config import RunConfig

__version__ = "0.1.0"
