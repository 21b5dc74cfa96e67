"""Historical-neighbor sampling for continuous-time dynamic-graph link prediction."""

from .ctdg import Event, HistoryStore, NeighborRecord, append_event, history_query, rank_of
from .dataio import Dataset, SplitSpec, chrono_split, load_csv, write_csv
from .samplers import (STRATEGIES, SampledNeighborhood, construct_truncation_weights, construct_uniform_weights,
                       flash_score, flash_select, sample_truncation, sample_uniform)
from .synthgen import SyntheticSpec, generate
from .trainer import TrainConfig, Trainer

__version__ = "0.1.0"
