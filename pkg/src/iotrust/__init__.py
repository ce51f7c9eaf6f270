"""Behavioral fingerprinting and ledger-backed trust for device networks.

The pipeline: packet traces are split into interaction sequences, engineered
into symbol streams, and fingerprinted with a next-symbol predictor. Sliding
windows of mispredictions flag anomalies; trust scores feed a path-based
consensus whose outcomes live on an append-only hash ledger. Constrained
devices delegate training over salted-hash datasets. The sim subpackage runs
the whole loop against synthetic networks under attack.
"""

from .anomaly import (KneedleResult, TrustScore, WindowSelection,
                      WindowVerdict, kneedle, scan, select_window_size,
                      trust_score)
from .consensus import (ConsensusOutcome, EvaluationPath, PathTransaction,
                        assess, discover_paths, find_consensus_set)
from .features import (BinningProfile, FeatureTuple, SequenceEncoder,
                       SymbolSequence, SymbolVocabulary, build_binning_profile,
                       engineer, sequence_symbols, to_symbols)
from .ledger import HashChain, Ledger, LedgerParams
from .predictor import (FingerprintModel, NgramModel, RecurrentModel,
                        TrainConfig, TrainingSet, deserialize,
                        make_training_set, train)
from .trace import (CommunicationSet, InteractionSequence, Packet,
                    PayloadValue, build_communication_set, ingest_trace,
                    split_sequences, write_trace)

__version__ = "0.1.0"

__all__ = [
    "BinningProfile", "CommunicationSet", "ConsensusOutcome",
    "EvaluationPath", "FeatureTuple", "FingerprintModel", "HashChain",
    "InteractionSequence", "KneedleResult", "Ledger", "LedgerParams",
    "NgramModel", "Packet", "PathTransaction", "PayloadValue",
    "RecurrentModel", "SequenceEncoder", "SymbolSequence",
    "SymbolVocabulary", "TrainConfig", "TrainingSet", "TrustScore",
    "WindowSelection", "WindowVerdict", "assess", "build_binning_profile",
    "build_communication_set", "deserialize", "discover_paths", "engineer",
    "find_consensus_set", "ingest_trace", "kneedle", "make_training_set",
    "scan", "select_window_size", "sequence_symbols", "split_sequences",
    "to_symbols", "train", "trust_score", "write_trace",
]
