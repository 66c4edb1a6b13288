"""Retrieve-and-rank engine for vision-language recognition pipelines.

An indexed external memory of multimodal embeddings proposes top-k candidate
categories per query; a pluggable ranker backend (a remote multimodal model
or a deterministic test double) orders them into the final prediction.
"""

from .datagen import DatagenParams, FinetuneEntry, generate_ranking_dataset
from .errors import RarankError
from .hnsw import HnswParams
from .index import HnswIndex, NeighborList, brute_force_knn
from .metrics import (
    Bucket,
    EvalReport,
    LabeledPrediction,
    bucketed_ap,
    build_report,
    clustering_accuracy,
    semantic_accuracy,
    topk_accuracy,
)
from .pipeline import RetrieveRankClassifier
from .projection import RandomProjection
from .rank import (
    IdentityRanker,
    OracleRanker,
    Prediction,
    PromptStyle,
    RankerBackend,
    RankerVerdict,
    RankingPrompt,
    RemoteRanker,
    build_ranking_prompt,
    parse_ranking,
    rerank,
)
from .regions import BBox, RegionParams, blur_outside, crop_resize, expand_bbox, preprocess_region
from .retrieve import (
    CandidateList,
    RetrievalMode,
    TextBank,
    retrieve_categories_i2i,
    retrieve_categories_i2t,
)
from .store import (
    EmbeddingRecord,
    LabelCatalog,
    MemoryStore,
    Modality,
    load_records_jsonl,
    read_memory_file,
    store_from_arrays,
    write_memory_file,
)
from .validation import normalize

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "Bucket",
    "CandidateList",
    "DatagenParams",
    "EmbeddingRecord",
    "EvalReport",
    "FinetuneEntry",
    "HnswIndex",
    "HnswParams",
    "IdentityRanker",
    "LabelCatalog",
    "LabeledPrediction",
    "MemoryStore",
    "Modality",
    "NeighborList",
    "OracleRanker",
    "Prediction",
    "PromptStyle",
    "RandomProjection",
    "RankerBackend",
    "RankerVerdict",
    "RankingPrompt",
    "RarankError",
    "RegionParams",
    "RemoteRanker",
    "RetrievalMode",
    "RetrieveRankClassifier",
    "TextBank",
    "brute_force_knn",
    "bucketed_ap",
    "build_ranking_prompt",
    "build_report",
    "blur_outside",
    "clustering_accuracy",
    "crop_resize",
    "expand_bbox",
    "generate_ranking_dataset",
    "load_records_jsonl",
    "normalize",
    "parse_ranking",
    "preprocess_region",
    "read_memory_file",
    "rerank",
    "retrieve_categories_i2i",
    "retrieve_categories_i2t",
    "semantic_accuracy",
    "store_from_arrays",
    "topk_accuracy",
    "write_memory_file",
]
