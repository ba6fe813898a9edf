"""Blood-test diagnostics with a chaotic-reservoir edge classifier and a boosted-tree cloud model."""

__version__ = "0.1.0"

from .chaos import ChaosParams, ChaoticReservoir, Topology
from .data import Dataset, RbvRecord, StratifiedRoundRobinKFold, load_csv, save_csv, stratified_folds
from .exceptions import (
    ArityError,
    CsvParseError,
    IngestionError,
    ModelFormatError,
    ModelVersionError,
    QuantizationOverflowError,
    RbvError,
    SchemaError,
)
from .hgb import HGBClassifier, HgbModel, HgbParams, load_hgb, predict_hgb, save_hgb, train_hgb
from .lognnet import LogNNetClassifier, LogNNetModel, train_lognnet
from .net import CloudService, EdgeNode, RoutePolicy, edge_predict, serve_cloud
from .preprocessing import FeatureScaler, ScalerParams
from .quantize import QuantizedModel, emulate_edge_inference, export_model, import_model, quantize, ram_budget
from .synthetic import PRESETS, generate_synthetic
from .wire import FrameParser, decode_frames, encode_frame

__all__ = [
    "ArityError", "ChaosParams", "ChaoticReservoir", "CloudService", "CsvParseError", "Dataset",
    "EdgeNode", "FeatureScaler", "FrameParser", "HGBClassifier", "HgbModel", "HgbParams",
    "IngestionError", "LogNNetClassifier", "LogNNetModel", "ModelFormatError", "ModelVersionError",
    "PRESETS", "QuantizationOverflowError", "QuantizedModel", "RbvError", "RbvRecord",
    "RoutePolicy", "ScalerParams", "SchemaError", "StratifiedRoundRobinKFold", "Topology",
    "decode_frames", "edge_predict", "emulate_edge_inference", "encode_frame", "export_model",
    "generate_synthetic", "import_model", "load_csv", "load_hgb", "predict_hgb", "quantize",
    "ram_budget", "save_csv", "save_hgb", "serve_cloud", "stratified_folds", "train_hgb",
    "train_lognnet",
]
