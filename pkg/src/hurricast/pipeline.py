"""Three-step forecasting pipeline: extract embeddings, concatenate with the
statistical window, fit one boosted-tree model per target.

Variants 1-4 differ only in the cube extractor (none, truncated-core tensor
decomposition, CNN+GRU, CNN+Transformer); variant 5 is an ElasticNet over the
base variants' forecasts and variant 6 a simple average with operational
members.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import gbt
from .errors import (BundleFormatError, BundleVersionError, ConfigError,
                     DimensionError)
from .forecasts import ForecastRecord, iso_utc
from .linear_ensemble import (ElasticNetConfig, ElasticNetModel, fit_elasticnet,
                              grid_search_elasticnet, predict_elasticnet,
                              simple_average)
from .neural import (CnnEncoderConfig, EncoderDecoderModel, GruDecoderConfig,
                     TrainConfig, TransformerDecoderConfig, build_model,
                     extract_embeddings, train_encoder_decoder)
from .neural.checkpoint import dump_blocks, model_blocks, parse_blocks, restore_params
from .storm_data import ForecastCase, Scaler, layout_hash
from .tensor_ops import CUBE_DIMS, VISION_RANKS, extract_vision_features

VARIANTS = {
    1: ("HUML-(stat, xgb)", "none", 0),
    2: ("HUML-(stat/viz, xgb/td)", "tucker", int(np.prod(VISION_RANKS))),
    3: ("HUML-(stat/viz, xgb/cnn/gru)", "gru", 128),
    4: ("HUML-(stat/viz, xgb/cnn/transfo)", "transformer", 142),
    5: ("HUML-ensemble", "ensemble", 0),
    6: ("HUML/OP-average", "average", 0),
}

TARGETS = ("intensity", "dlat", "dlon")

BUNDLE_MAGIC = b"HBDL"
BUNDLE_VERSION = 1
BUNDLE_END = b"HBDLEND\0"

_SECTION_META = 0
_SECTION_CHECKPOINT = 1
_SECTION_GBT = 2
_SECTION_F64 = 3


@dataclass
class PipelineConfig:
    variant: int = 1
    seed: int = 0
    gbt: gbt.GbtConfig = field(default_factory=gbt.GbtConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    encoder: CnnEncoderConfig = field(default_factory=CnnEncoderConfig)
    gru: GruDecoderConfig = field(default_factory=GruDecoderConfig)
    transformer: TransformerDecoderConfig = field(default_factory=TransformerDecoderConfig)
    tucker_ranks: tuple[int, int, int, int] = VISION_RANKS
    neural_objective: str = "intensity"  # objective used to train the extractor

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {sorted(VARIANTS)}, "
                              f"got {self.variant}")


@dataclass
class ModelBundle:
    variant: int
    s_dim: int
    scaler: Scaler
    models: dict[str, gbt.GbtModel]            # per target
    extractor_kind: str = "none"
    extractor: EncoderDecoderModel | None = None
    tucker_ranks: tuple[int, int, int, int] = VISION_RANKS
    channel_mean: np.ndarray | None = None
    channel_std: np.ndarray | None = None
    layout: str = field(default_factory=layout_hash)
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def name(self) -> str:
        return VARIANTS[self.variant][0]

    @property
    def embed_dim(self) -> int:
        return VARIANTS[self.variant][2]

    @property
    def uses_vision(self) -> bool:
        return self.extractor_kind in ("tucker", "gru", "transformer")

    def extractor_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.extractor_kind.encode())
        if self.extractor_kind == "tucker":
            h.update(str(self.tucker_ranks).encode())
        elif self.extractor is not None:
            for p in self.extractor.params():
                h.update(p.value.astype("<f4").tobytes())
        if self.channel_mean is not None:
            h.update(self.channel_mean.tobytes())
            h.update(self.channel_std.tobytes())
        return h.hexdigest()

    def standardize_cube(self, cube: np.ndarray) -> np.ndarray:
        if self.channel_mean is None:
            return cube
        return ((cube - self.channel_mean[None, :, None, None])
                / self.channel_std[None, :, None, None])

    def embed_case(self, case: ForecastCase, cube_store) -> np.ndarray:
        """Embedding of one case's cube window through the frozen extractor."""
        if not self.uses_vision:
            return np.zeros(0)
        if cube_store is None:
            raise ConfigError(f"variant {self.variant} needs a cube store")
        cube = cube_store.window(case.storm_id, case.t0, CUBE_DIMS[0])
        if cube.shape != CUBE_DIMS:
            raise DimensionError(f"cube window {cube.shape}, expected {CUBE_DIMS}")
        cube = self.standardize_cube(cube)
        if self.extractor_kind == "tucker":
            return extract_vision_features(cube, self.tucker_ranks)
        stat = self.scaler.transform(case.history_stat)
        return extract_embeddings(self.extractor, cube[None], stat[None])[0]


def assemble_input(bundle: ModelBundle, case: ForecastCase, cube_store=None,
                   embedding: np.ndarray | None = None) -> np.ndarray:
    """Flattened standardized 8xS statistical block followed by the embedding.

    A precomputed embedding can be swapped in; forecasts must not change
    (the cube influences predictions only through the extractor output).
    """
    stat = bundle.scaler.transform(case.history_stat).reshape(-1)
    if not bundle.uses_vision:
        if embedding is not None and len(embedding):
            raise ConfigError(f"variant {bundle.variant} takes no embedding")
        return stat
    if embedding is None:
        embedding = bundle.embed_case(case, cube_store)
    if len(embedding) != bundle.embed_dim:
        raise ConfigError(
            f"embedding length {len(embedding)} does not match variant "
            f"{bundle.variant} ({bundle.embed_dim})")
    return np.concatenate([stat, embedding])


def _require_tags(cases: Sequence[ForecastCase], expected: str) -> None:
    bad = [case.key for case in cases if case.split != expected]
    if bad:
        shown = ", ".join(f"{s}@{t}" for s, t in bad[:5])
        raise ConfigError(
            f"{len(bad)} cases tagged other than {expected!r} (first: {shown}); "
            "split provenance forbids their use here")


def _channel_stats(cases: Sequence[ForecastCase],
                   cube_store) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean/std over the training cube windows."""
    count = 0
    total = np.zeros(CUBE_DIMS[1])
    total_sq = np.zeros(CUBE_DIMS[1])
    for case in cases:
        cube = cube_store.window(case.storm_id, case.t0, CUBE_DIMS[0])
        total += cube.sum(axis=(0, 2, 3))
        total_sq += (cube ** 2).sum(axis=(0, 2, 3))
        count += cube.shape[0] * cube.shape[2] * cube.shape[3]
    mean = total / count
    var = total_sq / count - mean ** 2
    std = np.sqrt(np.clip(var, 0.0, None))
    std[std == 0.0] = 1.0
    return mean, std


def _case_targets(cases: Sequence[ForecastCase]) -> dict[str, np.ndarray]:
    return {
        "intensity": np.array([c.target_intensity for c in cases]),
        "dlat": np.array([c.target_dlat for c in cases]),
        "dlon": np.array([c.target_dlon for c in cases]),
    }


def compute_embeddings(bundle: ModelBundle, cases: Sequence[ForecastCase],
                       cube_store, cache_dir=None) -> np.ndarray:
    """Embeddings for many cases, cached on disk by (extractor hash, case id)."""
    if not bundle.uses_vision:
        return np.zeros((len(cases), 0))
    cache: dict[str, np.ndarray] = {}
    cache_path = None
    if cache_dir is not None:
        cache_path = Path(cache_dir) / f"emb_{bundle.extractor_hash()[:16]}.npz"
        if cache_path.exists():
            with np.load(cache_path) as stored:
                cache = {k: stored[k] for k in stored.files}
    out = np.empty((len(cases), bundle.embed_dim))
    dirty = False
    for i, case in enumerate(cases):
        key = f"{case.storm_id}|{iso_utc(case.t0)}"
        if key in cache:
            out[i] = cache[key]
        else:
            out[i] = bundle.embed_case(case, cube_store)
            cache[key] = out[i]
            dirty = True
    if cache_path is not None and dirty:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        np.savez_compressed(cache_path, **cache)
    return out


def _train_extractor(config: PipelineConfig, bundle: ModelBundle,
                     train_cases: Sequence[ForecastCase],
                     val_cases: Sequence[ForecastCase], cube_store):
    """Fit the encoder-decoder on standardized train cubes, early-stopped on
    the validation split, then freeze it."""
    kind = bundle.extractor_kind

    def batch(cases):
        cubes = np.empty((len(cases),) + CUBE_DIMS, dtype=np.float32)
        stats = np.empty((len(cases),) + cases[0].history_stat.shape)
        for i, case in enumerate(cases):
            cube = cube_store.window(case.storm_id, case.t0, CUBE_DIMS[0])
            cubes[i] = bundle.standardize_cube(cube)
            stats[i] = bundle.scaler.transform(case.history_stat)
        return cubes.astype(np.float64), stats

    train_cubes, train_stats = batch(train_cases)
    val_cubes, val_stats = batch(val_cases)
    if config.neural_objective == "intensity":
        y_train = np.array([[c.target_intensity] for c in train_cases])
        y_val = np.array([[c.target_intensity] for c in val_cases])
    else:
        y_train = np.array([[c.target_dlat, c.target_dlon] for c in train_cases])
        y_val = np.array([[c.target_dlat, c.target_dlon] for c in val_cases])
    model, curve = train_encoder_decoder(
        train_cubes, train_stats, y_train, val_cubes, val_stats, y_val,
        decoder_kind=kind, target_kind=config.neural_objective,
        config=config.train, encoder_config=config.encoder,
        gru_config=config.gru, transformer_config=config.transformer)
    return model, curve


def train_variant(train_cases: Sequence[ForecastCase],
                  val_cases: Sequence[ForecastCase],
                  config: PipelineConfig, cube_store=None,
                  cache_dir=None) -> ModelBundle:
    """Fit one bundle: scaler, optional extractor, three boosted-tree models.

    Case provenance tags are enforced: only train-tagged cases reach the
    trees and scaler, only val-tagged cases steer early stopping and
    validation scores.
    """
    if config.variant not in (1, 2, 3, 4):
        raise ConfigError(f"train_variant fits variants 1-4, got {config.variant}")
    if not train_cases or not val_cases:
        raise ConfigError("empty training or validation split")
    _require_tags(train_cases, "train")
    _require_tags(val_cases, "val")

    scaler = Scaler().fit(np.vstack([c.history_stat for c in train_cases]))
    bundle = ModelBundle(
        variant=config.variant,
        s_dim=train_cases[0].history_stat.shape[1],
        scaler=scaler,
        models={},
        extractor_kind=VARIANTS[config.variant][1],
        tucker_ranks=config.tucker_ranks,
        seed=config.seed,
    )
    bundle.meta = {
        "name": bundle.name,
        "neural_objective": config.neural_objective,
        "trained_on": {"gbt": ["train"], "extractor": ["train", "val"],
                       "scaler": ["train"]},
        "train_cases": len(train_cases),
        "val_cases": len(val_cases),
    }

    if bundle.uses_vision:
        if cube_store is None:
            raise ConfigError(f"variant {config.variant} needs a cube store")
        bundle.channel_mean, bundle.channel_std = _channel_stats(train_cases, cube_store)
        if bundle.extractor_kind in ("gru", "transformer"):
            bundle.extractor, curve = _train_extractor(
                config, bundle, train_cases, val_cases, cube_store)
            bundle.meta["training_curve"] = {
                "train_loss": curve.train_loss, "val_loss": curve.val_loss,
                "best_epoch": curve.best_epoch, "diverged": curve.diverged,
            }

    x_train = np.hstack([
        bundle.scaler.transform(
            np.stack([c.history_stat for c in train_cases])).reshape(len(train_cases), -1),
        compute_embeddings(bundle, train_cases, cube_store, cache_dir),
    ])
    x_val = np.hstack([
        bundle.scaler.transform(
            np.stack([c.history_stat for c in val_cases])).reshape(len(val_cases), -1),
        compute_embeddings(bundle, val_cases, cube_store, cache_dir),
    ])
    y_train = _case_targets(train_cases)
    y_val = _case_targets(val_cases)

    scores = {}
    for offset, target in enumerate(TARGETS):
        tree_config = gbt.GbtConfig(**{
            **config.gbt.__dict__, "seed": config.gbt.seed + offset})
        model = gbt.fit(x_train, y_train[target], tree_config)
        bundle.models[target] = model
        scores[target] = float(np.mean(np.abs(
            model.predict(x_val) - y_val[target])))
    bundle.meta["validation_mae"] = scores
    return bundle


def predict_case(bundle: ModelBundle, case: ForecastCase, cube_store=None,
                 embedding: np.ndarray | None = None) -> ForecastRecord:
    """Intensity (kt) and displacement (deg) forecast plus the derived
    predicted position; pure function of the bundle and case."""
    if bundle.layout != layout_hash():
        raise ConfigError("bundle feature layout does not match this build")
    x = assemble_input(bundle, case, cube_store, embedding)[None, :]
    wind = float(bundle.models["intensity"].predict(x)[0])
    dlat = float(bundle.models["dlat"].predict(x)[0])
    dlon = float(bundle.models["dlon"].predict(x)[0])
    return ForecastRecord(
        model=bundle.name,
        storm_id=case.storm_id,
        t0=case.t0,
        pred_wind=wind,
        pred_dlat=dlat,
        pred_dlon=dlon,
        pred_lat=case.lat0 + dlat,
        pred_lon=case.lon0 + dlon,
    )


def predict_cases(bundle: ModelBundle, cases: Sequence[ForecastCase],
                  cube_store=None, cache_dir=None) -> list[ForecastRecord]:
    embeddings = compute_embeddings(bundle, cases, cube_store, cache_dir)
    return [predict_case(bundle, case, cube_store, embeddings[i])
            for i, case in enumerate(cases)]


# --------------------------------------------------------------------------
# Variant 5: ElasticNet over base-variant forecasts
# --------------------------------------------------------------------------

def _forecast_matrix(forecasts_by_model: dict[str, list[ForecastRecord]],
                     cases: Sequence[ForecastCase], attr: str) -> np.ndarray:
    columns = []
    for model in sorted(forecasts_by_model):
        by_key = {f.key: f for f in forecasts_by_model[model]}
        missing = [case.key for case in cases if case.key not in by_key]
        if missing:
            shown = ", ".join(f"{s}@{t}" for s, t in missing[:5])
            raise ConfigError(
                f"model {model}: {len(missing)} cases without forecasts "
                f"(first: {shown})")
        columns.append([getattr(by_key[case.key], attr) for case in cases])
    return np.array(columns).T


_ATTR_OF_TARGET = {"intensity": "pred_wind", "dlat": "pred_dlat", "dlon": "pred_dlon"}


@dataclass
class EnsembleModel:
    members: list[str]
    models: dict[str, ElasticNetModel]
    configs: dict[str, ElasticNetConfig]

    def predict_records(self, forecasts_by_model: dict[str, list[ForecastRecord]],
                        cases: Sequence[ForecastCase]) -> list[ForecastRecord]:
        preds = {}
        for target, attr in _ATTR_OF_TARGET.items():
            x = _forecast_matrix(forecasts_by_model, cases, attr)
            preds[target] = predict_elasticnet(self.models[target], x)
        out = []
        for i, case in enumerate(cases):
            out.append(ForecastRecord(
                model=VARIANTS[5][0],
                storm_id=case.storm_id,
                t0=case.t0,
                pred_wind=float(preds["intensity"][i]),
                pred_dlat=float(preds["dlat"][i]),
                pred_dlon=float(preds["dlon"][i]),
                pred_lat=case.lat0 + float(preds["dlat"][i]),
                pred_lon=case.lon0 + float(preds["dlon"][i]),
            ))
        return out


def train_huml_ensemble(val_forecasts: dict[str, list[ForecastRecord]],
                        val_cases: Sequence[ForecastCase],
                        seed: int = 0, grid_search: bool = True,
                        ) -> EnsembleModel:
    """Fit the per-target meta-learner on validation-period base forecasts.

    Base models must have been trained on the training period only; the
    ensemble never sees test-period data at fit time.
    """
    if not val_forecasts:
        raise ConfigError("no base-model forecasts supplied")
    _require_tags(val_cases, "val")
    members = sorted(val_forecasts)
    models = {}
    configs = {}
    for target, attr in _ATTR_OF_TARGET.items():
        x = _forecast_matrix(val_forecasts, val_cases, attr)
        y = _case_targets(val_cases)[target]
        if grid_search:
            model, config = grid_search_elasticnet(x, y, seed=seed)
        else:
            config = ElasticNetConfig(alpha=1e-4, l1_ratio=0.5)
            model = fit_elasticnet(x, y, config)
        models[target] = model
        configs[target] = config
    return EnsembleModel(members=members, models=models, configs=configs)


# --------------------------------------------------------------------------
# Variant 6: simple average with operational members
# --------------------------------------------------------------------------

def huml_op_average(huml_forecasts: list[ForecastRecord],
                    op_forecasts: dict[str, list[ForecastRecord]],
                    cases: Sequence[ForecastCase],
                    name: str = VARIANTS[6][0]) -> list[ForecastRecord]:
    """Equal-weight consensus of operational members and one HUML model.

    Members are averaged on predicted positions (operational members report
    positions, HUML displacements are resolved against the case's t0
    position first) and on predicted intensity.
    """
    huml_by_key = {f.key: f for f in huml_forecasts}
    ops_by_key: dict[tuple[str, str], list[ForecastRecord]] = {}
    for records in op_forecasts.values():
        for f in records:
            ops_by_key.setdefault(f.key, []).append(f)
    out = []
    for case in cases:
        if case.key not in huml_by_key:
            raise ConfigError(f"case {case.key} missing from the HUML forecasts")
        members = sorted(ops_by_key.get(case.key, []), key=lambda f: f.model)
        members.append(huml_by_key[case.key])
        rows = []
        for f in members:
            lat = f.pred_lat if np.isfinite(f.pred_lat) else case.lat0 + f.pred_dlat
            lon = f.pred_lon if np.isfinite(f.pred_lon) else case.lon0 + f.pred_dlon
            rows.append([f.pred_wind, lat, lon])
        wind, lat, lon = simple_average(rows)
        out.append(ForecastRecord(
            model=name,
            storm_id=case.storm_id,
            t0=case.t0,
            pred_wind=float(wind),
            pred_dlat=float(lat - case.lat0),
            pred_dlon=float(lon - case.lon0),
            pred_lat=float(lat),
            pred_lon=float(lon),
        ))
    return out


# --------------------------------------------------------------------------
# Bundle persistence
# --------------------------------------------------------------------------

def _bundle_sections(bundle: ModelBundle) -> list[tuple[str, int, bytes]]:
    meta = {
        "format_version": BUNDLE_VERSION,
        "variant": bundle.variant,
        "s_dim": bundle.s_dim,
        "embed_dim": bundle.embed_dim,
        "extractor_kind": bundle.extractor_kind,
        "tucker_ranks": list(bundle.tucker_ranks),
        "layout_hash": bundle.layout,
        "seed": bundle.seed,
        "scaled_columns": list(bundle.scaler.scaled_columns),
        "meta": bundle.meta,
    }
    if bundle.extractor is not None:
        enc = bundle.extractor.encoder.config
        dec = bundle.extractor.decoder.config
        meta["extractor_config"] = {
            "decoder_kind": bundle.extractor.decoder_kind,
            "encoder": {
                "in_channels": enc.in_channels, "input_hw": enc.input_hw,
                "conv_channels": list(enc.conv_channels),
                "dense_hidden": enc.dense_hidden, "embed_dim": enc.embed_dim,
            },
            "decoder": dec.__dict__ | {
                k: list(v) for k, v in dec.__dict__.items() if isinstance(v, tuple)},
            "target_mean": bundle.extractor.target_mean.tolist(),
            "target_std": bundle.extractor.target_std.tolist(),
        }
    sections = [("meta", _SECTION_META, json.dumps(meta, sort_keys=True).encode())]
    sections.append(("scaler.mean", _SECTION_F64,
                     np.ascontiguousarray(bundle.scaler.mean, dtype="<f8").tobytes()))
    sections.append(("scaler.std", _SECTION_F64,
                     np.ascontiguousarray(bundle.scaler.std, dtype="<f8").tobytes()))
    if bundle.channel_mean is not None:
        sections.append(("channel.mean", _SECTION_F64,
                         np.ascontiguousarray(bundle.channel_mean, dtype="<f8").tobytes()))
        sections.append(("channel.std", _SECTION_F64,
                         np.ascontiguousarray(bundle.channel_std, dtype="<f8").tobytes()))
    if bundle.extractor is not None:
        sections.append(("extractor", _SECTION_CHECKPOINT,
                         dump_blocks(model_blocks(bundle.extractor.params()))))
    for target in TARGETS:
        sections.append((f"gbt.{target}", _SECTION_GBT,
                         gbt.dump_model(bundle.models[target])))
    return sections


def save_bundle(bundle: ModelBundle, path) -> None:
    sections = _bundle_sections(bundle)
    with open(path, "wb") as fh:
        fh.write(BUNDLE_MAGIC)
        fh.write(struct.pack("<H", BUNDLE_VERSION))
        fh.write(struct.pack("<I", len(sections)))
        for name, kind, payload in sections:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", kind))
            fh.write(struct.pack("<Q", len(payload)))
            fh.write(payload)
        fh.write(BUNDLE_END)


def load_bundle(path) -> ModelBundle:
    with open(path, "rb") as fh:
        blob = fh.read()
    view = io.BytesIO(blob)

    def take(n: int) -> bytes:
        chunk = view.read(n)
        if len(chunk) != n:
            raise BundleFormatError(f"{path}: truncated bundle")
        return chunk

    if take(4) != BUNDLE_MAGIC:
        raise BundleFormatError(f"{path}: not a model bundle")
    (version,) = struct.unpack("<H", take(2))
    if version != BUNDLE_VERSION:
        raise BundleVersionError(
            f"{path}: bundle version {version}, this build reads {BUNDLE_VERSION}")
    (count,) = struct.unpack("<I", take(4))
    sections: dict[str, tuple[int, bytes]] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (kind,) = struct.unpack("<B", take(1))
        (size,) = struct.unpack("<Q", take(8))
        sections[name] = (kind, take(size))
    if take(len(BUNDLE_END)) != BUNDLE_END:
        raise BundleFormatError(f"{path}: missing end marker, file truncated")

    meta = json.loads(sections["meta"][1].decode())
    scaler = Scaler(tuple(meta["scaled_columns"]))
    scaler.mean = np.frombuffer(sections["scaler.mean"][1], dtype="<f8").copy()
    scaler.std = np.frombuffer(sections["scaler.std"][1], dtype="<f8").copy()
    bundle = ModelBundle(
        variant=meta["variant"],
        s_dim=meta["s_dim"],
        scaler=scaler,
        models={},
        extractor_kind=meta["extractor_kind"],
        tucker_ranks=tuple(meta["tucker_ranks"]),
        layout=meta["layout_hash"],
        seed=meta["seed"],
        meta=meta["meta"],
    )
    if "channel.mean" in sections:
        bundle.channel_mean = np.frombuffer(sections["channel.mean"][1], dtype="<f8").copy()
        bundle.channel_std = np.frombuffer(sections["channel.std"][1], dtype="<f8").copy()
    if "extractor" in sections:
        cfg = meta["extractor_config"]
        enc = CnnEncoderConfig(
            in_channels=cfg["encoder"]["in_channels"],
            input_hw=cfg["encoder"]["input_hw"],
            conv_channels=tuple(cfg["encoder"]["conv_channels"]),
            dense_hidden=cfg["encoder"]["dense_hidden"],
            embed_dim=cfg["encoder"]["embed_dim"],
        )
        kind = cfg["decoder_kind"]
        rng = np.random.default_rng(0)  # placeholder init, overwritten below
        target_kind = "intensity" if cfg["decoder"]["out_dim"] == 1 else "track"
        if kind == "gru":
            gru_cfg = GruDecoderConfig(
                hidden=cfg["decoder"]["hidden"], layers=cfg["decoder"]["layers"],
                head_dims=tuple(cfg["decoder"]["head_dims"]),
                out_dim=cfg["decoder"]["out_dim"])
            model = build_model(kind, target_kind, bundle.s_dim, enc, rng,
                                gru_config=gru_cfg)
        else:
            tr_cfg = TransformerDecoderConfig(
                model_dim=cfg["decoder"]["model_dim"], layers=cfg["decoder"]["layers"],
                heads=cfg["decoder"]["heads"], ff_dim=cfg["decoder"]["ff_dim"],
                out_dim=cfg["decoder"]["out_dim"],
                positional_encoding=cfg["decoder"]["positional_encoding"])
            model = build_model(kind, target_kind, bundle.s_dim, enc, rng,
                                transformer_config=tr_cfg)
        restore_params(model.params(), parse_blocks(sections["extractor"][1]))
        model.target_mean = np.array(cfg["target_mean"])
        model.target_std = np.array(cfg["target_std"])
        model.frozen = True
        bundle.extractor = model
    for target in TARGETS:
        bundle.models[target] = gbt.parse_model(sections[f"gbt.{target}"][1])
    return bundle


def audit_no_leakage(bundle: ModelBundle) -> bool:
    """Verify the recorded split provenance: test data never trains anything."""
    trained_on = bundle.meta.get("trained_on", {})
    if not trained_on:
        return False
    allowed = {"gbt": {"train"}, "scaler": {"train"}, "extractor": {"train", "val"}}
    for stage, splits in trained_on.items():
        if not set(splits) <= allowed.get(stage, set()):
            return False
    return True
