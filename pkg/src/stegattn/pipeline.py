"""Run configuration, training stages, and the embed/extract/evaluate flows.

Everything here is reproducible from (config, dataset, seed): stage seeds
fork from the config's root seed, metric logs use a fixed text format,
and the stego bytes depend only on model checkpoints, knobs and payload.
"""

from __future__ import annotations

import copy
import json
import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import yaml

from stegattn import checkpoint as ckpt
from stegattn import codec
from stegattn.analysis import (
    feature_distortion_rate,
    classification_agreement,
    roc_and_auc,
    score_image,
)
from stegattn.dataset import (
    LOSSY_SUFFIXES,
    load_folder,
    load_image,
    photo_corpus,
    save_png,
    toy_corpus,
)
from stegattn.errors import CorruptPayloadError, NotStegoError, PreconditionError
from stegattn.fusion import FusionStrategy, finetune_phase1, finetune_phase2, fuse
from stegattn.itc import ItcTrainConfig, ItcNetwork, itc_forward, make_itc_network, train_itc
from stegattn.mfd import (
    FeatureExtractor,
    MfdNetwork,
    MfdTrainConfig,
    make_mfd_network,
    make_small_classifier,
    mfd_forward,
    train_classifier,
    train_mfd_phase1,
    train_mfd_phase2,
)
from stegattn.rng import fork_seed
from stegattn.tensor_core import ImageTensor

log = logging.getLogger(__name__)

CONFIG_SCHEMA_VERSION = 1
MANIFEST_SCHEMA_VERSION = 1
SHUFFLE_ALGORITHM = "splitmix64+xoshiro256**+fisher-yates-mod"

STAGES = ("itc", "mfd-phase1", "extractor", "mfd-phase2", "finetune-itc", "finetune-mfd")

_STRATEGY_RE = re.compile(
    r"^(?P<fusion>min|mean)-lsm-(?P<lsm>\d+)(?:-ps-(?P<ps>\d+(?:\.\d+)?))?$", re.IGNORECASE
)


@dataclass(frozen=True)
class StrategySpec:
    """Parsed strategy name of the form (Min|Mean)-LSM-k[-PS-x]."""

    fusion: FusionStrategy
    lsm_k: int
    ps_limit_bpp: float | None = None

    @classmethod
    def parse(cls, name: str) -> "StrategySpec":
        m = _STRATEGY_RE.match(name.strip())
        if not m:
            raise ValueError(
                f"bad strategy name {name!r}; expected (Min|Mean)-LSM-k[-PS-x]"
            )
        ps = m.group("ps")
        return cls(
            fusion=FusionStrategy.parse(m.group("fusion")),
            lsm_k=int(m.group("lsm")),
            ps_limit_bpp=float(ps) if ps is not None else None,
        )

    @property
    def name(self) -> str:
        base = f"{self.fusion.label}-LSM-{self.lsm_k}"
        if self.ps_limit_bpp is not None:
            return f"{base}-PS-{self.ps_limit_bpp:g}"
        return base


@dataclass
class RunConfig:
    """Everything a run needs; serializes to a versioned YAML file."""

    dataset: str = "synthetic"  # "synthetic" or a folder of images
    dataset_size: int = 64
    image_size: int = 64
    channels: int = 3
    seed: int = 0
    output_dir: str = "runs/default"
    strategy: str = "Mean-LSM-1"
    ps_seed: int | None = None
    b_max: int = codec.B_MAX_DEFAULT
    itc: ItcTrainConfig = field(default_factory=ItcTrainConfig)
    mfd_phase1: MfdTrainConfig = field(default_factory=lambda: MfdTrainConfig(phase=1))
    mfd_phase2: MfdTrainConfig = field(default_factory=lambda: MfdTrainConfig(phase=2))
    finetune_itc: ItcTrainConfig | None = None
    finetune_mfd: MfdTrainConfig | None = None
    extractor_epochs: int = 30
    extractor_lr: float = 3e-3

    def __post_init__(self):
        StrategySpec.parse(self.strategy)
        if self.finetune_itc is None:
            self.finetune_itc = copy.deepcopy(self.itc)
        if self.finetune_mfd is None:
            self.finetune_mfd = copy.deepcopy(self.mfd_phase2)

    @property
    def strategy_spec(self) -> StrategySpec:
        return StrategySpec.parse(self.strategy)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["schema_version"] = CONFIG_SCHEMA_VERSION
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        version = data.pop("schema_version", CONFIG_SCHEMA_VERSION)
        if version != CONFIG_SCHEMA_VERSION:
            raise ValueError(f"unsupported config schema version {version}")
        for key, sub in (
            ("itc", ItcTrainConfig),
            ("mfd_phase1", MfdTrainConfig),
            ("mfd_phase2", MfdTrainConfig),
            ("finetune_itc", ItcTrainConfig),
            ("finetune_mfd", MfdTrainConfig),
        ):
            if isinstance(data.get(key), dict):
                data[key] = sub(**data[key])
        return cls(**data)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(yaml.safe_load(Path(path).read_text()))


def load_training_images(config: RunConfig):
    """(images tensor, labels tensor or None) for the configured dataset."""
    if config.dataset == "synthetic":
        ds = toy_corpus(
            n=config.dataset_size,
            size=config.image_size,
            channels=config.channels,
            seed=fork_seed(config.seed, "dataset"),
        )
        return ds.to_tensor(), torch.from_numpy(ds.labels)
    entries = load_folder(config.dataset)
    stack = np.stack([img.floats for _, img in entries])
    return torch.from_numpy(stack.transpose(0, 3, 1, 2)), None


def write_metrics_csv(path: Path, rows: list[dict]) -> None:
    """Stable text serialization: repr() floats, keys from the first row."""
    if not rows:
        return
    keys = list(rows[0].keys())
    lines = [",".join(keys)]
    for row in rows:
        lines.append(",".join(repr(row.get(k, "")) for k in keys))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def _checkpoint_path(out: Path, kind: str) -> Path:
    return out / "checkpoints" / f"{kind}.pt"


def _load_net(path: Path, kind: str, config: RunConfig):
    payload = ckpt.load_checkpoint(path, expected_kind=kind)
    if kind in ("itc", "itc-finetuned"):
        net = ItcNetwork(config.channels)
    elif kind == "extractor":
        net = make_small_classifier(
            config.channels, num_classes=payload["config"].get("num_classes", 3)
        )
    else:
        net = MfdNetwork(config.channels, phase=payload["phase"] or 2)
    net.load_state_dict(payload["state_dict"])
    net.eval()
    return net, payload


def cmd_train(config: RunConfig, stages: list[str] | None = None) -> dict[str, str]:
    """Run the requested training stages in order; returns kind -> digest.

    Later stages load their prerequisites from the output directory when
    not produced in this invocation and raise a precondition error naming
    the stage if the artifact is missing.
    """
    stages = list(stages) if stages is not None else list(STAGES)
    unknown = set(stages) - set(STAGES)
    if unknown:
        raise ValueError(f"unknown stages: {sorted(unknown)}")
    stages = [s for s in STAGES if s in stages]

    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.yaml")
    images, labels = load_training_images(config)
    if images.shape[0] == 0:
        raise ValueError("dataset is empty")
    spec = config.strategy_spec
    digests: dict[str, str] = {}

    produced: dict[str, torch.nn.Module] = {}

    def require(kind: str, stage: str):
        if kind in produced:
            return produced[kind]
        path = _checkpoint_path(out, kind)
        if not path.exists():
            raise PreconditionError(
                f"stage {stage!r} requires checkpoint {kind!r}; run its stage first"
            )
        net, _ = _load_net(path, kind, config)
        produced[kind] = net
        return net

    def persist(kind: str, module: torch.nn.Module, cfg_dict: dict, metrics, phase=None):
        digest = ckpt.save_checkpoint(
            _checkpoint_path(out, kind), kind, module, cfg_dict, metrics, phase=phase
        )
        write_metrics_csv(out / "metrics" / f"{kind}.csv", metrics or [])
        produced[kind] = module
        digests[kind] = digest
        log.info("stage %s complete (digest %s)", kind, digest[:12])

    if "itc" in stages:
        net = make_itc_network(config.channels, seed=fork_seed(config.seed, "itc"))
        net, metrics = train_itc(net, images, config.itc, seed=fork_seed(config.seed, "itc-train"))
        persist("itc", net, asdict(config.itc), metrics)

    if "mfd-phase1" in stages:
        net = make_mfd_network(config.channels, seed=fork_seed(config.seed, "mfd"), phase=1)
        net, metrics = train_mfd_phase1(
            net, images, config.mfd_phase1, seed=fork_seed(config.seed, "mfd1-train")
        )
        persist("mfd-phase1", net, asdict(config.mfd_phase1), metrics, phase=1)

    if "extractor" in stages:
        if labels is None:
            # folder datasets carry no labels; fall back to a two-way split
            labels = torch.arange(images.shape[0]) % 2
        num_classes = int(labels.max()) + 1
        clf = make_small_classifier(
            config.channels, num_classes=num_classes, seed=fork_seed(config.seed, "extractor")
        )
        clf = train_classifier(
            clf,
            images,
            labels,
            epochs=config.extractor_epochs,
            learning_rate=config.extractor_lr,
            seed=fork_seed(config.seed, "extractor-train"),
        )
        persist(
            "extractor",
            clf,
            {"num_classes": num_classes, "epochs": config.extractor_epochs},
            [],
        )

    if "mfd-phase2" in stages:
        base = require("mfd-phase1", "mfd-phase2")
        payload_path = _checkpoint_path(out, "mfd-phase1")
        if payload_path.exists():
            meta = ckpt.load_checkpoint(payload_path)
            if meta["phase"] not in (1, None):
                raise PreconditionError(
                    "stage 'mfd-phase2' must initialize from a phase-1 checkpoint, "
                    f"found phase {meta['phase']}"
                )
        clf = require("extractor", "mfd-phase2")
        extractor = FeatureExtractor(copy.deepcopy(clf))
        net = copy.deepcopy(base)
        net.configure_phase(2, seed=fork_seed(config.seed, "mfd"))
        net, metrics = train_mfd_phase2(
            net, extractor, images, config.mfd_phase2, seed=fork_seed(config.seed, "mfd2-train")
        )
        persist("mfd-phase2", net, asdict(config.mfd_phase2), metrics, phase=2)

    if "finetune-itc" in stages:
        itc_net = copy.deepcopy(require("itc", "finetune-itc"))
        mfd_net = require("mfd-phase2", "finetune-itc")
        itc_net, metrics = finetune_phase1(
            itc_net,
            mfd_net,
            images,
            config.finetune_itc,
            spec.fusion,
            seed=fork_seed(config.seed, "finetune-itc"),
            noise_amplitude=config.mfd_phase2.noise_amplitude,
        )
        persist("itc-finetuned", itc_net, asdict(config.finetune_itc), metrics)

    if "finetune-mfd" in stages:
        itc_net = require("itc-finetuned", "finetune-mfd")
        mfd_net = copy.deepcopy(require("mfd-phase2", "finetune-mfd"))
        clf = require("extractor", "finetune-mfd")
        extractor = FeatureExtractor(copy.deepcopy(clf))
        mfd_net, metrics = finetune_phase2(
            itc_net,
            mfd_net,
            extractor,
            images,
            config.finetune_mfd,
            spec.fusion,
            seed=fork_seed(config.seed, "finetune-mfd"),
        )
        persist("mfd-finetuned", mfd_net, asdict(config.finetune_mfd), metrics, phase=2)

    return digests


def load_models(checkpoint_dir: str | Path, config: RunConfig, use_finetuned: bool = True):
    """(itc_net, mfd_net, digests) from a checkpoint directory."""
    out = Path(checkpoint_dir)
    itc_kind = "itc-finetuned" if use_finetuned else "itc"
    mfd_kind = "mfd-finetuned" if use_finetuned else "mfd-phase2"
    if use_finetuned and not _checkpoint_path(out, itc_kind).exists():
        itc_kind, mfd_kind = "itc", "mfd-phase2"
    itc_path = _checkpoint_path(out, itc_kind)
    mfd_path = _checkpoint_path(out, mfd_kind)
    for kind, path in ((itc_kind, itc_path), (mfd_kind, mfd_path)):
        if not path.exists():
            raise PreconditionError(f"missing checkpoint {kind!r} under {out}")
    itc_net, itc_payload = _load_net(itc_path, itc_kind, config)
    mfd_net, mfd_payload = _load_net(mfd_path, mfd_kind, config)
    digests = {itc_kind: itc_payload["digest"], mfd_kind: mfd_payload["digest"]}
    return itc_net, mfd_net, digests


def _plan_for_image(image: ImageTensor, itc_net, mfd_net, spec: StrategySpec, ps_seed, b_max):
    # straddling applies only when the strategy name carries a PS budget
    use_ps = spec.ps_limit_bpp is not None
    return codec.recompute_plan(
        image,
        itc_net,
        mfd_net,
        spec.fusion,
        lsm_k=spec.lsm_k,
        ps_seed=ps_seed if use_ps else None,
        ps_limit_bpp=spec.ps_limit_bpp,
        b_max=b_max,
    )


def save_plan(plan: codec.EmbeddingPlan, path: str | Path) -> None:
    np.savez_compressed(
        path,
        slots=plan.slots,
        lsm_k=plan.lsm_k,
        ps_seed=-1 if plan.ps_seed is None else plan.ps_seed,
        ps_limit_bpp=-1.0 if plan.ps_limit_bpp is None else plan.ps_limit_bpp,
        ps_unlimited=plan.ps_unlimited,
    )


def load_plan(path: str | Path) -> codec.EmbeddingPlan:
    data = np.load(path)
    ps_seed = int(data["ps_seed"])
    ps_limit = float(data["ps_limit_bpp"])
    return codec.EmbeddingPlan(
        slots=data["slots"],
        lsm_k=int(data["lsm_k"]),
        ps_seed=None if ps_seed < 0 else ps_seed,
        ps_limit_bpp=None if ps_limit < 0 else ps_limit,
        ps_unlimited=bool(data["ps_unlimited"]),
    )


def cmd_embed(
    cover_path: str | Path,
    payload_path: str | Path,
    checkpoint_dir: str | Path,
    output_path: str | Path,
    config: RunConfig,
    strategy: str | None = None,
    ps_seed: int | None = None,
    use_finetuned: bool = True,
    save_plan_path: str | Path | None = None,
) -> dict:
    """Embed a payload file into a cover image; writes stego PNG + manifest."""
    cover_path = Path(cover_path)
    if cover_path.suffix.lower() in LOSSY_SUFFIXES:
        log.warning(
            "cover %s uses a lossy format; embedding into lossy images is unsupported "
            "(output is written as PNG)",
            cover_path.name,
        )
    cover = load_image(cover_path)
    payload = Path(payload_path).read_bytes()
    spec = StrategySpec.parse(strategy or config.strategy)
    ps_seed = ps_seed if ps_seed is not None else config.ps_seed
    if spec.ps_limit_bpp is not None and ps_seed is None:
        raise ValueError(f"strategy {spec.name} needs a straddling seed (--ps-seed)")

    itc_net, mfd_net, digests = load_models(checkpoint_dir, config, use_finetuned)
    plan = _plan_for_image(cover, itc_net, mfd_net, spec, ps_seed, config.b_max)

    if len(payload) == 0:
        frame = None
        payload_bits = 0
    else:
        frame = codec.PayloadFrame.from_bytes(payload)
        payload_bits = int(frame.body.size)
    stego = codec.embed(cover, plan, frame)

    output_path = Path(output_path)
    save_png(stego, output_path)
    if save_plan_path is not None:
        save_plan(plan, save_plan_path)

    bpp = payload_bits / (cover.height * cover.width)
    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "strategy": spec.name,
        "lsm_k": spec.lsm_k,
        "ps_seed": ps_seed,
        "ps_limit_bpp": spec.ps_limit_bpp,
        "b_max": config.b_max,
        "shuffle_algorithm": SHUFFLE_ALGORITHM,
        "checkpoint_digests": digests,
        "payload_bits": payload_bits,
        "payload_bpp": bpp,
        "plan_slots": len(plan),
        "capacity_bpp": len(plan) / (cover.height * cover.width),
    }
    manifest_path = output_path.with_suffix(output_path.suffix + ".manifest.json")
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def cmd_extract(
    stego_path: str | Path,
    checkpoint_dir: str | Path,
    output_path: str | Path,
    config: RunConfig,
    strategy: str | None = None,
    ps_seed: int | None = None,
    manifest_path: str | Path | None = None,
    oracle_plan_path: str | Path | None = None,
    reference_path: str | Path | None = None,
    use_finetuned: bool = True,
) -> dict:
    """Recover the payload from a stego image; reports BSER when a
    reference payload is supplied."""
    stego_path = Path(stego_path)
    stego = load_image(stego_path)

    manifest = None
    default_manifest = stego_path.with_suffix(stego_path.suffix + ".manifest.json")
    if manifest_path is not None:
        manifest = json.loads(Path(manifest_path).read_text())
    elif default_manifest.exists():
        manifest = json.loads(default_manifest.read_text())

    if strategy is None and manifest is not None:
        strategy = manifest["strategy"]
    if ps_seed is None and manifest is not None:
        ps_seed = manifest["ps_seed"]
    if ps_seed is None:
        ps_seed = config.ps_seed
    spec = StrategySpec.parse(strategy or config.strategy)

    if oracle_plan_path is not None:
        plan = load_plan(oracle_plan_path)
    else:
        itc_net, mfd_net, digests = load_models(checkpoint_dir, config, use_finetuned)
        if manifest is not None and manifest.get("checkpoint_digests") != digests:
            log.warning(
                "checkpoint digests do not match the manifest; attempting extraction anyway"
            )
        plan = _plan_for_image(stego, itc_net, mfd_net, spec, ps_seed, config.b_max)

    frame = codec.extract_with_plan(stego, plan)
    data = frame.body_bytes()
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    output_path.write_bytes(data)

    report = {"payload_bits": int(frame.body.size), "output": str(output_path)}
    if reference_path is not None:
        reference = np.unpackbits(
            np.frombuffer(Path(reference_path).read_bytes(), dtype=np.uint8)
        )
        report["bser_percent"] = codec.bser(reference, frame.body)
    return report


def deterministic_payload(n_bytes: int, seed: int) -> bytes:
    """Seeded stand-in for an arbitrary compressed payload stream."""
    rng = np.random.default_rng(fork_seed(seed, "payload"))
    return rng.integers(0, 256, n_bytes, dtype=np.uint8).tobytes()


def measure_strategy_bser(
    cover: ImageTensor,
    itc_net,
    mfd_net,
    spec: StrategySpec,
    ps_seed: int | None,
    b_max: int,
    payload_seed: int,
) -> tuple[float | None, float, ImageTensor]:
    """(BSER % or None when capacity cannot hold a frame, payload bpp, stego).

    The payload fills the plan; extraction recomputes the attention on the
    stego image, so the measured error reflects attention drift.
    """
    plan = _plan_for_image(cover, itc_net, mfd_net, spec, ps_seed, b_max)
    body_bytes = (len(plan) - codec.HEADER_BITS) // 8
    if body_bytes < 1:
        return None, 0.0, codec.embed(cover, plan, None)
    frame = codec.PayloadFrame.from_bytes(deterministic_payload(body_bytes, payload_seed))
    stego = codec.embed(cover, plan, frame)
    plan_back = _plan_for_image(stego, itc_net, mfd_net, spec, ps_seed, b_max)
    try:
        received = codec.extract_with_plan(stego, plan_back).body
    except NotStegoError:
        received = np.zeros(0, dtype=np.uint8)
    except CorruptPayloadError as exc:
        received = exc.recovered_bits
    bpp = frame.body.size / (cover.height * cover.width)
    return codec.bser(frame.body, received), bpp, stego


def cmd_evaluate(
    checkpoint_dir: str | Path,
    output_dir: str | Path,
    config: RunConfig,
    corpus: list[tuple[str, ImageTensor]] | None = None,
    strategies: list[str] | None = None,
    seed: int | None = None,
    use_finetuned: bool = True,
) -> dict:
    """Strategy table, detector ROC/AUC, null calibration, and distortion
    summary over a corpus; writes delimited tables plus a ROC plot."""
    seed = seed if seed is not None else config.seed
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)

    if corpus is None:
        spec_size = max(config.image_size, 64)
        corpus = [
            (f"photo-{i:03d}", img)
            for i, img in enumerate(
                photo_corpus(
                    config.dataset_size, size=spec_size, channels=config.channels,
                    seed=fork_seed(seed, "eval-corpus"),
                )
            )
        ]
    if len(corpus) < 2:
        raise ValueError("evaluation corpus must contain at least 2 images (ROC needs both classes)")

    strategies = strategies or [config.strategy]
    itc_net, mfd_net, _ = load_models(checkpoint_dir, config, use_finetuned)
    ps_seed = config.ps_seed if config.ps_seed is not None else fork_seed(seed, "ps")

    # strategy table (BSER % and payload bpp per strategy)
    strategy_rows = []
    stego_by_strategy: dict[str, list[tuple[str, ImageTensor]]] = {}
    for name in strategies:
        spec = StrategySpec.parse(name)
        bsers, bpps, stegos = [], [], []
        for i, (image_id, cover) in enumerate(corpus):
            bser_val, bpp, stego = measure_strategy_bser(
                cover, itc_net, mfd_net, spec, ps_seed, config.b_max,
                payload_seed=fork_seed(seed, f"payload/{name}/{i}"),
            )
            if bser_val is not None:
                bsers.append(bser_val)
            bpps.append(bpp)
            stegos.append((image_id, stego))
        strategy_rows.append(
            {
                "model": spec.name,
                "bser_percent": float(np.mean(bsers)) if bsers else None,
                "payload_bpp": float(np.mean(bpps)),
            }
        )
        stego_by_strategy[spec.name] = stegos

    _write_table(
        out / "strategy_table.tsv",
        ["model", "bser_percent", "payload_bpp"],
        [
            (
                r["model"],
                "-" if r["bser_percent"] is None else f"{r['bser_percent']:.2f}",
                f"{r['payload_bpp']:.2f}",
            )
            for r in strategy_rows
        ],
    )

    # detector scores: clean corpus vs first strategy's stego set
    first = strategies[0]
    spec0 = StrategySpec.parse(first)
    clean_scores = {d: [] for d in ("chi_square", "rs", "sample_pairs", "fused_mean")}
    stego_scores = {d: [] for d in clean_scores}
    score_rows = []
    for image_id, img in corpus:
        for s in score_image(image_id, img):
            clean_scores[s.detector].append(s.score)
            score_rows.append(("clean", s.image_id, s.detector, f"{s.score:.6f}"))
    for image_id, img in stego_by_strategy[spec0.name]:
        for s in score_image(image_id, img):
            stego_scores[s.detector].append(s.score)
            score_rows.append(("stego", s.image_id, s.detector, f"{s.score:.6f}"))
    _write_table(out / "detector_scores.tsv", ["class", "image", "detector", "score"], score_rows)

    auc_rows = []
    roc_curves = {}
    for det in clean_scores:
        scores = np.array(clean_scores[det] + stego_scores[det])
        labels = np.array([False] * len(clean_scores[det]) + [True] * len(stego_scores[det]))
        curve = roc_and_auc(scores, labels)
        roc_curves[det] = curve
        auc_rows.append((det, f"{curve.auc:.4f}"))
    _write_table(out / "detector_auc.tsv", ["detector", "auc"], auc_rows)

    # null calibration: clean vs clean with shuffled labels
    null_rows = []
    half = len(corpus) // 2
    shuffle = np.random.default_rng(fork_seed(seed, "null-labels")).permutation(len(corpus))
    null_labels = np.zeros(len(corpus), dtype=bool)
    null_labels[shuffle[:half]] = True
    for det in clean_scores:
        curve = roc_and_auc(np.array(clean_scores[det]), null_labels)
        null_rows.append((det, f"{curve.auc:.4f}"))
    _write_table(out / "null_calibration.tsv", ["detector", "auc"], null_rows)

    _plot_roc(out / "roc.png", roc_curves)

    # feature distortion and classification agreement against the extractor
    extractor_path = _checkpoint_path(Path(checkpoint_dir), "extractor")
    distortion_rows, agreement_rows = [], []
    mean_distortion = agreement_rate = None
    if extractor_path.exists():
        clf, _ = _load_net(extractor_path, "extractor", config)
        extractor = FeatureExtractor(copy.deepcopy(clf))
        rates, agreements = [], []
        for (image_id, cover), (_, stego) in zip(corpus, stego_by_strategy[spec0.name]):
            rate = feature_distortion_rate(cover, stego, extractor)
            agr = classification_agreement(cover, stego, clf)
            rates.append(rate)
            agreements.append(agr.agree)
            distortion_rows.append((image_id, f"{rate:.4f}"))
            agreement_rows.append(
                (
                    image_id,
                    str(agr.agree),
                    str(agr.label_cover),
                    f"{agr.confidence_cover:.4f}",
                    str(agr.label_stego),
                    f"{agr.confidence_stego:.4f}",
                )
            )
        mean_distortion = float(np.mean(rates))
        agreement_rate = float(np.mean(agreements))
        _write_table(out / "feature_distortion.tsv", ["image", "distortion_percent"], distortion_rows)
        _write_table(
            out / "agreement.tsv",
            ["image", "agree", "label_cover", "conf_cover", "label_stego", "conf_stego"],
            agreement_rows,
        )

    summary = {
        "strategies": strategy_rows,
        "detector_auc": {d: roc_curves[d].auc for d in roc_curves},
        "null_auc": {d: float(v) for d, v in null_rows},
        "mean_feature_distortion_percent": mean_distortion,
        "classification_agreement_rate": agreement_rate,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _write_table(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(str(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _plot_roc(path: Path, curves: dict) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 6))
    for det, curve in curves.items():
        fpr, tpr = curve.points[:, 0], curve.points[:, 1]
        ax.plot(fpr, tpr, label=f"{det} (AUC {curve.auc:.3f})")
    ax.plot([0, 1], [0, 1], "k--", linewidth=0.8, label="chance")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title("Steganalysis ROC")
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
