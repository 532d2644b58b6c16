"""Synthetic confounded visual-question-answering benchmark.

Each instance is an image of N feature regions: N-1 regions carry one of
G anatomical background prototypes and exactly one region carries one of
L lesion signatures, all perturbed by Gaussian noise.  Questions ask
either which lesion is present (open style, L answers) or whether the
lesion sits in the upper half of the region grid (closed style, yes/no).
Answers are a deterministic function of the lesion identity and its
region index and NEVER of the background, which makes the background a
pure confounder.

The confound is injected through the sampling prior: in the training and
iid_test splits each lesion co-occurs with its paired background with
probability ``train_bias`` (0.9 by default), while the ood_test split
redraws that prior (``ood_bias``, 0 by default, meaning the paired
background never appears).  A model that shortcuts through the easy,
spatially dominant background transfers badly to the OOD split; a model
reading the lesion region transfers perfectly.

The answer vocabulary has ``lesions + 4`` entries: L lesion-type answers
followed by four location tokens, of which only yes/no are ever correct
labels (the trailing two are vocabulary padding so the closed questions
stay binary).
"""

from __future__ import annotations

import ast
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

DATASET_MAGIC = b"LCTD"
DATASET_VERSION = 1

QUESTION_LESION = 0    # "which lesion type is present?"  (open style)
QUESTION_LOCATION = 1  # "is the lesion in the upper half?"  (closed style)
QUESTION_COUNT = 2

SPLITS = ("train", "iid_test", "ood_test")


@dataclass(frozen=True)
class GeneratorConfig:
    backgrounds: int = 4      # G: anatomy background prototypes
    lesions: int = 4          # L: lesion signature types
    regions: int = 9          # N: feature regions per image, one lesion region
    raw_dim: int = 32         # D_in: raw feature dimension
    noise_sigma: float = 0.3
    train_bias: float = 0.9   # P(paired background | lesion) on train/iid
    ood_bias: float = 0.0     # same probability on the OOD split
    train_count: int = 4000
    iid_count: int = 1000
    ood_count: int = 1000
    seed: int = 42

    @property
    def answer_count(self) -> int:
        return self.lesions + 4

    def validate(self) -> "GeneratorConfig":
        for key in ("backgrounds", "lesions", "regions"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1, got {getattr(self, key)}")
        if self.raw_dim < self.backgrounds + self.lesions:
            raise ConfigError(
                f"raw_dim={self.raw_dim} too small to separate "
                f"{self.backgrounds + self.lesions} prototypes"
            )
        for key in ("train_bias", "ood_bias"):
            value = getattr(self, key)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{key} must be a probability in [0, 1], got {value}")
        if self.backgrounds > 1:
            floor = 1.0 / self.backgrounds
            if self.train_bias < floor - 1e-12:
                # below the uniform rate the pairing is anti-correlated already on train
                raise ConfigError(
                    f"train_bias={self.train_bias} is below the independence floor {floor}"
                )
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        for key in ("train_count", "iid_count", "ood_count"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be >= 0, got {getattr(self, key)}")
        return self


@dataclass(frozen=True)
class InstanceMeta:
    """Latent generator state, for diagnostics only: never a model input."""

    background_id: int
    lesion_id: int
    lesion_region_index: int


@dataclass
class VqaInstance:
    features: np.ndarray  # N x D_in raw region features
    question_id: int
    answer: int
    meta: InstanceMeta


def paired_background(lesion_id: int, backgrounds: int) -> int:
    return lesion_id % backgrounds


def answer_for(question_id: int, lesion_id: int, region_index: int, config: GeneratorConfig) -> int:
    """The causal labeling function: background identity plays no role."""
    if question_id == QUESTION_LESION:
        return lesion_id
    if question_id == QUESTION_LOCATION:
        upper = region_index < config.regions // 2
        return config.lesions + (0 if upper else 1)
    raise DataError(f"unknown question id {question_id}")


def answer_candidates(question_id: int, config: GeneratorConfig) -> list[int]:
    """Valid answer ids for a question type (argmax is restricted to these)."""
    if question_id == QUESTION_LESION:
        return list(range(config.lesions))
    if question_id == QUESTION_LOCATION:
        return [config.lesions, config.lesions + 1]
    raise DataError(f"unknown question id {question_id}")


def is_open_question(question_id: int) -> bool:
    return question_id == QUESTION_LESION


def make_prototypes(config: GeneratorConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random unit prototypes with pairwise |cos| < 0.5.

    Vectors are drawn one at a time and redrawn on separation violations;
    an upfront dimension check guarantees the loop can succeed.
    """
    config.validate()
    total = config.backgrounds + config.lesions
    chosen: list[np.ndarray] = []
    for _ in range(total):
        for attempt in range(10000):
            v = rng.normal(size=config.raw_dim)
            v = v / np.linalg.norm(v)
            if all(abs(float(v @ u)) < 0.5 for u in chosen):
                chosen.append(v)
                break
        else:
            raise ConfigError(
                f"could not separate {total} prototypes in dimension {config.raw_dim}"
            )
    protos = np.array(chosen)
    return protos[: config.backgrounds], protos[config.backgrounds:]


def sample_instance(
    config: GeneratorConfig,
    prototypes: tuple[np.ndarray, np.ndarray],
    split: str,
    rng: np.random.Generator,
) -> VqaInstance:
    """Draw one instance under the split's background prior."""
    if split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}")
    bg_protos, lesion_protos = prototypes
    bias = config.ood_bias if split == "ood_test" else config.train_bias

    lesion = int(rng.integers(config.lesions))
    paired = paired_background(lesion, config.backgrounds)
    if config.backgrounds == 1:
        background = 0
    elif rng.random() < bias:
        background = paired
    else:
        others = [g for g in range(config.backgrounds) if g != paired]
        background = others[int(rng.integers(len(others)))]

    region = int(rng.integers(config.regions))
    features = bg_protos[background] + config.noise_sigma * rng.normal(
        size=(config.regions, config.raw_dim)
    )
    features[region] = lesion_protos[lesion] + config.noise_sigma * rng.normal(size=config.raw_dim)

    question = int(rng.integers(QUESTION_COUNT))
    answer = answer_for(question, lesion, region, config)
    return VqaInstance(
        features=features,
        question_id=question,
        answer=answer,
        meta=InstanceMeta(background, lesion, region),
    )


@dataclass
class Splits:
    train: list[VqaInstance]
    iid_test: list[VqaInstance]
    ood_test: list[VqaInstance]
    prototypes: tuple[np.ndarray, np.ndarray]
    config: GeneratorConfig

    def by_name(self, name: str) -> list[VqaInstance]:
        if name not in SPLITS:
            raise ConfigError(f"unknown split {name!r}")
        return getattr(self, name)


def build_splits(config: GeneratorConfig) -> Splits:
    """Generate the three splits deterministically from the config seed."""
    config.validate()
    root = np.random.SeedSequence(config.seed)
    proto_seq, train_seq, iid_seq, ood_seq = root.spawn(4)
    prototypes = make_prototypes(config, np.random.default_rng(proto_seq))

    def draw(count: int, split: str, seq) -> list[VqaInstance]:
        rng = np.random.default_rng(seq)
        return [sample_instance(config, prototypes, split, rng) for _ in range(count)]

    return Splits(
        train=draw(config.train_count, "train", train_seq),
        iid_test=draw(config.iid_count, "iid_test", iid_seq),
        ood_test=draw(config.ood_count, "ood_test", ood_seq),
        prototypes=prototypes,
        config=config,
    )


def split_manifest(config: GeneratorConfig) -> str:
    """Human-readable record of the priors and seeds behind a generated set."""
    lines = [
        "synthetic confounded VQA benchmark",
        f"backgrounds={config.backgrounds}",
        f"lesions={config.lesions}",
        f"regions={config.regions}",
        f"raw_dim={config.raw_dim}",
        f"noise_sigma={config.noise_sigma!r}",
        f"train_bias={config.train_bias!r}   (train, iid_test)",
        f"ood_bias={config.ood_bias!r}   (ood_test)",
        f"counts train/iid/ood = {config.train_count}/{config.iid_count}/{config.ood_count}",
        f"answer_count={config.answer_count}",
        f"seed={config.seed}",
    ]
    return "\n".join(lines) + "\n"


# -- binary dataset container -------------------------------------------------


def config_echo(config: GeneratorConfig) -> str:
    fields = (
        "backgrounds", "lesions", "regions", "raw_dim", "noise_sigma",
        "train_bias", "ood_bias", "train_count", "iid_count", "ood_count", "seed",
    )
    return "\n".join(f"{name}={getattr(config, name)!r}" for name in fields)


def config_from_echo(echo: str) -> GeneratorConfig:
    values: dict[str, object] = {}
    for line in echo.strip().splitlines():
        key, _, raw = line.partition("=")
        values[key] = ast.literal_eval(raw)
    return GeneratorConfig(**values).validate()


def write_dataset(path, instances: list[VqaInstance], config: GeneratorConfig) -> None:
    """Write one split to the binary container (magic LCTD, little-endian)."""
    echo = config_echo(config).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<II", DATASET_VERSION, len(echo)))
        fh.write(echo)
        fh.write(struct.pack("<I", len(instances)))
        for inst in instances:
            n, d = inst.features.shape
            fh.write(struct.pack("<II", n, d))
            fh.write(inst.features.astype("<f8").tobytes())
            fh.write(struct.pack(
                "<IIIII",
                inst.question_id,
                inst.answer,
                inst.meta.background_id,
                inst.meta.lesion_id,
                inst.meta.lesion_region_index,
            ))


def read_dataset(path) -> tuple[list[VqaInstance], GeneratorConfig]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != DATASET_MAGIC:
        raise DataError(f"{path}: not a dataset container (bad magic)")
    version, echo_len = struct.unpack_from("<II", blob, 4)
    if version != DATASET_VERSION:
        raise DataError(f"{path}: unsupported dataset version {version}")
    offset = 12
    config = config_from_echo(blob[offset:offset + echo_len].decode("utf-8"))
    offset += echo_len
    (count,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    instances: list[VqaInstance] = []
    for _ in range(count):
        n, d = struct.unpack_from("<II", blob, offset)
        offset += 8
        features = np.frombuffer(blob, dtype="<f8", count=n * d, offset=offset).reshape(n, d).copy()
        offset += n * d * 8
        qid, answer, bg, lesion, region = struct.unpack_from("<IIIII", blob, offset)
        offset += 20
        instances.append(VqaInstance(features, qid, answer, InstanceMeta(bg, lesion, region)))
    return instances, config


# -- diagnostics: shortcut availability and causal faithfulness ----------------


@dataclass
class MetricsBlock:
    """Accuracy in percent, overall and per question style, with raw counts."""

    overall: float
    open_style: float
    closed_style: float
    counts: dict[str, int] = field(default_factory=dict)


def accuracy_block(predictions: list[int], instances: list[VqaInstance]) -> MetricsBlock:
    total = correct = 0
    open_total = open_correct = 0
    for pred, inst in zip(predictions, instances):
        hit = int(pred == inst.answer)
        total += 1
        correct += hit
        if is_open_question(inst.question_id):
            open_total += 1
            open_correct += hit
    closed_total = total - open_total
    closed_correct = correct - open_correct

    def pct(c, t):
        return 100.0 * c / t if t else 0.0

    return MetricsBlock(
        overall=pct(correct, total),
        open_style=pct(open_correct, open_total),
        closed_style=pct(closed_correct, closed_total),
        counts={
            "total": total, "correct": correct,
            "open": open_total, "open_correct": open_correct,
            "closed": closed_total, "closed_correct": closed_correct,
        },
    )


def background_oracle(train: list[VqaInstance], evaluation: list[VqaInstance],
                      config: GeneratorConfig) -> MetricsBlock:
    """Majority answer per (background, question type), fit on the train split.

    Quantifies how far the background shortcut alone carries a classifier.
    The open-style accuracy is the confound-sensitive number: the closed
    questions depend on lesion position, which the background never predicts
    beyond the base rate.
    """
    counts: dict[tuple[int, int], np.ndarray] = {}
    for inst in train:
        key = (inst.meta.background_id, inst.question_id)
        if key not in counts:
            counts[key] = np.zeros(config.answer_count, dtype=np.int64)
        counts[key][inst.answer] += 1
    majority = {key: int(np.argmax(c)) for key, c in counts.items()}
    fallback = int(np.argmax(sum(counts.values())))
    preds = [
        majority.get((inst.meta.background_id, inst.question_id), fallback)
        for inst in evaluation
    ]
    return accuracy_block(preds, evaluation)


def lesion_oracle(evaluation: list[VqaInstance], config: GeneratorConfig) -> MetricsBlock:
    """Upper bound: answer from the latent lesion metadata (always 100%)."""
    preds = [
        answer_for(inst.question_id, inst.meta.lesion_id, inst.meta.lesion_region_index, config)
        for inst in evaluation
    ]
    return accuracy_block(preds, evaluation)


def answer_background_mi(instances: list[VqaInstance], config: GeneratorConfig) -> float:
    """Plug-in mutual information (nats) between answer and background id."""
    joint = np.zeros((config.answer_count, config.backgrounds))
    for inst in instances:
        joint[inst.answer, inst.meta.background_id] += 1.0
    joint /= joint.sum()
    pa = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    mask = joint > 0
    return float(np.sum(joint[mask] * np.log(joint[mask] / (pa @ pb)[mask])))


def paired_background_rate(instances: list[VqaInstance], config: GeneratorConfig) -> float:
    """Empirical P(background = paired(lesion)), the Monte-Carlo prior check."""
    hits = sum(
        inst.meta.background_id == paired_background(inst.meta.lesion_id, config.backgrounds)
        for inst in instances
    )
    return hits / len(instances)
