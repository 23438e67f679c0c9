"""
Transfer-learning aggregator (pipeline TL): a small feed-forward network over
encoded answer vectors. Hidden layers use the rectifier, the output is
logistic, and training is full-batch gradient descent on mean binary
cross-entropy.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .dataset import Label
from .errors import DegenerateDataError, NonFiniteLossError, ShapeMismatchError
from .pipeline import AnswerVector, PipelineKind, Prediction, Verdict
from .settings import Settings

logger = logging.getLogger(__name__)

_ENCODING = {Verdict.YES: 1.0, Verdict.NO: 0.0, Verdict.UNPARSEABLE: 0.5}


@dataclass(frozen=True)
class HyperParams:
    hidden: int = Settings.MLP_HIDDEN
    lr: float = Settings.MLP_LR
    epochs: int = Settings.MLP_EPOCHS
    seed: int = Settings.MLP_SEED

    def layer_sizes(self, k_in: int) -> Tuple[int, ...]:
        return (k_in, self.hidden, 1) if self.hidden > 0 else (k_in, 1)


@dataclass(eq=False)
class MlpModel:
    layer_sizes: Tuple[int, ...]
    weights: List[np.ndarray]   # weights[l]: (layer_sizes[l], layer_sizes[l+1])
    biases: List[np.ndarray]
    train_meta: Dict[str, float] = field(default_factory=dict)
    question_indices: Tuple[int, ...] = ()
    loss_history: List[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 2 or self.layer_sizes[-1] != 1:
            raise ShapeMismatchError(f"layer_sizes {self.layer_sizes} must end in 1")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ShapeMismatchError("one weight matrix and bias vector per layer expected")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_sizes[l], self.layer_sizes[l + 1]) \
                    or b.shape != (self.layer_sizes[l + 1],):
                raise ShapeMismatchError(f"layer {l}: weight {w.shape}, bias {b.shape} "
                                         f"inconsistent with {self.layer_sizes}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NonFiniteLossError(f"layer {l} has non-finite parameters")

    @property
    def k_in(self) -> int:
        return self.layer_sizes[0]

    def parameters(self) -> List[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]


def encode(av: AnswerVector) -> np.ndarray:
    """Yes -> 1.0, No -> 0.0, Unparseable -> 0.5."""
    return np.array([_ENCODING[v] for v in av.verdicts], dtype=np.float64)


def logistic(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def init_model(layer_sizes: Sequence[int], seed: int = Settings.MLP_SEED) -> MlpModel:
    """He-initialised weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(tuple(layer_sizes), weights, biases)


def _forward(m: MlpModel, x: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray], List[np.ndarray]]:
    """Output logits plus the per-layer inputs and pre-activations for backprop."""
    activations, pre = [x], []
    a = x
    last = len(m.weights) - 1
    for l, (w, b) in enumerate(zip(m.weights, m.biases)):
        z = a @ w + b
        pre.append(z)
        if l < last:
            a = np.maximum(z, 0.0)
            activations.append(a)
    return pre[-1][:, 0], activations, pre


def loss(m: MlpModel, x: np.ndarray, y: np.ndarray) -> float:
    z, _, _ = _forward(m, x)
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def gradients(m: MlpModel, x: np.ndarray, y: np.ndarray) -> Tuple[float, List[np.ndarray]]:
    """Mean BCE and its gradient, ordered like ``MlpModel.parameters()``."""
    z, activations, pre = _forward(m, x)
    value = float(np.mean(np.logaddexp(0.0, z) - y * z))
    delta = ((logistic(z) - y) / len(y))[:, None]
    grads: List[np.ndarray] = []
    for l in range(len(m.weights) - 1, -1, -1):
        grads.append(delta.sum(axis=0))
        grads.append(activations[l].T @ delta)
        if l > 0:
            delta = (delta @ m.weights[l].T) * (pre[l - 1] > 0)
    grads.reverse()
    return value, grads


def _as_batch(features, k_in: Optional[int] = None) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatchError(f"expected a 2-D feature batch, got shape {x.shape}")
    if k_in is not None and x.shape[1] != k_in:
        raise ShapeMismatchError(f"feature length {x.shape[1]} != model input {k_in}")
    return x


def train(features: Sequence[Sequence[float]], labels: Sequence[int],
          hp: HyperParams = HyperParams(),
          question_indices: Sequence[int] = ()) -> MlpModel:
    if len(features) < 2 or len(features) != len(labels):
        raise DegenerateDataError("training needs >= 2 examples with one label each")
    y = np.asarray(labels, dtype=np.float64)
    if len(np.unique(y)) < 2:
        raise DegenerateDataError("training labels contain a single class")
    try:
        x = _as_batch(features)
    except ValueError as e:
        raise DegenerateDataError(f"features must share one length: {e}") from e
    if x.shape[1] < 1:
        raise DegenerateDataError("features are empty")

    m = init_model(hp.layer_sizes(x.shape[1]), hp.seed)
    m.question_indices = tuple(question_indices)
    logger.info(f"Training MLP {m.layer_sizes} on {len(y)} examples "
                f"(lr={hp.lr}, epochs={hp.epochs}, seed={hp.seed})")
    value = loss(m, x, y)
    for epoch in range(hp.epochs):
        value, grads = gradients(m, x, y)
        if not np.isfinite(value):
            raise NonFiniteLossError(f"loss became {value} at epoch {epoch}")
        m.loss_history.append(value)
        for p, g in zip(m.parameters(), grads):
            p -= hp.lr * g
    value = loss(m, x, y)
    if not np.isfinite(value):
        raise NonFiniteLossError(f"final loss is {value}")
    m.train_meta = {"seed": hp.seed, "epochs": hp.epochs, "learning_rate": hp.lr,
                    "final_loss": value}
    logger.info(f"MLP final loss {value:.6f}")
    return m


def score(m: MlpModel, feature: Sequence[float]) -> float:
    x = _as_batch([feature], m.k_in)
    z, _, _ = _forward(m, x)
    return float(logistic(z)[0])


def predict(m: MlpModel, feature: Sequence[float],
            threshold: float = Settings.MLP_THRESHOLD) -> Tuple[Label, float]:
    s = score(m, feature)
    return (Label.GULLY_POSITIVE if s >= threshold else Label.GULLY_NEGATIVE), s


def gradient_check(m: MlpModel, features, labels, h: float = 1e-5) -> float:
    """Max relative error between backprop and central finite differences."""
    x = _as_batch(features, m.k_in)
    y = np.asarray(labels, dtype=np.float64)
    if not len(y):
        raise DegenerateDataError("gradient_check needs a non-empty batch")
    _, analytic = gradients(m, x, y)
    worst = 0.0
    for p, g in zip(m.parameters(), analytic):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + h
            up = loss(m, x, y)
            flat[i] = saved - h
            down = loss(m, x, y)
            flat[i] = saved
            numeric = (up - down) / (2 * h)
            a = gflat[i]
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-6))
    return worst


def predict_answers(m: MlpModel, answers: Sequence[AnswerVector],
                    threshold: float = Settings.MLP_THRESHOLD,
                    model_ref: str = "mlp") -> List[Prediction]:
    """TL predictions for answer vectors aligned with the model's question order."""
    out = []
    for av in answers:
        if m.question_indices and av.question_indices != m.question_indices:
            av = av.restrict(m.question_indices)
        label, s = predict(m, encode(av), threshold)
        out.append(Prediction(av.location_id, PipelineKind.TL, label, f"score={s:.6f}",
                              av.vlm_id, model_ref, False, "", s))
    return out


# PERSISTENCE
# ///////////////////////////////////////////////////////////////
def model_to_dict(m: MlpModel) -> dict:
    return {
        "schema_version": Settings.SCHEMA_VERSION,
        "kind": "mlp",
        "layer_sizes": list(m.layer_sizes),
        "weights": [w.reshape(-1).tolist() for w in m.weights],
        "biases": [b.tolist() for b in m.biases],
        "question_indices": list(m.question_indices),
        "train_meta": dict(m.train_meta),
    }


def model_from_dict(d: Mapping) -> MlpModel:
    sizes = tuple(d["layer_sizes"])
    weights = [np.asarray(w, dtype=np.float64).reshape(sizes[l], sizes[l + 1])
               for l, w in enumerate(d["weights"])]
    biases = [np.asarray(b, dtype=np.float64) for b in d["biases"]]
    return MlpModel(sizes, weights, biases, dict(d.get("train_meta", {})),
                    tuple(d.get("question_indices", ())))


def save_model(m: MlpModel, path: Union[str, Path], config: Optional[Mapping] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = model_to_dict(m)
    doc["config"] = dict(config or {})
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_model(path: Union[str, Path]) -> MlpModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
