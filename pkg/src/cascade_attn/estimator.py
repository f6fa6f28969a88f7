"""scikit-learn compatible classifier over two-stream clips.

``X`` is a sequence of clips. Each clip is a :class:`~cascade_attn.data.ClipSample`
or a ``(face_stream, context_stream)`` pair of ``(T, D)`` arrays; clip
lengths may differ.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .data import ClipSample
from .exceptions import DataError
from .models import ArchitectureKind, ModelConfig, build_model, forward_batch
from .optim import TrainConfig, TrainingState, predict_proba, train
from .tensor import DTYPE


def check_clips(X, face_dim=None, context_dim=None):
    """Validate ``X`` and return a list of :class:`ClipSample` (label 0).

    Raises ``ValueError`` (a :class:`DataError`) for empty input, ragged
    feature dimensions, unequal stream lengths or non-finite values.
    """
    if X is None or len(X) == 0:
        raise DataError("X must contain at least one clip")
    clips = []
    for i, item in enumerate(X):
        if isinstance(item, ClipSample):
            face, context = item.face_stream, item.context_stream
        else:
            try:
                face, context = item
            except (TypeError, ValueError) as exc:
                raise DataError(f"clip {i} is neither a ClipSample nor a (face, context) pair") from exc
        clips.append(ClipSample(str(i), np.asarray(face, dtype=DTYPE), np.asarray(context, dtype=DTYPE), 0))
    face_dim = face_dim or clips[0].face_stream.shape[1]
    context_dim = context_dim or clips[0].context_stream.shape[1]
    for c in clips:
        if c.face_stream.shape[1] != face_dim or c.context_stream.shape[1] != context_dim:
            raise DataError(
                f"clip {c.clip_id} has feature dims ({c.face_stream.shape[1]}, {c.context_stream.shape[1]}), "
                f"expected ({face_dim}, {context_dim})"
            )
    return clips


class CascadeAttentionClassifier(ClassifierMixin, BaseEstimator):
    """Two-stream recurrent clip classifier (any of the six architectures).

    Parameters
    ----------
    kind : str
        Architecture: ``face-rnn``, ``context-rnn``, ``parallel-rnn``,
        ``concatenated-rnn``, ``caca-a`` or ``caca-b``.
    encoded_dim, hidden_size, left_layers, right_layers : int
        Model dimensions; see :class:`~cascade_attn.models.ModelConfig`.
    n_classes : int or None
        Width of the output layer. None uses the distinct labels seen in ``fit``.
    learning_rate, batch_size, epochs, subsample_stride, clip_grad_norm
        Training settings; see :class:`~cascade_attn.optim.TrainConfig`.
    random_state : int
        Seeds both initialization and training.
    """

    def __init__(self, kind="caca-a", encoded_dim=128, hidden_size=128, left_layers=2, right_layers=1,
                 n_classes=None, learning_rate=1e-4, batch_size=32, epochs=10, subsample_stride=1,
                 clip_grad_norm=None, random_state=0):
        self.kind = kind
        self.encoded_dim = encoded_dim
        self.hidden_size = hidden_size
        self.left_layers = left_layers
        self.right_layers = right_layers
        self.n_classes = n_classes
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.subsample_stride = subsample_stride
        self.clip_grad_norm = clip_grad_norm
        self.random_state = random_state

    def _encode_labels(self, y):
        y = np.asarray(y)
        if y.ndim != 1:
            raise DataError(f"y must be 1-D, got shape {y.shape}")
        if self.n_classes is None:
            self.classes_ = np.unique(y)
        else:
            self.classes_ = np.arange(self.n_classes)
        idx = np.searchsorted(self.classes_, y)
        idx = np.clip(idx, 0, len(self.classes_) - 1)
        if not np.array_equal(self.classes_[idx], y):
            raise DataError(f"labels outside the class set {self.classes_.tolist()}")
        return idx

    def _clips(self, X, y=None):
        clips = check_clips(X, getattr(self, "face_dim_", None), getattr(self, "context_dim_", None))
        if y is not None:
            if len(y) != len(clips):
                raise DataError(f"{len(clips)} clips but {len(y)} labels")
            for c, label in zip(clips, y):
                c.label = int(label)
        return clips

    def fit(self, X, y, X_valid=None, y_valid=None):
        seed = 0 if self.random_state is None else int(self.random_state)
        for attr in ("face_dim_", "context_dim_"):
            self.__dict__.pop(attr, None)
        labels = self._encode_labels(y)
        clips = self._clips(X, labels)
        self.face_dim_ = clips[0].face_stream.shape[1]
        self.context_dim_ = clips[0].context_stream.shape[1]
        valid = None
        if X_valid is not None:
            valid = self._clips(X_valid, np.searchsorted(self.classes_, np.asarray(y_valid)))

        config = ModelConfig(
            kind=ArchitectureKind(self.kind),
            face_feature_dim=self.face_dim_,
            context_feature_dim=self.context_dim_,
            encoded_dim=self.encoded_dim,
            hidden_size=self.hidden_size,
            left_layers=self.left_layers,
            right_layers=self.right_layers,
            num_classes=len(self.classes_),
            seed=seed,
        )
        self.model_ = build_model(config)
        self.train_config_ = TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            subsample_stride=self.subsample_stride,
            seed=seed,
            clip_grad_norm=self.clip_grad_norm,
        )
        self.training_state_ = TrainingState.fresh(self.train_config_)
        self.history_ = train(self.model_, clips, self.train_config_, valid=valid, state=self.training_state_)
        return self

    def decision_function(self, X):
        """Raw logits, shape (n_clips, n_classes)."""
        check_is_fitted(self, "model_")
        clips = self._clips(X)
        out = []
        for c in clips:
            logits, _ = forward_batch(self.model_, c.face_stream[:, None, :], c.context_stream[:, None, :])
            out.append(logits[0])
        return np.stack(out)

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return predict_proba(self.model_, self._clips(X), stride=self.subsample_stride)

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
