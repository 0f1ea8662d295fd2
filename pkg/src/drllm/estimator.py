"""scikit-learn compatible wrappers around the prompting pipeline.

``fit`` learns nothing about the decision boundary; it only records the
global feature statistics that the knowledge prompt carries (and, for the
mock backend, the ground truth it needs to simulate answers).
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .backend import MockBackend, make_backend
from .cache import CachedBackend, ResponseCache
from .flow_data import Dataset, FlowRecord, Label
from .knowledge import compute_profile, render_knowledge_text
from .prompts import compose, render_token_text
from .reasoning import DEFAULT_EPS_SUM, Valid, extract_outcome, run_role_reasoning
from .validation import check_backend, check_flow_matrix, check_labels, check_template

__all__ = ["FlowTextSerializer", "PromptFlowClassifier"]


def _dataset(X, names, labels=None) -> Dataset:
    y = labels if labels is not None else [Label.BENIGN] * len(X)
    return Dataset.from_arrays(X, y, names)


class FlowTextSerializer(TransformerMixin, BaseEstimator):
    """Turn flow rows into ``Feature: value, ...`` strings."""

    def __init__(self, feature_names=None):
        self.feature_names = feature_names

    def fit(self, X, y=None):
        X, names = check_flow_matrix(X, self.feature_names)
        self.feature_names_in_ = np.array(names, dtype=object)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "feature_names_in_")
        X, _ = check_flow_matrix(X, self.feature_names_in_, self.n_features_in_)
        ds = _dataset(X, tuple(self.feature_names_in_))
        return np.array([render_token_text(r, ds.schema) for r in ds.records], dtype=object)


class PromptFlowClassifier(ClassifierMixin, BaseEstimator):
    """Zero-shot attack/benign classifier backed by a chat-completion model.

    Parameters
    ----------
    backend : BackendConfig or str, default="mock"
        Backend config, or a spec string such as ``"mock"`` or
        ``"http:deepseek"``.
    template : str, default="P3"
        One of P0, P1, P2, P3prime, P3.
    feature_names : sequence of str, optional
        Names used in the prompt text. Defaults to DataFrame columns or
        ``x0 .. x{m-1}``.
    eps_sum : float, default=0.01
        Tolerance on ``|p_attack + p_benign - 1|`` before an answer counts as
        an L1 anomaly.
    reasoning_mode : {"assistant", "concat"}, default="assistant"
        How the stage-1 answer is carried into stage 2.
    n_jobs : int, default=1
        Concurrent backend requests during prediction.
    cache_path : str, optional
        Response cache file; repeated predictions are then free.
    anomaly_label : str, default="Benign"
        Label ``predict`` assigns when the model's answer is an anomaly.

    Attributes
    ----------
    classes_ : ndarray of shape (2,)
    profile_ : KnowledgeProfile or None
    knowledge_text_ : str or None
    outcomes_ : list of InferenceOutcome
        Parsed outcomes from the most recent prediction.
    """

    def __init__(
        self,
        backend="mock",
        template="P3",
        feature_names=None,
        eps_sum=DEFAULT_EPS_SUM,
        reasoning_mode="assistant",
        n_jobs=1,
        cache_path=None,
        anomaly_label="Benign",
    ):
        self.backend = backend
        self.template = template
        self.feature_names = feature_names
        self.eps_sum = eps_sum
        self.reasoning_mode = reasoning_mode
        self.n_jobs = n_jobs
        self.cache_path = cache_path
        self.anomaly_label = anomaly_label

    def fit(self, X, y=None):
        X, names = check_flow_matrix(X, self.feature_names)
        template = check_template(self.template)
        config = check_backend(self.backend)
        if self.n_jobs < 1:
            raise ValueError("n_jobs must be >= 1")
        Label.coerce(self.anomaly_label)

        labels = check_labels(y, len(X)) if y is not None else None
        if y is not None and np.issubdtype(np.asarray(y).dtype, np.number):
            self.classes_ = np.array([0, 1])
        else:
            self.classes_ = np.array([Label.ATTACK.value, Label.BENIGN.value], dtype=object)

        self.feature_names_in_ = np.array(names, dtype=object)
        self.n_features_in_ = X.shape[1]
        self.template_ = template
        ds = _dataset(X, names, labels)
        if template.uses_knowledge:
            self.profile_ = compute_profile(ds)
            self.knowledge_text_ = render_knowledge_text(self.profile_, ds.schema)
        else:
            self.profile_ = None
            self.knowledge_text_ = None

        client = make_backend(config)
        if isinstance(client, MockBackend) and labels is not None:
            for rec in ds.records:
                client.register_truth(render_token_text(rec, ds.schema), rec.label)
        cache = ResponseCache(self.cache_path) if self.cache_path else None
        self.client_ = CachedBackend(client, cache)
        return self

    def _query(self, record: FlowRecord, schema):
        prompt = compose(self.template_, self.knowledge_text_, render_token_text(record, schema), record.index)
        trace = run_role_reasoning(self.client_, prompt, self.reasoning_mode)
        return extract_outcome(trace.r2_text, self.eps_sum)

    def decision_outcomes(self, X) -> list:
        """Parsed outcome (Valid / L1 / L2 / parse failure) for every row."""
        check_is_fitted(self, "client_")
        X, _ = check_flow_matrix(X, self.feature_names_in_, self.n_features_in_)
        ds = _dataset(X, tuple(self.feature_names_in_))
        if self.n_jobs == 1:
            outcomes = [self._query(r, ds.schema) for r in ds.records]
        else:
            with ThreadPoolExecutor(max_workers=self.n_jobs) as pool:
                outcomes = list(pool.map(lambda r: self._query(r, ds.schema), ds.records))
        self.outcomes_ = outcomes
        return outcomes

    def _class_of(self, label: Label):
        for c in self.classes_:
            if Label.coerce(c) is label:
                return c
        raise AssertionError("classes_ does not cover both labels")

    def predict_proba(self, X):
        """Columns follow ``classes_``; anomalous rows are NaN."""
        outcomes = self.decision_outcomes(X)
        proba = np.full((len(outcomes), 2), np.nan)
        order = [Label.coerce(c) for c in self.classes_]
        for i, o in enumerate(outcomes):
            if isinstance(o, Valid):
                proba[i] = [o.p_attack if lbl is Label.ATTACK else o.p_benign for lbl in order]
        return proba

    def predict(self, X):
        outcomes = self.decision_outcomes(X)
        fallback = self._class_of(Label.coerce(self.anomaly_label))
        out = [
            self._class_of(o.parsed.predicted) if isinstance(o, Valid) else fallback
            for o in outcomes
        ]
        return np.array(out, dtype=self.classes_.dtype)
