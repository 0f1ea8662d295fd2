"""Input checks shared by the estimator classes."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .backend import BackendConfig
from .config import parse_backend_spec
from .flow_data import Label
from .prompts import TemplateId


def check_flow_matrix(X, feature_names=None, n_features=None):
    """Validate a flow matrix and work out its feature names.

    Returns ``(array, names)``. Names come from ``feature_names``, then from
    DataFrame columns, then default to ``x0 .. x{m-1}``. NaN and Inf are
    rejected; clean the data with :func:`drllm.flow_data.preprocess` first.
    """
    columns = getattr(X, "columns", None)
    arr = check_array(X, dtype=np.float64, ensure_all_finite=True)
    if n_features is not None and arr.shape[1] != n_features:
        raise ValueError(f"X has {arr.shape[1]} features, expected {n_features}")
    if feature_names is not None:
        names = tuple(str(n) for n in feature_names)
    elif columns is not None:
        names = tuple(str(c) for c in columns)
    else:
        names = tuple(f"x{j}" for j in range(arr.shape[1]))
    if len(names) != arr.shape[1]:
        raise ValueError(f"{len(names)} feature names for {arr.shape[1]} columns")
    if len(set(names)) != len(names):
        raise ValueError("feature names must be unique")
    return arr, names


def check_labels(y, n_samples: int) -> list[Label]:
    """Coerce binary labels (Label, 'Attack'/'Benign', or 1/0) to Label."""
    values = list(np.asarray(y, dtype=object).ravel())
    if len(values) != n_samples:
        raise ValueError(f"y has {len(values)} entries, X has {n_samples} rows")
    try:
        return [Label.coerce(v) for v in values]
    except ValueError as exc:
        raise ValueError(
            f"{exc}; binarise raw labels first (see drllm.flow_data.default_label_rule)"
        ) from None


def check_template(template) -> TemplateId:
    if isinstance(template, TemplateId):
        return template
    return TemplateId.parse(template)


def check_backend(backend) -> BackendConfig:
    if isinstance(backend, BackendConfig):
        return backend
    if isinstance(backend, str):
        return parse_backend_spec(backend)
    raise TypeError(f"backend must be a BackendConfig or spec string, got {type(backend).__name__}")
