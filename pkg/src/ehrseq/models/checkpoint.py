"""Versioned binary model checkpoints.

Every checkpoint is an .npz archive with a `schema` entry naming the format
and a `meta` entry holding non-array fields as JSON. Loading dispatches on
the schema id, so formats can evolve independently per model family.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .baselines import BaselineModel, LogisticModel
from .lstm import LstmModel
from .stumps import Stump, StumpEnsemble, StumpPredicate
from .tann import PerModalityTann, TannModel

SCHEMA_BASELINE = "ehrseq.baseline.v1"
SCHEMA_TANN = "ehrseq.tann.v1"
SCHEMA_TANN_MULTIMODAL = "ehrseq.tann-multimodal.v1"
SCHEMA_LSTM = "ehrseq.lstm.v1"
SCHEMA_STUMPS = "ehrseq.stumps.v1"


def save_model(model, path) -> None:
    if isinstance(model, BaselineModel):
        meta = {
            "kind": model.kind,
            "l2": model.logistic.l2,
            "feature_names": model.logistic.feature_names_,
            "config": model.config,
        }
        np.savez(
            path,
            schema=SCHEMA_BASELINE,
            meta=json.dumps(meta),
            weights=model.logistic.weights,
            bias=np.array([model.logistic.bias]),
            mu=model.logistic.mu,
            sd=model.logistic.sd,
        )
    elif isinstance(model, TannModel):
        meta = {"max_tokens": model.max_tokens, "codes": model.codes}
        np.savez(
            path,
            schema=SCHEMA_TANN,
            meta=json.dumps(meta),
            E=model.E,
            W=model.W,
            V=model.V,
            u=model.u,
            W_out=model.W_out,
            b_out=model.b_out,
        )
    elif isinstance(model, PerModalityTann):
        arrays = {}
        meta = {"modalities": sorted(model.members)}
        for modality, member in model.members.items():
            meta[f"meta:{modality}"] = {"max_tokens": member.max_tokens, "codes": member.codes}
            for field in ("E", "W", "V", "u", "W_out", "b_out"):
                arrays[f"{modality}.{field}"] = getattr(member, field)
        np.savez(path, schema=SCHEMA_TANN_MULTIMODAL, meta=json.dumps(meta), **arrays)
    elif isinstance(model, LstmModel):
        meta = {"bag_hours": model.bag_hours, "max_bags": model.max_bags, "b_out": model.b_out}
        np.savez(
            path,
            schema=SCHEMA_LSTM,
            meta=json.dumps(meta),
            E=model.E,
            Wx=model.Wx,
            Wh=model.Wh,
            b=model.b,
            w_out=model.w_out,
        )
    elif isinstance(model, StumpEnsemble):
        meta = {
            "intercept": model.intercept,
            "bucket_hours": [None if math.isinf(b) else b for b in model.bucket_hours],
            "stumps": [
                {
                    "kind": s.predicate.kind,
                    "bucket_hours": None if math.isinf(s.predicate.bucket_hours) else s.predicate.bucket_hours,
                    "token_id": s.predicate.token_id,
                    "key": s.predicate.key,
                    "threshold": s.predicate.threshold,
                    "alpha": s.alpha,
                }
                for s in model.stumps
            ],
        }
        np.savez(path, schema=SCHEMA_STUMPS, meta=json.dumps(meta))
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")


def load_model(path):
    with np.load(path, allow_pickle=False) as data:
        schema = str(data["schema"])
        meta = json.loads(str(data["meta"]))
        if schema == SCHEMA_BASELINE:
            logistic = LogisticModel(
                weights=data["weights"],
                bias=float(data["bias"][0]),
                l2=float(meta["l2"]),
                mu=data["mu"],
                sd=data["sd"],
                feature_names_=list(meta["feature_names"]),
            )
            return BaselineModel(kind=meta["kind"], logistic=logistic, config=meta["config"])
        if schema == SCHEMA_TANN:
            return TannModel(
                E=data["E"],
                W=data["W"],
                V=data["V"],
                u=data["u"],
                W_out=data["W_out"],
                b_out=data["b_out"],
                max_tokens=int(meta["max_tokens"]),
                codes=list(meta["codes"]),
            )
        if schema == SCHEMA_TANN_MULTIMODAL:
            members = {}
            for modality in meta["modalities"]:
                sub = meta[f"meta:{modality}"]
                members[modality] = TannModel(
                    E=data[f"{modality}.E"],
                    W=data[f"{modality}.W"],
                    V=data[f"{modality}.V"],
                    u=data[f"{modality}.u"],
                    W_out=data[f"{modality}.W_out"],
                    b_out=data[f"{modality}.b_out"],
                    max_tokens=int(sub["max_tokens"]),
                    codes=list(sub["codes"]),
                )
            return PerModalityTann(members=members)
        if schema == SCHEMA_LSTM:
            return LstmModel(
                E=data["E"],
                Wx=data["Wx"],
                Wh=data["Wh"],
                b=data["b"],
                w_out=data["w_out"],
                b_out=float(meta["b_out"]),
                bag_hours=float(meta["bag_hours"]),
                max_bags=int(meta["max_bags"]),
            )
        if schema == SCHEMA_STUMPS:
            buckets = tuple(math.inf if b is None else float(b) for b in meta["bucket_hours"])
            stumps = [
                Stump(
                    predicate=StumpPredicate(
                        kind=s["kind"],
                        bucket_hours=math.inf if s["bucket_hours"] is None else float(s["bucket_hours"]),
                        token_id=int(s["token_id"]),
                        key=s["key"],
                        threshold=float(s["threshold"]),
                    ),
                    alpha=float(s["alpha"]),
                )
                for s in meta["stumps"]
            ]
            return StumpEnsemble(stumps=stumps, intercept=float(meta["intercept"]), bucket_hours=buckets)
    raise ValueError(f"unknown checkpoint schema {schema!r}")
