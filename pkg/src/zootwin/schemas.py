"""JSON schemas for the CLI run configs."""

from __future__ import annotations

_num = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}
_opt_num = {"type": ["number", "null"]}

DATASET = {
    "type": "object",
    "required": ["train_images", "train_labels", "test_images", "test_labels"],
    "properties": {
        "train_images": {"type": "string"},
        "train_labels": {"type": "string"},
        "test_images": {"type": "string"},
        "test_labels": {"type": "string"},
        "num_classes": _pos_int,
        "name": {"type": "string"},
    },
    "additionalProperties": False,
}

LAYER = {
    "type": "object",
    "required": ["type"],
    "properties": {
        "type": {"enum": ["conv", "pool", "fc"]},
        "out_channels": _pos_int,
        "kernel": _pos_int,
        "stride": _pos_int,
        "window": _pos_int,
        "out_features": _pos_int,
    },
    "additionalProperties": False,
}

ARCH = {
    "oneOf": [
        {"enum": ["small", "large"]},
        {
            "type": "object",
            "required": ["input_dims", "layers"],
            "properties": {
                "input_dims": {"type": "array", "items": _pos_int, "minItems": 3, "maxItems": 3},
                "layers": {"type": "array", "items": LAYER, "minItems": 1},
                "num_classes": _pos_int,
                "activation": {"enum": ["tanh", "sigmoid", "relu", "gelu"]},
                "expected_weights": {"type": ["integer", "null"]},
            },
            "additionalProperties": False,
        },
    ]
}

FACTORS = {
    "activation": {"enum": ["tanh", "sigmoid", "relu", "gelu"]},
    "optimizer": {"enum": ["adam", "sgd"]},
    "lr": {"type": "number", "exclusiveMinimum": 0},
    "weight_decay": {"type": "number", "minimum": 0},
    "dropout": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
    "init": {"enum": ["kaiming_uniform", "kaiming_uniform_relu", "xavier_uniform"]},
}

COMMON = {
    "seed": {"type": "integer", "minimum": 0},
    "workers": _pos_int,
    "out": {"type": "string"},
}

TRAIN_ZOO = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "train-zoo",
    "type": "object",
    "required": ["dataset", "grid", "epochs"],
    "properties": {
        "dataset": DATASET,
        "arch": ARCH,
        "name": {"type": "string"},
        "epochs": _pos_int,
        "batch": _pos_int,
        "base": {"type": "object", "properties": FACTORS, "additionalProperties": False},
        "grid": {
            "type": "object",
            "properties": {
                "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                "n_models": _pos_int,
                "first_seed": {"type": "integer", "minimum": 0},
                **{k: {"type": "array", "items": v, "minItems": 1} for k, v in FACTORS.items()},
            },
            "additionalProperties": False,
        },
        **COMMON,
    },
    "additionalProperties": False,
}

SPARSIFY = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "sparsify",
    "type": "object",
    "required": ["zoo", "method"],
    "properties": {
        "zoo": {"type": "string"},
        "method": {"enum": ["mp", "vd"]},
        "dataset": DATASET,
        "ratios": {"type": "array", "items": {"type": "number", "minimum": 0, "exclusiveMaximum": 1}, "minItems": 1},
        "epochs": _pos_int,
        "batch": _pos_int,
        "lr": _opt_num,
        "sigma_lr": _opt_num,
        "kl_coef": _opt_num,
        "threshold": _num,
        **COMMON,
    },
    "additionalProperties": False,
}

ANALYZE = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "analyze",
    "type": "object",
    "required": ["original", "twin"],
    "properties": {
        "original": {"type": "string"},
        "twin": {"type": "string"},
        "tags": {"type": "array", "items": {"type": "string"}},
        "dataset": DATASET,
        "layer_epochs": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        **COMMON,
    },
    "additionalProperties": False,
}

HYPERREP = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "hyperrep",
    "type": "object",
    "required": ["twin"],
    "properties": {
        "twin": {"type": "string"},
        "tag": {"type": "string"},
        "d_tok": _pos_int,
        "holdout_frac": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "ae": {
            "type": "object",
            "properties": {k: _pos_int for k in ("d_model", "heads", "enc_blocks", "dec_blocks", "d_z", "mlp_ratio", "proj_dim")},
            "additionalProperties": False,
        },
        "train": {
            "type": "object",
            "properties": {
                "epochs": _pos_int,
                "batch": {"type": "integer", "minimum": 2},
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "weight_decay": {"type": "number", "minimum": 0},
                "gamma": {"type": "number", "minimum": 0},
                "rho": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "loss": {
                    "type": "object",
                    "properties": {
                        "beta": {"type": "number", "minimum": 0, "maximum": 1},
                        "temperature": {"type": "number", "exclusiveMinimum": 0},
                        "threshold": _num,
                        "alpha_range": {"type": "number", "exclusiveMinimum": 0},
                    },
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "probe": {
            "type": "object",
            "properties": {
                "lambda": {"type": "number", "minimum": 0},
                "test_frac": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
            "additionalProperties": False,
        },
        **COMMON,
    },
    "additionalProperties": False,
}

SCHEMAS = {"train-zoo": TRAIN_ZOO, "sparsify": SPARSIFY, "analyze": ANALYZE, "hyperrep": HYPERREP}
