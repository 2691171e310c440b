"""End-to-end experiment runs: data, training, encoding, evaluation, studies.

Every operation takes one :class:`~hashdistill.config.ExperimentConfig`,
writes its artifacts under ``output_dir`` (with a frozen copy of the
resolved config beside them), and is safe to re-run: completed work is
reused, interrupted training resumes from the checkpoint, and re-running
any step rewrites byte-identical code and metric files. Wall-clock times
go only to ``train_log.txt`` so every metric file is a pure function of
the config.

The comparison studies (``run_sweep_st``, ``run_deform_eval``) train a
matched pair of models — the config as given ("distilled") and its
single-strong-view twin ("single_view") — and score both on identical
transformed queries, so their output tables are paired comparisons.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from .augment import TransformGroup, deformation_presets, default_train_group, sample_transform
from .codes import BinaryCode, pack_signs, read_codes, write_codes
from .config import (
    ExperimentConfig,
    FileDataSpec,
    SyntheticDataSpec,
    load_config,
    save_config,
    variant_train_config,
)
from .data import (
    generate_synthetic,
    read_features,
    read_labels,
    write_features,
    write_labels,
)
from .errors import InvalidInputError
from .retrieval import (
    build_index,
    evaluate,
    rank,
    write_p_at_top_csv,
    write_pr_csv,
    write_report,
)
from .trainer import Trainer

CONFIG_NAME = "config.json"
CHECKPOINT_NAME = "checkpoint.ckpt"
TRAIN_METRICS_NAME = "train_metrics.csv"
TRAIN_LOG_NAME = "train_log.txt"
DB_CODES_NAME = "database_codes.bin"
QUERY_CODES_NAME = "query_codes.bin"
REPORT_NAME = "report.json"
PR_CSV_NAME = "pr_curve.csv"
P_AT_TOP_CSV_NAME = "p_at_top.csv"
ABLATION_CSV_NAME = "ablation.csv"
SWEEP_CSV_NAME = "sweep_st.csv"
DEFORM_CSV_NAME = "deform_eval.csv"

METRICS_HEADER = "epoch,hp,sdh,bceq,proxy_bceq,total,lr"

ENCODE_BATCH = 512

_SWEEP_NAMESPACE = 3
_DEFORM_NAMESPACE = 4


@dataclass(frozen=True)
class DatasetBundle:
    """The three splits an experiment works with, as in-memory arrays."""

    train_features: np.ndarray
    train_labels: np.ndarray
    db_features: np.ndarray
    db_labels: np.ndarray
    query_features: np.ndarray
    query_labels: np.ndarray


def load_dataset(config):
    """Materialize the config's dataset: generate synthetic or read files."""
    if isinstance(config.data, SyntheticDataSpec):
        data = generate_synthetic(
            config.data.to_spec(), np.random.default_rng(config.data.seed)
        )
        return DatasetBundle(
            train_features=data.train_features,
            train_labels=data.train_labels,
            db_features=data.db_features,
            db_labels=data.db_labels,
            query_features=data.query_features,
            query_labels=data.query_labels,
        )
    config.data.validate_paths()
    return DatasetBundle(
        train_features=read_features(config.data.train_features),
        train_labels=read_labels(config.data.train_labels),
        db_features=read_features(config.data.database_features),
        db_labels=read_labels(config.data.database_labels),
        query_features=read_features(config.data.query_features),
        query_labels=read_labels(config.data.query_labels),
    )


def encode_features(model, features, batch_size=ENCODE_BATCH):
    """Binary codes for untransformed inputs, packed one row per sample."""
    features = np.asarray(features, dtype=np.float64)
    chunks = []
    for start in range(0, features.shape[0], batch_size):
        h, _ = model.forward(features[start : start + batch_size])
        chunks.append(pack_signs(h))
    return np.vstack(chunks)


def _prepare_dir(config):
    os.makedirs(config.output_dir, exist_ok=True)
    save_config(config, os.path.join(config.output_dir, CONFIG_NAME))


def run_gen_data(config, file_format="csv"):
    """Write the six dataset tables (features + labels per split) to disk."""
    if file_format not in ("csv", "bin"):
        raise InvalidInputError(f"file_format must be 'csv' or 'bin', got {file_format!r}")
    _prepare_dir(config)
    data_dir = os.path.join(config.output_dir, "data")
    os.makedirs(data_dir, exist_ok=True)
    bundle = load_dataset(config)
    paths = {}
    tables = {
        "train_features": (write_features, bundle.train_features),
        "train_labels": (write_labels, bundle.train_labels),
        "database_features": (write_features, bundle.db_features),
        "database_labels": (write_labels, bundle.db_labels),
        "query_features": (write_features, bundle.query_features),
        "query_labels": (write_labels, bundle.query_labels),
    }
    for name, (writer, table) in tables.items():
        path = os.path.join(data_dir, f"{name}.{file_format}")
        writer(path, table)
        paths[name] = path
    return paths


def _format_metric_row(stats):
    return ",".join(
        [str(stats.epoch)]
        + [repr(v) for v in (stats.hp, stats.sdh, stats.bceq, stats.proxy_bceq,
                             stats.total, stats.lr)]
    )


def _read_metric_rows(path, expected):
    """Rows of an existing metrics file, or None if it cannot back a resume."""
    if not os.path.exists(path):
        return None
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != METRICS_HEADER or len(lines) - 1 < expected:
        return None
    rows = lines[1 : 1 + expected]
    for i, row in enumerate(rows):
        if not row.startswith(f"{i + 1},"):
            return None
    return rows


def _write_metrics(path, rows):
    with open(path, "w", encoding="ascii") as fh:
        fh.write(METRICS_HEADER + "\n")
        for row in rows:
            fh.write(row + "\n")


def run_train(config, stop_after=None):
    """Train (or resume) the config's model; returns this session's stats.

    ``stop_after`` caps how many epochs this call runs, simulating an
    interruption; a later call picks up from the checkpoint.
    """
    _prepare_dir(config)
    bundle = load_dataset(config)
    ckpt_path = os.path.join(config.output_dir, CHECKPOINT_NAME)
    metrics_path = os.path.join(config.output_dir, TRAIN_METRICS_NAME)
    log_path = os.path.join(config.output_dir, TRAIN_LOG_NAME)

    trainer = None
    rows = None
    if os.path.exists(ckpt_path):
        restored = Trainer.restore(ckpt_path, bundle.train_features, bundle.train_labels)
        rows = _read_metric_rows(metrics_path, restored.epoch)
        if rows is not None:
            trainer = restored
    if trainer is None:
        # fresh start (also when the metrics file cannot back a resume:
        # determinism makes retraining reproduce the exact same rows)
        trainer = Trainer(config.train, bundle.train_features, bundle.train_labels)
        rows = []

    target = config.train.epochs
    if stop_after is not None:
        target = min(target, trainer.epoch + stop_after)
    history = []
    while trainer.epoch < target:
        stats = trainer.train_epoch()
        history.append(stats)
        rows.append(_format_metric_row(stats))
        _write_metrics(metrics_path, rows)
        trainer.checkpoint(ckpt_path)
        with open(log_path, "a", encoding="ascii") as fh:
            fh.write(
                f"epoch={stats.epoch} hp={stats.hp:.6f} sdh={stats.sdh:.6f}"
                f" bceq={stats.bceq:.6f} lr={stats.lr:.6g}"
                f" seconds={stats.seconds:.3f}\n"
            )
    if not history:
        _write_metrics(metrics_path, rows)
    return history


def _restore_trainer(config, bundle):
    ckpt_path = os.path.join(config.output_dir, CHECKPOINT_NAME)
    if not os.path.exists(ckpt_path):
        raise InvalidInputError(
            f"no checkpoint at {ckpt_path}; run train before encode/eval"
        )
    return Trainer.restore(ckpt_path, bundle.train_features, bundle.train_labels)


def run_encode(config):
    """Encode database and query splits with the trained model; write code files."""
    _prepare_dir(config)
    bundle = load_dataset(config)
    trainer = _restore_trainer(config, bundle)
    paths = {
        "database_codes": os.path.join(config.output_dir, DB_CODES_NAME),
        "query_codes": os.path.join(config.output_dir, QUERY_CODES_NAME),
    }
    k = config.train.code_length
    write_codes(paths["database_codes"], encode_features(trainer.model, bundle.db_features), k)
    write_codes(paths["query_codes"], encode_features(trainer.model, bundle.query_features), k)
    return paths


def run_eval(config):
    """Score the run's code files; writes the report plus flat CSV tables."""
    _prepare_dir(config)
    bundle = load_dataset(config)
    db_path = os.path.join(config.output_dir, DB_CODES_NAME)
    q_path = os.path.join(config.output_dir, QUERY_CODES_NAME)
    for path in (db_path, q_path):
        if not os.path.exists(path):
            raise InvalidInputError(f"no code file at {path}; run encode before eval")
    db_words, k = read_codes(db_path)
    q_words, qk = read_codes(q_path)
    if qk != k:
        raise InvalidInputError(f"database codes are {k}-bit but query codes are {qk}-bit")
    index = build_index(db_words, bundle.db_labels, k)
    report = evaluate(index, q_words, bundle.query_labels, config.eval.m, config.eval.top_ranks)
    write_report(report, os.path.join(config.output_dir, REPORT_NAME))
    write_pr_csv(report, os.path.join(config.output_dir, PR_CSV_NAME))
    write_p_at_top_csv(report, os.path.join(config.output_dir, P_AT_TOP_CSV_NAME))
    return report


def search_run(run_dir, features, m):
    """Rank a completed run's database against ad-hoc feature vectors.

    Encodes each row with the run's trained model and returns its top-m
    ``(database id, Hamming distance)`` list.
    """
    config_path = os.path.join(run_dir, CONFIG_NAME)
    if not os.path.exists(config_path):
        raise InvalidInputError(f"no {CONFIG_NAME} in {run_dir}; not a run directory")
    config = replace(load_config(config_path), output_dir=str(run_dir))
    bundle = load_dataset(config)
    trainer = _restore_trainer(config, bundle)
    db_path = os.path.join(run_dir, DB_CODES_NAME)
    if not os.path.exists(db_path):
        raise InvalidInputError(f"no code file at {db_path}; run encode before search")
    db_words, k = read_codes(db_path)
    index = build_index(db_words, bundle.db_labels, k)
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or not np.all(np.isfinite(x)):
        raise InvalidInputError("features must be a finite 2-D array")
    if x.shape[1] != config.train.encoder.input_dim:
        raise InvalidInputError(
            f"features have {x.shape[1]} dims, encoder input_dim is"
            f" {config.train.encoder.input_dim}"
        )
    words = encode_features(trainer.model, x)
    return [rank(index, BinaryCode(row, k), m) for row in words]


def _sub_experiment(config, name, train_cfg):
    return ExperimentConfig(
        output_dir=os.path.join(config.output_dir, "runs", name),
        train=train_cfg,
        data=config.data,
        eval=config.eval,
        sweep=config.sweep,
        ablation=config.ablation,
    )


def distillation_pair(config):
    """The paired sub-experiments the comparison studies train and score."""
    return {
        "distilled": _sub_experiment(config, "distilled", config.train),
        "single_view": _sub_experiment(
            config, "single_view", variant_train_config(config.train, "-sdh+bceq")
        ),
    }


def _ensure_scored(sub):
    run_train(sub)
    db_path = os.path.join(sub.output_dir, DB_CODES_NAME)
    if not os.path.exists(db_path):
        run_encode(sub)
    return run_eval(sub)


def run_ablation(config):
    """Train/score every loss-term variant at every bit length; tabulate mAP."""
    _prepare_dir(config)
    rows = []
    table = {}
    for variant in config.ablation.variants:
        for k in config.ablation.bit_lengths:
            sub = _sub_experiment(
                config,
                f"{variant}_K{k}",
                variant_train_config(config.train, variant, code_length=k),
            )
            report = _ensure_scored(sub)
            rows.append({"variant": variant, "code_length": k, "map_at_m": report.map_at_m})
            table[(variant, k)] = report.map_at_m
    csv_path = os.path.join(config.output_dir, ABLATION_CSV_NAME)
    with open(csv_path, "w", encoding="ascii") as fh:
        fh.write("variant," + ",".join(f"K{k}" for k in config.ablation.bit_lengths) + "\n")
        for variant in config.ablation.variants:
            cells = [repr(table[(variant, k)]) for k in config.ablation.bit_lengths]
            fh.write(variant + "," + ",".join(cells) + "\n")
    return {"rows": rows, "csv_path": csv_path}


def _transformed_queries(features, group, seed, namespace, step_index, repeat):
    dim = features.shape[1]
    rows = []
    for j in range(features.shape[0]):
        rng = np.random.default_rng(
            np.random.SeedSequence((seed, namespace, step_index, repeat, j))
        )
        rows.append(sample_transform(group, dim, rng).apply(features[j]))
    return np.stack(rows)


def _mean_hamming_shift(clean_words, transformed_words, code_length):
    from .codes import hamming_to_all

    distances = hamming_to_all(transformed_words, clean_words, pairwise=False)
    return float(distances.mean())


def run_sweep_st(config):
    """Mean Hamming shift under increasing transform intensity, for the
    distilled model and its single-strong-view twin on identical views."""
    _prepare_dir(config)
    pair = distillation_pair(config)
    bundle = load_dataset(config)
    models = {}
    for name, sub in pair.items():
        run_train(sub)
        trainer = _restore_trainer(sub, bundle)
        models[name] = trainer.model
    k = config.train.code_length
    clean = {name: encode_features(model, bundle.query_features)
             for name, model in models.items()}
    seed = config.train.seed
    rows = []
    for i, scale in enumerate(config.sweep.scales):
        group = default_train_group(scale)
        shifts = {name: 0.0 for name in models}
        for repeat in range(config.sweep.repeats):
            transformed = _transformed_queries(
                bundle.query_features, group, seed, _SWEEP_NAMESPACE, i, repeat
            )
            for name, model in models.items():
                words = encode_features(model, transformed)
                shifts[name] += _mean_hamming_shift(clean[name], words, k)
        n = config.sweep.repeats
        rows.append(
            {
                "s_t": float(scale),
                "shift_with_distillation": shifts["distilled"] / n,
                "shift_without_distillation": shifts["single_view"] / n,
            }
        )
    csv_path = os.path.join(config.output_dir, SWEEP_CSV_NAME)
    with open(csv_path, "w", encoding="ascii") as fh:
        fh.write("s_t,shift_with_distillation,shift_without_distillation\n")
        for row in rows:
            fh.write(
                f"{row['s_t']!r},{row['shift_with_distillation']!r},"
                f"{row['shift_without_distillation']!r}\n"
            )
    return {"rows": rows, "csv_path": csv_path}


def run_deform_eval(config):
    """mAP under each held-out deformation, for the distilled model and its
    single-strong-view twin on identical deformed queries."""
    _prepare_dir(config)
    pair = distillation_pair(config)
    bundle = load_dataset(config)
    models = {}
    indexes = {}
    for name, sub in pair.items():
        run_train(sub)
        trainer = _restore_trainer(sub, bundle)
        models[name] = trainer.model
        indexes[name] = build_index(
            encode_features(trainer.model, bundle.db_features),
            bundle.db_labels,
            config.train.code_length,
        )
    seed = config.train.seed
    rows = []
    for pi, (preset_name, spec) in enumerate(deformation_presets().items()):
        group = TransformGroup((spec,), scale=1.0)
        maps = {name: 0.0 for name in models}
        for repeat in range(config.sweep.repeats):
            transformed = _transformed_queries(
                bundle.query_features, group, seed, _DEFORM_NAMESPACE, pi, repeat
            )
            for name, model in models.items():
                words = encode_features(model, transformed)
                report = evaluate(
                    indexes[name], words, bundle.query_labels,
                    config.eval.m, config.eval.top_ranks,
                )
                maps[name] += report.map_at_m
        n = config.sweep.repeats
        rows.append(
            {
                "deformation": preset_name,
                "map_with_distillation": maps["distilled"] / n,
                "map_without_distillation": maps["single_view"] / n,
            }
        )
    csv_path = os.path.join(config.output_dir, DEFORM_CSV_NAME)
    with open(csv_path, "w", encoding="ascii") as fh:
        fh.write("deformation,map_with_distillation,map_without_distillation\n")
        for row in rows:
            fh.write(
                f"{row['deformation']},{row['map_with_distillation']!r},"
                f"{row['map_without_distillation']!r}\n"
            )
    return {"rows": rows, "csv_path": csv_path}
