"""
Experiment commands behind the CLI: gen, train, eval, diag and bench.

Each command is a function of (config, input files) that writes its
artifacts under config.output_dir and returns a flat summary for display.
"""

import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from numpy.random import Generator

from doeblin.core.constants import ReferenceKind, StreamTag
from doeblin.core.exceptions import ConfigError, DivergenceError, NonErgodicKernelError
from doeblin.models.chain import (
    DenseDistribution,
    DenseKernel,
    State,
    StateSpace,
    random_kernel,
)
from doeblin.models.mrf import PairwiseModel, ReferenceModel
from doeblin.models.schemas import Dataset, EvalMetrics, ExperimentConfig
from doeblin.services import storage
from doeblin.services.gibbs import (
    GibbsKernel,
    dense_gibbs_kernel,
    exact_distribution,
    fit_reference,
    gibbs_step,
    random_model,
    uniform_reference,
)
from doeblin.services.learning import grad_loglik_estimate, sgd_train, stationary_logprobs
from doeblin.services.mixing import approximation_gap, contraction_audit, mixing_curve
from doeblin.services.restart import DoeblinChain, sample_stationary, stationary_dense
from doeblin.utils.logger import get_structured_logger
from doeblin.utils.rng import derive_rng

logger = get_structured_logger(__name__)

Summary = Dict[str, Any]

TEACHER_MODEL_FILE = "teacher_model.json"
TEACHER_REFERENCE_FILE = "teacher_reference.json"
TRAIN_FILE = "train.txt"
HELDOUT_FILE = "heldout.txt"
LEARNED_MODEL_FILE = "learned_model.json"
REFERENCE_FILE = "reference.json"
TRAINING_LOG_FILE = "training_log.jsonl"
METRICS_FILE = "metrics.tsv"
BENCH_FILE = "bench.json"


def _out(config: ExperimentConfig, name: str) -> Path:
    return Path(config.output_dir) / name


def _existing(path: Optional[str], fallback: Path, what: str) -> Path:
    """Explicit path if given, else the conventional file in the output directory"""
    resolved = Path(path) if path else fallback
    if not resolved.is_file():
        raise ConfigError(f"{what} not found: {resolved}")
    return resolved


def build_model(config: ExperimentConfig) -> PairwiseModel:
    """Configured model: explicit θ, else θ ~ N(0, σ²) from the teacher stream"""
    spec = config.model
    space, edges = spec.space(), spec.edge_list()
    if spec.theta is not None:
        return PairwiseModel(space=space, edges=edges, theta=np.array(spec.theta))
    rng = derive_rng(config.seed, StreamTag.TEACHER_THETA)
    return random_model(space, edges, rng, scale=spec.theta_scale)


def build_reference(config: ExperimentConfig, dataset: Optional[Dataset] = None) -> ReferenceModel:
    """Reference per config; kind=fit needs the training rows"""
    space = config.model.space()
    ref = config.reference
    if ref.kind == ReferenceKind.EXPLICIT:
        return ReferenceModel(space=space, q=np.array(ref.q))
    if ref.kind == ReferenceKind.UNIFORM:
        return uniform_reference(space)
    if dataset is None:
        raise ConfigError("reference kind 'fit' needs a training dataset")
    return fit_reference(dataset.rows, space, ref.smoothing)


def _teacher_reference(config: ExperimentConfig) -> ReferenceModel:
    # no data exists yet at generation time, so a fit reference falls back to uniform
    if config.reference.kind == ReferenceKind.EXPLICIT:
        return build_reference(config)
    return uniform_reference(config.model.space())


def _draw_rows(chain: DoeblinChain, count: int, rng: Generator) -> List[State]:
    return [sample_stationary(chain, rng) for _ in range(count)]


def cmd_gen(config: ExperimentConfig) -> Summary:
    """Teacher model plus train / held-out rows drawn exactly from its π_ε"""
    teacher = build_model(config)
    reference = _teacher_reference(config)
    chain = DoeblinChain(base=GibbsKernel(teacher), reference=reference, epsilon=config.epsilon)
    space = teacher.space

    train_rows = _draw_rows(
        chain, config.gen.num_rows, derive_rng(config.seed, StreamTag.GEN_TRAIN)
    )
    storage.save_model(_out(config, TEACHER_MODEL_FILE), teacher)
    storage.save_reference(_out(config, TEACHER_REFERENCE_FILE), reference)
    storage.save_dataset(_out(config, TRAIN_FILE), Dataset(space=space, rows=train_rows))
    if config.gen.heldout_rows:
        heldout_rows = _draw_rows(
            chain, config.gen.heldout_rows, derive_rng(config.seed, StreamTag.GEN_HELDOUT)
        )
        storage.save_dataset(_out(config, HELDOUT_FILE), Dataset(space=space, rows=heldout_rows))
    storage.write_metadata(config.output_dir, "gen", config)

    logger.info(
        "dataset_generated",
        context="Gen",
        rows=config.gen.num_rows,
        heldout=config.gen.heldout_rows,
        epsilon=config.epsilon,
    )
    return {
        "states": space.cardinality,
        "parameters": teacher.num_parameters,
        "train_rows": config.gen.num_rows,
        "heldout_rows": config.gen.heldout_rows,
        "epsilon": config.epsilon,
        "output_dir": config.output_dir,
    }


def _optional_dataset(path: Optional[str], fallback: Path, space: StateSpace) -> Optional[Dataset]:
    if path:
        return storage.load_dataset(_existing(path, fallback, "dataset"), space)
    if fallback.is_file():
        return storage.load_dataset(fallback, space)
    return None


def cmd_train(config: ExperimentConfig) -> Summary:
    """
    SGD on the training rows from θ = 0 (or from data.model_path).

    On divergence the partial training log is written before the error
    propagates.
    """
    space = config.model.space()
    train_path = _existing(config.data.train_path, _out(config, TRAIN_FILE), "training dataset")
    dataset = storage.load_dataset(train_path, space)
    heldout = _optional_dataset(config.data.heldout_path, _out(config, HELDOUT_FILE), space)

    if config.data.reference_path:
        reference = storage.load_reference(
            _existing(config.data.reference_path, _out(config, REFERENCE_FILE), "reference")
        )
    else:
        reference = build_reference(config, dataset)
    if config.data.model_path:
        initial = storage.load_model(
            _existing(config.data.model_path, _out(config, LEARNED_MODEL_FILE), "initial model")
        )
    else:
        initial = PairwiseModel.zeros(space, config.model.edge_list())

    train_config = config.train_config()
    log_path = _out(config, TRAINING_LOG_FILE)
    try:
        learned, log = sgd_train(
            dataset.rows,
            initial,
            reference,
            train_config,
            heldout=heldout.rows if heldout is not None else None,
        )
    except DivergenceError as e:
        storage.write_jsonl(log_path, e.records)
        storage.write_metadata(
            config.output_dir, "train", config, {"status": "diverged", "iteration": e.iteration}
        )
        raise

    storage.save_model(_out(config, LEARNED_MODEL_FILE), learned)
    storage.save_reference(_out(config, REFERENCE_FILE), reference)
    storage.write_jsonl(log_path, log.records)
    storage.write_metadata(config.output_dir, "train", config, {"status": "ok"})

    first, last = log.records[0], log.records[-1]
    return {
        "iterations": train_config.iterations,
        "particles": train_config.particles,
        "initial_heldout_loglik": first.heldout_loglik_exact,
        "final_heldout_loglik": last.heldout_loglik_exact,
        "final_train_loglik": last.train_loglik_exact,
        "mean_ess": last.mean_ess,
        "output_dir": config.output_dir,
    }


def evaluate(
    model: PairwiseModel, reference: ReferenceModel, epsilon: float, dataset: Dataset
) -> EvalMetrics:
    """Exact mean log π_ε, log π̃ and log p_θ over the rows; refuses beyond the size cap"""
    model.space.require_dense()
    indices = model.space.indices_of(dataset.rows)
    loglik = stationary_logprobs(model, reference, epsilon)[indices]
    model_logp = np.log(exact_distribution(model).probs)[indices]
    return EvalMetrics(
        rows=len(dataset),
        epsilon=epsilon,
        mean_loglik=float(np.mean(loglik)),
        mean_reference_logprob=float(np.mean(reference.log_probs(dataset.rows))),
        mean_model_logprob=float(np.mean(model_logp)),
    )


def cmd_eval(config: ExperimentConfig) -> Summary:
    """
    Metrics of a model file on a dataset file. The dataset is data.heldout_path,
    else the generated held-out file, else the training file.
    """
    model = storage.load_model(
        _existing(config.data.model_path, _out(config, LEARNED_MODEL_FILE), "model")
    )
    if config.data.heldout_path:
        data_path = _existing(config.data.heldout_path, _out(config, HELDOUT_FILE), "dataset")
    elif _out(config, HELDOUT_FILE).is_file():
        data_path = _out(config, HELDOUT_FILE)
    else:
        data_path = _existing(config.data.train_path, _out(config, TRAIN_FILE), "dataset")
    dataset = storage.load_dataset(data_path, model.space)

    if config.data.reference_path or _out(config, REFERENCE_FILE).is_file():
        reference = storage.load_reference(
            _existing(config.data.reference_path, _out(config, REFERENCE_FILE), "reference")
        )
    else:
        reference = build_reference(config, dataset)

    metrics = evaluate(model, reference, config.epsilon, dataset)
    storage.write_table(_out(config, METRICS_FILE), pd.DataFrame([metrics.model_dump()]))
    storage.write_metadata(config.output_dir, "eval", config, {"dataset": str(data_path)})
    logger.info("evaluation_written", context="Eval", **metrics.model_dump())
    return metrics.model_dump()


def flip_toy() -> Tuple[DenseKernel, DenseDistribution]:
    """Two states that swap every step, reference concentrated on the first"""
    space = StateSpace.flat(2)
    kernel = DenseKernel(space=space, rows=np.array([[0.0, 1.0], [1.0, 0.0]]))
    return kernel, DenseDistribution.point_mass(space, 0)


def _diag_inputs(config: ExperimentConfig) -> Tuple[DenseKernel, DenseDistribution]:
    if config.diag.toy == "flip":
        return flip_toy()
    if config.data.model_path:
        model = storage.load_model(Path(config.data.model_path))
    else:
        model = build_model(config)
    if config.data.reference_path:
        reference = storage.load_reference(config.data.reference_path)
    elif config.reference.kind == ReferenceKind.FIT:
        train_path = _existing(config.data.train_path, _out(config, TRAIN_FILE), "training dataset")
        reference = build_reference(config, storage.load_dataset(train_path, model.space))
    else:
        reference = build_reference(config)
    return dense_gibbs_kernel(model), reference.to_dense()


def cmd_diag(config: ExperimentConfig) -> Summary:
    """
    Mixing curves, approximation gap with bound proxy, contraction audit and
    π_ε per ε, as tab-separated tables.
    """
    base, reference = _diag_inputs(config)
    epsilons = config.diag.epsilons
    start = DenseDistribution.point_mass(base.space, base.cardinality - 1)

    curve_rows = []
    for eps in epsilons:
        for point in mixing_curve(base, reference, eps, start, config.diag.t_max):
            curve_rows.append({"epsilon": eps, **point._asdict()})

    try:
        gap_rows = [
            {**row._asdict(), "holds": row.holds, "status": "ok"}
            for row in approximation_gap(base, reference, epsilons)
        ]
    except NonErgodicKernelError as e:
        logger.warning("base_chain_not_ergodic", context="Diag", error=str(e))
        gap_rows = [
            {"epsilon": eps, "gap": None, "bound": None, "holds": None, "status": "non_ergodic"}
            for eps in epsilons
        ]

    audit_rows = []
    for j, eps in enumerate(epsilons):
        audit = contraction_audit(
            base,
            reference,
            eps,
            derive_rng(config.seed, StreamTag.AUDIT, j),
            num_pairs=config.diag.audit_pairs,
        )
        slack = max(check.lhs - check.rhs for check in audit.checks)
        audit_rows.append(
            {
                "epsilon": eps,
                "pairs": len(audit.checks),
                "violations": audit.violations,
                "max_slack": slack,
            }
        )

    stationary_rows = []
    for eps in epsilons:
        pi = stationary_dense(base, reference, eps)
        for index, prob in enumerate(pi.probs):
            stationary_rows.append({"epsilon": eps, "state": index, "prob": prob})

    storage.write_table(_out(config, "mixing_curve.tsv"), pd.DataFrame(curve_rows))
    storage.write_table(_out(config, "approximation_gap.tsv"), pd.DataFrame(gap_rows))
    storage.write_table(_out(config, "contraction_audit.tsv"), pd.DataFrame(audit_rows))
    storage.write_table(_out(config, "stationary.tsv"), pd.DataFrame(stationary_rows))
    storage.write_metadata(config.output_dir, "diag", config, {"toy": config.diag.toy})

    violations = sum(row["violations"] for row in audit_rows)
    logger.info(
        "diagnostics_written", context="Diag", states=base.cardinality, violations=violations
    )
    return {
        "states": base.cardinality,
        "epsilons": len(epsilons),
        "audit_violations": violations,
        "gap_status": gap_rows[0]["status"],
        "output_dir": config.output_dir,
    }


def _median_seconds(action: Callable[[], Any], repeats: int) -> float:
    times = []
    for _ in range(repeats):
        started = time.perf_counter()
        action()
        times.append(time.perf_counter() - started)
    return float(np.median(times))


def cmd_bench(config: ExperimentConfig) -> Summary:
    """Median wall-clock of Gibbs stepping, dense restart solves and gradient estimation"""
    bench = config.bench
    model = build_model(config)
    reference = uniform_reference(model.space)
    y = tuple([0] * model.space.num_variables)

    def run_gibbs():
        rng = derive_rng(config.seed, StreamTag.BENCH)
        x = y
        for _ in range(bench.gibbs_steps):
            x = gibbs_step(model, x, rng).state

    gibbs_seconds = _median_seconds(run_gibbs, bench.repeats)

    solves = []
    for n in bench.sizes:
        space = StateSpace.flat(n)
        kernel = random_kernel(space, derive_rng(config.seed, StreamTag.BENCH, n))
        uniform = DenseDistribution.uniform(space)
        seconds = _median_seconds(
            lambda: stationary_dense(kernel, uniform, config.epsilon), bench.repeats
        )
        solves.append({"states": n, "median_ms": seconds * 1000.0})

    gradients = []
    for m in bench.particle_counts:
        seconds = _median_seconds(
            lambda: grad_loglik_estimate(
                model,
                reference,
                config.epsilon,
                y,
                m,
                derive_rng(config.seed, StreamTag.BENCH, 0, m),
            ),
            bench.repeats,
        )
        gradients.append(
            {"particles": m, "median_ms": seconds * 1000.0, "particles_per_s": m / seconds}
        )

    report = {
        "config_hash": config.config_hash(),
        "epsilon": config.epsilon,
        "repeats": bench.repeats,
        "gibbs": {
            "steps": bench.gibbs_steps,
            "median_ms": gibbs_seconds * 1000.0,
            "steps_per_s": bench.gibbs_steps / gibbs_seconds,
        },
        "stationary_solve": solves,
        "gradient_estimate": gradients,
    }
    storage.write_json(_out(config, BENCH_FILE), report)
    storage.write_metadata(config.output_dir, "bench", config)
    logger.info("bench_written", context="Bench", steps_per_s=report["gibbs"]["steps_per_s"])
    return {
        "gibbs_steps_per_s": report["gibbs"]["steps_per_s"],
        "largest_solve_ms": solves[-1]["median_ms"] if solves else None,
        "config_hash": report["config_hash"][:12],
        "output_dir": config.output_dir,
    }


COMMANDS: Dict[str, Callable[[ExperimentConfig], Summary]] = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "diag": cmd_diag,
    "bench": cmd_bench,
}
