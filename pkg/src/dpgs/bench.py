"""Planted mixtures with known parameters, recovery metrics and parameter sweeps."""

from __future__ import annotations

import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .classifier import MlpConfig, evaluate, subsample, train_mlp
from .core.errors import ConfigurationError, ContractError, DpgsError
from .core.io import split_by_label
from .core.rng import derive_rng, derive_seed
from .core.types import EmbeddingDataset, GmmModel, PrivacyBudget, SeparationSpec, concat_datasets
from .dp_gaussian import EstimatorConfig
from .dp_kmeans import KMeansConfig
from .gmm import gmm_wasserstein_bound, match_components, parameter_errors, sample_gmm
from .pipeline import PipelineConfig, fit_private_gmm_detailed

PLACEMENTS = ("simplex-scaled", "random-ball")
TSV_COLUMNS = ("k", "clip", "epsilon", "seed", "weight_l1", "mean_l2_max", "cov_fro_max",
               "purity", "w_bound", "acc_synth", "acc_real", "status")
MAX_PLACEMENT_ATTEMPTS = 100
CONCENTRATION_BETA = 1e-3


@dataclass(frozen=True)
class PlantedGmmSpec:
    """Ground-truth mixtures, one per class, with jointly separated means.

    All ``classes * k`` means are placed together so that both components
    and classes are at least ``separation`` apart. Covariances are diagonal
    with variances in ``[sigma^2 (1 - cov_spread), sigma^2]``.
    """

    k: int = 3
    d: int = 8
    n: int = 30000
    classes: int = 1
    weights: Optional[tuple] = None
    placement: str = "simplex-scaled"
    separation: float = 30.0
    sigma: float = 0.5
    ball_radius: float = 50.0
    cov_spread: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.k, self.d, self.n, self.classes) < 1:
            raise ConfigurationError("k, d, n and classes must be positive")
        if self.placement not in PLACEMENTS:
            raise ConfigurationError(f"placement must be one of {PLACEMENTS}")
        if self.separation < 0 or not self.sigma > 0 or not self.ball_radius > 0:
            raise ConfigurationError("separation must be nonnegative, sigma and ball_radius positive")
        if not 0 <= self.cov_spread < 1:
            raise ConfigurationError("cov_spread must lie in [0, 1)")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            if w.shape != (self.k,) or np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
                raise ConfigurationError("weights must be a length-k simplex vector")

    @property
    def weight_vector(self) -> np.ndarray:
        if self.weights is None:
            return np.full(self.k, 1.0 / self.k)
        return np.asarray(self.weights, dtype=np.float64)


def reference_spec(**overrides) -> PlantedGmmSpec:
    """Two classes of three components in d=8, separation 30 sigma sqrt(d)."""
    sigma, d = 0.5, 8
    base = PlantedGmmSpec(k=3, d=d, n=30000, classes=2, weights=(0.5, 0.3, 0.2),
                          placement="simplex-scaled", separation=30 * sigma * math.sqrt(d),
                          sigma=sigma)
    return replace(base, **overrides)


def reference_pipeline_config(epsilon=1.0, delta=1e-5, **overrides) -> PipelineConfig:
    """Pipeline settings used with :func:`reference_spec`.

    The clustering clip ball (radius 32) contains the reference means, which
    sit about 27.4 from the origin. Covariance deviations are clipped at 2.0,
    mean deviations at 8.0 to absorb the noisy cluster centers.
    """
    budget = PrivacyBudget.non_private() if epsilon is None else PrivacyBudget(epsilon, delta)
    cfg = PipelineConfig(
        budget=budget,
        kmeans=KMeansConfig(k=3, clip_radius=32.0, lloyd_iterations=5),
        estimator=EstimatorConfig(clip_radius=2.0, mean_clip_radius=8.0),
        generations=2000,
    )
    return replace(cfg, **overrides)


def separation_threshold(sigma, d, n, w_min, zeta=1.0, beta=0.01) -> float:
    """Minimum mean gap under which k-means provably separates the components."""
    return 3 * sigma * (math.sqrt(d) + math.sqrt(2 * math.log(3 * n / beta))
                        + math.sqrt(12 * zeta * d / w_min))


def _simplex_means(count, d, edge, rng):
    if count > d + 1:
        raise ConfigurationError(f"a simplex with {count} vertices does not fit in d={d}")
    if count == 1:
        return np.zeros((1, d))
    vertices = np.eye(count) * (edge / math.sqrt(2.0))
    vertices -= vertices.mean(axis=0)
    u, s, _ = np.linalg.svd(vertices)
    coords = u[:, :count - 1] * s[:count - 1]
    padded = np.zeros((count, d))
    padded[:, :count - 1] = coords
    rotation, _ = np.linalg.qr(rng.normal(size=(d, d)))
    return padded @ rotation.T


def _min_gap(means):
    if means.shape[0] < 2:
        return math.inf
    gaps = np.linalg.norm(means[:, None] - means[None], axis=-1)
    return float(gaps[~np.eye(means.shape[0], dtype=bool)].min())


def place_means(spec: PlantedGmmSpec, rng) -> np.ndarray:
    count = spec.k * spec.classes
    if spec.placement == "simplex-scaled":
        means = _simplex_means(count, spec.d, spec.separation, rng)
        if _min_gap(means) < spec.separation * (1 - 1e-9):
            raise ConfigurationError("simplex placement failed to reach the separation")
        return means
    from .dp_kmeans import sample_ball

    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        means = sample_ball(count, spec.d, spec.ball_radius, rng)
        if _min_gap(means) >= spec.separation:
            return means
    raise ConfigurationError(
        f"could not place {count} means {spec.separation} apart in a ball of radius "
        f"{spec.ball_radius} after {MAX_PLACEMENT_ATTEMPTS} attempts")


def chernoff_window(weight, n, k, beta=CONCENTRATION_BETA) -> float:
    """Half-width within which each component count lies with probability 1 - beta."""
    return math.sqrt(3.0 * weight * n * math.log(2.0 * k / beta))


@dataclass(frozen=True, eq=False)
class LabeledPlant:
    truths: list
    data: EmbeddingDataset
    components: np.ndarray
    concentration_ok: bool

    def class_data(self, label):
        rows = np.flatnonzero(self.data.labels == label)
        return self.data.take(rows), self.components[rows]


def plant_labeled(spec: PlantedGmmSpec, rng=None) -> LabeledPlant:
    """Sample ``spec.n`` points per class; labels are class ids."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    means = place_means(spec, rng)
    w = spec.weight_vector
    truths, parts, components = [], [], []
    ok = True
    for c in range(spec.classes):
        variances = spec.sigma ** 2 * (1 - spec.cov_spread * rng.random((spec.k, spec.d)))
        truth = GmmModel(w, means[c * spec.k:(c + 1) * spec.k], variances, "diagonal")
        sample = sample_gmm(truth, spec.n, rng)
        counts = np.bincount(sample.labels, minlength=spec.k)
        for i in range(spec.k):
            if abs(counts[i] - w[i] * spec.n) > chernoff_window(w[i], spec.n, spec.k):
                ok = False
        truths.append(truth)
        parts.append(EmbeddingDataset(sample.data, np.full(spec.n, c)))
        components.append(sample.labels)
    return LabeledPlant(truths, concat_datasets(parts), np.concatenate(components), ok)


def plant_gmm(spec: PlantedGmmSpec, rng=None):
    """Single-class planting: ``(truth, samples labelled by component)``."""
    if spec.classes != 1:
        raise ContractError("plant_gmm handles one class; use plant_labeled for several")
    plant = plant_labeled(spec, rng)
    return plant.truths[0], EmbeddingDataset(plant.data.data, plant.components)


@dataclass(frozen=True)
class EstimationErrors:
    weight_l1: float
    mean_l2_max: float
    cov_frobenius_max: float
    cov_frobenius_rel_max: float
    purity: float
    wasserstein_bound: float
    structural_failure: Optional[str] = None


_NAN = float("nan")


def measure_recovery(truth: GmmModel, fitted: GmmModel, assignment=None,
                     component_labels=None) -> EstimationErrors:
    """Errors of ``fitted`` after minimum-cost matching of its means to the truth.

    Purity is the fraction of points whose cluster is matched to their
    generating component (NaN when no assignment is given).
    """
    if truth.k != fitted.k or truth.d != fitted.d:
        return EstimationErrors(_NAN, _NAN, _NAN, _NAN, _NAN, _NAN,
                                f"fitted k={fitted.k}, d={fitted.d} vs true k={truth.k}, d={truth.d}")
    order = match_components(truth.means, fitted.means, "hungarian")
    gamma, mean_err, cov_err = parameter_errors(truth, fitted, order)
    scale = np.array([np.linalg.norm(truth.covariance_matrix(i)) for i in range(truth.k)])
    purity = _NAN
    if assignment is not None and component_labels is not None:
        cluster_to_component = np.empty(truth.k, dtype=np.int64)
        cluster_to_component[order] = np.arange(truth.k)
        purity = float(np.mean(cluster_to_component[np.asarray(assignment)]
                               == np.asarray(component_labels)))
    bound = gmm_wasserstein_bound(truth, fitted, SeparationSpec.from_model(truth), order=order)
    return EstimationErrors(gamma, float(mean_err.max()), float(cov_err.max()),
                            float((cov_err / scale).max()), purity, bound)


@dataclass(frozen=True)
class SweepGrid:
    ks: tuple = (1, 2, 4, 8, 16)
    clips: tuple = (2.0,)
    epsilons: tuple = (1.0,)
    seeds: tuple = tuple(range(20))
    delta: float = 1e-5

    def __post_init__(self):
        if not (self.ks and self.clips and self.epsilons and self.seeds):
            raise ConfigurationError("every sweep axis needs at least one value")

    def cells(self):
        for k in self.ks:
            for clip in self.clips:
                for eps in self.epsilons:
                    for seed in self.seeds:
                        yield int(k), float(clip), float(eps), int(seed)


@dataclass
class SweepTable:
    rows: list = field(default_factory=list)

    def to_tsv(self) -> str:
        lines = ["\t".join(TSV_COLUMNS)]
        for row in self.rows:
            lines.append("\t".join(_fmt(row[c]) for c in TSV_COLUMNS))
        return "\n".join(lines) + "\n"

    def groups(self):
        out = {}
        for row in self.rows:
            out.setdefault((row["k"], row["clip"], row["epsilon"]), []).append(row)
        return out

    def medians(self, column):
        """Median of ``column`` per (k, clip, epsilon), ignoring NaN rows."""
        result = {}
        for key, rows in self.groups().items():
            values = [r[column] for r in rows if not math.isnan(r[column])]
            result[key] = statistics.median(values) if values else _NAN
        return result

    def summary(self, thresholds: dict):
        """Per-configuration pass/fail of medians against ``thresholds``.

        Keys ending in ``_max`` are upper limits, ``_min`` lower limits, on
        the column named by the prefix. Returns ``(all_passed, lines)``.
        """
        lines, passed = [], True
        for key, rows in self.groups().items():
            for name, limit in thresholds.items():
                column, kind = name.rsplit("_", 1)
                values = [r[column] for r in rows if not math.isnan(r[column])]
                med = statistics.median(values) if values else _NAN
                ok = (not math.isnan(med)) and (med <= limit if kind == "max" else med >= limit)
                passed &= ok
                deviation = statistics.pstdev(values) if len(values) > 1 else 0.0
                lines.append(f"k={key[0]} clip={key[1]} epsilon={key[2]} {column}: median={_fmt(med)}"
                             f" sd={_fmt(deviation)} {'<=' if kind == 'max' else '>='} {limit}"
                             f" {'PASS' if ok else 'FAIL'}")
        return passed, lines


def _fmt(value):
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.6g}"
    return str(value)


def _aggregate(errors):
    """Worst case over classes (mean for purity)."""
    if any(e.structural_failure for e in errors):
        return None
    return {
        "weight_l1": max(e.weight_l1 for e in errors),
        "mean_l2_max": max(e.mean_l2_max for e in errors),
        "cov_fro_max": max(e.cov_frobenius_max for e in errors),
        "purity": float(np.mean([e.purity for e in errors])),
        "w_bound": max(e.wasserstein_bound for e in errors),
    }


def run_cell(k, clip, eps, seed, spec: PlantedGmmSpec, base: PipelineConfig, delta,
             classifier: Optional[MlpConfig] = None, plant: Optional[LabeledPlant] = None):
    """One sweep row: plant, fit every class, measure, optionally train MLPs."""
    row = {"k": k, "clip": clip, "epsilon": eps, "seed": seed, "weight_l1": _NAN,
           "mean_l2_max": _NAN, "cov_fro_max": _NAN, "purity": _NAN, "w_bound": _NAN,
           "acc_synth": _NAN, "acc_real": _NAN, "status": "ok"}
    try:
        plant = plant or plant_labeled(spec, derive_rng(seed, "plant"))
        cfg = replace(base, budget=PrivacyBudget(eps, delta),
                      kmeans=replace(base.kmeans, k=k),
                      estimator=replace(base.estimator, clip_radius=clip))
        fits, errors = {}, []
        for label in range(spec.classes):
            class_ds, components = plant.class_data(label)
            fit = fit_private_gmm_detailed(class_ds, cfg, derive_seed(seed, "fit", k, clip, eps, label))
            fits[label] = fit
            errors.append(measure_recovery(plant.truths[label], fit.model,
                                           fit.clustering.assignment, components))
        agg = _aggregate(errors)
        if agg is None:
            row["status"] = "structural:" + errors[0].structural_failure.replace(" ", "")
        else:
            row.update(agg)
        if classifier is not None and spec.classes > 1:
            mlp_seed = derive_seed(seed, "mlp", k, clip, eps)
            synth = concat_datasets(sample_gmm(fits[c].model, base.generations,
                                               derive_rng(mlp_seed, "sample", c), label=c)
                                    for c in sorted(fits))
            row["acc_synth"], row["acc_real"] = utility_pair(plant, synth, classifier, mlp_seed)
    except DpgsError as exc:
        row["status"] = f"error:{type(exc).__name__}"
    return row


def utility_pair(plant: LabeledPlant, synthetic: EmbeddingDataset, mlp_cfg: MlpConfig, seed):
    """Test accuracy of MLPs trained on ``synthetic`` versus real records of equal size.

    Both are scored on a fresh draw from the true mixtures.
    """
    real = subsample(plant.data, synthetic.n, derive_rng(seed, "subsample"))
    per_class = max(1000, plant.data.n // (10 * len(plant.truths)))
    test = concat_datasets(sample_gmm(t, per_class, derive_rng(seed, "test", c), label=c)
                           for c, t in enumerate(plant.truths))
    acc_synth = evaluate(train_mlp(synthetic, mlp_cfg, derive_rng(seed, "train-synth")), test)
    acc_real = evaluate(train_mlp(real, mlp_cfg, derive_rng(seed, "train-real")), test)
    return acc_synth, acc_real


def sweep(grid: SweepGrid, spec: PlantedGmmSpec = None, base: PipelineConfig = None,
          classifier: Optional[MlpConfig] = None, jobs=1) -> SweepTable:
    """Evaluate every grid cell; failures are recorded in the row's status."""
    spec = spec or reference_spec()
    base = base or reference_pipeline_config()
    plants = {s: plant_labeled(spec, derive_rng(s, "plant")) for s in sorted(set(grid.seeds))}
    cells = list(grid.cells())

    def work(cell):
        k, clip, eps, seed = cell
        return run_cell(k, clip, eps, seed, spec, base, grid.delta, classifier, plants[seed])

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(work, cells))
    else:
        rows = [work(cell) for cell in cells]
    return SweepTable(rows)


def load_grid_config(text: str):
    """Parse a flat ``key = value`` grid file into (SweepGrid, thresholds, extras)."""
    values = parse_key_values(text)

    def floats(key, default):
        return tuple(float(v) for v in values.pop(key).split(",")) if key in values else default

    grid_kwargs = {}
    if "k" in values:
        grid_kwargs["ks"] = tuple(int(v) for v in values.pop("k").split(","))
    grid_kwargs["clips"] = floats("clip", SweepGrid.clips)
    grid_kwargs["epsilons"] = floats("epsilon", SweepGrid.epsilons)
    if "seeds" in values:
        grid_kwargs["seeds"] = tuple(range(int(values.pop("seeds"))))
    if "delta" in values:
        grid_kwargs["delta"] = float(values.pop("delta"))
    thresholds = {key: float(values.pop(key)) for key in list(values)
                  if key.endswith(("_max", "_min"))}
    return SweepGrid(**grid_kwargs), thresholds, values


def parse_key_values(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out
