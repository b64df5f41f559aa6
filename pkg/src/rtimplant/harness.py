"""Region-scenario evaluation, loss and bound ablations, and report files.

Every image is protected once; the clean ("Ben") and protected ("Imp")
versions are then inpainted under three editing regions:

* ``Trigger``    the protected region itself,
* ``Incomplete`` a random half of the dilated trigger (overlaps the trigger),
* ``Without``    the dilation ring with the trigger removed (disjoint from it).

Fidelity metrics compare each edit with the untouched scene; the ``*_vs_ben``
metrics compare an edit with the clean image's edit under the same mask.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics
from .errors import ParameterError, ScenarioError
from .imagecore import centered_square, check_mask, expand_mask, sample_incomplete, subtract_trigger
from .implant import ProtectionSpec, apply, optimize
from .inpaintnet import InpaintModel, load_model, predict
from .synthtrain import SceneSpec, derive_seed, generate_scene, read_manifest, scene_specs

log = logging.getLogger(__name__)

SCENARIOS = ("Trigger", "Incomplete", "Without")
KINDS = ("Ben", "Imp")
REPORT_VERSION = 1
CSV_HEADER = ("run", "image", "scenario", "kind", "repeat", "metric", "region", "value",
              "scene_seed", "spec_seed", "mask_seed")
METRIC_KEYS = (
    ("psnr", "mask"), ("psnr", "full"),
    ("ssim", "mask"), ("ssim", "full"),
    ("featdist", "mask"), ("featdist", "full"),
    ("psnr_vs_ben", "mask"), ("ssim_vs_ben", "mask"),
)
PAPER_BOUNDS = (2 / 255, 3 / 255, 6 / 255, 13 / 255)
MAX_RESAMPLES = 16


@dataclass(frozen=True)
class RegionScenario:
    tag: str
    mask: np.ndarray


def realize_scenario(tag: str, trigger: np.ndarray, kernel_side: int = 7, seed: int = 0,
                     fraction: float = 0.5, mode: str = "bernoulli") -> RegionScenario:
    trigger = check_mask(trigger)
    if not trigger.any():
        raise ScenarioError("trigger is empty")
    if tag == "Trigger":
        return RegionScenario(tag, trigger.copy())
    expanded = expand_mask(trigger, kernel_side)
    if tag == "Without":
        ring = subtract_trigger(expanded, trigger)
        if not ring.any():
            raise ScenarioError("dilation adds no pixels; Without region is empty")
        return RegionScenario(tag, ring)
    if tag == "Incomplete":
        t = trigger.astype(bool)
        for attempt in range(MAX_RESAMPLES):
            m = sample_incomplete(expanded, fraction, derive_seed(seed, attempt), mode)
            mb = m.astype(bool)
            if (mb & t).any() and (mb & ~t).any():
                return RegionScenario(tag, m)
        raise ScenarioError(f"no intersecting incomplete mask after {MAX_RESAMPLES} draws")
    raise ParameterError(f"unknown scenario {tag!r}")


@dataclass
class RunConfig:
    dataset: str | None = None
    model: str | None = None
    epsilon: float = 6 / 255
    iterations: int = 20
    hide_weight: float = 2.0
    kernel_side: int = 7
    fraction: float = 0.5
    target_mode: str = "pure_color"
    use_incomplete: bool = True
    use_hide: bool = True
    repeats: int = 4
    seed: int = 0
    trigger_side: int | None = None
    out: str | None = None

    def __post_init__(self):
        if self.repeats < 1:
            raise ParameterError("repeats must be >= 1")

    def protection_spec(self, trigger: np.ndarray, seed: int) -> ProtectionSpec:
        return ProtectionSpec(
            trigger=trigger, epsilon=self.epsilon, iterations=self.iterations,
            hide_weight=self.hide_weight, kernel_side=self.kernel_side, fraction=self.fraction,
            target_mode=self.target_mode, seed=seed, use_incomplete=self.use_incomplete,
            use_hide=self.use_hide,
        )


@dataclass
class EvalRecord:
    run: str
    image: int
    scenario: str
    kind: str
    repeat: int
    values: dict[tuple[str, str], float]
    scene_seed: int
    spec_seed: int
    mask_seed: int


@dataclass
class Report:
    records: list[EvalRecord]
    meta: dict = field(default_factory=dict)

    def runs(self) -> list[str]:
        return list(dict.fromkeys(r.run for r in self.records))

    def mean(self, run: str, scenario: str, kind: str, metric: str, region: str = "mask") -> float:
        vals = [r.values[(metric, region)] for r in self.records
                if r.run == run and r.scenario == scenario and r.kind == kind]
        if not vals:
            raise KeyError((run, scenario, kind))
        return float(np.mean(vals))

    def diff(self, run: str, scenario: str, metric: str, region: str = "mask") -> float:
        """Signed Imp - Ben difference of means."""
        return (self.mean(run, scenario, "Imp", metric, region)
                - self.mean(run, scenario, "Ben", metric, region))

    def drop(self, run: str, scenario: str, metric: str = "ssim") -> float:
        """Ben - Imp: how much the protection degrades the edit."""
        return -self.diff(run, scenario, metric)

    def summary(self) -> list[dict]:
        rows = []
        for run in self.runs():
            for scenario in SCENARIOS:
                for metric, region in METRIC_KEYS:
                    try:
                        ben = self.mean(run, scenario, "Ben", metric, region)
                        imp = self.mean(run, scenario, "Imp", metric, region)
                    except KeyError:
                        continue
                    rows.append({"run": run, "scenario": scenario, "metric": metric,
                                 "region": region, "ben": ben, "imp": imp, "diff": imp - ben})
        return rows


def _trigger_for(size: int, cfg: RunConfig) -> np.ndarray:
    return centered_square(size, cfg.trigger_side or size // 4)


def _edit_metrics(model: InpaintModel, edit: np.ndarray, truth: np.ndarray,
                  benign: np.ndarray, mask: np.ndarray) -> dict[tuple[str, str], float]:
    return {
        ("psnr", "mask"): metrics.psnr(edit, truth, mask).value,
        ("psnr", "full"): metrics.psnr(edit, truth).value,
        ("ssim", "mask"): metrics.ssim(edit, truth, mask).value,
        ("ssim", "full"): metrics.ssim(edit, truth).value,
        ("featdist", "mask"): metrics.featdist(model, edit, truth, mask).value,
        ("featdist", "full"): metrics.featdist(model, edit, truth).value,
        ("psnr_vs_ben", "mask"): metrics.psnr(edit, benign, mask).value,
        ("ssim_vs_ben", "mask"): metrics.ssim(edit, benign, mask).value,
    }


def evaluate_image(model: InpaintModel, x: np.ndarray, cfg: RunConfig, *, run: str,
                   image: int, scene_seed: int, spec_seed: int) -> list[EvalRecord]:
    """Protect one image and score every scenario x kind x repeat cell."""
    trigger = _trigger_for(x.shape[-1], cfg)
    spec = cfg.protection_spec(trigger, spec_seed)
    x_imp = apply(x, optimize(model, x, spec).perturbation)
    records = []
    for s_idx, tag in enumerate(SCENARIOS):
        for rep in range(cfg.repeats):
            mask_seed = derive_seed(cfg.seed, image, s_idx, rep)
            mask = realize_scenario(tag, trigger, cfg.kernel_side, mask_seed, cfg.fraction).mask
            benign = predict(model, x, mask)
            edits = {"Ben": benign, "Imp": predict(model, x_imp, mask)}
            for kind in KINDS:
                records.append(EvalRecord(
                    run=run, image=image, scenario=tag, kind=kind, repeat=rep,
                    values=_edit_metrics(model, edits[kind], x, benign, mask),
                    scene_seed=scene_seed, spec_seed=spec_seed, mask_seed=mask_seed,
                ))
    return records


def _load_inputs(cfg: RunConfig, model: InpaintModel | None,
                 scenes: list[SceneSpec] | None) -> tuple[InpaintModel, list[SceneSpec]]:
    if model is None:
        if cfg.model is None:
            raise ParameterError("no model given")
        model = load_model(cfg.model)
    if scenes is None:
        if cfg.dataset is None:
            raise ParameterError("no dataset manifest given")
        scenes = scene_specs(read_manifest(cfg.dataset))
    if not scenes:
        raise ParameterError("dataset is empty")
    return model, scenes


def _grid(model: InpaintModel, scenes: list[SceneSpec], cfg: RunConfig, run: str) -> list[EvalRecord]:
    records = []
    for i, spec in enumerate(scenes):
        x = generate_scene(spec)
        try:
            records += evaluate_image(model, x, cfg, run=run, image=i, scene_seed=spec.seed,
                                      spec_seed=derive_seed(cfg.seed, spec.seed))
        except Exception as exc:
            raise type(exc)(f"image {i}: {exc}") from exc
        log.info("run %s: image %d/%d done", run, i + 1, len(scenes))
    records.sort(key=lambda r: (r.image, SCENARIOS.index(r.scenario), KINDS.index(r.kind), r.repeat))
    return records


def _meta(cfg: RunConfig, scenes: list[SceneSpec], kind: str) -> dict:
    return {"report": kind, "config": asdict(cfg), "images": len(scenes),
            "scene_size": scenes[0].size}


def run_protection_eval(cfg: RunConfig, model: InpaintModel | None = None,
                        scenes: list[SceneSpec] | None = None) -> Report:
    model, scenes = _load_inputs(cfg, model, scenes)
    return Report(_grid(model, scenes, cfg, "full"), _meta(cfg, scenes, "protection"))


LOSS_VARIANTS = (
    ("implant", False, False),
    ("implant+incomplete", True, False),
    ("full", True, True),
)


def ablate_losses(cfg: RunConfig, model: InpaintModel | None = None,
                  scenes: list[SceneSpec] | None = None) -> Report:
    model, scenes = _load_inputs(cfg, model, scenes)
    records = []
    for label, use_inc, use_hide in LOSS_VARIANTS:
        variant = replace(cfg, use_incomplete=use_inc, use_hide=use_hide)
        records += _grid(model, scenes, variant, label)
    return Report(records, _meta(cfg, scenes, "loss_ablation"))


def bound_label(eps: float) -> str:
    k = eps * 255
    return f"eps={round(k)}/255" if abs(k - round(k)) < 1e-9 else f"eps={eps:.6g}"


def ablate_bounds(cfg: RunConfig, bounds=PAPER_BOUNDS, model: InpaintModel | None = None,
                  scenes: list[SceneSpec] | None = None, plateau_tol: float = 0.25) -> Report:
    bounds = list(bounds)
    if not bounds or any(not 0 <= b <= 1 for b in bounds):
        raise ParameterError("bounds must lie in [0, 1]")
    model, scenes = _load_inputs(cfg, model, scenes)
    records = []
    for eps in bounds:
        records += _grid(model, scenes, replace(cfg, epsilon=eps), bound_label(eps))
    report = Report(records, _meta(cfg, scenes, "bound_ablation"))
    report.meta["bounds"] = bounds
    drops = {bound_label(b): report.drop(bound_label(b), "Trigger") for b in bounds}
    report.meta["trigger_ssim_drop"] = drops
    ordered = sorted(bounds)
    if len(ordered) >= 2:
        top, prev = drops[bound_label(ordered[-1])], drops[bound_label(ordered[-2])]
        report.meta["plateau"] = bool(prev > 0 and abs(top - prev) <= plateau_tol * prev)
    return report


def regenerate_record(model: InpaintModel, cfg: RunConfig, record: EvalRecord,
                      size: int) -> EvalRecord:
    """Recompute one record from its stored seeds (``cfg`` must match the record's run)."""
    x = generate_scene(SceneSpec(seed=record.scene_seed, size=size))
    trigger = _trigger_for(size, cfg)
    spec = cfg.protection_spec(trigger, record.spec_seed)
    x_imp = apply(x, optimize(model, x, spec).perturbation)
    mask = realize_scenario(record.scenario, trigger, cfg.kernel_side, record.mask_seed,
                            cfg.fraction).mask
    benign = predict(model, x, mask)
    edit = benign if record.kind == "Ben" else predict(model, x_imp, mask)
    return replace(record, values=_edit_metrics(model, edit, x, benign, mask))


# --- report files ----------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def report_to_csv(report: Report) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in report.records:
        for metric, region in METRIC_KEYS:
            w.writerow([r.run, r.image, r.scenario, r.kind, r.repeat, metric, region,
                        _fmt(r.values[(metric, region)]), r.scene_seed, r.spec_seed, r.mask_seed])
    return buf.getvalue()


def report_from_csv(text: str) -> Report:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ParameterError("CSV header does not match the report schema")
    records: dict[tuple, EvalRecord] = {}
    for row in rows[1:]:
        d = dict(zip(CSV_HEADER, row))
        key = (d["run"], int(d["image"]), d["scenario"], d["kind"], int(d["repeat"]))
        rec = records.get(key)
        if rec is None:
            rec = records[key] = EvalRecord(
                run=key[0], image=key[1], scenario=key[2], kind=key[3], repeat=key[4], values={},
                scene_seed=int(d["scene_seed"]), spec_seed=int(d["spec_seed"]),
                mask_seed=int(d["mask_seed"]))
        rec.values[(d["metric"], d["region"])] = float(d["value"])
    return Report(list(records.values()))


def report_to_json(report: Report) -> str:
    doc = {
        "schema_version": REPORT_VERSION,
        "meta": report.meta,
        "records": [
            {
                "run": r.run, "image": r.image, "scenario": r.scenario, "kind": r.kind,
                "repeat": r.repeat,
                "values": {f"{m}/{g}": r.values[(m, g)] for m, g in METRIC_KEYS},
                "scene_seed": r.scene_seed, "spec_seed": r.spec_seed, "mask_seed": r.mask_seed,
            }
            for r in report.records
        ],
        "summary": report.summary(),
    }
    return json.dumps(doc, indent=1) + "\n"


def report_from_json(text: str) -> Report:
    doc = json.loads(text)
    if doc.get("schema_version") != REPORT_VERSION:
        raise ParameterError("unsupported report schema_version")
    records = []
    for d in doc["records"]:
        values = {tuple(k.split("/", 1)): float(v) for k, v in d["values"].items()}
        records.append(EvalRecord(d["run"], d["image"], d["scenario"], d["kind"], d["repeat"],
                                  values, d["scene_seed"], d["spec_seed"], d["mask_seed"]))
    return Report(records, doc.get("meta", {}))


def emit_report(report: Report, fmt: str, path) -> Path:
    if not report.records:
        raise ParameterError("report has no records")
    if fmt == "csv":
        text = report_to_csv(report)
    elif fmt == "json":
        text = report_to_json(report)
    else:
        raise ParameterError(f"unknown report format {fmt!r}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def format_table(report: Report, metrics_shown=("ssim", "psnr", "featdist")) -> str:
    """Plain-text Ben / Imp / Diff table per run and scenario."""
    lines = []
    for run in report.runs():
        lines.append(f"[{run}]")
        lines.append(f"{'region':<11}{'input':<6}" + "".join(f"{m:>11}" for m in metrics_shown))
        for scenario in SCENARIOS:
            for kind in KINDS + ("Diff",):
                vals = []
                for m in metrics_shown:
                    if kind == "Diff":
                        vals.append(report.diff(run, scenario, m))
                    else:
                        vals.append(report.mean(run, scenario, kind, m))
                lines.append(f"{scenario if kind == 'Ben' else '':<11}{kind:<6}"
                             + "".join(f"{v:>11.4f}" for v in vals))
    return "\n".join(lines)
