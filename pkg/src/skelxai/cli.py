"""Command-line driver: synth, train, explain, perturb, rank, correlate, bench.

An experiment lives in one output directory::

    data/        manifest.json + one .xgs file per sequence   (synth)
    model/       model.json, weights.xgw, loss.csv            (train)
    explain/     <method>_<layer|scheme>[_cf].csv/.json       (explain)
    perturb/     curves_<method>.csv, pgi_pgu_<method>.csv    (perturb)
    rank/        ranking_<method>.csv                         (rank)
    correlate/   correlation.csv                              (correlate)
    bench/       runtime.csv, runtime.json                    (bench)

Every CSV starts with ``# key: value`` lines holding the seed, the config hash
and the weight hash. Wall-clock data goes to ``*.meta.json`` sidecars so CSV
files are reproducible byte for byte.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import gradcam, shapley
from .data import (
    DataFormatError,
    SequenceError,
    SyntheticConfig,
    file_digest,
    generate_synthetic_dataset,
    load_dataset,
    save_dataset,
    stack_inputs,
)
from .explanation import ExplanationMap, read_csv, to_json, write_csv, write_table
from .harness import (
    PerturbationPlan,
    correlation_report,
    perturbation_sweep,
    pgi_pgu,
    rank_keypoints,
    runtime_benchmark,
)
from .harness.perturbation import MODES
from .model import GcnModel, LayerError, ModelConfig, TrainConfig, TrainingDiverged, accuracy, train
from .model.network import BRANCHES, KINDS
from .model.weights import WeightFormatError, load_model, save_model

log = logging.getLogger("skelxai")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

DEFAULT_CONFIG = {
    "seed": 1234,
    "dataset": {"synthetic": asdict(SyntheticConfig())},
    "model": asdict(ModelConfig()),
    "train": {"lr": 0.01, "epochs": 30, "batch": 16},
    "explainer": {
        "method": "gradcam",
        "layer": "main.tcn",
        "scheme": "keypoint",
        "estimator": "permutation",
        "M": 64,
        "background_n": 16,
        "subsample": 8,
        "counterfactual": False,
        "samples": "val/4",
    },
    "harness": {
        "modes": list(MODES),
        "k_max": 3,
        "factor": 0.0035,
        "trials": 10,
        "target_layers": None,
        "metric": "accuracy",
    },
    "correlate": {"reference": "main.att", "layers": None},
    "bench": {"samples": 200, "layer": "main.tcn", "scheme": "stream", "M": 200, "background_n": 20, "subsample": 20},
}


class UsageError(Exception):
    pass


class MissingArtifact(Exception):
    def __init__(self, path, producer):
        super().__init__(f"{path} not found; run `skelxai {producer}` first")


# -- config ------------------------------------------------------------------

def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        user = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataFormatError(path, 0, "config file not found") from None
    except json.JSONDecodeError as err:
        raise DataFormatError(path, err.pos, f"malformed config: {err.msg}") from None
    if not isinstance(user, dict):
        raise DataFormatError(path, 0, "config must be a JSON object")
    cfg = _merge(DEFAULT_CONFIG, user)
    manifest = cfg["dataset"].get("manifest")
    if manifest is not None and not Path(manifest).exists():
        raise DataFormatError(manifest, 0, "manifest referenced by config does not exist")
    return cfg


def apply_flags(cfg: dict, args) -> dict:
    cfg = copy.deepcopy(cfg)
    if args.seed is not None:
        cfg["seed"] = args.seed
    ex, hs = cfg["explainer"], cfg["harness"]
    for flag, section, key in (("method", ex, "method"), ("layer", ex, "layer"), ("scheme", ex, "scheme"),
                               ("samples", ex, "samples"), ("k_max", hs, "k_max"), ("factor", hs, "factor")):
        val = getattr(args, flag, None)
        if val is not None:
            section[key] = val
    if getattr(args, "counterfactual", False):
        ex["counterfactual"] = True
    if getattr(args, "mode", None):
        hs["modes"] = [args.mode]
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


# -- experiment directory ----------------------------------------------------

class Experiment:
    def __init__(self, out: Path, cfg: dict, float32: bool = False, layer_flag: bool = False):
        self.out = Path(out)
        self.cfg = cfg
        self.seed = int(cfg["seed"])
        self.float32 = float32
        self.layer_flag = layer_flag

    @property
    def manifest_path(self) -> Path:
        m = self.cfg["dataset"].get("manifest")
        return Path(m) if m else self.out / "data" / "manifest.json"

    @property
    def model_dir(self) -> Path:
        return self.out / "model"

    def weights_hash(self) -> str:
        w = self.model_dir / "weights.xgw"
        return file_digest(w) if w.exists() else ""

    def preamble(self, **extra) -> dict:
        pre = {"seed": self.seed, "config_sha256": config_hash(self.cfg), "weights_sha1": self.weights_hash()}
        pre.update(extra)
        return pre

    def dataset(self):
        if not self.manifest_path.exists():
            raise MissingArtifact(self.manifest_path, "synth")
        return load_dataset(self.manifest_path)

    def split_arrays(self, name):
        manifest, seqs = self.dataset()
        idx = manifest.split(name)
        chosen = [seqs[i] for i in idx]
        x, y = stack_inputs(chosen, manifest.graph)
        return manifest, x, y, [s.subject_id for s in chosen]

    def model(self) -> GcnModel:
        if not (self.model_dir / "weights.xgw").exists():
            raise MissingArtifact(self.model_dir / "weights.xgw", "train")
        return load_model(self.model_dir)

    def write_meta(self, artifact: Path, started: float, **extra):
        meta = {"artifact": artifact.name, "written_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
                "elapsed_seconds": time.perf_counter() - started, **extra}
        artifact.with_suffix(".meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")

    def record(self, command: str, artifacts: list):
        """Append to the deterministic experiment record ``experiment.json``."""
        path = self.out / "experiment.json"
        rec = json.loads(path.read_text()) if path.exists() else {"commands": {}}
        rec["config"] = self.cfg
        rec["seed"] = self.seed
        rec["config_sha256"] = config_hash(self.cfg)
        rec["weights_sha1"] = self.weights_hash()
        rec["perturbation_operator"] = "multiplicative edge-importance retention"
        rec["commands"][command] = sorted(str(Path(a).relative_to(self.out)) for a in artifacts)
        path.write_text(json.dumps(rec, indent=1, sort_keys=True) + "\n")


def select_samples(spec: str, ids: list, y: np.ndarray) -> np.ndarray:
    """Indices into a split: ``split``, ``split:a:b`` (slice) or ``split/n`` (first n per class)."""
    rest = spec.split(":", 1)[1] if ":" in spec else ""
    if "/" in spec:
        n = int(spec.split("/", 1)[1])
        return np.array(sorted(i for c in np.unique(y) for i in np.flatnonzero(y == c)[:n]), dtype=int)
    if rest:
        a, _, b = rest.partition(":")
        return np.arange(len(ids))[slice(int(a) if a else None, int(b) if b else None)]
    return np.arange(len(ids))


def _split_of(spec: str) -> str:
    name = spec.split(":", 1)[0].split("/", 1)[0]
    if name not in ("train", "val"):
        raise UsageError(f"sample selector must start with train or val, got {spec!r}")
    return name


# -- commands ----------------------------------------------------------------

def cmd_synth(exp: Experiment) -> int:
    if "synthetic" not in exp.cfg["dataset"]:
        raise UsageError("config dataset section has no synthetic parameters")
    sc = SyntheticConfig(**exp.cfg["dataset"]["synthetic"])
    manifest, seqs = generate_synthetic_dataset(sc, exp.seed)
    path = save_dataset(manifest, seqs, exp.out / "data")
    exp.record("synth", [path])
    print(path)
    return EXIT_OK


def cmd_train(exp: Experiment) -> int:
    started = time.perf_counter()
    manifest, xt, yt, _ = exp.split_arrays("train")
    _, xv, yv, _ = exp.split_arrays("val")
    mcfg = ModelConfig.from_dict(exp.cfg["model"])
    mcfg.in_channels = xt.shape[2]
    mcfg.num_classes = int(max(e.label for e in manifest.entries)) + 1
    init = GcnModel.initialize(mcfg, manifest.graph, exp.seed)
    t = exp.cfg["train"]
    res = train(init, xt, yt, TrainConfig(lr=t["lr"], epochs=t["epochs"], batch=t["batch"], seed=exp.seed))
    _, wpath = save_model(res.model, exp.model_dir)
    val_acc = accuracy(res.model, xv, yv) if len(yv) else float("nan")
    loss_csv = exp.model_dir / "loss.csv"
    write_table(loss_csv, ["epoch", "loss"], [[str(i), repr(float(l))] for i, l in enumerate(res.losses)],
                exp.preamble(train_accuracy=repr(res.train_accuracy), val_accuracy=repr(val_acc)))
    exp.write_meta(loss_csv, started)
    exp.record("train", [wpath, loss_csv])
    print(f"train accuracy {res.train_accuracy:.4f}  val accuracy {val_acc:.4f}  weights {wpath}")
    return EXIT_OK


def _explain_name(ex: dict) -> str:
    tag = ex["layer"] if ex["method"] == "gradcam" else ex["scheme"]
    return f"{ex['method']}_{tag.replace('.', '-')}" + ("_cf" if ex["counterfactual"] else "")


def explain_maps(exp: Experiment, model: GcnModel, ex: dict) -> list[ExplanationMap]:
    split = _split_of(ex["samples"])
    _, x, y, ids = exp.split_arrays(split)
    pick = select_samples(ex["samples"], ids, y)
    if len(pick) == 0:
        raise UsageError(f"sample selector {ex['samples']!r} selects nothing")
    x, ids = x[pick], [ids[i] for i in pick]
    classes = model.predict(x)
    if ex["method"] == "gradcam":
        try:
            model.resolve_layer(ex["layer"])
        except LayerError as err:
            raise UsageError(str(err)) from None
        return gradcam.explain_batch(model, x, classes, ex["layer"], ex["counterfactual"], sample_ids=ids)
    if ex["method"] != "shap":
        raise UsageError(f"unknown method {ex['method']!r}")
    if ex["scheme"] not in shapley.GRANULARITIES:
        raise UsageError(f"unknown scheme {ex['scheme']!r}")
    _, xt, _, _ = exp.split_arrays("train")
    bg = shapley.BackgroundSet.draw(xt, ex["background_n"], ex["subsample"], exp.seed)
    scheme = shapley.make_scheme(ex["scheme"], x.shape[1:])
    maps = []
    for xi, c, sid in zip(x, classes, ids):
        res = shapley.explain(model, xi, int(c), scheme, bg, ex["estimator"], ex["M"], exp.seed)
        if scheme.granularity == "stream":
            maps.append(shapley.shap_to_player_map(res, sid))
        else:
            maps.append(shapley.shap_to_keypoint_scores(res, scheme, sid))
    return maps


def cmd_explain(exp: Experiment) -> int:
    started = time.perf_counter()
    model = exp.model()
    ex = exp.cfg["explainer"]
    maps = explain_maps(exp, model, ex)
    base = exp.out / "explain" / _explain_name(ex)
    base.parent.mkdir(parents=True, exist_ok=True)
    csv_path = base.with_suffix(".csv")
    write_csv(csv_path, maps, exp.preamble(method=ex["method"]))
    json_path = base.with_suffix(".json")
    json_path.write_text(to_json(maps, {"preamble": exp.preamble()}) + "\n")
    exp.write_meta(csv_path, started, samples=len(maps))
    exp.record(f"explain:{base.name}", [csv_path, json_path])
    print(csv_path)
    return EXIT_OK


def _load_explanations(exp: Experiment) -> tuple[str, list[ExplanationMap]]:
    ex = exp.cfg["explainer"]
    path = exp.out / "explain" / (_explain_name(ex) + ".csv")
    if not path.exists():
        raise MissingArtifact(path, "explain")
    maps = read_csv(path)
    if not maps:
        raise UsageError(f"{path} holds no keypoint-level scores (stream scheme cannot drive perturbation)")
    return path.stem, maps


def class_rankings(maps: list[ExplanationMap]) -> dict[int, list[int]]:
    by_class: dict = {}
    for m in maps:
        by_class.setdefault(m.class_index, []).append(m)
    return {c: rank_keypoints(ms).order() for c, ms in sorted(by_class.items())}


def cmd_perturb(exp: Experiment) -> int:
    started = time.perf_counter()
    name, maps = _load_explanations(exp)
    model = exp.model()
    _, x, y, _ = exp.split_arrays("val")
    hs = exp.cfg["harness"]
    ranks = class_rankings(maps)
    header = ["class", "mode", "metric", "k", "value"]
    rows, gaps = [], []
    for mode in hs["modes"]:
        per_class = []
        for c, order in ranks.items():
            sel = y == c
            if not sel.any():
                continue
            plan = PerturbationPlan(order, mode, hs["k_max"], hs["factor"], hs["target_layers"], hs["trials"], exp.seed)
            curve = perturbation_sweep(model, x[sel], y[sel], plan, hs["metric"], {"explanations": name})
            per_class.append([v for _, v in curve.points])
            rows += [[str(c), mode, hs["metric"], str(k), repr(float(v))] for k, v in curve.points]
        if per_class:
            rows += [["mean", mode, hs["metric"], str(k), repr(float(v))] for k, v in enumerate(np.mean(per_class, axis=0))]
    out_dir = exp.out / "perturb"
    out_dir.mkdir(parents=True, exist_ok=True)
    pre = exp.preamble(explanations=name, factor=hs["factor"], operator="multiplicative edge-importance retention")
    curves = out_dir / f"curves_{name}.csv"
    write_table(curves, header, rows, pre)
    artifacts = [curves]
    if hs["k_max"] >= 1:
        for c, order in ranks.items():
            for i in np.flatnonzero(y == c):
                g = pgi_pgu(model, x[i], order, hs["k_max"], hs["factor"], hs["target_layers"])
                gaps.append([str(c), str(i), str(hs["k_max"]), repr(g[0]), repr(g[1])])
        gap_path = out_dir / f"pgi_pgu_{name}.csv"
        write_table(gap_path, ["class", "sample", "k", "pgi", "pgu"], gaps, pre)
        artifacts.append(gap_path)
    exp.write_meta(curves, started)
    exp.record(f"perturb:{name}", artifacts)
    print(curves)
    return EXIT_OK


def cmd_rank(exp: Experiment) -> int:
    started = time.perf_counter()
    name, maps = _load_explanations(exp)
    header = ["class", "rank", "keypoint", "median", "q1", "q3", "n_outliers"]
    rows = []
    groups = [("all", maps)] + [(str(c), [m for m in maps if m.class_index == c])
                                for c in sorted({m.class_index for m in maps})]
    for label, ms in groups:
        _, body = rank_keypoints(ms).to_rows()
        rows += [[label] + r for r in body]
    out = exp.out / "rank" / f"ranking_{name}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_table(out, header, rows, exp.preamble(explanations=name))
    exp.write_meta(out, started)
    exp.record(f"rank:{name}", [out])
    print(out)
    return EXIT_OK


def default_correlation_layers(reference: str) -> list[str]:
    layers = [f"{b}.{k}" for b in BRANCHES for k in KINDS] + [f"branches.{k}" for k in KINDS]
    return [reference] + [l for l in layers if l != reference]


def cmd_correlate(exp: Experiment) -> int:
    started = time.perf_counter()
    model = exp.model()
    _, x, _, _ = exp.split_arrays("val")
    cc = exp.cfg["correlate"]
    ref = cc["reference"]
    layers = cc["layers"] or default_correlation_layers(ref)
    if exp.layer_flag:
        layers = [exp.cfg["explainer"]["layer"]]
    try:
        report = correlation_report(model, x, model.predict(x), layers, ref)
    except (LayerError, ValueError) as err:
        raise UsageError(str(err)) from None
    header, rows = report.to_rows()
    out = exp.out / "correlate" / "correlation.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_table(out, header, rows, exp.preamble(normalized=int(report.normalized)))
    exp.write_meta(out, started)
    exp.record("correlate", [out])
    print(out)
    return EXIT_OK


def cmd_bench(exp: Experiment) -> int:
    started = time.perf_counter()
    model = exp.model()
    if exp.float32:
        model = model.astype(np.float32)
    manifest, seqs = exp.dataset()
    bc = exp.cfg["bench"]
    x_all, _ = stack_inputs(seqs, manifest.graph)
    idx = np.resize(np.arange(len(x_all)), bc["samples"])
    x = x_all[idx].astype(model.dtype)
    _, xt, _, _ = exp.split_arrays("train")
    bg = shapley.BackgroundSet.draw(xt.astype(model.dtype), bc["background_n"], bc["subsample"], exp.seed)
    configs = [
        {"method": "gradcam", "layer": bc["layer"]},
        {"method": "shap", "scheme": bc["scheme"], "estimator": "permutation", "M": bc["M"],
         "background": bg, "seed": exp.seed},
    ]
    report = runtime_benchmark(model, x, configs)
    out = exp.out / "bench" / "runtime.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    header = ["explainer", "samples", "config"]
    _, rows = report.to_rows()
    write_table(out, header, [[r[0], r[1], r[3]] for r in rows],
                exp.preamble(dtype=str(np.dtype(model.dtype))))
    timings = {e.explainer: {"seconds": e.seconds, "samples": e.samples, "config": e.config} for e in report.entries}
    (out.parent / "runtime.json").write_text(json.dumps(timings, indent=1, sort_keys=True, default=str) + "\n")
    exp.write_meta(out, started, timings={k: v["seconds"] for k, v in timings.items()})
    exp.record("bench", [out])
    for e in report.entries:
        print(f"{e.explainer:8s} {e.samples} samples  {e.seconds:.3f} s")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "explain": cmd_explain,
    "perturb": cmd_perturb,
    "rank": cmd_rank,
    "correlate": cmd_correlate,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skelxai", description="Skeleton GCN explanation workbench")
    p.add_argument("command", choices=list(COMMANDS))
    p.add_argument("--config", help="JSON config file (defaults are built in)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="experiment", help="experiment directory")
    p.add_argument("--method", choices=["gradcam", "shap"])
    p.add_argument("--layer", help="capture layer id, e.g. main.tcn or J.0.att")
    p.add_argument("--scheme", choices=list(shapley.GRANULARITIES))
    p.add_argument("--counterfactual", action="store_true")
    p.add_argument("--k-max", dest="k_max", type=int)
    p.add_argument("--mode", choices=list(MODES))
    p.add_argument("--factor", type=float)
    p.add_argument("--samples", help="sample selector: val, val:0:10 or val/4 (first 4 per class)")
    p.add_argument("--float32", action="store_true", help="benchmark in 32-bit precision")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = apply_flags(load_config(args.config), args)
        exp = Experiment(Path(args.out), cfg, args.float32, args.layer is not None)
        return COMMANDS[args.command](exp)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (MissingArtifact, DataFormatError, WeightFormatError, SequenceError, FileNotFoundError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, FloatingPointError) as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
