"""Command-line interface.

Subcommands: ``train``, ``eval``, ``embed``, ``interpolate``,
``gamma-sweep`` and ``gen-data``. Outputs go to ``--output-dir``, else the
``GPHLVM_OUTPUT_DIR`` environment variable, else the working directory.

Exit codes: 0 success, 2 configuration or validation error, 3 numerical
failure, 4 file I/O error. Errors print one line ``ErrorClass: message`` to
stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from . import __version__
from .errors import CapabilityError, CompatibilityError, DataIOError, GphlvmError, ValidationError
from .evalmotion import (
    DEFAULT_DT,
    DEFAULT_STEPS,
    class_centroids,
    error_matrix,
    interpolate,
    nearest_centroid,
    stress_report,
)
from .graphtax import BUILTIN_TAXONOMIES, builtin_taxonomy, load_dataset, load_graph, synthetic_tree
from .gplvm import TrainConfig, encode_new, load_model, train
from .gplvm.model import _spatial
from .manifold import lift, to_poincare

OUTPUT_ENV = "GPHLVM_OUTPUT_DIR"

# Heatmap colormap: linear interpolation between these RGB stops over [0, max error].
HEATMAP_STOPS = ((255, 255, 255), (253, 174, 97), (215, 48, 39), (103, 0, 13))
# Class colors cycle through this palette in graph node order.
PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf", "#393b79", "#637939", "#8c6d31", "#843c39", "#7b4173", "#3182bd",
)


# -- run configuration -------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """A training config document: every :class:`TrainConfig` field plus paths.

    ``graph`` is a graph file or a builtin taxonomy name; relative paths are
    resolved against the config file's directory.
    """

    train: TrainConfig
    graph: str
    dataset: Path
    model: Path | None
    output_dir: Path | None


_PATH_FIELDS = ("graph", "dataset", "model", "output_dir")


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise DataIOError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValidationError("config must be a JSON object")
    allowed = set(_PATH_FIELDS) | {f.name for f in fields(TrainConfig)}
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ValidationError(f"unknown config fields: {unknown}")
    for req in ("graph", "dataset"):
        if req not in doc:
            raise ValidationError(f"config lacks the required field {req!r}")
    base = path.parent
    tc = {k: v for k, v in doc.items() if k not in _PATH_FIELDS}
    graph = str(doc["graph"])
    if graph in BUILTIN_TAXONOMIES:
        tc.setdefault("taxonomy", graph)
    else:
        graph = str(base / graph)
    try:
        train_config = TrainConfig.from_dict(tc)
    except TypeError as exc:
        raise ValidationError(f"bad config value: {exc}") from exc
    rel = lambda k: None if doc.get(k) is None else base / doc[k]  # noqa: E731
    return RunConfig(train_config, graph, base / doc["dataset"], rel("model"), rel("output_dir"))


def _graph(spec: str):
    if spec in BUILTIN_TAXONOMIES:
        return builtin_taxonomy(spec)
    return load_graph(Path(spec))


def _outdir(arg, fallback=None) -> Path:
    out = arg or fallback or os.environ.get(OUTPUT_ENV) or "."
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataIOError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


def _csv(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _num(v) -> str:
    return repr(float(v))


# -- train ------------------------------------------------------------------------------


def history_csv(history: dict) -> str:
    main = "elbo" if "elbo" in history else "l_map"
    rows = [["iteration", main, "stress", "objective"]]
    for k in range(len(history["iteration"])):
        rows.append([history["iteration"][k], _num(history[main][k]), _num(history["stress"][k]),
                     _num(history["objective"][k])])
    return _csv(rows)


def cmd_train(args) -> int:
    rc = load_run_config(args.config)
    graph = _graph(rc.graph)
    dataset = load_dataset(rc.dataset, graph)
    out = _outdir(args.output_dir, rc.output_dir)
    model = train(dataset, graph, rc.train)
    model_path = Path(args.model) if args.model else (rc.model or out / "model.json")
    model.save(model_path)
    _write(out / "history.csv", history_csv(model.history))
    print(f"model written to {model_path}")
    return 0


# -- eval -------------------------------------------------------------------------------


def _load_eval_inputs(args):
    model = load_model(args.model)
    graph = _graph(args.graph) if args.graph else model.graph
    dataset = load_dataset(Path(args.dataset), graph) if args.dataset else None
    if dataset is not None:
        if dataset.n != model.n:
            raise CompatibilityError(f"dataset has {dataset.n} rows, model has {model.n} latents")
        if dataset.d != model.observations.shape[1]:
            raise CompatibilityError(f"dataset has {dataset.d} features, model expects {model.observations.shape[1]}")
    if set(graph.index) != set(model.graph.index):
        raise CompatibilityError("graph node ids differ from the graph the model was trained on")
    return model, dataset, graph


def stress_csv(report, classes) -> str:
    head = f"# mean: {_num(report.mean)}\n# std: {_num(report.std)}\n# pairs: {report.n_pairs}\n"
    rows = [["i", "j", "class_i", "class_j", "squared_error"]]
    rows += [[i, j, classes[i], classes[j], _num(e)] for i, j, e in report.per_pair]
    return head + _csv(rows)


def parse_stress_csv(text: str) -> dict:
    """Inverse of the ``stress.csv`` writer: summary values and per-pair rows."""
    meta, body = {}, []
    for line in text.splitlines():
        if line.startswith("#"):
            k, v = line[1:].split(":", 1)
            meta[k.strip()] = float(v)
        else:
            body.append(line)
    rows = list(csv.reader(body))[1:]
    meta["per_pair"] = [(int(r[0]), int(r[1]), float(r[4])) for r in rows]
    return meta


def error_matrix_csv(E) -> str:
    n = E.shape[0]
    return _csv([[f"p{i}" for i in range(n)]] + [[_num(v) for v in row] for row in E])


def _heat_color(v: float, vmax: float) -> str:
    u = 0.0 if vmax <= 0 else min(max(v / vmax, 0.0), 1.0)
    seg = u * (len(HEATMAP_STOPS) - 1)
    k = min(int(seg), len(HEATMAP_STOPS) - 2)
    f = seg - k
    a, b = HEATMAP_STOPS[k], HEATMAP_STOPS[k + 1]
    return "#" + "".join(f"{round(a[c] + f * (b[c] - a[c])):02x}" for c in range(3))


def heatmap_svg(E, title: str = "latent vs graph distance error") -> str:
    n = E.shape[0]
    cell = max(4, min(24, 480 // max(n, 1)))
    size = n * cell
    vmax = float(E.max()) if E.size else 0.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size + 80}" height="{size + 40}" '
        f'viewBox="0 0 {size + 80} {size + 40}">',
        f"<title>{escape(title)}</title>",
        '<g transform="translate(10,30)">',
    ]
    for i in range(n):
        for j in range(n):
            parts.append(f'<rect x="{j * cell}" y="{i * cell}" width="{cell}" height="{cell}" '
                         f'fill="{_heat_color(float(E[i, j]), vmax)}"/>')
    parts.append("</g>")
    # color bar
    for k in range(20):
        v = vmax * (19 - k) / 19
        parts.append(f'<rect x="{size + 30}" y="{30 + k * size / 20:.3f}" width="12" '
                     f'height="{size / 20:.3f}" fill="{_heat_color(v, vmax)}"/>')
    parts.append(f'<text x="{size + 46}" y="38" font-size="10">{vmax:.3g}</text>')
    parts.append(f'<text x="{size + 46}" y="{size + 30}" font-size="10">0</text>')
    parts.append(f'<text x="10" y="18" font-size="12">{escape(title)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_eval(args) -> int:
    model, dataset, graph = _load_eval_inputs(args)
    out = _outdir(args.output_dir)
    report = stress_report(model, dataset, graph)
    E = error_matrix(model, dataset, graph)
    classes = list(dataset.classes) if dataset is not None else list(model.classes)
    _write(out / "stress.csv", stress_csv(report, classes))
    _write(out / "error_matrix.csv", error_matrix_csv(E))
    _write(out / "error_matrix.svg", heatmap_svg(E))
    print(f"stress mean {report.mean:.6g} std {report.std:.6g} over {report.n_pairs} pairs")
    return 0


# -- embed ------------------------------------------------------------------------------


def cmd_embed(args) -> int:
    model = load_model(args.model)
    if model.bc is None:
        raise CapabilityError("model has no back constraints; embed needs a bc_stress model")
    data = load_dataset(Path(args.data), model.graph)
    x = np.atleast_2d(encode_new(model, data.observations, list(data.classes)))
    centroids = class_centroids(model)
    near = nearest_centroid(model, centroids, x)
    z = _spatial(x, model.geometry)
    rows = [[f"z{q}" for q in range(z.shape[1])] + ["class", "nearest_class"]]
    rows += [[_num(v) for v in zr] + [c, nc] for zr, c, nc in zip(z, data.classes, near)]
    out = _outdir(args.output_dir)
    target = Path(args.out) if args.out else out / "embedding.csv"
    _write(target, _csv(rows))
    print(f"{len(rows) - 1} embeddings written to {target}")
    return 0


# -- interpolate -----------------------------------------------------------------------


def _endpoint(model, text: str):
    text = text.strip()
    if "," not in text:
        try:
            return int(text)
        except ValueError:
            raise ValidationError(f"endpoint {text!r} is neither an index nor comma-separated coordinates") from None
    try:
        z = np.asarray([float(v) for v in text.split(",")])
    except ValueError:
        raise ValidationError(f"bad coordinates {text!r}") from None
    if z.shape[0] != model.latent_dim:
        raise ValidationError(f"endpoint needs {model.latent_dim} spatial coordinates, got {z.shape[0]}")
    return np.asarray(lift(z)) if model.geometry == "lorentz" else z


def trajectory_csv(model, traj) -> str:
    z = _spatial(traj.latent_path, model.geometry)
    rows = [["t"] + [f"z{q}" for q in range(z.shape[1])] + [f"y{d}" for d in range(traj.decoded.shape[1])]
            + ["class"]]
    for k in range(traj.steps):
        rows.append([_num(k * traj.dt)] + [_num(v) for v in z[k]] + [_num(v) for v in traj.decoded[k]]
                    + [traj.class_path[k]])
    return _csv(rows)


def disk_svg(model, trajectories, size: int = 480) -> str:
    """Training latents and trajectories on the Poincare disk (hyperbolic) or plane (Euclidean).

    Only the first two spatial coordinates are drawn.
    """
    r = size / 2 - 10
    if model.geometry == "lorentz":
        pts = np.asarray(to_poincare(model.latents))[:, :2]
        paths = [np.asarray(to_poincare(t.latent_path))[:, :2] for t in trajectories]
        scale = r
    else:
        pts = model.latents[:, :2]
        paths = [t.latent_path[:, :2] for t in trajectories]
        allp = np.vstack([pts] + paths)
        scale = r / max(float(np.abs(allp).max()), 1e-12)
    c = size / 2

    def xy(p):
        return f"{c + scale * p[0]:.4f}", f"{c - scale * p[1]:.4f}"

    color = {nid: PALETTE[k % len(PALETTE)] for k, nid in enumerate(model.graph.node_ids)}
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}">']
    if model.geometry == "lorentz":
        parts.append(f'<circle cx="{c}" cy="{c}" r="{r}" fill="none" stroke="#000000"/>')
    for p, cl in zip(pts, model.classes):
        x, y = xy(p)
        parts.append(f'<circle cx="{x}" cy="{y}" r="3" fill="{color[cl]}"><title>{escape(cl)}</title></circle>')
    for path in paths:
        d = " ".join(("M" if k == 0 else "L") + " ".join(xy(p)) for k, p in enumerate(path))
        parts.append(f'<path d="{d}" fill="none" stroke="#000000" stroke-width="1.5"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_interpolate(args) -> int:
    model = load_model(args.model)
    traj = interpolate(model, _endpoint(model, args.start), _endpoint(model, args.end), args.steps, args.dt)
    out = _outdir(args.output_dir)
    _write(out / "trajectory.csv", trajectory_csv(model, traj))
    _write(out / "trajectory.svg", disk_svg(model, [traj]))
    print(f"{traj.steps}-step trajectory written to {out / 'trajectory.csv'}")
    return 0


# -- gamma sweep ------------------------------------------------------------------------


def knee(gammas, l_map, stress) -> float:
    """Grid value farthest from the chord joining the sweep's end points
    in normalized (stress, l_MAP) coordinates."""
    s = np.asarray(stress, dtype=float)
    m = np.asarray(l_map, dtype=float)
    s = (s - s.min()) / max(np.ptp(s), 1e-300)
    m = (m - m.min()) / max(np.ptp(m), 1e-300)
    p0, p1 = np.array([s[0], m[0]]), np.array([s[-1], m[-1]])
    d = p1 - p0
    nrm = max(float(np.hypot(*d)), 1e-300)
    dist = np.abs(d[0] * (m - p0[1]) - d[1] * (s - p0[0])) / nrm
    return float(np.asarray(gammas)[int(np.argmax(dist))])


def gamma_sweep(dataset, graph, config: TrainConfig, gammas, seeds) -> list:
    """Final (l_MAP, stress) per grid value, averaged over ``seeds``."""
    if len(gammas) < 2:
        raise ValidationError("gamma sweep needs at least 2 grid values")
    if any(g < 0 for g in gammas):
        raise ValidationError("gamma values must be >= 0")
    reg = "stress" if config.regularizer == "none" else config.regularizer
    rows = []
    for g in gammas:
        lm, st = [], []
        for s in seeds:
            cfg = config.replace(regularizer=reg if g > 0 else "none", gamma=float(g), seed=int(s), mc_seed=None)
            h = train(dataset, graph, cfg).history
            key = "elbo" if "elbo" in h else "l_map"
            lm.append(h[key][-1])
            st.append(h["stress"][-1])
        rows.append({"gamma": float(g), "l_map": float(np.mean(lm)), "stress": float(np.mean(st)),
                     "l_map_std": float(np.std(lm)), "stress_std": float(np.std(st)),
                     "per_seed_l_map": lm, "per_seed_stress": st})
    return rows


def cmd_gamma_sweep(args) -> int:
    rc = load_run_config(args.config)
    graph = _graph(rc.graph)
    dataset = load_dataset(rc.dataset, graph)
    gammas = [float(v) for v in args.gammas.split(",")]
    base = rc.train.seed
    rows = gamma_sweep(dataset, graph, rc.train, gammas, [base + k for k in range(args.seeds)])
    k = knee(gammas, [r["l_map"] for r in rows], [r["stress"] for r in rows])
    table = [["gamma", "l_map", "stress", "l_map_std", "stress_std"]]
    table += [[_num(r["gamma"]), _num(r["l_map"]), _num(r["stress"]), _num(r["l_map_std"]),
               _num(r["stress_std"])] for r in rows]
    out = _outdir(args.output_dir, rc.output_dir)
    _write(out / "gamma_sweep.csv", f"# knee: {_num(k)}\n" + _csv(table))
    print(f"suggested gamma (knee): {k:g}")
    return 0


# -- gen-data ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    graph, data = synthetic_tree(args.depth, args.branching, args.points, args.dim, args.noise,
                                 np.random.default_rng(args.seed))
    out = _outdir(args.output_dir)
    graph.save(out / "graph.json")
    data.save(out / "dataset.csv")
    print(f"{len(graph)} nodes and {data.n} observations written to {out}")
    return 0


# -- entry point ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gphlvm", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"gphlvm {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def out_flag(sp):
        sp.add_argument("--output-dir", help=f"directory for outputs (default: ${OUTPUT_ENV} or the working directory)")

    sp = sub.add_parser("train", help="train a model from a JSON config",
                        description="Train a model. The config holds every training field plus "
                                    "'graph' (file or builtin name), 'dataset', and optional 'model' "
                                    "and 'output_dir'. Writes the model and history.csv.")
    sp.add_argument("config", help="JSON run config")
    sp.add_argument("--model", help="model output path (default: config 'model' or OUTPUT/model.json)")
    out_flag(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="stress report, error matrix and heatmap",
                        description="Write stress.csv, error_matrix.csv and error_matrix.svg.")
    sp.add_argument("model", help="trained model file")
    sp.add_argument("--dataset", help="dataset file to check against the model (default: its training data)")
    sp.add_argument("--graph", help="graph file or builtin name (default: the model's graph)")
    out_flag(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("embed", help="embed new observations with a back-constrained model",
                        description="Write one row per new observation: spatial latent coordinates, "
                                    "given class, nearest class centroid.")
    sp.add_argument("model", help="back-constrained model file")
    sp.add_argument("data", help="dataset file with the new observations")
    sp.add_argument("--out", help="output file (default: OUTPUT/embedding.csv)")
    out_flag(sp)
    sp.set_defaults(func=cmd_embed)

    sp = sub.add_parser("interpolate", help="decode a geodesic between two latent points",
                        description="Write trajectory.csv and trajectory.svg. Endpoints are training "
                                    "indices or comma-separated spatial coordinates.")
    sp.add_argument("model", help="trained model file")
    sp.add_argument("--from", dest="start", required=True, help="start: training index or z1,z2,...")
    sp.add_argument("--to", dest="end", required=True, help="end: training index or z1,z2,... (write --to=-1,2 when the first value is negative)")
    sp.add_argument("--steps", type=int, default=DEFAULT_STEPS, help=f"number of points T (default {DEFAULT_STEPS})")
    sp.add_argument("--dt", type=float, default=DEFAULT_DT, help=f"timestep in seconds (default {DEFAULT_DT})")
    out_flag(sp)
    sp.set_defaults(func=cmd_interpolate)

    sp = sub.add_parser("gamma-sweep", help="final l_MAP and stress over a grid of gamma values",
                        description="Train once per (gamma, seed) and write gamma_sweep.csv with "
                                    "seed-averaged final values and the suggested knee.")
    sp.add_argument("config", help="JSON run config")
    sp.add_argument("--gammas", default="0,10,100,1000,10000", help="comma-separated grid (default 0,10,100,1000,10000)")
    sp.add_argument("--seeds", type=int, default=3, help="seeds per grid value, counted up from the config seed (default 3)")
    out_flag(sp)
    sp.set_defaults(func=cmd_gamma_sweep)

    sp = sub.add_parser("gen-data", help="write a synthetic tree graph and dataset",
                        description="Write graph.json and dataset.csv for a balanced tree with noisy "
                                    "per-node observations.")
    sp.add_argument("--depth", type=int, default=3, help="tree depth (default 3)")
    sp.add_argument("--branching", type=int, default=2, help="children per node (default 2)")
    sp.add_argument("--points", type=int, default=2, help="observations per node (default 2)")
    sp.add_argument("--dim", type=int, default=8, help="observation dimension D (default 8)")
    sp.add_argument("--noise", type=float, default=0.1, help="observation noise std (default 0.1)")
    sp.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    out_flag(sp)
    sp.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except GphlvmError as exc:
        msg = " ".join(str(exc).split())
        print(f"{type(exc).__name__}: {msg}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
