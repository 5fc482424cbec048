"""``amrg`` command line.

Exit codes: 0 success, 1 usage or I/O error, 2 validation failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from amrg import clinical, ingest, nlgmetrics, preproc
from amrg.report import RunReport

EXIT_OK, EXIT_IO, EXIT_INVALID = 0, 1, 2


class ValidationFailure(Exception):
    """Input was readable but failed validation (exit code 2)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_IO, f"{self.prog}: error: {message}\n")


def read_jsonl(path: str | Path, required: tuple[str, ...] = ()) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationFailure(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise ValidationFailure(f"{path}:{lineno}: expected a JSON object")
            missing = [k for k in required if k not in obj]
            if missing:
                raise ValidationFailure(f"{path}:{lineno}: missing field(s) {missing}")
            rows.append(obj)
    return rows


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _jsonl(rows) -> str:
    return "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows)


# --- scoring and labels ----------------------------------------------------------

def _gold(row: dict, field: str, extractor) -> str:
    value = row.get(field)
    if value is None:
        return extractor(row["reference"])
    return " ".join(str(value).lower().split())


def label_rows(rows: list[dict]) -> list[dict]:
    out = []
    for row in rows:
        out.append({
            "case_id": row.get("case_id"),
            "birads_pred": clinical.extract_birads(row["generated"]),
            "birads_gold": _gold(row, "birads", clinical.extract_birads),
            "density_pred": clinical.extract_density(row["generated"]),
            "density_gold": _gold(row, "density", clinical.extract_density),
        })
    return out


def label_summary(labels: list[dict]) -> dict:
    return {
        "n": len(labels),
        "birads_acc": clinical.label_accuracy([r["birads_pred"] for r in labels],
                                              [r["birads_gold"] for r in labels]),
        "density_acc": clinical.label_accuracy([r["density_pred"] for r in labels],
                                               [r["density_gold"] for r in labels]),
    }


def score_rows(rows: list[dict]) -> nlgmetrics.MetricBundle:
    """Seven text metrics plus the two clinical accuracies for generated/reference rows."""
    bundle = nlgmetrics.score_corpus([(r["generated"], r["reference"]) for r in rows])
    summary = label_summary(label_rows(rows))
    bundle.birads_acc = summary["birads_acc"]
    bundle.density_acc = summary["density_acc"]
    return bundle


def cmd_score(pairs_path, out_path=None, fmt="json", markdown_path=None, run_name="run") -> int:
    rows = read_jsonl(pairs_path, required=("generated", "reference"))
    if not rows:
        raise ValidationFailure(f"{pairs_path}: no pairs")
    try:
        bundle = score_rows(rows)
    except ValueError as exc:
        raise ValidationFailure(str(exc)) from exc
    report = RunReport({run_name: bundle.to_json()})
    if fmt == "json":
        text = json.dumps(bundle.to_json(), indent=2) + "\n"
    else:
        text = report.render(fmt)
    _emit(text, out_path)
    if markdown_path:
        Path(markdown_path).write_text(report.to_markdown(), encoding="utf-8")
    return EXIT_OK


def cmd_extract_labels(pairs_path, out_path=None) -> int:
    rows = read_jsonl(pairs_path, required=("generated", "reference"))
    labels = label_rows(rows)
    _emit(_jsonl([*labels, {"summary": label_summary(labels)}]), out_path)
    return EXIT_OK


def term_diff_rows(rows: list[dict], vocab) -> tuple[list[dict], dict]:
    out = []
    totals = {"matched": 0, "hallucinated": 0, "missed": 0, "conflicting": 0}
    for row in rows:
        diff = clinical.term_diff(row["generated"], row["reference"], vocab).to_json()
        for k in totals:
            totals[k] += diff["counts"][k]
        out.append({"case_id": row.get("case_id"), **diff})
    return out, {"n": len(out), **totals}


def cmd_term_diff(pairs_path, vocab_path=None, out_path=None) -> int:
    rows = read_jsonl(pairs_path, required=("generated", "reference"))
    vocab = clinical.load_vocab(vocab_path)
    diffs, totals = term_diff_rows(rows, vocab)
    _emit(_jsonl([*diffs, {"summary": totals}]), out_path)
    return EXIT_OK


def cmd_report(bundles_path, out_path=None, fmt="markdown") -> int:
    obj = json.loads(Path(bundles_path).read_text(encoding="utf-8"))
    try:
        report = RunReport.from_json(obj)
    except (ValueError, KeyError, TypeError) as exc:
        raise ValidationFailure(f"{bundles_path}: {exc}") from exc
    _emit(report.render(fmt), out_path)
    return EXIT_OK


# --- manifests and images --------------------------------------------------------

def cmd_validate_manifest(path, expected=None) -> int:
    try:
        records = ingest.load_manifest(path)
    except ingest.ManifestError as exc:
        raise ValidationFailure(str(exc)) from exc
    stats = ingest.split_stats(records)
    result = {"records": len(records), "totals": stats.totals, "counts": stats.to_json()}
    problems = []
    if expected:
        if expected == "dmid":
            want = ingest.dmid_expected_stats()
        else:
            want = ingest.SplitStats.from_json(json.loads(Path(expected).read_text()))
        problems = ingest.validate_against(stats, want)
        result["discrepancies"] = problems
    _emit(json.dumps(result, indent=2) + "\n", None)
    for p in problems:
        print(p, file=sys.stderr)
    return EXIT_INVALID if problems else EXIT_OK


def read_image(path: str | Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im)
            if arr.dtype != np.uint16:
                if arr.min() < 0 or arr.max() > 65535:
                    raise ValueError(f"{path}: pixel values outside 16-bit range")
                arr = arr.astype(np.uint16)
            return arr
        if im.mode != "L":
            im = im.convert("L")
        return np.asarray(im, dtype=np.uint8)


def write_png(img: np.ndarray, path: str | Path) -> None:
    from PIL import Image

    Image.fromarray(np.asarray(img, dtype=np.uint8), mode="L").save(path, format="PNG")


def cmd_preprocess(manifest, out_dir, cfg: preproc.PreprocConfig) -> int:
    try:
        records = ingest.load_manifest(manifest)
    except ingest.ManifestError as exc:
        raise ValidationFailure(str(exc)) from exc
    base = Path(manifest).parent
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log = []
    failed = 0
    for rec in records:
        for i, rel in enumerate(rec.image_paths):
            src = Path(rel) if Path(rel).is_absolute() else base / rel
            entry = {"case_id": rec.case_id, "image": str(rel)}
            try:
                img = read_image(src)
                res = preproc.preprocess_case(img, rec.laterality, cfg)
            except (OSError, ValueError) as exc:
                entry["error"] = str(exc)
                failed += 1
            else:
                name = f"{rec.case_id}_{i}.png"
                write_png(res.image, out / name)
                entry.update(output=name, threshold=res.threshold, bbox=res.bbox.to_json())
            log.append(entry)
    (out / "preprocess_log.jsonl").write_text(_jsonl(log), encoding="utf-8")
    print(json.dumps({"images": len(log), "failed": failed}))
    return EXIT_INVALID if failed else EXIT_OK


def cmd_pipeline(manifest, generated_path, out_dir, split="test", vocab_path=None) -> int:
    """Join gold labels from the manifest with externally generated reports and score them."""
    try:
        records = [r for r in ingest.load_manifest(manifest) if r.split == split]
    except ingest.ManifestError as exc:
        raise ValidationFailure(str(exc)) from exc
    generated = {str(g["case_id"]): g["generated"]
                 for g in read_jsonl(generated_path, required=("case_id", "generated"))}
    if not generated:
        raise ValidationFailure(f"{generated_path}: no generated reports")
    missing = [r.case_id for r in records if r.case_id not in generated]
    if missing:
        raise ValidationFailure(f"no generated report for case_id(s): {', '.join(missing)}")
    if not records:
        raise ValidationFailure(f"manifest has no {split!r} records")
    rows = [{"case_id": r.case_id, "generated": generated[r.case_id],
             "reference": r.report_text, "birads": r.birads_gold, "density": r.density_gold}
            for r in records]
    for row in rows:
        # a missing gold label in the manifest means "skip", not "extract"
        row["birads"] = row["birads"] or clinical.UNLABELED
        row["density"] = row["density"] or clinical.UNLABELED
    try:
        bundle = score_rows(rows)
    except ValueError as exc:
        raise ValidationFailure(str(exc)) from exc
    per_pair = nlgmetrics.score_pairs([(r["generated"], r["reference"]) for r in rows])
    labels = label_rows(rows)
    diffs, totals = term_diff_rows(rows, clinical.load_vocab(vocab_path))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(bundle.to_json(), indent=2) + "\n")
    cases = [{**lab, "metrics": m} for lab, m in zip(labels, per_pair)]
    (out / "cases.jsonl").write_text(_jsonl(cases), encoding="utf-8")
    (out / "term_diff.jsonl").write_text(_jsonl([*diffs, {"summary": totals}]), encoding="utf-8")
    (out / "table.md").write_text(RunReport({"generated": bundle.to_json()}).to_markdown())
    print(json.dumps({"cases": len(rows), "out_dir": str(out)}))
    return EXIT_OK


# --- toy decoder demos -----------------------------------------------------------

def run_lora_demo(arch="crossattn", steps=200, seed=42, rank=32, alpha=16.0, tau=0.1,
                  lr=1e-3, grad_accum=8, batch_size=4) -> dict:
    from amrg.tinydecoder import TrainConfig, generate, train_demo
    from amrg.tinydecoder.toy import demo_state, toy_corpus

    vocab, corpus = toy_corpus(d_v=64, seed=seed)
    state = demo_state(vocab, arch, rank, alpha, seed)
    cfg = TrainConfig(steps=steps, learning_rate=lr, grad_accum=grad_accum,
                      batch_size=batch_size, seed=seed, temperature=tau)
    result = train_demo(corpus, cfg, state)
    samples = [
        {"reference": vocab.decode(y),
         "generated": vocab.decode(generate(vis, inst, state, tau, seed=seed))}
        for vis, inst, y in corpus
    ]
    losses = result.losses
    return {
        "arch": arch, "rank": rank, "alpha": alpha, "steps": steps, "seed": seed,
        "learning_rate": lr, "tau": tau, "initial_loss": losses[0], "final_loss": losses[-1],
        "final_over_initial": losses[-1] / losses[0], "losses": losses, "samples": samples,
    }


def run_sweep_demo(arch="crossattn", steps=100, seed=42, lr=1e-3, grad_accum=8) -> dict:
    from amrg.adapters import SweepGrid, sweep_plan

    runs = {}
    for rank, alpha in sweep_plan(SweepGrid()):
        res = run_lora_demo(arch, steps, seed, rank, alpha, lr=lr, grad_accum=grad_accum)
        runs[f"r={rank}, α={alpha:g}"] = {
            "rank": rank, "alpha": alpha, "initial_loss": res["initial_loss"],
            "final_loss": res["final_loss"], "final_over_initial": res["final_over_initial"],
        }
    return runs


def sweep_markdown(runs: dict) -> str:
    names = list(runs)
    lines = ["| Quantity | " + " | ".join(names) + " |", "|---|" + "---|" * len(names)]
    for key, label in (("initial_loss", "Initial loss"), ("final_loss", "Final loss"),
                       ("final_over_initial", "Final / initial")):
        lines.append(f"| {label} | " + " | ".join(f"{runs[n][key]:.4f}" for n in names) + " |")
    return "\n".join(lines) + "\n"


# --- argument parsing ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="amrg", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("validate-manifest", help="check a JSONL manifest and its split counts")
    s.add_argument("path")
    s.add_argument("--expected-stats", help="JSON file of expected counts, or 'dmid'")

    s = sub.add_parser("preprocess", help="run the image preprocessing pipeline")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--target", type=int, default=512)
    s.add_argument("--tiles", type=int, default=8)
    s.add_argument("--clip", type=float, default=2.0)
    s.add_argument("--resize", choices=("direct", "letterbox"), default="direct")
    s.add_argument("--clahe-space", choices=("lab", "gray"), default="lab")

    s = sub.add_parser("score", help="text and clinical metrics for generated/reference pairs")
    s.add_argument("--pairs", required=True)
    s.add_argument("--out")
    s.add_argument("--format", choices=("json", "markdown", "csv"), default="json")
    s.add_argument("--markdown", help="also write the Markdown table here")
    s.add_argument("--name", default="run", help="column name in tables")

    s = sub.add_parser("extract-labels", help="BI-RADS and density labels per pair")
    s.add_argument("--pairs", required=True)
    s.add_argument("--out")

    s = sub.add_parser("term-diff", help="matched / hallucinated / missed clinical terms")
    s.add_argument("--pairs", required=True)
    s.add_argument("--vocab", help="term list (defaults to the bundled list)")
    s.add_argument("--out")

    s = sub.add_parser("report", help="format metric bundles as a table")
    s.add_argument("bundles")
    s.add_argument("--format", choices=("markdown", "json", "csv"), default="markdown")
    s.add_argument("--out")

    s = sub.add_parser("pipeline", help="score generated reports against a manifest split")
    s.add_argument("--manifest", required=True)
    s.add_argument("--generated", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--split", choices=ingest.SPLITS, default="test")
    s.add_argument("--vocab")

    s = sub.add_parser("lora-demo", help="train the toy decoder on the toy corpus")
    s.add_argument("--arch", choices=("instruct", "crossattn"), default="crossattn")
    s.add_argument("--steps", type=int, default=200)
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--rank", type=int, default=32)
    s.add_argument("--alpha", type=float, default=16.0)
    s.add_argument("--tau", type=float, default=0.1)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--grad-accum", type=int, default=8)
    s.add_argument("--batch-size", type=int, default=4)
    s.add_argument("--out")

    s = sub.add_parser("sweep-demo", help="toy training over the six (rank, alpha) configs")
    s.add_argument("--arch", choices=("instruct", "crossattn"), default="crossattn")
    s.add_argument("--steps", type=int, default=100)
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--grad-accum", type=int, default=8)
    s.add_argument("--format", choices=("markdown", "json"), default="markdown")
    s.add_argument("--out")
    return p


def _dispatch(args) -> int:
    c = args.command
    if c == "validate-manifest":
        return cmd_validate_manifest(args.path, args.expected_stats)
    if c == "preprocess":
        cfg = preproc.PreprocConfig(args.target, args.tiles, args.clip, args.resize,
                                    args.clahe_space)
        return cmd_preprocess(args.manifest, args.out_dir, cfg)
    if c == "score":
        return cmd_score(args.pairs, args.out, args.format, args.markdown, args.name)
    if c == "extract-labels":
        return cmd_extract_labels(args.pairs, args.out)
    if c == "term-diff":
        return cmd_term_diff(args.pairs, args.vocab, args.out)
    if c == "report":
        return cmd_report(args.bundles, args.out, args.format)
    if c == "pipeline":
        return cmd_pipeline(args.manifest, args.generated, args.out_dir, args.split, args.vocab)
    if c == "lora-demo":
        res = run_lora_demo(args.arch, args.steps, args.seed, args.rank, args.alpha, args.tau,
                            args.lr, args.grad_accum, args.batch_size)
        _emit(json.dumps(res, indent=2, ensure_ascii=False) + "\n", args.out)
        return EXIT_OK
    if c == "sweep-demo":
        runs = run_sweep_demo(args.arch, args.steps, args.seed, args.lr, args.grad_accum)
        text = (sweep_markdown(runs) if args.format == "markdown"
                else json.dumps(runs, indent=2, ensure_ascii=False) + "\n")
        _emit(text, args.out)
        return EXIT_OK
    raise AssertionError(c)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help, or a usage error (exit code 1 via _Parser)
        return exc.code if isinstance(exc.code, int) else EXIT_IO
    try:
        return _dispatch(args)
    except ValidationFailure as exc:
        print(f"amrg {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"amrg {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
