"""Command-line entry point: ``tlce {gen-data,train,run,sweep,ablation,inspect}``.

Settings come from built-in defaults, then an INI-style ``--config`` file,
then command-line flags, each layer overriding the previous one.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as dio
from . import harness, memory, model, training
from .ensemble import EnsembleConfig
from .errors import ConfigError, DataError, DependencyError, FormatError, TLCEError
from .seeding import derive_seed

# built-in defaults; comments give the published setting each mirrors
DEFAULTS: dict[str, dict[str, str]] = {
    "run": {"seed": "0"},
    "paths": {
        "out_dir": "tlce-out",
        "dataset": "",
        "rhd_pretrain": "",
        "rhd": "",
        "tkn": "",
        "tkn_ce": "",
    },
    "data": {
        "num_classes": "100",  # 60 base + 40 novel
        "feature_dim": "64",
        "train_per_class": "100",
        "test_per_class": "50",
        "cluster_std": "1.0",
        "min_center_separation": "8.0",
    },
    "protocol": {
        "num_base_classes": "60",
        "num_novel_classes": "40",
        "way": "5",
        "shot": "5",
        "num_sessions": "9",  # 1 base + 8 incremental
    },
    "model": {
        "hidden_layers": "256",
        "feature_dim": "256",
        "embedding_dim": "512",
    },
    "train": {
        "learning_rate": "0.01",
        "batch_size": "128",
        "epochs": "120",
        "momentum": "0.0",
    },
    "meta": {
        "episodes": "200",
        "shots": "5",
        "queries": "5",
        "beta": "10.0",
        "learning_rate": "0.01",
        "momentum": "0.0",
    },
    "ensemble": {
        "lambda": "0.8",
        "lambdas": "0.0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0",
    },
}

STAGES = ("rhd-pretrain", "rhd-meta", "tkn", "tkn-ce")
_STAGE_FILES = {"rhd-pretrain": "rhd_pretrain", "rhd-meta": "rhd", "tkn": "tkn", "tkn-ce": "tkn_ce"}

EPILOG = """\
published-setting defaults:
  ensemble weight lambda = 0.8      sharpening stiffness beta = 10
  embedding dim = 512               learning rate = 0.01, batch 128, 120 epochs (SGD)
  60 base + 40 novel classes        8 incremental sessions, 5-way 5-shot
"""


class Settings:
    def __init__(self, config_path: str | None = None, overrides: dict[tuple[str, str], str] | None = None):
        self.cp = configparser.ConfigParser()
        self.cp.read_dict(DEFAULTS)
        if config_path:
            path = Path(config_path)
            if not path.is_file():
                raise ConfigError(f"config file not found: {config_path}")
            try:
                self.cp.read(path)
            except configparser.Error as exc:
                raise ConfigError(f"cannot parse {config_path}: {exc}") from None
        for (section, key), value in (overrides or {}).items():
            if value is not None:
                self.cp.set(section, key, str(value))

    def get(self, section: str, key: str) -> str:
        return self.cp.get(section, key)

    def _typed(self, section, key, conv, kind):
        raw = self.get(section, key)
        try:
            return conv(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {kind}") from None

    def int(self, section: str, key: str) -> int:
        return self._typed(section, key, int, "integer")

    def float(self, section: str, key: str) -> float:
        return self._typed(section, key, float, "number")

    def floats(self, section: str, key: str) -> list[float]:
        return self._typed(section, key, lambda s: [float(v) for v in s.split(",") if v.strip()], "number list")

    def ints(self, section: str, key: str) -> tuple[int, ...]:
        return self._typed(section, key, lambda s: tuple(int(v) for v in s.split(",") if v.strip()), "integer list")

    @property
    def seed(self) -> int:
        return self.int("run", "seed")

    @property
    def out_dir(self) -> Path:
        return Path(self.get("paths", "out_dir"))

    def path(self, key: str, default_name: str) -> Path:
        value = self.get("paths", key)
        return Path(value) if value else self.out_dir / default_name

    def dataset_path(self) -> Path:
        return self.path("dataset", "dataset.tlcd")

    def checkpoint_path(self, stage: str) -> Path:
        return self.path(_STAGE_FILES[stage], f"{stage}.ckpt")

    def synth_spec(self) -> dio.SynthSpec:
        return dio.SynthSpec(
            num_classes=self.int("data", "num_classes"),
            feature_dim=self.int("data", "feature_dim"),
            train_per_class=self.int("data", "train_per_class"),
            test_per_class=self.int("data", "test_per_class"),
            cluster_std=self.float("data", "cluster_std"),
            min_center_separation=self.float("data", "min_center_separation"),
            seed=self.seed,
        )

    def protocol(self) -> dio.ProtocolSpec:
        return dio.ProtocolSpec(
            num_base_classes=self.int("protocol", "num_base_classes"),
            num_novel_classes=self.int("protocol", "num_novel_classes"),
            way=self.int("protocol", "way"),
            shot=self.int("protocol", "shot"),
            num_sessions=self.int("protocol", "num_sessions"),
            seed=self.seed,
        )

    def architecture(self, input_dim: int) -> model.ArchitectureSpec:
        return model.ArchitectureSpec(
            input_dim=input_dim,
            hidden_layers=self.ints("model", "hidden_layers"),
            feature_dim=self.int("model", "feature_dim"),
            embedding_dim=self.int("model", "embedding_dim"),
        )

    def train_config(self, stage: str) -> training.TrainConfig:
        section = "meta" if stage == "rhd-meta" else "train"
        return training.TrainConfig(
            learning_rate=self.float(section, "learning_rate"),
            batch_size=self.int("train", "batch_size"),
            epochs=self.int("train", "epochs"),
            momentum=self.float(section, "momentum"),
            seed=derive_seed(self.seed, f"train-{stage}"),
        )

    def lam(self) -> float:
        return EnsembleConfig(self.float("ensemble", "lambda")).lam


# -- commands -----------------------------------------------------------------


def _load_sessions(s: Settings) -> tuple[list[dio.SessionDataset], dio.ProtocolSpec]:
    path = s.dataset_path()
    if not path.is_file():
        raise DataError(f"dataset not found: {path} (run gen-data first)")
    spec = s.protocol()
    return dio.split_sessions(dio.load_dataset(path), spec), spec


def _load_checkpoint(s: Settings, stage: str) -> model.NetworkParams:
    path = s.checkpoint_path(stage)
    if not path.is_file():
        raise DependencyError(f"missing {stage} checkpoint at {path}; run 'tlce train {stage}' first")
    return model.load_params(path)


def cmd_gen_data(s: Settings) -> Path:
    data = dio.generate_synth(s.synth_spec())
    path = s.dataset_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    dio.save_dataset(data, path)
    print(f"wrote {path} ({len(data.classes)} classes, dim {data.feature_dim})")
    return path


def cmd_train(s: Settings, stage: str) -> Path:
    if stage not in STAGES:
        raise ConfigError(f"unknown training stage {stage!r}; choose from {', '.join(STAGES)}")
    sessions, _ = _load_sessions(s)
    base = sessions[0]
    arch = s.architecture(base.train[base.class_ids[0]].shape[1])
    n_cls = len(base.class_ids)
    cfg = s.train_config(stage)
    out = s.checkpoint_path(stage)
    out.parent.mkdir(parents=True, exist_ok=True)
    s.out_dir.mkdir(parents=True, exist_ok=True)

    handler = logging.FileHandler(s.out_dir / f"train-{stage}.log", mode="w")
    handler.setFormatter(logging.Formatter("time=%(asctime)s %(message)s"))
    logger = logging.getLogger("tlce.training")
    logger.setLevel(logging.INFO)
    logger.addHandler(handler)
    try:
        if stage == "rhd-meta":
            pre = _load_checkpoint(s, "rhd-pretrain")
            params = training.meta_train_rhd(
                pre,
                base,
                cfg,
                training.SharpeningConfig(s.float("meta", "beta")),
                episodes=s.int("meta", "episodes"),
                shots=s.int("meta", "shots"),
                queries=s.int("meta", "queries"),
            )
        elif stage == "tkn":
            init = model.init_params(arch, derive_seed(s.seed, "init-tkn"), model.HEAD_COSINE, n_cls)
            params = training.train_tkn(init, base, cfg)
        else:
            init = model.init_params(arch, derive_seed(s.seed, f"init-{stage}"), model.HEAD_CE, n_cls)
            params = training.pretrain_ce(init, base, cfg, stage=stage)
    finally:
        logger.removeHandler(handler)
        handler.close()
    model.save_params(params, out)
    print(f"wrote {out}")
    return out


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def cmd_run(s: Settings) -> harness.RunSummary:
    lam = s.lam()
    sessions, spec = _load_sessions(s)
    rhd, tkn = _load_checkpoint(s, "rhd-meta"), _load_checkpoint(s, "tkn")
    scored = harness.score_sessions(sessions, rhd, tkn, spec)
    summary = harness.evaluate(scored, lam, label=f"TLCE (lambda={lam:g})")
    baseline = harness.evaluate(scored, 1.0, label="RHD")
    out = s.out_dir
    _write(out / "metrics.csv", harness.metrics_csv(summary))
    _write(out / "predictions.csv", harness.predictions_csv(summary))
    table = harness.format_table([baseline, summary], baseline=baseline)
    _write(out / "table.txt", table + "\n" + harness.format_split_table(summary))
    memory.save_memory(scored.memory, out / "memory.ckpt")
    print(table, end="")
    return summary


def cmd_sweep(s: Settings) -> list[harness.RunSummary]:
    sessions, spec = _load_sessions(s)
    rhd, tkn = _load_checkpoint(s, "rhd-meta"), _load_checkpoint(s, "tkn")
    summaries = harness.lambda_sweep(sessions, rhd, tkn, spec, s.floats("ensemble", "lambdas"))
    _write(s.out_dir / "sweep.csv", harness.sweep_csv(summaries))
    table = harness.format_table(summaries)
    _write(s.out_dir / "sweep.txt", table)
    print(table, end="")
    return summaries


def cmd_ablation(s: Settings) -> list[harness.AblationRow]:
    lam = s.lam()
    sessions, spec = _load_sessions(s)
    rhd = _load_checkpoint(s, "rhd-meta")
    tkn, tkn_ce = _load_checkpoint(s, "tkn"), _load_checkpoint(s, "tkn-ce")
    rows = harness.ablation_run(sessions, spec, rhd, tkn, tkn_ce, lam)
    _write(s.out_dir / "ablation.csv", harness.ablation_csv(rows))
    table = harness.format_table([r.summary for r in rows])
    _write(s.out_dir / "ablation.txt", table)
    print(table, end="")
    return rows


def describe(path: Path) -> str:
    raw = path.read_bytes()
    magic = raw[:4]
    if magic == dio.DATASET_MAGIC:
        d = dio.dataset_from_bytes(raw)
        lines = [f"TLCD dataset: {len(d.classes)} classes, feature dim {d.feature_dim}"]
        lines += [f"  class {c}: {len(v.train)} train / {len(v.test)} test" for c, v in d.classes.items()]
        return "\n".join(lines)
    if magic != model.CHECKPOINT_MAGIC:
        raise FormatError("unrecognised file (expected TLCE or TLCD magic)", 0)
    kind = int.from_bytes(raw[8:12], "little") if len(raw) >= 12 else -1
    if kind == model.KIND_MEMORY:
        em = memory.memory_from_bytes(raw)
        lines = [f"memory checkpoint: {len(em)} classes"]
        for e in em.entries.values():
            lines.append(
                f"  class {e.class_id} (session {e.session}): |p_rhd|={np.linalg.norm(e.proto_rhd):.4f}"
                f" |p_tkn|={np.linalg.norm(e.proto_tkn):.4f}"
            )
        return "\n".join(lines)
    p = model.params_from_bytes(raw)
    sp = p.spec
    lines = [
        "parameter checkpoint",
        f"  input_dim={sp.input_dim} hidden={list(sp.hidden_layers)} feature_dim={sp.feature_dim} "
        f"embedding_dim={sp.embedding_dim}",
        f"  head={p.head} classes={p.num_classes}",
        f"  sha256={p.digest()}",
    ]
    lines += [f"  tensor {i}: shape {t.shape}" for i, t in enumerate(p.tensors())]
    return "\n".join(lines)


# -- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI-style settings file")
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument("--lambda", dest="lam", type=float, help="ensemble weight on RHD (default 0.8)")
    common.add_argument("--out", metavar="DIR", help="output directory (default tlce-out)")

    parser = argparse.ArgumentParser(
        prog="tlce",
        description="Classifier ensembles for few-shot class-incremental learning.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="generate a synthetic TLCD dataset")
    p = sub.add_parser("train", parents=[common], help="train one network stage")
    p.add_argument("stage", choices=STAGES)
    sub.add_parser("run", parents=[common], help="run the incremental protocol")
    sub.add_parser("sweep", parents=[common], help="sweep the ensemble weight")
    sub.add_parser("ablation", parents=[common], help="single classifiers vs ensembles")
    p = sub.add_parser("inspect", parents=[common], help="pretty-print a checkpoint or dataset")
    p.add_argument("path")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = Settings(
            args.config,
            {("run", "seed"): args.seed, ("ensemble", "lambda"): args.lam, ("paths", "out_dir"): args.out},
        )
        if args.command == "gen-data":
            cmd_gen_data(settings)
        elif args.command == "train":
            cmd_train(settings, args.stage)
        elif args.command == "run":
            cmd_run(settings)
        elif args.command == "sweep":
            cmd_sweep(settings)
        elif args.command == "ablation":
            cmd_ablation(settings)
        elif args.command == "inspect":
            path = Path(args.path)
            if not path.is_file():
                raise DataError(f"no such file: {path}")
            print(describe(path))
    except TLCEError as exc:
        print(f"tlce: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
