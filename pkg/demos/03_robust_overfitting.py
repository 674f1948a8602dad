"""
Step decay versus one cycle
===========================

PGD training with cross-entropy on the reference synthetic task (with label
noise, so there is something to overfit). The gap between the best and the
final PGD accuracy is the quantity to watch.
"""
from pathlib import Path

from advlab import analysis, cli
from advlab.train import train

root = Path(__file__).resolve().parent.parent
base = cli.load_config(root / "configs" / "reference.json")
schedules = {
    "piecewise": {"kind": "piecewise", "base_lr": 0.1, "drop_epochs": [20, 30]},
    "onecycle": {"kind": "onecycle", "max_lr": 0.2},
}

for name, schedule in schedules.items():
    cfg = cli.apply_overrides(cli.canonical_config({**base, "schedule": schedule}), seed=1)
    train_set, test_set = cli.load_datasets(cfg)
    result = train(cli.train_config(cfg), train_set, test_set, record_time=False)
    gap = analysis.overfit_gap(result.metrics)["pgd"]
    print(f"{name:>9}: best {gap['best']:.3f}  final {gap['final']:.3f}  diff {gap['diff']:.3f}")
    Path("runs").mkdir(exist_ok=True)
    Path(f"runs/{name}.svg").write_text(cli.metrics_svg(cli.parse_metrics_csv(cli.metrics_csv(result.metrics)), name))
