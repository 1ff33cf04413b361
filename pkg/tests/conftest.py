import pytest

SMALL_RUN = """\
dataset=synthetic
synthetic_per_class=40
synthetic_dim=9
synthetic_classes=3
synthetic_spread=0.1
hidden=
inject=true
p=2
sigma=0.2
lr=0.5
epochs=3
batch=20
seed=4
noise_levels=0,0.1,0.3
noise_trials=2
attack_examples=6
grid_cols=3
"""


@pytest.fixture
def run_config(tmp_path):
    """Write a small synthetic run config; extra lines override or extend it."""

    def make(extra: str = "", name: str = "run.cfg"):
        lines = dict(line.split("=", 1) for line in SMALL_RUN.splitlines())
        for line in extra.splitlines():
            if line.strip():
                key, value = line.split("=", 1)
                lines[key] = value
        path = tmp_path / name
        path.write_text("".join(f"{k}={v}\n" for k, v in lines.items()))
        return path

    return make
