# %% [markdown]
# # The command line, end to end
#
# Train a client, attack its update with two methods, then ask for the
# diagnostic series.  Everything lands in one output directory.

# %%
import subprocess
import sys
import tempfile
from pathlib import Path

out = Path(tempfile.mkdtemp(prefix="smelab-demo-"))
common = ["--output-dir", str(out), "--set", "attack.iterations=200", "--set", "model.hidden=32"]


def smelab(*args):
    proc = subprocess.run([sys.executable, "-m", "smelab", *args, *common],
                          capture_output=True, text=True)
    print("$ smelab", " ".join(args))
    print(proc.stdout.strip() or proc.stderr.strip())
    return proc.stdout.split()


# %%
update, data = smelab("train-client", "--epochs", "5", "--batch-size", "5")
smelab("attack", update, "--method", "ig")
smelab("attack", update, "--method", "sme")
print((out / "attack.csv").read_text())

# %%
smelab("diagnose", update, "--mode", "ratio")
smelab("diagnose", "--mode", "flow2d")
print((out / "diagnose_flow2d.csv").read_text())

# %% [markdown]
# Bad input produces one JSON line on stderr and a nonzero exit code.

# %%
smelab("attack", str(out / "missing.smeu"))
