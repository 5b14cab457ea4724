# SPDX-License-Identifier: Apache-2.0
"""End-to-end checks for the command line interface.

Usage: python cli_workflows.py <path-to-cli> <source-dir>
"""

import glob
import os
import subprocess
import sys
import tempfile

CLI = sys.argv[1]
SRC = sys.argv[2] if len(sys.argv) > 2 else "."

PIECES = ["aa", "bb", "cc", "dd", "ee", "ff", "gg", "hh"]
VOCAB_SIZE = len(PIECES) + 5  # special tokens come first


def run(*args, expect=0):
    proc = subprocess.run(
        [CLI, *args], capture_output=True, text=True, timeout=600
    )
    if proc.returncode != expect:
        raise AssertionError(
            f"{args}: exit {proc.returncode}, expected {expect}\n"
            f"stdout:\n{proc.stdout}\nstderr:\n{proc.stderr}"
        )
    return proc


def write(path, text):
    with open(path, "w") as f:
        f.write(text)


def main():
    tmp = tempfile.mkdtemp(prefix="rebalance_cli_")
    vocab = os.path.join(tmp, "vocab.tsv")
    write(vocab, "".join(f"{p}\t-1.5\n" for p in PIECES))

    corpus = os.path.join(tmp, "corpus")
    os.mkdir(corpus)
    write(
        os.path.join(corpus, "en.txt"),
        "".join(f"{PIECES[i % 4]} {PIECES[(i + 1) % 4]}\n" for i in range(30)),
    )
    write(
        os.path.join(corpus, "de.txt"),
        "".join(f"{PIECES[4 + i % 4]} {PIECES[4 + (i + 1) % 4]}\n"
                for i in range(10)),
    )

    cfg = os.path.join(tmp, "run.cfg")
    write(
        cfg,
        f"""[model]
vocab_size = {VOCAB_SIZE}
input_dim = 8
output_dim = 8
hidden = 16
layers = 2
heads = 2
max_positions = 32

[data]
corpus_dir = {corpus}
vocab = {vocab}
alpha = 0.5
seq_len = 12

[train]
steps = 40
batch_size = 4
eval_interval = 20
eval_batches = 2
seed = 1
lr = 1e-3
warmup_steps = 10
""",
    )

    # --- budget ------------------------------------------------------------
    out = run("budget", "count", "--config", cfg).stdout
    assert "pretrain_params" in out and "finetune_params" in out, out
    counts = {
        line.split()[0]: line.split()[1]
        for line in out.splitlines()
        if line.strip()
    }
    finetune_params = int(counts["finetune_params"])
    assert int(counts["pretrain_params"]) > finetune_params

    out = run(
        "budget", "search", "--config", cfg, "--target", str(finetune_params),
        "--tolerance", "0.05", "--free", "L",
    ).stdout
    assert any(line.split()[:2] == ["16", "2"] for line in out.splitlines()), out

    # --- shipped configs ---------------------------------------------------
    shipped = sorted(glob.glob(os.path.join(SRC, "configs", "*.cfg")))
    assert shipped, "no example configs found"
    totals = {}
    for path in shipped:
        out = run("budget", "count", "--config", path).stdout
        for line in out.splitlines():
            parts = line.split()
            if parts and parts[0] == "pretrain_params":
                totals[os.path.basename(path)] = int(parts[1])
    assert totals["rembert.cfg"] == 962327312, totals
    assert totals["xlmr_base.cfg"] == 278292880, totals
    assert totals["in128_out768.cfg"] == 193781184, totals

    # --- usage errors ------------------------------------------------------
    run("frobnicate", expect=1)
    run("truncate", "--bogus-flag", expect=1)

    # --- pretrain / evaluate ----------------------------------------------
    ckpt = os.path.join(tmp, "model.ckpt")
    log = os.path.join(tmp, "train.log")
    out = run("pretrain", "--config", cfg, "--out", ckpt, "--log", log).stdout
    assert f"saved {ckpt}" in out, out
    assert os.path.exists(ckpt)
    with open(log) as f:
        log_text = f.read()
    assert "step 1 " in log_text and "step 40 " in log_text, log_text

    out = run("evaluate", "--config", cfg, "--model", ckpt).stdout
    assert "mlm_accuracy" in out, out

    run("evaluate", "--config", cfg, "--model",
        os.path.join(tmp, "missing.ckpt"), expect=2)

    # --- truncate ----------------------------------------------------------
    cut = os.path.join(tmp, "cut.ckpt")
    out = run("truncate", "--in", ckpt, "--out", cut, "--keep", "1").stdout
    assert "kept 1 layers" in out, out
    assert os.path.getsize(cut) < os.path.getsize(ckpt)
    run("truncate", "--in", ckpt, "--out", cut, "--keep", "5", expect=2)

    # --- export ------------------------------------------------------------
    emb = os.path.join(tmp, "emb.bin")
    run("export", "--model", ckpt, "--side", "input", "--out", emb)
    assert os.path.getsize(emb) > 4 * VOCAB_SIZE * 8
    run("export", "--model", ckpt, "--side", "sideways", "--out", emb,
        expect=2)

    # --- analyze wordsim ---------------------------------------------------
    ws = os.path.join(tmp, "wordsim.tsv")
    write(ws, "aa\tbb\t0.9\naa\tcc\t0.5\nbb\tdd\t0.1\ncc\tdd\t0.7\n")
    out = run("analyze", "wordsim", "--model", ckpt, "--vocab", vocab,
              "--data", ws).stdout
    assert "pairs_used  4" in out and "spearman" in out, out

    # --- analyze nntrans ---------------------------------------------------
    pairs = os.path.join(tmp, "pairs.tsv")
    write(
        pairs,
        "aa bb\tee ff\nbb cc\tff gg\ncc dd\tgg hh\ndd aa\thh ee\n",
    )
    out = run("analyze", "nntrans", "--model", ckpt, "--vocab", vocab,
              "--pairs", pairs).stdout
    lines = [l for l in out.splitlines() if l.strip() and "layer" not in l]
    assert len(lines) == 3, out  # embeddings + 2 encoder layers
    out = run("analyze", "nntrans", "--model", ckpt, "--vocab", vocab,
              "--pairs", pairs, "--layer", "0").stdout
    assert len([l for l in out.splitlines() if "0." in l]) == 1, out
    run("analyze", "nntrans", "--model", ckpt, "--vocab", vocab,
        "--pairs", pairs, "--layer", "9", expect=2)

    # --- analyze probe-mix -------------------------------------------------
    probe_train = os.path.join(tmp, "probe_train.tsv")
    probe_dev = os.path.join(tmp, "probe_dev.tsv")
    rows = [("first", PIECES[i % 4]) for i in range(12)] + [
        ("second", PIECES[4 + i % 4]) for i in range(12)
    ]
    write(probe_train, "".join(f"{l}\t{s} {s}\n" for l, s in rows))
    write(probe_dev, "".join(f"{l}\t{s} {s}\n" for l, s in rows[::3]))
    out = run("analyze", "probe-mix", "--model", ckpt, "--vocab", vocab,
              "--train", probe_train, "--dev", probe_dev,
              "--epochs", "5").stdout
    assert "dev_accuracy" in out and "weight" in out, out

    # --- finetune ----------------------------------------------------------
    cls_train = os.path.join(tmp, "cls_train.tsv")
    cls_dev = os.path.join(tmp, "cls_dev.tsv")
    examples = [("pos", "aa aa"), ("neg", "bb bb")] * 8
    write(cls_train, "".join(f"{l}\t{t}\n" for l, t in examples))
    write(cls_dev, "".join(f"{l}\t{t}\n" for l, t in examples[:6]))
    out = run("finetune", "--ckpt", ckpt, "--vocab", vocab, "--task", "cls",
              "--train", cls_train, "--dev", cls_dev, "--lr", "0.01",
              "--epochs", "3", "--batch-size", "2", "--seed", "11").stdout
    assert "train:" in out and "dev:" in out and "accuracy" in out, out

    out = run("finetune", "--ckpt", ckpt, "--vocab", vocab, "--task", "cls",
              "--train", cls_train, "--dev", cls_dev,
              "--sweep", "1e-4,1e-2", "--epochs", "2",
              "--batch-size", "2").stdout
    assert "best_lr" in out, out

    print("cli workflows ok")


if __name__ == "__main__":
    main()
