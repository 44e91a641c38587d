#!/usr/bin/env python3
"""Run each CLI command with --json and validate the output against schemas/."""
import json
import pathlib
import subprocess
import sys
import tempfile

import jsonschema

cli, src = sys.argv[1], pathlib.Path(sys.argv[2])
schemas = src / "schemas"
failures = 0


def schema(name):
    return json.loads((schemas / f"{name}.schema.json").read_text())


def check(name, doc, label):
    global failures
    try:
        jsonschema.validate(doc, schema(name))
        print(f"ok   {label}")
    except jsonschema.ValidationError as e:
        failures += 1
        print(f"FAIL {label}: {e.message} at {list(e.absolute_path)}")


def run(name, args, label=None):
    out = subprocess.run([cli, *args, "--json", "-"], capture_output=True, text=True)
    if out.returncode != 0:
        global failures
        failures += 1
        print(f"FAIL {label or name}: exit {out.returncode}: {out.stderr.strip()}")
        return
    check(name, json.loads(out.stdout), label or name)


with tempfile.TemporaryDirectory() as tmp:
    data = str(pathlib.Path(tmp) / "d.csv")
    run("simulate", ["simulate", "--G", "60", "--alpha", "1.2", "--seed", "5", "--out", data])
    common = [data, "--cluster", "cluster", "--y", "y", "--x", "T"]
    run("fit", ["fit", *common], "fit ols")
    run("fit", ["fit", *common, "--method", "sacr", "--variance", "jackknife"], "fit sacr jackknife")
    run("fit", ["fit", *common, "--subsample", "--b", "auto", "--M", "100", "--seed", "3"], "fit subsample auto")
    run("diagnose", ["diagnose", *common, "--k-fraction", "0.2"])
    run("subsample", ["subsample", *common, "--b", "12", "--M", "100", "--seed", "3"], "subsample fixed b")
    run("subsample", ["subsample", *common, "--b", "auto", "--M", "50", "--seed", "3"], "subsample auto b")
    run("limitdist", ["limitdist", "--alpha", "2", "--size-at", "1.96"], "limitdist normal")
    run("limitdist", ["limitdist", "--alpha", "1.5", "--p", "0.25", "-n", "2000", "--truncation", "500"], "limitdist draws")
    run("limitdist", ["limitdist", "--alpha", "1.5", "-n", "2000", "--size-at", "1.96"], "limitdist size")
    for cfg in sorted((src / "samples").glob("*.json")):
        check("montecarlo_config", json.loads(cfg.read_text()), f"config {cfg.name}")
    run("montecarlo_report", ["montecarlo", str(src / "samples" / "smoke.json"), "--timing"], "montecarlo smoke")
    run("montecarlo_report", ["montecarlo", str(src / "samples" / "smoke.json"), "--replications", "3"], "montecarlo override")

print(f"{failures} failure(s)")
sys.exit(1 if failures else 0)
