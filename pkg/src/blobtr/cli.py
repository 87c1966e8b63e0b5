"""Declarative job runner.

A job is a JSON document::

    {
      "curve": {"preset": "airy"},
      "blobs": {"kind": "trivial"},
      "B": [[1, 1, "1/2"]],
      "caps": {"hbar_order": 3, "n_max": 3, "jet_order": 6, "t_degree": 6, "base_point": "1"},
      "method": "moyal",
      "checks": ["oracle-crosscheck", "determinantal", "hirota"]
    }

Rationals are strings ``"p/q"`` (or integers), polynomials are coefficient
arrays lowest degree first, labels are ``"h<l>"`` (``z^(l-1) dz``) or
``"p<q>^<k>"`` (``dz/(z-q)^k``), and tensors are arrays of
``{"indices", "hbar_degree", "value"}``.

Exit codes: 0 when every check passes, 1 when some check fails or errors,
2 on configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from . import __version__
from .convolution import (b_independence_check, blobbed_tr, convolve, deformation_delta_psi, duality_check,
                          tilde_form, with_kernel)
from .curve import BergmanKernel, SpectralCurveSpec, airy_curve, cubic_curve
from .errors import BlobTRError, CapOutOfRange, ConfigError, GoldenMismatch, ParseError, UnknownCheckName
from .gentr import ceo_oracle, gentr_system
from .kp import (determinantal_check, hirota_check, krichever_blob, kp_symmetry_check, nkp_hirota_check,
                 tau_from_omegas, theta_ring)
from .rational import Dual, eps_part, q_str, to_q
from .series import Series
from .tensors import Label, System, Tensor, genus_of, hol, pole

SCHEMA = "blobtr.report/1"
GOLDEN_SCHEMA = "blobtr.system/1"
CHECKS = ("determinantal", "hirota", "nkp", "b-independence", "deformation", "duality", "split-keypoints",
          "symmetry", "recursion-crosscheck", "oracle-crosscheck")
CAP_LIMITS = {"hbar_order": (0, 12), "n_max": (1, 24), "jet_order": (1, 40), "t_degree": (1, 16),
              "theta_degree": (1, 40)}
CAP_DEFAULTS = {"hbar_order": 3, "n_max": 3, "jet_order": 6, "t_degree": 6}

log = logging.getLogger("blobtr")


# ----------------------------------------------------------------------
# parsing

def parse_rational(value, where: str = "value"):
    if isinstance(value, bool) or not isinstance(value, (int, str)):
        raise ConfigError(f"{where}: expected an integer or a 'p/q' string, got {value!r}")
    try:
        return to_q(value)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"{where}: cannot read {value!r} as a rational") from exc


def parse_label(text: str) -> Label:
    """``"h3"`` or ``"p1/2^2"``."""
    if not isinstance(text, str) or len(text) < 2:
        raise ConfigError(f"bad label {text!r}")
    if text[0] == "h" and text[1:].isdigit() and int(text[1:]) >= 1:
        return hol(int(text[1:]))
    if text[0] == "p" and "^" in text:
        q, k = text[1:].rsplit("^", 1)
        if k.isdigit() and int(k) >= 1:
            return pole(parse_rational(q, f"label {text}"), int(k))
    raise ConfigError(f"bad label {text!r}")


def format_label(e: Label) -> str:
    if e[0] == "h":
        return f"h{e[1]}"
    return f"p{q_str(e[1])}^{e[2]}"


def parse_kernel(rows) -> BergmanKernel:
    if rows is None:
        return BergmanKernel.standard()
    beta = {}
    for row in rows:
        if not (isinstance(row, list) and len(row) == 3):
            raise ConfigError("B entries are [i, j, value]")
        i, j, c = row
        beta[(int(i), int(j))] = parse_rational(c, "B")
    try:
        return BergmanKernel.from_dict(beta)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_tensors(entries, kernel: Optional[BergmanKernel]) -> System:
    data: Dict[tuple, Dict[tuple, object]] = {}
    for ent in entries:
        idx = tuple(parse_label(x) for x in ent["indices"])
        d = int(ent.get("hbar_degree", 0))
        data.setdefault((d, len(idx)), {})[idx] = parse_rational(ent["value"], "tensor value")
    out = System({dn: Tensor(dn[1], v) for dn, v in data.items()})
    if kernel is not None:
        out[(0, 2)] = out[(0, 2)] + kernel.as_entry()
    return out


@dataclass
class JobSpec:
    curve: Optional[SpectralCurveSpec]
    blobs: dict
    B: BergmanKernel
    caps: Dict[str, int]
    base_point: object
    method: str
    checks: List[str]
    options: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)


def _parse_curve(c) -> Optional[SpectralCurveSpec]:
    if c is None:
        return None
    if not isinstance(c, dict):
        raise ConfigError("curve must be a table")
    preset = c.get("preset")
    if preset == "airy":
        spec = airy_curve()
    elif preset == "cubic":
        spec = cubic_curve(tuple(parse_rational(p, "key point") for p in c.get("key_points", [-1, 1])))
    elif preset is None:
        x = [parse_rational(v, "x") for v in c["x"]]
        y = [parse_rational(v, "y") for v in c["y"]]
        spec = SpectralCurveSpec.from_functions(x, y, [parse_rational(p, "key point") for p in c["key_points"]])
    else:
        raise ConfigError(f"unknown curve preset {preset!r}")
    if preset is not None and "key_points" in c and preset != "cubic":
        spec = spec.restrict_to([parse_rational(p, "key point") for p in c["key_points"]])
    return spec


def parse_job(text: str) -> JobSpec:
    """Parse and validate a JSON job.

    Raises
    ------
    ParseError
        Malformed JSON (with line and column).
    UnknownCheckName, CapOutOfRange, ConfigError
        Semantic problems.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from exc
    if not isinstance(raw, dict):
        raise ParseError("job must be a JSON object", 1, 1)
    caps = dict(CAP_DEFAULTS)
    for k, v in (raw.get("caps") or {}).items():
        if k == "base_point":
            continue
        if k not in CAP_LIMITS:
            raise ConfigError(f"unknown cap {k!r}")
        if isinstance(v, bool) or not isinstance(v, int):
            raise CapOutOfRange(f"cap {k} must be an integer")
        lo, hi = CAP_LIMITS[k]
        if not lo <= v <= hi:
            raise CapOutOfRange(f"cap {k}={v} outside [{lo}, {hi}]")
        caps[k] = v
    base = parse_rational((raw.get("caps") or {}).get("base_point", 1), "base_point")
    checks = raw.get("checks", [])
    if not isinstance(checks, list):
        raise ConfigError("checks must be an array")
    for name in checks:
        if name not in CHECKS:
            raise UnknownCheckName(f"unknown check {name!r}; known: {', '.join(CHECKS)}")
    method = raw.get("method", "moyal")
    if method not in ("moyal", "graphs", "recursion"):
        raise ConfigError(f"unknown convolution method {method!r}")
    blobs = raw.get("blobs") or {"kind": "trivial"}
    if blobs.get("kind") not in ("trivial", "theta", "tr-at-points", "tensors"):
        raise ConfigError(f"unknown blob kind {blobs.get('kind')!r}")
    try:
        curve = _parse_curve(raw.get("curve"))
    except KeyError as exc:
        raise ConfigError(f"curve is missing {exc.args[0]!r}") from exc
    except BlobTRError as exc:
        raise ConfigError(str(exc)) from exc
    return JobSpec(curve, blobs, parse_kernel(raw.get("B")), caps, base, method, list(checks),
                   raw.get("options") or {}, raw)


# ----------------------------------------------------------------------
# computation

def blob_system(job: JobSpec) -> Optional[System]:
    """The blob system of the job, or ``None`` for trivial blobs."""
    b = job.blobs
    kind = b["kind"]
    if kind == "trivial":
        return None
    if kind == "tensors":
        return parse_tensors(b.get("entries", []), job.B if b.get("kernel", True) else None)
    if kind == "theta":
        m = int(b["variables"])
        # every psi leg at hbar^H (at most 3H of them) may end on a blob
        deg = int(b.get("degree", job.caps.get("theta_degree", arity_cap(job) + 3 * job.caps["hbar_order"])))
        ring = theta_ring(m, deg)
        theta = Series(ring, {})
        for term in b.get("polynomial", [{"exponents": [0] * m, "value": 1}]):
            theta = theta + Series(ring, {tuple(term["exponents"]): parse_rational(term["value"], "theta")})
        lin = b.get("exp_linear")
        if lin:
            expo = Series(ring, {tuple(int(i == k) for i in range(m)): parse_rational(a, "exp_linear")
                                 for k, a in enumerate(lin)})
            theta = theta * expo.exp()
        eta = [{parse_label(k): parse_rational(v, "eta") for k, v in e.items()} for e in b["eta"]]
        return krichever_blob(theta, eta, job.B).system
    # TR at other points: omega = conv(psi, phi) handled in compute_system
    return None


KP_CHECKS = ("determinantal", "hirota", "nkp", "symmetry")


def arity_cap(job: JobSpec) -> int:
    """Arity cap of the computed system.

    KP checks read every arity that their truncation touches, so the cap is
    raised to ``max(jet_order, t_degree + 1)`` when one of them is requested.
    """
    n = job.caps["n_max"]
    if any(c in KP_CHECKS for c in job.checks):
        n = max(n, job.caps["jet_order"], job.caps["t_degree"] + 1)
    return n


def compute_system(job: JobSpec) -> System:
    """The system the checks run on: TR, blobbed TR, the blobs alone, or a TR-TR convolution."""
    H, N = job.caps["hbar_order"], arity_cap(job)
    blobs = blob_system(job)
    if job.blobs["kind"] == "tr-at-points":
        if job.curve is None:
            raise ConfigError("tr-at-points blobs need a curve")
        pts = [parse_rational(p, "blob point") for p in job.blobs["points"]]
        phi_spec = SpectralCurveSpec.from_functions(job.curve.x, job.curve.y, pts)
        psi = gentr_system(job.curve, job.B, H, H + 2)
        phi = gentr_system(phi_spec, job.B, H, H + 2)
        return with_kernel(convolve(tilde_form(psi, job.B), tilde_form(phi, job.B), job.curve.locations, H, N,
                                    job.method), job.B)
    if job.curve is None:
        if blobs is None:
            return System({(0, 2): job.B.as_entry()})
        return blobs.restrict(H, N)
    if blobs is None:
        return gentr_system(job.curve, job.B, H, N)
    return blobbed_tr(job.curve, blobs, job.B, H, N, job.method)


def _need_curve(job: JobSpec):
    if job.curve is None:
        raise ConfigError("this check needs a curve")
    return job.curve


def _system_diff(a: System, b: System) -> dict:
    diff = a.first_difference(b)
    if diff is None:
        return {"status": "pass"}
    dn, key, x, y = diff
    return {"status": "fail", "first_failure": {"entry": list(dn), "indices": [format_label(e) if isinstance(e, tuple)
                                                                               else str(e) for e in key],
                                                "expected": _fmt(y), "got": _fmt(x)}}


def _fmt(v):
    return v if isinstance(v, bool) else q_str(v)


def _check_oracle(job, system):
    spec = _need_curve(job)
    H = job.caps["hbar_order"]
    cache = System()
    out = {}
    for (d, n), t in system.items():
        g = genus_of(d, n)
        if g is None or d > H or (d, n) == (0, 2):
            continue
        out[(d, n)] = ceo_oracle(spec, job.B, g, n, cache)
    ref = System(out)
    mine = System({dn: t for dn, t in system.items() if dn in out})
    return _system_diff(mine, ref)


def _check_determinantal(job, system):
    J = job.caps["jet_order"]
    return determinantal_check(system, job.base_point, min(job.caps["n_max"], J), J, job.caps["hbar_order"])


def _check_hirota(job, system):
    D = job.caps["t_degree"]
    tau = tau_from_omegas(system, job.base_point, D + 1, job.caps["hbar_order"])
    return hirota_check(tau, D)


def _check_nkp(job, system):
    o = job.options.get("nkp", {})
    centers = [parse_rational(c, "nkp center") for c in o.get("centers", [2, 5])]
    return nkp_hirota_check(system, centers, o.get("s", [1, 0]), o.get("s_prime", [0, -1]),
                            o.get("miwa", [1, 0]), o.get("miwa_prime", [0, 1]), job.caps["hbar_order"])


def _check_symmetry(job, system):
    o = job.options.get("symmetry", {})
    qp, qm = (parse_rational(x, "symmetry point") for x in o.get("q", [2, 3]))
    pts = [parse_rational(x, "symmetry point") for x in o.get("points", [5, 7, 11])]
    for n in range(1, len(pts) + 1):
        rep = kp_symmetry_check(system, qp, qm, pts[:n], job.caps["hbar_order"])
        if rep["status"] != "pass":
            return rep
    return {"status": "pass", "n_max": len(pts)}


def _check_b_independence(job, system):
    spec = _need_curve(job)
    blobs = blob_system(job)
    if blobs is None:
        blobs = System({(0, 2): job.B.as_entry()})
    alt = parse_kernel(job.options.get("B_alt", [[1, 1, 1]]))
    return b_independence_check(spec, blobs, job.B, alt, job.caps["hbar_order"], job.caps["n_max"], job.method)


def _check_deformation(job, system):
    spec = _need_curve(job)
    delta = parse_kernel(job.options.get("delta_B", [[1, 1, 1]]))
    H, N = job.caps["hbar_order"], job.caps["n_max"]
    keys = set(job.B.delta) | set(delta.delta)
    dual = BergmanKernel.from_dict({k: Dual(job.B.delta.get(k, 0), delta.delta.get(k, 0)) for k in keys})
    sysd = gentr_system(spec, dual, H, N)
    base = gentr_system(spec, job.B, H, N + 1)
    for (d, n), t in sysd.items():
        g = genus_of(d, n)
        if d < 1 or g is None:
            continue
        expected = t.map_coeffs(eps_part)
        got = deformation_delta_psi(spec, job.B, delta, g, n, base)
        if expected != got:
            rep = _system_diff(System({(d, n): got}), System({(d, n): expected}))
            return rep
    return {"status": "pass"}


def _check_duality(job, system):
    spec = _need_curve(job)
    if job.blobs["kind"] != "tr-at-points":
        raise ConfigError("duality needs tr-at-points blobs")
    H, N = job.caps["hbar_order"], job.caps["n_max"]
    pts = [parse_rational(p, "blob point") for p in job.blobs["points"]]
    phi_spec = SpectralCurveSpec.from_functions(spec.x, spec.y, pts)
    psi = tilde_form(gentr_system(spec, job.B, H, H + 2), job.B)
    phi = tilde_form(gentr_system(phi_spec, job.B, H, H + 2), job.B)
    return duality_check(psi, spec.locations, phi, pts, H, N, job.method)


def _check_split(job, system):
    spec = _need_curve(job)
    if len(spec.locations) < 2:
        raise ConfigError("split-keypoints needs at least two key points")
    H, N = job.caps["hbar_order"], job.caps["n_max"]
    first = spec.locations[:1]
    rest = spec.locations[1:]
    full = gentr_system(spec, job.B, H, N)
    a = gentr_system(spec.restrict_to(first), job.B, H, H + 2)
    b = gentr_system(spec.restrict_to(rest), job.B, H, H + 2)
    conv = with_kernel(convolve(tilde_form(a, job.B), tilde_form(b, job.B), first, H, N, job.method), job.B)
    return _system_diff(conv, full.restrict(H, N))


def _check_methods(job, system):
    spec = _need_curve(job)
    H, N = job.caps["hbar_order"], job.caps["n_max"]
    blobs = blob_system(job)
    if blobs is None:
        blobs = System({(0, 2): job.B.as_entry()})
    psi = gentr_system(spec, job.B, H, H + 2)
    runs = {m: blobbed_tr(spec, blobs, job.B, H, N, m, psi) for m in ("moyal", "graphs", "recursion")}
    for m in ("graphs", "recursion"):
        rep = _system_diff(runs[m], runs["moyal"])
        if rep["status"] != "pass":
            rep["method"] = m
            return rep
    return {"status": "pass", "methods": ["moyal", "graphs", "recursion"]}


RUNNERS = {
    "determinantal": _check_determinantal, "hirota": _check_hirota, "nkp": _check_nkp,
    "b-independence": _check_b_independence, "deformation": _check_deformation, "duality": _check_duality,
    "split-keypoints": _check_split, "symmetry": _check_symmetry, "recursion-crosscheck": _check_methods,
    "oracle-crosscheck": _check_oracle,
}


def _run_one(args):
    name, job, system, timing = args
    t0 = time.perf_counter()
    try:
        rep = RUNNERS[name](job, system)
    except (BlobTRError, ValueError, ZeroDivisionError) as exc:
        rep = {"status": "fail", "error": type(exc).__name__, "reason": str(exc)}
    out = {"name": name}
    out.update(rep)
    if timing:
        out["seconds"] = round(time.perf_counter() - t0, 3)
    return out


def run_job(job: JobSpec, threads: int = 1, timing: bool = False) -> dict:
    """Compute the system and run the checks in order; engine errors become failed checks."""
    caps = dict(job.caps)
    caps["base_point"] = q_str(job.base_point)
    caps["arity_cap"] = arity_cap(job)
    report = {"schema": SCHEMA, "engine": __version__, "caps": caps, "method": job.method, "checks": []}
    if not job.checks:
        report["status"] = "pass"
        return report
    try:
        system = compute_system(job)
    except ConfigError:
        raise
    except (BlobTRError, ValueError, ZeroDivisionError) as exc:
        report["checks"] = [{"name": n, "status": "fail", "error": type(exc).__name__, "reason": str(exc)}
                            for n in job.checks]
        report["status"] = "fail"
        return report
    tasks = [(n, job, system, timing) for n in job.checks]
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]
    for r in results:
        log.info("%s: %s", r["name"], r["status"])
    report["checks"] = results
    report["status"] = "pass" if all(r["status"] == "pass" for r in results) else "fail"
    return report


# ----------------------------------------------------------------------
# golden files

def serialize_system(system: System) -> dict:
    """Canonical JSON form: sorted entries and indices, lowest-terms rationals."""
    entries = []
    for (d, n), t in system.items():
        for key, c in t.items():
            entries.append({"hbar_degree": d, "indices": [format_label(e) for e in key], "value": q_str(c)})
    kernel = sorted(dn[0] for dn, t in system.items() if t.diag)
    return {"schema": GOLDEN_SCHEMA, "kernel_at": kernel, "entries": entries}


def deserialize_system(data: dict) -> System:
    out = System()
    acc: Dict[tuple, Dict[tuple, object]] = {}
    for ent in data["entries"]:
        key = tuple(parse_label(x) for x in ent["indices"])
        acc.setdefault((ent["hbar_degree"], len(key)), {})[key] = to_q(ent["value"])
    for dn, v in acc.items():
        out[dn] = Tensor(dn[1], v)
    for d in data.get("kernel_at", []):
        out[(d, 2)] = out[(d, 2)].with_diag()
    return out


def dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def emit_golden(job: JobSpec, path: str) -> dict:
    data = serialize_system(compute_system(job))
    with open(path, "w") as fh:
        fh.write(dumps(data))
    return {"schema": SCHEMA, "engine": __version__, "golden": path, "entries": len(data["entries"]),
            "status": "pass"}


def compare_golden(job: JobSpec, path: str) -> dict:
    """Exact comparison against a golden file.

    Raises
    ------
    GoldenMismatch
        With the first differing entry.
    """
    with open(path) as fh:
        try:
            stored = deserialize_system(json.load(fh))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise ConfigError(f"unreadable golden file {path}: {exc}") from exc
    rep = _system_diff(compute_system(job), stored)
    if rep["status"] != "pass":
        raise GoldenMismatch(json.dumps(rep["first_failure"], sort_keys=True))
    return {"schema": SCHEMA, "engine": __version__, "golden": path, "status": "pass"}


# ----------------------------------------------------------------------
# entry point

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="blobtr", description="Blobbed topological recursion and KP checks.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--job", required=True, help="JSON job file")
    common.add_argument("--threads", type=int, default=1, help="worker processes for independent checks")
    common.add_argument("--report", help="write the JSON report here instead of stdout")
    common.add_argument("--log-level", default="WARNING", help="logging level")
    common.add_argument("--timing", action="store_true", help="record per-check wall time in the report")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("compute", parents=[common], help="compute the system and print it canonically")
    sub.add_parser("verify", parents=[common], help="run the job's checks")
    g = sub.add_parser("golden", help="write or check a golden file")
    gs = g.add_subparsers(dest="action", required=True)
    for action in ("write", "check"):
        a = gs.add_parser(action, parents=[common])
        a.add_argument("path", help="golden file")
    return p


def _emit(obj, path: Optional[str]) -> None:
    text = dumps(obj)
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with open(args.job) as fh:
            job = parse_job(fh.read())
        if args.command == "compute":
            _emit(serialize_system(compute_system(job)), args.report)
            return 0
        if args.command == "verify":
            rep = run_job(job, max(1, args.threads), args.timing)
            _emit(rep, args.report)
            return 0 if rep["status"] == "pass" else 1
        if args.action == "write":
            _emit(emit_golden(job, args.path), args.report)
            return 0
        try:
            _emit(compare_golden(job, args.path), args.report)
            return 0
        except GoldenMismatch as exc:
            _emit({"schema": SCHEMA, "engine": __version__, "golden": args.path, "status": "fail",
                   "first_failure": json.loads(str(exc))}, args.report)
            return 1
    except OSError as exc:
        log.error("%s", exc)
        return 2
    except ConfigError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 2
    except BlobTRError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 1


__all__ = ["JobSpec", "parse_job", "run_job", "compute_system", "serialize_system", "deserialize_system",
           "emit_golden", "compare_golden", "main", "CHECKS", "SCHEMA"]
