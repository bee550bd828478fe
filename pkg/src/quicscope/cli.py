"""Command-line entry point wiring the toolkit into reproducible pipelines.

Subcommands: simulate, ingest, fingerprint, scid, classify, probe, report.
Every run writes a manifest next to its outputs; identical manifests yield
byte-identical outputs. Exit codes: 0 success, 1 usage, 2 input error,
3 analysis precondition unmet.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

from . import __version__
from . import fingerprint as fp
from . import offnet, probe, scid, sim, tables
from .ingest import (
    IngestCounters,
    PrefixTable,
    ScannerList,
    annotate_operators,
    ingest,
    sanitize,
    sessionize,
)
from .pcap import UnreadableCapture, write_pcap
from .wire import Direction, PlausibilityConfig, VersionRegistry

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_PRECONDITION = 3

ANYCAST_WARNING = (
    "warning: load-balancer probing against real networks is unreliable under "
    "IP anycast; follow-up probes may reach a different site entirely"
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _require(path: Optional[str], what: str) -> Optional[Path]:
    if path is None:
        return None
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _registry(args) -> VersionRegistry:
    if getattr(args, "registry", None):
        return VersionRegistry.load(_require(args.registry, "version registry"))
    return VersionRegistry.default()


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- simulate ----------------------------------------------------------------


def cmd_simulate(args) -> int:
    config_path = _require(args.config, "deployment config")
    config = sim.DeploymentConfig.from_json(config_path)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    result = sim.simulate_flood(config)
    out = _out_dir(args)
    capture_path = out / "capture.pcap"
    write_pcap(capture_path, result.datagrams)
    truth_path = tables.write_jsonl(
        out / "truth.jsonl",
        (
            {
                "vip": t.vip,
                "source": t.source,
                "source_port": t.source_port,
                "operator": t.operator,
                "server_scid": t.server_scid.hex(),
                "client_dcid": t.client_dcid.hex(),
                "client_scid": t.client_scid.hex(),
                "host_id": t.host_id,
                "worker_id": t.worker_id,
            }
            for t in result.truth
        ),
    )
    pairs_path = tables.write_table(
        out / "pairs.tsv",
        ["operator", "server_scid", "client_dcid"],
        [(t.operator, t.server_scid.hex(), t.client_dcid.hex()) for t in result.truth],
        fmt=args.format,
    )
    tables.write_manifest(
        out,
        "simulate",
        __version__,
        config.seed,
        {"config": str(config_path)},
        [capture_path.name, truth_path.name, pairs_path.name],
        parameters={"datagrams": len(result.datagrams), "handshakes": len(result.truth)},
    )
    print(f"simulate: {len(result.truth)} handshakes, {len(result.datagrams)} datagrams -> {capture_path}")
    return EXIT_OK


# --- ingest ------------------------------------------------------------------


def cmd_ingest(args) -> int:
    capture = _require(args.capture, "capture file")
    prefix_table = None
    if args.prefix_table:
        prefix_table = PrefixTable.load(_require(args.prefix_table, "prefix table"))
    scanners = None
    if args.scanner_list:
        scanners = ScannerList.load(_require(args.scanner_list, "scanner list"))
    registry = _registry(args)
    plausibility = PlausibilityConfig(
        registry=registry,
        allow_greased=args.allow_greased,
        allow_unknown=args.allow_unknown_versions,
    )
    counters = IngestCounters()
    stream = ingest(capture, plausibility, counters=counters)
    if scanners is not None:
        stream = sanitize(stream, scanners, counters)
    if prefix_table is not None:
        stream = annotate_operators(stream, prefix_table)
    records = list(stream)
    sessions = sessionize(records, idle_gap=args.idle_gap)

    out = _out_dir(args)
    sessions_path = tables.save_sessions(out / "sessions.jsonl", sessions)
    datagrams_path = tables.save_datagrams(out / "datagrams.jsonl", records)
    counters_path = tables.write_table(
        out / "counters.tsv",
        ["metric", "value"],
        sorted(counters.as_dict().items()),
        fmt=args.format,
    )
    tables.write_manifest(
        out,
        "ingest",
        __version__,
        None,
        {
            "capture": str(capture),
            "prefix_table": args.prefix_table,
            "scanner_list": args.scanner_list,
            "registry": args.registry,
        },
        [sessions_path.name, datagrams_path.name, counters_path.name],
        parameters={"idle_gap": args.idle_gap, "sessions": len(sessions), "records": len(records)},
    )
    print(
        f"ingest: {counters.emitted} records, {len(sessions)} sessions, "
        f"{counters.removed_fraction():.1%} removed by sanitization"
    )
    return EXIT_OK


# --- fingerprint -------------------------------------------------------------


def _response_scids(rows, operator: str) -> list[bytes]:
    out = []
    for row in rows:
        if row.operator != operator or row.direction != Direction.RESPONSE:
            continue
        out.extend(p.scid.data for p in row.packets)
    return sorted(set(out))


def cmd_fingerprint(args) -> int:
    sessions = tables.load_sessions(_require(args.sessions, "session store"))
    rows = tables.load_datagrams(_require(args.datagrams, "datagram store"))
    registry = _registry(args)
    known = fp.load_known_profiles(args.profiles and _require(args.profiles, "profile table"))
    out = _out_dir(args)

    tally = fp.version_tally(sessions, registry)
    tally_path = tables.write_table(
        out / "version_tally.tsv",
        ["role", "version", "sessions", "share"],
        tally.rows(),
        fmt=args.format,
    )

    stats = fp.packet_type_stats(rows)
    stats_rows = []
    for operator in sorted(stats.counts):
        for category, pct in stats.percentages(operator).items():
            stats_rows.append((operator, category, stats.counts[operator][category], pct))
    stats_path = tables.write_table(
        out / "packet_types.tsv",
        ["operator", "category", "datagrams", "percent"],
        stats_rows,
        fmt=args.format,
    )

    hist = fp.length_histogram(rows)
    hist_rows = []
    for operator in sorted(hist.counts):
        for types, length, count in hist.top(operator, k=args.top_lengths):
            hist_rows.append((operator, ",".join(types), length, count))
    hist_path = tables.write_table(
        out / "lengths.tsv",
        ["operator", "types", "length", "count"],
        hist_rows,
        fmt=args.format,
    )

    operators = sorted({s.operator for s in sessions if s.operator is not None})
    by_operator = {op: [s for s in sessions if s.operator == op] for op in operators}
    resend_rows = []
    for op in operators:
        for count, n in fp.resend_count_distribution(by_operator[op]).items():
            resend_rows.append((op, count, n))
    resends_path = tables.write_table(
        out / "resends.tsv",
        ["operator", "resend_rounds", "sessions"],
        resend_rows,
        fmt=args.format,
    )

    rto_rows = []
    match_rows = []
    for op in operators:
        try:
            estimate = fp.estimate_rto(by_operator[op], min_sessions=args.min_sessions)
        except fp.InsufficientData:
            continue
        rto_rows.append(
            (
                op,
                estimate.sample_count,
                estimate.initial_rto,
                estimate.backoff_base,
                estimate.max_retransmissions[0],
                estimate.max_retransmissions[1],
            )
        )
        scids = _response_scids(rows, op)
        scheme = None
        try:
            scheme = scid.classify_scheme(scids, alpha=args.alpha, min_samples=args.min_scids)
        except scid.ScidAnalysisError:
            pass
        op_rows = [r for r in rows if r.operator == op]
        profile = fp.observed_profile(op, by_operator[op], op_rows, scheme, min_sessions=args.min_sessions)
        matched = fp.match_profile(profile, known)
        match_rows.append(
            (
                op,
                matched or "Unknown",
                profile.rto.initial_rto,
                profile.coalescence,
                profile.structured_scids,
                scheme.kind.value if scheme else "",
            )
        )
    rto_path = tables.write_table(
        out / "rto.tsv",
        ["operator", "sessions", "initial_rto", "backoff_base", "count_p5", "count_p95"],
        rto_rows,
        fmt=args.format,
    )
    match_path = tables.write_table(
        out / "matches.tsv",
        ["operator", "matched", "initial_rto", "coalescence", "structured_scids", "scheme"],
        match_rows,
        fmt=args.format,
    )
    tables.write_manifest(
        out,
        "fingerprint",
        __version__,
        None,
        {"sessions": args.sessions, "datagrams": args.datagrams, "profiles": args.profiles, "registry": args.registry},
        [p.name for p in (tally_path, stats_path, hist_path, resends_path, rto_path, match_path)],
        parameters={"min_sessions": args.min_sessions, "alpha": args.alpha, "min_scids": args.min_scids},
    )
    print(f"fingerprint: {len(operators)} operators, {len(match_rows)} matched rows")
    return EXIT_OK


# --- scid --------------------------------------------------------------------


def _load_pairs(path: Path) -> dict[str, list[tuple[bytes, bytes]]]:
    _, rows = tables.read_table(path)
    pairs: dict[str, list[tuple[bytes, bytes]]] = {}
    for row in rows:
        pairs.setdefault(row["operator"], []).append(
            (bytes.fromhex(row["server_scid"]), bytes.fromhex(row["client_dcid"]))
        )
    return pairs


def cmd_scid(args) -> int:
    populations: dict[str, list[bytes]] = {}
    if args.scids:
        hex_lines = Path(_require(args.scids, "SCID file")).read_text().splitlines()
        populations["all"] = [bytes.fromhex(line.strip()) for line in hex_lines if line.strip()]
    elif args.datagrams:
        rows = tables.load_datagrams(_require(args.datagrams, "datagram store"))
        for row in rows:
            if row.direction != Direction.RESPONSE:
                continue
            op = row.operator or "Unknown"
            if args.operator and op != args.operator:
                continue
            populations.setdefault(op, []).extend(p.scid.data for p in row.packets)
    else:
        raise FileNotFoundError("need --scids or --datagrams")
    populations = {op: sorted(set(scids)) for op, scids in populations.items()}

    pairs = _load_pairs(_require(args.pairs, "pairs file")) if args.pairs else {}
    out = _out_dir(args)
    nybble_rows = []
    uniformity_rows = []
    scheme_rows = []
    length_rows = []
    for op in sorted(populations):
        scids_all = populations[op]
        by_length: dict[int, list[bytes]] = {}
        for s in scids_all:
            by_length.setdefault(len(s), []).append(s)
        for length in sorted(by_length):
            length_rows.append((op, length, len(set(by_length[length]))))
        for length in sorted(by_length):
            group = by_length[length]
            matrix = scid.nybble_frequencies(group)
            for pos, value, count, rel in matrix.rows():
                nybble_rows.append((op, length, pos, value, count, rel))
            try:
                verdicts = scid.uniformity_test(matrix, alpha=args.alpha, min_samples=args.min_samples)
            except scid.InsufficientSamples:
                continue
            for pos, verdict in enumerate(verdicts):
                uniformity_rows.append((op, length, pos, verdict.value))
        # scheme classification over the modal-length group
        modal_length = max(by_length, key=lambda k: len(by_length[k]))
        group = by_length[modal_length]
        op_pairs = pairs.get(op)
        if op_pairs is None and len(populations) == 1 and pairs:
            # unlabeled population: apply the whole pairs file
            op_pairs = [pair for group_pairs in pairs.values() for pair in group_pairs]
        scheme_kind = ""
        flagged = ""
        try:
            if op_pairs:
                result = scid.classify_scheme(
                    [s for s, _ in op_pairs],
                    client_dcids=[d for _, d in op_pairs],
                    alpha=args.alpha,
                    min_samples=args.min_samples,
                )
            else:
                result = scid.classify_scheme(group, alpha=args.alpha, min_samples=args.min_samples)
            scheme_kind = result.kind.value
            flagged = ",".join(str(p) for p in sorted(result.flagged_positions))
        except scid.ScidAnalysisError:
            scheme_kind = "insufficient_data"
        scheme_rows.append(
            (op, len(group), modal_length, scheme_kind, flagged, scid.detect_cloudflare_signature(group))
        )

    nybbles_path = tables.write_table(
        out / "nybbles.tsv",
        ["operator", "length", "position", "value", "count", "rel_freq"],
        nybble_rows,
        fmt=args.format,
    )
    uniformity_path = tables.write_table(
        out / "uniformity.tsv",
        ["operator", "length", "position", "verdict"],
        uniformity_rows,
        fmt=args.format,
    )
    schemes_path = tables.write_table(
        out / "schemes.tsv",
        ["operator", "scids", "length", "scheme", "flagged_positions", "cloudflare_signature"],
        scheme_rows,
        fmt=args.format,
    )
    lengths_path = tables.write_table(
        out / "scid_lengths.tsv",
        ["operator", "length", "unique_scids"],
        length_rows,
        fmt=args.format,
    )
    tables.write_manifest(
        out,
        "scid",
        __version__,
        None,
        {"datagrams": args.datagrams, "scids": args.scids, "pairs": args.pairs},
        [p.name for p in (nybbles_path, uniformity_path, schemes_path, lengths_path)],
        parameters={"alpha": args.alpha, "min_samples": args.min_samples},
    )
    print(f"scid: {len(populations)} populations analyzed")
    return EXIT_OK


# --- classify ----------------------------------------------------------------


def cmd_classify(args) -> int:
    rows = tables.load_datagrams(_require(args.datagrams, "datagram store"))
    truth = offnet.GroundTruth.load(_require(args.truth, "ground-truth labels"))
    params = offnet.RuleParams.load(_require(args.rules, "rule set")) if args.rules else offnet.RuleParams()

    inputs = offnet.collect_source_inputs(rows, idle_gap=args.idle_gap)
    # on-net rows of the target operator provide the packet-length reference
    reference_shapes = set()
    labeled_sources = set()
    for row in rows:
        if row.direction != Direction.RESPONSE:
            continue
        if row.operator is not None:
            labeled_sources.add(row.src_ip)
        if row.operator == params.target_operator:
            types = tuple(fp.TYPE_LABELS[p.packet_type] for p in row.packets)
            reference_shapes.add((types, row.datagram_length))
    if reference_shapes and params.reference_shapes is None:
        params = replace(params, reference_shapes=frozenset(reference_shapes))

    candidates = sorted(src for src in inputs if src not in labeled_sources)
    features = {src: offnet.extract_features(inputs[src], min_rto_sessions=args.min_rto_sessions) for src in candidates}

    rules = offnet.RULE_NAMES if args.rule == "all" else (args.rule,)
    for rule in rules:
        if rule not in offnet.RULE_NAMES:
            raise offnet.UnknownRule(f"no rule named {rule!r}")
    out = _out_dir(args)
    feature_rows = []
    for src in candidates:
        f = features[src]
        feature_rows.append(
            (
                src,
                f.scid_scheme_match or "",
                f.scid_structured,
                f.coalescence,
                f.rto_signature.initial_rto if f.rto_signature else None,
                f.rto_signature.backoff_base if f.rto_signature else None,
                f.low_host_id,
                len(f.length_signature),
            )
        )
    features_path = tables.write_table(
        out / "features.tsv",
        ["source", "scheme_match", "structured", "coalescence", "initial_rto", "backoff", "low_host_id", "shapes"],
        feature_rows,
        fmt=args.format,
    )
    prediction_rows = []
    metric_rows = []
    for rule in rules:
        predictions = {src: offnet.classify(features[src], rule, params) for src in candidates}
        prediction_rows.extend((rule, src, predictions[src]) for src in candidates)
        metrics = offnet.evaluate(predictions, truth, params.target_operator)
        metric_rows.append(
            (
                rule,
                metrics.tp,
                metrics.fp,
                metrics.tn,
                metrics.fn,
                metrics.tpr,
                metrics.fpr,
                metrics.tnr,
                metrics.fnr,
                metrics.precision,
                metrics.recall,
            )
        )
    predictions_path = tables.write_table(
        out / "predictions.tsv", ["rule", "source", "label"], prediction_rows, fmt=args.format
    )
    metrics_path = tables.write_table(
        out / "metrics.tsv",
        ["rule", "tp", "fp", "tn", "fn", "tpr", "fpr", "tnr", "fnr", "precision", "recall"],
        metric_rows,
        fmt=args.format,
    )
    tables.write_manifest(
        out,
        "classify",
        __version__,
        None,
        {"datagrams": args.datagrams, "truth": args.truth, "rules": args.rules},
        [p.name for p in (features_path, predictions_path, metrics_path)],
        parameters={"rule": args.rule, "min_rto_sessions": args.min_rto_sessions},
    )
    print(f"classify: {len(candidates)} candidate sources, {len(rules)} rules")
    return EXIT_OK


# --- probe -------------------------------------------------------------------


def _build_transport(args):
    if args.transport == "sim":
        config = sim.DeploymentConfig.from_json(_require(args.sim_config, "deployment config"))
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        simulator = sim.DeploymentSimulator(config)
        transport = probe.SimulatorTransport(simulator, seed=config.seed)
        all_vips = [vip for cluster in simulator.clusters for vip in cluster.vips]
        return transport, all_vips
    print(ANYCAST_WARNING, file=sys.stderr)
    return probe.RawNetworkTransport(seed=args.seed or 0), []


def cmd_probe(args) -> int:
    if args.campaign_config:
        raw = json.loads(Path(_require(args.campaign_config, "campaign config")).read_text())
        args.targets = ",".join(raw.get("targets", [])) or args.targets
        args.handshakes = raw.get("handshakes_per_vip", args.handshakes)
        args.port_strategy = raw.get("port_strategy", args.port_strategy)
        args.inter_probe_gap = raw.get("inter_probe_gap", args.inter_probe_gap)
        if args.seed is None:
            args.seed = raw.get("seed")
    transport, sim_vips = _build_transport(args)
    if args.targets == "all":
        targets = sim_vips
        if not targets:
            raise FileNotFoundError("--targets all requires --transport sim with a deployment config")
    else:
        targets = [t for t in args.targets.split(",") if t]
    codec = probe.facebook_host_codec if args.codec == "facebook" else None
    out = _out_dir(args)
    outputs = []
    if args.mode == "harvest":
        if codec is None:
            raise FileNotFoundError("harvest mode needs a host-ID codec (--codec facebook)")
        campaign = probe.ProbeCampaign(
            targets=targets,
            handshakes_per_vip=args.handshakes,
            port_strategy=probe.PortStrategy(args.port_strategy),
            inter_probe_gap=args.inter_probe_gap,
            seed=args.seed or 0,
        )
        harvests = probe.run_campaign(campaign, transport, codec=codec)
        harvest_rows = []
        unique_rows = []
        curve_rows = []
        for vip in targets:
            h = harvests[vip]
            harvest_rows.extend((vip, index, host_id) for index, host_id in h.observations)
            unique_rows.append((vip, h.attempts, h.failures, len(h.unique_ids)))
            for handshakes, fraction in probe.discovery_curve(h):
                curve_rows.append((vip, handshakes, fraction))
        outputs.append(tables.write_table(out / "harvest.tsv", ["vip", "handshake", "host_id"], harvest_rows, fmt=args.format))
        outputs.append(tables.write_table(out / "unique.tsv", ["vip", "attempts", "failures", "unique_ids"], unique_rows, fmt=args.format))
        outputs.append(tables.write_table(out / "discovery.tsv", ["vip", "handshakes", "fraction"], curve_rows, fmt=args.format))
        if len(targets) >= 2:
            report = probe.cluster_vips(harvests, threshold=args.threshold)
            cluster_rows = [
                (index, vip) for index, cluster in enumerate(report.clusters) for vip in cluster
            ]
            outputs.append(tables.write_table(out / "clusters.tsv", ["cluster", "vip"], cluster_rows, fmt=args.format))
    else:
        verdict_rows = []
        for vip in targets:
            verdict = probe.detect_lb_type(
                vip,
                transport,
                probe_interval=args.probe_interval,
                max_wait=args.max_wait,
                codec=codec,
                seed=args.seed or 0,
            )
            verdict_rows.append(
                (vip, verdict.kind.value, verdict.fail_window, verdict.held_host_id, verdict.followup_host_id)
            )
        outputs.append(
            tables.write_table(
                out / "verdicts.tsv",
                ["vip", "verdict", "fail_window", "held_host_id", "followup_host_id"],
                verdict_rows,
                fmt=args.format,
            )
        )
    tables.write_manifest(
        out,
        "probe",
        __version__,
        args.seed,
        {"sim_config": args.sim_config},
        [p.name for p in outputs],
        parameters={
            "mode": args.mode,
            "targets": args.targets,
            "handshakes": args.handshakes,
            "port_strategy": args.port_strategy,
        },
    )
    print(f"probe: mode={args.mode}, {len(targets)} targets")
    return EXIT_OK


# --- report ------------------------------------------------------------------


def cmd_report(args) -> int:
    in_dir = Path(args.in_dir)
    out = _out_dir(args)

    def maybe_rows(name: str) -> list[dict[str, str]]:
        path = in_dir / name
        if not path.exists():
            return []
        return tables.read_table(path)[1]

    tally_rows = maybe_rows("version_tally.tsv")
    versions = sorted({r["version"] for r in tally_rows})
    version_out = []
    for version in versions:
        client = next((r for r in tally_rows if r["version"] == version and r["role"] == "client"), None)
        server = next((r for r in tally_rows if r["version"] == version and r["role"] == "server"), None)

        def pct(row):
            return round(100 * float(row["share"]), 1) if row else None

        version_out.append((version, pct(client), pct(server)))
    version_path = tables.write_table(
        out / "version_table.tsv",
        ["version", "clients_pct", "servers_pct"],
        version_out,
        fmt=args.format,
    )

    type_rows = maybe_rows("packet_types.tsv")
    operators = sorted({r["operator"] for r in type_rows})
    categories = sorted({r["category"] for r in type_rows})
    type_out = []
    for category in categories:
        row = [category]
        for op in operators:
            hit = next((r for r in type_rows if r["operator"] == op and r["category"] == category), None)
            row.append(round(float(hit["percent"]), 3) if hit else 0.0)
        type_out.append(tuple(row))
    types_path = tables.write_table(
        out / "packet_type_table.tsv",
        ["category"] + operators,
        type_out,
        fmt=args.format,
    )

    match_rows = {r["operator"]: r for r in maybe_rows("matches.tsv")}
    rto_rows = {r["operator"]: r for r in maybe_rows("rto.tsv")}
    deployment_out = []
    for op in sorted(set(match_rows) | set(rto_rows)):
        match = match_rows.get(op, {})
        rto = rto_rows.get(op, {})
        retransmissions = (
            f"{rto['count_p5']}-{rto['count_p95']}" if rto else ""
        )
        deployment_out.append(
            (
                op,
                match.get("coalescence", ""),
                match.get("structured_scids", ""),
                match.get("scheme", ""),
                rto.get("initial_rto", ""),
                retransmissions,
                match.get("matched", ""),
            )
        )
    deployment_path = tables.write_table(
        out / "deployment_table.tsv",
        ["operator", "coalescence", "structured_scids", "scheme", "initial_rto", "retransmissions", "matched"],
        deployment_out,
        fmt=args.format,
    )
    tables.write_manifest(
        out,
        "report",
        __version__,
        None,
        {"in_dir": str(in_dir)},
        [version_path.name, types_path.name, deployment_path.name],
    )
    print(f"report: {len(deployment_out)} operators summarized")
    return EXIT_OK


# --- argument wiring ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="quicscope", description=__doc__)
    parser.add_argument("--version", action="version", version=f"quicscope {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--out-dir", required=True, help="directory for outputs and the run manifest")
        p.add_argument("--format", choices=("tsv", "jsonl"), default="tsv")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("simulate", help="generate synthetic backscatter from a deployment config")
    common(p)
    p.add_argument("--config", required=True, help="deployment config (JSON)")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("ingest", help="read a capture, filter QUIC, sessionize")
    common(p)
    p.add_argument("--capture", required=True)
    p.add_argument("--prefix-table", default=None, help="prefix<TAB>asn<TAB>label file")
    p.add_argument("--scanner-list", default=None, help="acknowledged scanner prefixes")
    p.add_argument("--registry", default=None, help="version registry file")
    p.add_argument("--idle-gap", type=float, default=60.0)
    p.add_argument("--allow-unknown-versions", action="store_true")
    p.add_argument("--allow-greased", action="store_true")
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("fingerprint", help="derive stack configurations per operator")
    common(p)
    p.add_argument("--sessions", required=True)
    p.add_argument("--datagrams", required=True)
    p.add_argument("--profiles", default=None)
    p.add_argument("--registry", default=None)
    p.add_argument("--min-sessions", type=int, default=30)
    p.add_argument("--alpha", type=float, default=0.001)
    p.add_argument("--min-scids", type=int, default=500)
    p.add_argument("--top-lengths", type=int, default=7)
    p.set_defaults(handler=cmd_fingerprint)

    p = sub.add_parser("scid", help="connection-ID structure analysis")
    common(p)
    p.add_argument("--datagrams", default=None)
    p.add_argument("--scids", default=None, help="hex-encoded SCIDs, one per line")
    p.add_argument("--pairs", default=None, help="operator/server_scid/client_dcid table")
    p.add_argument("--operator", default=None)
    p.add_argument("--alpha", type=float, default=0.001)
    p.add_argument("--min-samples", type=int, default=500)
    p.set_defaults(handler=cmd_scid)

    p = sub.add_parser("classify", help="off-net detection and evaluation")
    common(p)
    p.add_argument("--datagrams", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--rules", default=None)
    p.add_argument("--rule", default="all")
    p.add_argument("--idle-gap", type=float, default=60.0)
    p.add_argument("--min-rto-sessions", type=int, default=5)
    p.set_defaults(handler=cmd_classify)

    p = sub.add_parser("probe", help="active campaigns (simulator loopback by default)")
    common(p)
    p.add_argument("--transport", choices=("sim", "raw"), default="sim")
    p.add_argument("--sim-config", default=None)
    p.add_argument("--campaign-config", default=None, help="JSON campaign file (targets, handshakes_per_vip, port_strategy, inter_probe_gap, seed)")
    p.add_argument("--targets", default="all", help="comma-separated VIPs or 'all'")
    p.add_argument("--mode", choices=("harvest", "lbtype"), default="harvest")
    p.add_argument("--handshakes", type=int, default=1000)
    p.add_argument("--port-strategy", choices=[s.value for s in probe.PortStrategy], default="decreasing_from_max")
    p.add_argument("--inter-probe-gap", type=float, default=0.0)
    p.add_argument("--probe-interval", type=float, default=1.0)
    p.add_argument("--max-wait", type=float, default=600.0)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--codec", choices=("facebook", "none"), default="facebook")
    p.set_defaults(handler=cmd_probe)

    p = sub.add_parser("report", help="join analysis outputs into summary tables")
    common(p)
    p.add_argument("--in-dir", required=True)
    p.set_defaults(handler=cmd_report)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (
        FileNotFoundError,
        UnreadableCapture,
        sim.InvalidConfig,
        json.JSONDecodeError,
        ValueError,
    ) as exc:
        if isinstance(exc, _PRECONDITION_ERRORS):
            print(f"quicscope: {exc}", file=sys.stderr)
            return EXIT_PRECONDITION
        print(f"quicscope: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except _PRECONDITION_ERRORS as exc:
        print(f"quicscope: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


_PRECONDITION_ERRORS = (
    fp.InsufficientData,
    scid.InsufficientSamples,
    scid.MixedLengths,
    offnet.MissingLabel,
    offnet.UnknownRule,
    probe.ProbeError,
)


if __name__ == "__main__":
    raise SystemExit(main())
