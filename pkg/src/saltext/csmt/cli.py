"""
``csmt`` command line.

Exit codes: 0 on success or a verified proof, 1 when a verification fails, 2 on usage
and operational errors.
"""
import argparse
import logging
import sys

import salt.utils.files
import salt.utils.json
import salt.utils.yaml
from salt.exceptions import SaltException

from saltext.csmt.utils import core
from saltext.csmt.utils import phr as phr_mod
from saltext.csmt.utils import stats
from saltext.csmt.utils import verifier
from saltext.csmt.utils.config import load_settings
from saltext.csmt.utils.deployment import Deployment
from saltext.csmt.utils.deployment import read_artifacts
from saltext.csmt.utils.exceptions import UsageError
from saltext.csmt.utils.proofsys import VerificationKey

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_ERROR = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text):
    try:
        return [float(value) for value in text.split(",") if value.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(value) for value in text.split(",") if value.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from None


def _names(text):
    return [value.strip() for value in text.split(",") if value.strip()]


def _read_json(path):
    with salt.utils.files.fopen(path, "r") as fil:
        return salt.utils.json.load(fil)


def _emit(data, output=None):
    text = salt.utils.json.dumps(data, sort_keys=True, indent=2)
    if output:
        with salt.utils.files.fopen(output, "w") as fil:
            fil.write(text + "\n")
    else:
        print(text)


def _settings(args):
    overrides = {
        "scale": getattr(args, "scale", None),
        "tree_height": args.tree_height,
        "state_dir": args.state_dir,
        "witness_key": args.witness_key,
        "backend_seed": args.backend_seed,
        "security_bits": args.security_bits,
        "salt_length": args.salt_length,
        "host": args.host,
        "port": args.port,
        "workers": args.workers,
        "api_token": args.api_token,
        "log_level": args.log_level,
    }
    return load_settings(overrides)


def _outcome(outcome, quiet=False):
    if not quiet:
        _emit(outcome.to_dict())
    return EXIT_OK if outcome else EXIT_FAILED


def cmd_phr_register(args, deployment):
    if args.csv:
        records = phr_mod.import_cohort_csv(args.csv)
    else:
        records = [(args.user, args.values)]
    entries = deployment.register_records(records)
    _emit({"registered": len(entries), "phr_root": deployment.phr.root.hex()})
    return EXIT_OK


def cmd_phr_prove(args, deployment):
    entry = deployment.phr.entry(args.user)
    path = deployment.phr.prove_membership(entry.h_raw, entry.h_tau)
    _emit({**entry.to_dict(), "audit_path": path.to_dict()}, args.output)
    return EXIT_OK


def cmd_study_build(args, deployment):
    transform = args.transform
    if args.transform_file:
        with salt.utils.files.fopen(args.transform_file, "r") as fil:
            transform = salt.utils.yaml.safe_load(fil)
    if not transform:
        raise UsageError("study build needs --transform or --transform-file")
    result = deployment.build_study(args.study, transform, args.include, None, args.aggregator, args.tree_id)
    _emit(result.record)
    return EXIT_OK


def cmd_prove_ltr(args, deployment):
    body = deployment.root_record(args.study, args.tree_id)["body"]
    entry = deployment.phr.entry(args.user)
    h_tau = core.Digest.from_hex(deployment.cro.delivery(body["tree_id"], args.user))
    h_leaf, index, artifact = deployment.cro.cro_ltr_prove(entry.h_raw, h_tau, body["transform_id"])
    _emit(
        {
            "study_id": args.study,
            "tree_id": body["tree_id"],
            "user_id": args.user,
            "h_raw": entry.h_raw.hex(),
            "h_tau": h_tau.hex(),
            "h_leaf": h_leaf.hex(),
            "index": index,
            "artifact": artifact.to_dict(),
        },
        args.output,
    )
    return EXIT_OK


def cmd_prove_mrp(args, deployment):
    nonce = bytes.fromhex(args.nonce) if args.nonce else None
    _emit(deployment.prove_user(args.study, args.user, args.tree_id, nonce), args.output)
    return EXIT_OK


def _endpoints(args, deployment):
    if args.remote:
        from saltext.csmt.service.client import RemoteEndpoints  # pylint: disable=import-outside-toplevel

        return RemoteEndpoints(args.remote, args.api_token)
    return deployment.endpoints


def _verify_membership(args, expected):
    if args.bundle:
        outcome = verifier.verify_proof_bundle(_read_json(args.bundle), args.public_key)
    else:
        if not (args.study and args.user):
            raise UsageError("verify needs a bundle file or --study and --user")
        deployment = Deployment(_settings(args))
        outcome = verifier.cosmetic_verifier(args.user, _endpoints(args, deployment), args.study, args.tree_id)
        if args.output and outcome.bundle:
            _emit(outcome.bundle, args.output)
    _emit(outcome.to_dict())
    if outcome.status != expected:
        log.error(f"Expected {expected}, got {outcome.status} ({outcome.reason})")
        return EXIT_FAILED
    return EXIT_OK


def cmd_verify_include(args):
    return _verify_membership(args, verifier.INCLUDED)


def cmd_verify_exclude(args):
    return _verify_membership(args, verifier.EXCLUDED)


def _published_from_artifacts(files, result):
    roots = {}
    for name, content in sorted(files.items()):
        if name.startswith("records/") and content["kind"] == "root" and content["study_id"] == result.study_id:
            roots[content["body"]["tree_id"]] = content
    try:
        records = [roots[tree_id] for tree_id in result.tree_ids]
    except KeyError as exc:
        raise UsageError(f"Artifact bundle has no root record for {exc}") from None
    return records


def cmd_verify_stat(args):
    result = stats.StatisticResult.from_dict(_read_json(args.result))
    if args.artifacts:
        with salt.utils.files.fopen(args.artifacts, "rb") as fil:
            files = read_artifacts(fil.read())
        public_key = files["bulletin_public_key.txt"]
        records = _published_from_artifacts(files, result)
        if not all(verifier.verify_record(record, public_key) for record in records):
            _emit({"flag": False, "reason": verifier.BAD_SIGNATURE, "stage": "c", "detail": None})
            return EXIT_FAILED
        roots = [core.Digest.from_hex(record["body"]["root"]) for record in records]
        vk_post = VerificationKey.from_dict(files[f"vk/{result.kind}-post.json"])
        bundles = [_read_json(path) for path in args.bundle or ()]
        return _outcome(stats.stat_verify_offline(result, roots, vk_post, bundles, public_key))
    if not args.user:
        raise UsageError("verify stat needs --artifacts or --user")
    deployment = Deployment(_settings(args))
    endpoints = _endpoints(args, deployment)
    roots = [
        core.Digest.from_hex(endpoints.root_record(result.study_id, tree_id)["body"]["root"])
        for tree_id in result.tree_ids
    ]
    vk_post = stats.published_vk_post(endpoints.statistic_record(result.study_id, result.kind))
    return _outcome(stats.stat_verify(result, roots, vk_post, endpoints, args.user))


def cmd_audit(args):
    if args.bundle:
        bundle = verifier.AuditBundle.from_dict(_read_json(args.bundle))
    else:
        if not args.study:
            raise UsageError("audit exclusivity needs a bundle file or --study")
        bundle = Deployment(_settings(args)).assemble_audit_bundle(args.study, args.tree_id)
        if args.output:
            _emit(bundle.to_dict(), args.output)
    return _outcome(verifier.verify_data_exclusivity(bundle))


def _print_statistic(result, output):
    if output:
        _emit(result.to_dict(), output)
    print(f"{result.kind} {result.decoded:.3f}")
    return EXIT_OK


def _logistic_cohort(args, deployment):
    if args.cohort:
        records = phr_mod.import_cohort_csv(args.cohort)
    else:
        records = phr_mod.generate_logistic_cohort(args.seed, args.size, args.features, prefix=args.study)
    deployment.register_records(records)
    return [user for user, _ in records]


def cmd_pipeline_ks(args, deployment):
    if args.cohort_a and args.cohort_b:
        first = phr_mod.import_cohort_csv(args.cohort_a)
        second = phr_mod.import_cohort_csv(args.cohort_b)
        deployment.register_records(first + second)
        cohort_a, cohort_b = [user for user, _ in first], [user for user, _ in second]
    else:
        cohort_a, cohort_b = deployment.register_hd_cohorts(args.seed)
    result = deployment.ks(args.study, cohort_a, cohort_b, args.bins or stats.DEFAULT_KS_BINS, args.scale)
    return _print_statistic(result, args.output)


def cmd_pipeline_lrt(args, deployment):
    cohort = _logistic_cohort(args, deployment)
    result = deployment.lrt(
        args.study, cohort, args.beta_full, args.beta_reduced, args.scale, args.select_full, args.select_reduced
    )
    return _print_statistic(result, args.output)


def cmd_pipeline_acc(args, deployment):
    cohort = _logistic_cohort(args, deployment)
    result = deployment.acc(args.study, cohort, args.beta, args.scale, args.select)
    return _print_statistic(result, args.output)


def cmd_gen_hd(args):
    healthy, hd = phr_mod.generate_hd_cohorts(args.seed, args.size)
    phr_mod.export_cohort_csv(args.healthy, healthy, ["cag"])
    phr_mod.export_cohort_csv(args.hd, hd, ["cag"])
    print(f"healthy {len(healthy)} -> {args.healthy}")
    print(f"hd {len(hd)} -> {args.hd}")
    return EXIT_OK


def cmd_gen_logistic(args):
    records = phr_mod.generate_logistic_cohort(args.seed, args.size, args.features, prefix=args.prefix)
    columns = [f"x{pos}" for pos in range(1, args.features + 1)] + ["y"]
    phr_mod.export_cohort_csv(args.output, records, columns)
    print(f"{len(records)} -> {args.output}")
    return EXIT_OK


def cmd_download(args, deployment):
    data = deployment.download_artifacts(args.study)
    with salt.utils.files.fopen(args.output, "wb") as fil:
        fil.write(data)
    print(f"{args.study} -> {args.output} ({len(data)} bytes)")
    return EXIT_OK


def cmd_serve(args):
    from saltext.csmt.service.api import serve  # pylint: disable=import-outside-toplevel

    settings = _settings(args)
    if args.pipeline and args.port is None:
        settings = settings.for_pipeline(args.pipeline)
    serve(settings, args.pipeline)
    return EXIT_OK


def _add_settings(parser):
    group = parser.add_argument_group("settings", "override the CSMT_* environment variables")
    group.add_argument("--tree-height", type=int, help="TREE_HEIGHT, tree height K")
    group.add_argument("--state-dir", help="CSMT_STATE_DIR, persistence root")
    group.add_argument("--witness-key", help="CSMT_WITNESS_KEY, Fernet key of the sealed stores")
    group.add_argument("--backend-seed", help="CSMT_BACKEND_SEED")
    group.add_argument("--security-bits", type=int, help="CSMT_SECURITY_BITS")
    group.add_argument("--salt-length", type=int, help="CSMT_SALT_LENGTH")
    group.add_argument("--host", help="CSMT_SERVICE_HOST")
    group.add_argument("--port", type=int, help="CSMT_SERVICE_PORT")
    group.add_argument("--workers", type=int, help="CSMT_WORKERS")
    group.add_argument("--api-token", help="CSMT_API_TOKEN")
    group.add_argument("--log-level", help="CSMT_LOG_LEVEL")


def _sub(subparsers, name, handler, help_text, deployment=True, scale=False):
    parser = subparsers.add_parser(name, help=help_text)
    parser.set_defaults(handler=handler, needs_deployment=deployment)
    _add_settings(parser)
    if scale:
        parser.add_argument("--scale", type=int, help="ZKP_SCALER, fixed-point scale")
    return parser


def _group(subparsers, name, help_text):
    parser = subparsers.add_parser(name, help=help_text)
    return parser.add_subparsers(dest=f"{name}_command", required=True, parser_class=_Parser)


def build_parser():
    parser = _Parser(prog="csmt", description="Computational sparse Merkle trees over salted records")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    phr = _group(commands, "phr", "participant health record database")
    sub = _sub(phr, "register", cmd_phr_register, "register records")
    sub.add_argument("--csv", help="cohort file with a user_id column")
    sub.add_argument("--user")
    sub.add_argument("--values", type=_floats, help="comma separated values of --user")
    sub = _sub(phr, "prove", cmd_phr_prove, "PHR membership path of a user")
    sub.add_argument("user")
    sub.add_argument("-o", "--output")

    study = _group(commands, "study", "study trees")
    sub = _sub(study, "build", cmd_study_build, "build and publish a study tree", scale=True)
    sub.add_argument("study")
    sub.add_argument("--transform", help="id of a registered transform")
    sub.add_argument("--transform-file", help="YAML file with one transform entry")
    sub.add_argument("--include", type=_names, help="comma separated included users (default: all)")
    sub.add_argument("--aggregator", default="sum")
    sub.add_argument("--tree-id")

    prove = _group(commands, "prove", "CRO proofs")
    for name, handler in (("ltr", cmd_prove_ltr), ("mrp", cmd_prove_mrp)):
        sub = _sub(prove, name, handler, f"{name.upper()} proof of a user")
        sub.add_argument("study")
        sub.add_argument("user")
        sub.add_argument("--tree-id")
        sub.add_argument("-o", "--output")
        if name == "mrp":
            sub.add_argument("--nonce", help="hex nonce; fresh by default")

    verify = _group(commands, "verify", "verify proofs")
    for name, handler in (("include", cmd_verify_include), ("exclude", cmd_verify_exclude)):
        sub = _sub(verify, name, handler, f"verify {name}sion of a user", deployment=False)
        sub.add_argument("bundle", nargs="?", help="proof bundle file from 'prove mrp'")
        sub.add_argument("--public-key", help="bulletin public key (hex) the bundle's root record must carry")
        sub.add_argument("--study")
        sub.add_argument("--user")
        sub.add_argument("--tree-id")
        sub.add_argument("--remote", help="prover service URL")
        sub.add_argument("-o", "--output", help="save the proof bundle of an online check")
    sub = _sub(verify, "stat", cmd_verify_stat, "verify a published statistic", deployment=False)
    sub.add_argument("result", help="statistic result file from 'pipeline ... -o'")
    sub.add_argument("--artifacts", help="artifact zip from 'download'")
    sub.add_argument("--bundle", action="append", help="proof bundle of the sampled user, per tree")
    sub.add_argument("--user", help="sampled user for an online check")
    sub.add_argument("--remote", help="prover service URL")

    audit = _group(commands, "audit", "audits")
    sub = _sub(audit, "exclusivity", cmd_audit, "data exclusivity audit", deployment=False)
    sub.add_argument("bundle", nargs="?", help="audit bundle file")
    sub.add_argument("--study")
    sub.add_argument("--tree-id")
    sub.add_argument("-o", "--output", help="save the assembled audit bundle")

    pipeline = _group(commands, "pipeline", "statistical pipelines")
    sub = _sub(pipeline, "ks", cmd_pipeline_ks, "two-sample KS gap", scale=True)
    sub.add_argument("--study", default="ks")
    sub.add_argument("--seed", type=int, default=0, help="seed of the synthetic HD cohorts")
    sub.add_argument("--cohort-a")
    sub.add_argument("--cohort-b")
    sub.add_argument("--bins", type=_floats)
    sub.add_argument("-o", "--output")
    for name, handler in (("lrt", cmd_pipeline_lrt), ("acc", cmd_pipeline_acc)):
        sub = _sub(pipeline, name, handler, f"logistic {name.upper()}", scale=True)
        sub.add_argument("--study", default=name)
        sub.add_argument("--cohort", help="cohort CSV; features then label")
        sub.add_argument("--seed", type=int, default=0)
        sub.add_argument("--size", type=int, default=200)
        sub.add_argument("--features", type=int, default=4)
        sub.add_argument("-o", "--output")
    lrt_parser = pipeline.choices["lrt"]
    lrt_parser.add_argument("--beta-full", type=_floats, required=True)
    lrt_parser.add_argument("--beta-reduced", type=_floats, required=True)
    lrt_parser.add_argument("--select-full", type=_ints)
    lrt_parser.add_argument("--select-reduced", type=_ints)
    acc_parser = pipeline.choices["acc"]
    acc_parser.add_argument("--beta", type=_floats, required=True)
    acc_parser.add_argument("--select", type=_ints)

    gen = _group(commands, "gen", "synthetic cohorts")
    sub = _sub(gen, "hd-cohorts", cmd_gen_hd, "healthy and HD CAG cohorts as CSV", deployment=False)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--size", type=int, default=phr_mod.HD_COHORT_SIZE)
    sub.add_argument("--healthy", default="healthy.csv")
    sub.add_argument("--hd", default="hd.csv")
    sub = _sub(gen, "logistic", cmd_gen_logistic, "logistic cohort as CSV", deployment=False)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--size", type=int, default=200)
    sub.add_argument("--features", type=int, default=4)
    sub.add_argument("--prefix", default="subject")
    sub.add_argument("-o", "--output", default="cohort.csv")

    sub = _sub(commands, "download", cmd_download, "artifact zip of a study")
    sub.add_argument("study")
    sub.add_argument("-o", "--output", required=True)

    sub = _sub(commands, "serve", cmd_serve, "run the prover service", deployment=False)
    sub.add_argument("--pipeline", choices=("ks", "lrt", "acc"), help="serve one pipeline on its own port")
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        settings = _settings(args)
        logging.basicConfig(
            level=settings.log_level.upper(), stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
        )
        if args.needs_deployment:
            return args.handler(args, Deployment(settings))
        return args.handler(args)
    except SaltException as exc:
        print(f"csmt: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError) as exc:
        print(f"csmt: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
