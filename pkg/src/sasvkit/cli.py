"""Command-line client for the pipeline service.

Every subcommand marshals its flags into a request model and posts it to
the service. By default the request is served in-process through an ASGI
transport, so the CLI works standalone, single-process and bit-reproducibly;
pass ``--server URL`` to talk to a running instance instead (start one with
``sasvkit serve``).

Errors go to standard error as a single machine-parseable line; data goes
to standard output. Exit codes: 0 success, 1 failure reported by the
service, 2 usage error.
"""

import argparse
import json
import os
import sys

SERVER_ENV = "SASVKIT_SERVER"
THREADS_ENV = "SASVKIT_THREADS"


def _apply_thread_env():
    """Honor THREADS_ENV before numerical libraries are imported."""
    n = os.environ.get(THREADS_ENV)
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, n)


class Client:
    """Minimal HTTP client; in-process unless a server URL is given."""

    def __init__(self, server=None):
        import httpx

        self._httpx = httpx
        self._server = server
        self._client = None
        self._app = None
        if server:
            self._client = httpx.Client(base_url=server, timeout=None)
        else:
            from .service.app import app

            self._app = app

    def _request(self, path, payload):
        if self._client is not None:
            return self._client.post(path, json=payload)

        # the ASGI transport is async-only; drive one request per loop
        import asyncio

        async def go():
            transport = self._httpx.ASGITransport(app=self._app)
            async with self._httpx.AsyncClient(
                    transport=transport, base_url="http://sasvkit.local",
                    timeout=None) as client:
                return await client.post(path, json=payload)

        return asyncio.run(go())

    def post(self, path, payload):
        r = self._request(path, payload)
        if r.status_code != 200:
            try:
                detail = r.json().get("detail", r.text)
            except ValueError:
                detail = r.text
            if not isinstance(detail, str):
                detail = json.dumps(detail)
            raise CommandError(detail.replace("\n", " "))
        return r.json()

    def close(self):
        if self._client is not None:
            self._client.close()


class CommandError(RuntimeError):
    pass


def build_parser():
    p = argparse.ArgumentParser(
        prog="sasvkit",
        description="Spoofing-robust speaker verification back-end pipeline",
    )
    p.add_argument("--server", default=os.environ.get(SERVER_ENV),
                   help="service URL; default runs the service in-process")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic feature corpus")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--num-speakers", type=int, default=20)
    sp.add_argument("--utts-per-speaker", type=int, default=100)
    sp.add_argument("--spoof-fraction", type=float, default=0.3)
    sp.add_argument("--num-layers", type=int, default=6)
    sp.add_argument("--num-frames", type=int, default=20)
    sp.add_argument("--feature-dim", type=int, default=16)
    sp.add_argument("--speaker-scale", type=float, default=1.0)
    sp.add_argument("--spoof-artifact-scale", type=float, default=1.3)
    sp.add_argument("--noise-scale", type=float, default=1.0)
    sp.add_argument("--artifact-layer", type=int, default=3)
    sp.add_argument("--seed", type=int, default=1234)
    sp.add_argument("--heldout-per-speaker", type=int, default=30)
    sp.add_argument("--nontarget-per-speaker", type=int, default=20)

    tp = sub.add_parser("train", help="train a back-end on a corpus")
    tp.add_argument("--manifest", required=True)
    tp.add_argument("--trials", required=True,
                    help="dev trials; referenced utterances are held out of training")
    tp.add_argument("--out-dir", required=True)
    tp.add_argument("--task", choices=["cm_bce", "asv_aam"], default="cm_bce")
    tp.add_argument("--num-heads", type=int, default=4)
    tp.add_argument("--compression-dim", type=int, default=8)
    tp.add_argument("--embed-dim", type=int, default=16)
    tp.add_argument("--epochs", type=int, default=8)
    tp.add_argument("--batch-size", type=int, default=128)
    tp.add_argument("--base-lr", type=float, default=5.0e-4)
    tp.add_argument("--final-lr", type=float, default=1.0e-5)
    tp.add_argument("--warmup-epochs", type=int, default=2)
    tp.add_argument("--weight-decay", type=float, default=1.0e-4)
    tp.add_argument("--seed", type=int, default=0)
    tp.add_argument("--dsu", action="store_true",
                    help="enable value-stream statistics augmentation")
    tp.add_argument("--dsu-p", type=float, default=0.5)
    tp.add_argument("--dsu-eps", type=float, default=1e-6)
    tp.add_argument("--aam-margin", type=float, default=0.2)
    tp.add_argument("--aam-scale", type=float, default=30.0)
    tp.add_argument("--frontend-lr-factor", type=float, default=None,
                    help="reserved for trainable frontends; rejected here")

    cp = sub.add_parser("score", help="score trials with a trained checkpoint")
    cp.add_argument("--manifest", required=True)
    cp.add_argument("--trials", required=True)
    cp.add_argument("--checkpoint", required=True)
    cp.add_argument("--out", required=True)
    cp.add_argument("--snorm-cohort", default=None,
                    help="cohort manifest enabling adaptive s-norm")
    cp.add_argument("--snorm-topk", type=int, default=None)
    cp.add_argument("--system-tag", default=None)

    kp = sub.add_parser("calibrate", help="fit an affine score calibration")
    kp.add_argument("--scores", required=True)
    kp.add_argument("--trials", required=True)
    kp.add_argument("--out-model", required=True)
    kp.add_argument("--positive-labels", default="target",
                    help="comma-separated accept-class labels")
    kp.add_argument("--prior-weighting", type=float, default=0.5)

    fp = sub.add_parser("fuse", help="fuse ASV and CM scores")
    fp.add_argument("--asv-scores", required=True)
    fp.add_argument("--cm-scores", required=True)
    fp.add_argument("--trials", required=True)
    fp.add_argument("--out-scores", required=True)
    fp.add_argument("--out-model", default=None)
    fp.add_argument("--strategy", choices=["pre", "joint"], default="joint")
    fp.add_argument("--prior-weighting", type=float, default=0.5)
    fp.add_argument("--final-calibration", action="store_true")

    ep = sub.add_parser("eval", help="compute a detection metric on scores")
    ep.add_argument("--scores", required=True)
    ep.add_argument("--trials", required=True)
    ep.add_argument("--metric", choices=["eer", "mindcf", "adcf"], required=True)
    ep.add_argument("--positive-labels", default="target")
    ep.add_argument("--negative-labels", default="nontarget")
    ep.add_argument("--p-tar", type=float, default=0.05)
    ep.add_argument("--c-miss", type=float, default=1.0)
    ep.add_argument("--c-fa", type=float, default=1.0)
    ep.add_argument("--adcf-pi-tar", type=float, default=0.9405)
    ep.add_argument("--adcf-pi-non", type=float, default=0.0095)
    ep.add_argument("--adcf-pi-spf", type=float, default=0.05)
    ep.add_argument("--adcf-c-miss", type=float, default=1.0)
    ep.add_argument("--adcf-c-fa-non", type=float, default=10.0)
    ep.add_argument("--adcf-c-fa-spf", type=float, default=10.0)
    ep.add_argument("--format", choices=["table", "tsv"], default="table")

    gp = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    gp.add_argument("--seed", type=int, default=0)
    gp.add_argument("--seeds", type=int, default=1,
                    help="number of consecutive seeds to sweep")
    gp.add_argument("--task", choices=["cm_bce", "asv_aam", "all"], default="all")
    gp.add_argument("--dsu", choices=["on", "off", "both"], default="both")
    gp.add_argument("--tolerance", type=float, default=1e-4)

    vp = sub.add_parser("serve", help="run the HTTP service")
    vp.add_argument("--host", default="127.0.0.1")
    vp.add_argument("--port", type=int, default=8640)

    return p


def _csv(text):
    return [x for x in text.split(",") if x]


def dispatch(argv=None):
    _apply_thread_env()
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == "serve":
        import uvicorn

        from .service.app import app

        uvicorn.run(app, host=args.host, port=args.port)
        return 0

    client = Client(server=args.server)
    try:
        if args.command == "synth":
            resp = client.post("/synth", {
                "out_dir": args.out_dir,
                "num_speakers": args.num_speakers,
                "utts_per_speaker": args.utts_per_speaker,
                "spoof_fraction": args.spoof_fraction,
                "num_layers": args.num_layers,
                "num_frames": args.num_frames,
                "feature_dim": args.feature_dim,
                "speaker_scale": args.speaker_scale,
                "spoof_artifact_scale": args.spoof_artifact_scale,
                "noise_scale": args.noise_scale,
                "artifact_layer": args.artifact_layer,
                "seed": args.seed,
                "heldout_per_speaker": args.heldout_per_speaker,
                "nontarget_per_speaker": args.nontarget_per_speaker,
            })
            print(f"manifest {resp['manifest']}")
            print(f"trials {resp['trials']}")
            print(f"utterances {resp['num_utterances']} spoof {resp['num_spoof']} "
                  f"trials {resp['num_trials']}")
        elif args.command == "train":
            resp = client.post("/train", {
                "manifest": args.manifest,
                "trials": args.trials,
                "out_dir": args.out_dir,
                "task": args.task,
                "num_heads": args.num_heads,
                "compression_dim": args.compression_dim,
                "embed_dim": args.embed_dim,
                "max_epochs": args.epochs,
                "batch_size": args.batch_size,
                "base_lr": args.base_lr,
                "final_lr": args.final_lr,
                "warmup_epochs": args.warmup_epochs,
                "weight_decay": args.weight_decay,
                "seed": args.seed,
                "dsu": args.dsu,
                "dsu_p": args.dsu_p,
                "dsu_eps": args.dsu_eps,
                "aam_margin": args.aam_margin,
                "aam_scale": args.aam_scale,
                "frontend_lr_factor": args.frontend_lr_factor,
            })
            for ep_stats in resp["epochs"]:
                print(f"epoch {ep_stats['epoch']} loss {ep_stats['train_loss']:.6f} "
                      f"dev_eer {ep_stats['dev_eer']:.6f} lr {ep_stats['lr']:.8g}")
            print(f"best_dev_eer {resp['best_dev_eer']:.6f} "
                  f"(epoch {resp['best_epoch']})")
            print(f"checkpoint {resp['checkpoint']}")
        elif args.command == "score":
            resp = client.post("/score", {
                "manifest": args.manifest,
                "trials": args.trials,
                "checkpoint": args.checkpoint,
                "out": args.out,
                "snorm_cohort": args.snorm_cohort,
                "snorm_top_k": args.snorm_topk,
                "system_tag": args.system_tag,
            })
            print(f"scores {resp['scores']} trials {resp['num_trials']} "
                  f"system {resp['system_tag']}")
        elif args.command == "calibrate":
            resp = client.post("/calibrate", {
                "scores": args.scores,
                "trials": args.trials,
                "out_model": args.out_model,
                "positive_labels": _csv(args.positive_labels),
                "prior_weighting": args.prior_weighting,
            })
            print(f"model {resp['model']} scale {resp['scale']:.6g} "
                  f"bias {resp['bias']:.6g}")
        elif args.command == "fuse":
            resp = client.post("/fuse", {
                "asv_scores": args.asv_scores,
                "cm_scores": args.cm_scores,
                "trials": args.trials,
                "out_scores": args.out_scores,
                "out_model": args.out_model,
                "strategy": args.strategy,
                "prior_weighting": args.prior_weighting,
                "final_calibration": args.final_calibration,
            })
            print(f"fused {resp['scores']} a_asv {resp['a_asv']:.6g} "
                  f"a_cm {resp['a_cm']:.6g} bias {resp['bias']:.6g}")
        elif args.command == "eval":
            resp = client.post("/eval", {
                "scores": args.scores,
                "trials": args.trials,
                "metric": args.metric,
                "positive_labels": _csv(args.positive_labels),
                "negative_labels": _csv(args.negative_labels),
                "p_tar": args.p_tar,
                "c_miss": args.c_miss,
                "c_fa": args.c_fa,
                "adcf_pi_tar": args.adcf_pi_tar,
                "adcf_pi_non": args.adcf_pi_non,
                "adcf_pi_spf": args.adcf_pi_spf,
                "adcf_c_miss": args.adcf_c_miss,
                "adcf_c_fa_non": args.adcf_c_fa_non,
                "adcf_c_fa_spf": args.adcf_c_fa_spf,
            })
            sys.stdout.write(resp["table_tsv" if args.format == "tsv" else "table"])
        elif args.command == "gradcheck":
            tasks = ["cm_bce", "asv_aam"] if args.task == "all" else [args.task]
            dsu_modes = {"on": [True], "off": [False], "both": [False, True]}[args.dsu]
            resp = client.post("/gradcheck", {
                "seed": args.seed,
                "seeds": args.seeds,
                "tasks": tasks,
                "dsu_modes": dsu_modes,
                "tolerance": args.tolerance,
            })
            for case in resp["cases"]:
                dsu_txt = "dsu" if case["dsu"] else "nodsu"
                print(f"{case['task']} {dsu_txt} max_rel_error {case['max_rel_error']:.3e}")
            print(f"max_rel_error {resp['max_rel_error']:.6e} "
                  f"tolerance {resp['tolerance']:g}")
            return 0 if resp["passed"] else 1
    finally:
        client.close()
    return 0


def main(argv=None):
    try:
        return dispatch(argv)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
