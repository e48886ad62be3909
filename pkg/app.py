import argparse
import datetime
import os
import sys
import time

from common import file_manager
from common.config_controller import check_threshold, load_config
from common.data_controller import align_dataset, load_dataset_dir, read_events_csv, write_dataset
from common.ensemble_controller import (
    LAYER_POOL,
    SegmentSettings,
    derive_seed,
    index_features,
    or_combine,
    predict,
    train_hierarchy,
)
from common.errors import ConfigError, TelemetryError
from common.evaluation_controller import DEFAULT_BETA, evaluation_report
from common.masking_controller import build_masking_plan, plan_report, view
from common.shapelet_controller import mine_shapelets
from common.synthetic_controller import generate_synthetic
from utils.health_check import get_health_report
from utils.log import configure_logging, get_logger

logger = get_logger("app")

# --- Configuration ---
VERSION = "1.0.0"
DEFAULT_CONFIG = "config.txt"


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


class RunManifest:
    """Collects config echo, input digests, artifacts and timings; written on every exit path."""

    def __init__(self, command, path):
        self.path = path
        self.started = time.time()
        self.data = {
            "command": command,
            "version": VERSION,
            "started_at": _now(),
            "config": None,
            "inputs": {},
            "artifacts": {},
            "timings": {},
        }

    def stage(self, name, seconds):
        self.data["timings"][name] = round(seconds, 3)

    def write(self, success, message):
        self.data.update(
            {
                "success": success,
                "message": message,
                "finished_at": _now(),
                "host": get_health_report(os.path.dirname(os.path.abspath(self.path))),
            }
        )
        self.data["timings"]["total"] = round(time.time() - self.started, 3)
        try:
            file_manager.write_json(self.data, self.path)
        except OSError as e:
            logger.error(f"❌ Could not write manifest {self.path}: {e}")


def _load_aligned(data_dir, grid_step, manifest):
    dataset = load_dataset_dir(data_dir)
    manifest.data["inputs"] = file_manager.directory_digests(data_dir)
    return align_dataset(dataset, grid_step)


def cmd_train(config_path, data_dir, out_dir, seed=None, workers=None, threshold=None,
              mask_report=None, dump_features=None):
    """
    Trains one hierarchy per configured segment length and stores them with
    the OR-combination recipe. Returns (success, message, out_dir).
    """
    manifest = RunManifest("train", os.path.join(out_dir, file_manager.MANIFEST_FILE))
    success, message, path = False, "not started", None
    try:
        config, _ = load_config(config_path)
        config = config.with_overrides(seed, workers, threshold)
        manifest.data["config"] = config.to_dict()
        dataset = _load_aligned(data_dir, config.grid_step, manifest)

        if mask_report:
            plans = {
                s.channel_id: build_masking_plan(len(s), config.N, config.M, config.cca_len,
                                                 config.segment_lengths[0], s.channel_id)
                for s in dataset.channels
            }
            file_manager.write_json(plan_report(plans), mask_report)
            logger.info(f"✅ Masking report written to {mask_report}")

        if dump_features:
            for seg_len, stride, use_shapelets in config.segment_plan():
                settings = SegmentSettings.from_config(config, seg_len, stride, use_shapelets)
                target = os.path.join(dump_features, f"len_{seg_len}")
                os.makedirs(target, exist_ok=True)
                for series in dataset.channels:
                    features = index_features(series, range(len(series)), None, settings)
                    if features is not None:
                        features.to_csv(os.path.join(target, f"{series.channel_id}.csv"))
            logger.info(f"✅ Base features dumped to {dump_features}")

        models = []
        for segment in config.segment_plan():
            logger.info(f"--- Training segment length {segment[0]} ---")
            stage_start = time.time()
            models.append(train_hierarchy(dataset, config, segment))
            manifest.stage(f"train_len_{segment[0]}", time.time() - stage_start)
        file_manager.save_run(models, out_dir, config.theta)
        manifest.data["artifacts"] = file_manager.directory_digests(out_dir)
        success, message, path = True, f"trained {len(models)} hierarchy(ies) into {out_dir}", out_dir
        logger.info(f"✅ {message}")
    except (TelemetryError, OSError) as e:
        message = str(e)
        logger.error(f"❌ Training failed: {message}")
    finally:
        manifest.write(success, message)
    return success, message, path


def cmd_predict(model_dir, data_dir, out_path, workers=None, threshold=None):
    """Runs every stored hierarchy and OR-combines them into per-timestep and per-event CSVs."""
    manifest = RunManifest("predict", f"{out_path}.manifest.json")
    success, message, path = False, "not started", None
    try:
        models, combiner = file_manager.load_run(model_dir)
        theta = combiner["theta"] if threshold is None else check_threshold(float(threshold))
        manifest.data["config"] = {"model_dir": model_dir, "lengths": combiner["lengths"], "theta": theta}
        dataset = _load_aligned(data_dir, models[0].settings.grid_step, manifest)
        frames = []
        for model in models:
            logger.info(f"--- Predicting segment length {model.settings.seg_len} ---")
            stage_start = time.time()
            frames.append(predict(model, dataset, workers or 1, theta))
            manifest.stage(f"predict_len_{model.settings.seg_len}", time.time() - stage_start)
        combined = or_combine(frames)
        csv_path, events_path = file_manager.write_predictions(combined, out_path)
        manifest.data["artifacts"] = {
            p: file_manager.file_digest(p) for p in (csv_path, events_path)
        }
        success, message, path = True, f"{len(combined.events())} event(s) predicted", csv_path
        logger.info(f"✅ {message}; written to {csv_path}")
    except (TelemetryError, OSError) as e:
        message = str(e)
        logger.error(f"❌ Prediction failed: {message}")
    finally:
        manifest.write(success, message)
    return success, message, path


def cmd_evaluate(pred_events, truth_events, beta, out_path):
    """Per-channel and aggregate event-wise scores as a JSON report."""
    manifest = RunManifest("evaluate", f"{out_path}.manifest.json")
    success, message, path = False, "not started", None
    try:
        predicted = read_events_csv(pred_events)
        truth = read_events_csv(truth_events)
        manifest.data["inputs"] = {p: file_manager.file_digest(p) for p in (pred_events, truth_events)}
        report = evaluation_report(predicted, truth, beta)
        payload = {
            "beta": beta,
            "channels": {cid: score.to_dict() for cid, score in report["channels"].items()},
            "aggregate": report["aggregate"].to_dict(),
        }
        file_manager.write_json(payload, out_path)
        for cid, score in report["channels"].items():
            logger.info(f"{cid}: F{beta:g} = {100.0 * score.f_beta:.1f}")
        aggregate = 100.0 * report["aggregate"].f_beta
        manifest.data["artifacts"] = {out_path: file_manager.file_digest(out_path)}
        success, message, path = True, f"aggregate F{beta:g} = {aggregate:.1f}", out_path
        logger.info(f"✅ {message}")
    except (TelemetryError, OSError) as e:
        message = str(e)
        logger.error(f"❌ Evaluation failed: {message}")
    finally:
        manifest.write(success, message)
    return success, message, path


def cmd_synth(config_path, out_dir, seed=None):
    """Writes a seeded synthetic dataset: channel CSVs, groups and truth events."""
    manifest = RunManifest("synth", f"{os.path.normpath(out_dir)}.manifest.json")
    success, message, path = False, "not started", None
    try:
        config, synth = load_config(config_path)
        seed = config.seed if seed is None else int(seed)
        manifest.data["config"] = {"seed": seed, "synth": {k: v for k, v in synth.__dict__.items()}}
        dataset = generate_synthetic(synth, seed)
        write_dataset(dataset, out_dir)
        manifest.data["artifacts"] = file_manager.directory_digests(out_dir)
        success, message, path = True, f"synthetic dataset written to {out_dir}", out_dir
        logger.info(f"✅ {message}")
    except (TelemetryError, OSError) as e:
        message = str(e)
        logger.error(f"❌ Synthesis failed: {message}")
    finally:
        manifest.write(success, message)
    return success, message, path


def cmd_mine_shapelets(config_path, data_dir, channel_id, out_path, length=None, seed=None):
    """Standalone shapelet pool for (n=1, m=1), identical to the one training would mine."""
    manifest = RunManifest("mine-shapelets", f"{out_path}.manifest.json")
    success, message, path = False, "not started", None
    try:
        config, _ = load_config(config_path)
        config = config.with_overrides(seed)
        manifest.data["config"] = config.to_dict()
        if length is None:
            length = config.shapelet_lengths[0] if config.shapelet_lengths else config.segment_lengths[0]
        if length not in config.segment_lengths:
            raise ConfigError(f"segment length {length} is not configured")
        stride = config.segment_strides[config.segment_lengths.index(length)]
        dataset = _load_aligned(data_dir, config.grid_step, manifest)
        series = dataset.channel(channel_id)
        channel_index = dataset.channel_ids.index(channel_id)
        plan = build_masking_plan(len(series), config.N, config.M, config.cca_len, length, channel_id)
        pool = mine_shapelets(
            series, view(plan, 1, 1).xhat_nm, config.shp_len, config.K,
            derive_seed(config.seed, LAYER_POOL, length, channel_index, 1, 1),
            length, stride, config.dilation, config.bias, config.padding, config.max_candidates,
        )
        file_manager.write_json(pool.to_dict(), out_path)
        manifest.data["artifacts"] = {out_path: file_manager.file_digest(out_path)}
        success, message, path = True, f"{pool.K} shapelet(s) written to {out_path}", out_path
        logger.info(f"✅ {message}")
    except (TelemetryError, OSError) as e:
        message = str(e)
        logger.error(f"❌ Shapelet mining failed: {message}")
    finally:
        manifest.write(success, message)
    return success, message, path


def build_parser():
    parser = argparse.ArgumentParser(description="Hierarchical ensemble anomaly detection for multichannel telemetry")
    parser.add_argument("--config", default=DEFAULT_CONFIG, help="key = value run configuration")
    parser.add_argument("--seed", type=int, default=None, help="override pipeline.seed")
    parser.add_argument("--workers", type=int, default=None, help="worker processes for training/inference")
    parser.add_argument("--threshold", type=float, default=None, help="override the decision threshold θ")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING ... (else $TELEM_LOG)")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train one hierarchy per segment length")
    train.add_argument("--data", required=True)
    train.add_argument("--out", required=True)
    train.add_argument("--mask-report", default=None, help="write the masking plans as JSON")
    train.add_argument("--dump-features", default=None, help="directory for pooled base-feature CSVs")

    pred = sub.add_parser("predict", help="predict and OR-combine across segment lengths")
    pred.add_argument("--model", required=True)
    pred.add_argument("--data", required=True)
    pred.add_argument("--out", required=True)

    evaluate = sub.add_parser("evaluate", help="event-wise scoring of predicted against truth events")
    evaluate.add_argument("--pred", required=True)
    evaluate.add_argument("--truth", required=True)
    evaluate.add_argument("--beta", type=float, default=DEFAULT_BETA)
    evaluate.add_argument("--out", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic telemetry dataset")
    synth.add_argument("--out", required=True)

    mine = sub.add_parser("mine-shapelets", help="mine the (n=1, m=1) shapelet pool of one channel")
    mine.add_argument("--data", required=True)
    mine.add_argument("--channel", required=True)
    mine.add_argument("--out", required=True)
    mine.add_argument("--length", type=int, default=None)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    if args.command == "train":
        success, _, _ = cmd_train(args.config, args.data, args.out, args.seed, args.workers,
                                  args.threshold, args.mask_report, args.dump_features)
    elif args.command == "predict":
        success, _, _ = cmd_predict(args.model, args.data, args.out, args.workers, args.threshold)
    elif args.command == "evaluate":
        success, _, _ = cmd_evaluate(args.pred, args.truth, args.beta, args.out)
    elif args.command == "synth":
        success, _, _ = cmd_synth(args.config, args.out, args.seed)
    else:
        success, _, _ = cmd_mine_shapelets(args.config, args.data, args.channel, args.out, args.length, args.seed)
    return 0 if success else 1


if __name__ == "__main__":
    sys.exit(main())
