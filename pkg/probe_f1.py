"""Throwaway calibration probe: train on a simulated trace, score sharp-change
F1 of the model vs naive baselines on a held-out span. Not part of the package."""

import sys
import time

import numpy as np

from swq.netsim import default_config, run_simulation
from swq.predictor import (
    Dataset,
    LossConfig,
    PredictorConfig,
    WindowConfig,
    PacketStream,
    compute_norm_stats,
    init_params,
    train,
)
from swq.predictor.model import predict_batch
from swq.predictor.training import evaluate_loss
from swq.tensor_nn import LrSchedule
from swq.trace_model import SharpChangeThresholds, detect_sharp_changes


def stitched_predictions(params, stream, wcfg, start, end):
    """Non-overlapping horizon batches covering stream positions [start, end)."""
    B = wcfg.horizon
    bases = np.arange(start - 1, end - 1, B)
    windows = np.stack([__import__("swq.predictor.features", fromlist=["window_matrix"]).window_matrix(stream, int(b), wcfg.window_pkts) for b in bases])
    preds = np.empty((len(bases), B))
    for lo in range(0, len(bases), 64):
        preds[lo : lo + 64] = predict_batch(params, windows[lo : lo + 64])
    out = np.full(end - start, np.nan)
    for j, b in enumerate(bases):
        for k in range(1, B + 1):
            pos = b + k
            if start <= pos < end:
                out[pos - start] = preds[j, k - 1]
    return out


def f1_on_positions(true_series, pred_series, th):
    te = {(e.index, e.direction) for e in detect_sharp_changes(true_series, th)}
    pe = {(e.index, e.direction) for e in detect_sharp_changes(pred_series, th)}
    matched = len(te & pe)
    prec = matched / len(pe) if pe else 1.0
    rec = matched / len(te) if te else 1.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
    return prec, rec, f1, len(te), len(pe)


def main():
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 7
    dur = 180.0
    t0 = time.perf_counter()
    trace = run_simulation(default_config(duration_s=dur, seed=seed))
    print(f"sim {dur}s: {len(trace.records)} pkts in {time.perf_counter()-t0:.0f}s")
    stream = PacketStream(trace)
    wcfg = WindowConfig(window_pkts=128, horizon=8)
    split = stream.time_to_index(90_000.0)
    norm = compute_norm_stats(stream, 0, split)

    t0 = time.perf_counter()
    data = Dataset.from_stream(stream, wcfg, 0, split, max_windows=2500)
    print(f"train windows: {len(data)} in {time.perf_counter()-t0:.0f}s")

    th = SharpChangeThresholds()
    results = {}
    models = {}
    for name, alpha in (("LF(a=10)", 10.0), ("MSE(a=1)", 1.0)):
        params = init_params(PredictorConfig(window_pkts=128, horizon=8), norm, seed=1)
        t0 = time.perf_counter()
        params, curve = train(params, data, epochs=8, seed=3,
                              loss_cfg=LossConfig(alpha=alpha),
                              schedule=LrSchedule(warmup_steps=400))
        print(f"{name}: trained 8 epochs in {time.perf_counter()-t0:.0f}s "
              f"curve {curve[0]:.0f} -> {curve[-1]:.0f}")
        models[name] = params

    # evaluation span: contiguous chunk in the test half
    ev_start = stream.time_to_index(95_000.0)
    ev_end = min(stream.time_to_index(175_000.0), stream.n - 9)
    acked_rel = np.nonzero(stream.acked[ev_start:ev_end])[0]
    true_series = stream.latency_ms[ev_start:ev_end][acked_rel]
    print(f"eval positions: {ev_end-ev_start} ({len(acked_rel)} acked)")

    for name, params in models.items():
        t0 = time.perf_counter()
        raw = stitched_predictions(params, stream, wcfg, ev_start, ev_end)
        pred_series = raw[acked_rel]
        p, r, f1, nt, npred = f1_on_positions(list(true_series), list(pred_series), th)
        print(f"{name}: P {p:.3f} R {r:.3f} F1 {f1:.3f} (true {nt}, pred {npred}) "
              f"[{time.perf_counter()-t0:.0f}s]")
        results[name] = f1

    # naive baselines: last visible acked latency / ewma over visible acked rows
    for bname in ("last", "ewma"):
        pred_series = []
        for rel in acked_rel:
            pos = ev_start + rel
            base = pos - 1 - ((pos - 1) % 1)
            # visibility as of the covering batch base: step back to b = floor
            b = ev_start - 1 + ((pos - (ev_start - 1) - 1) // 8) * 8
            vis = stream.ack_visible_ms[: b + 1] <= stream.send_ms[b]
            idx = np.nonzero(vis)[0]
            if len(idx) == 0:
                pred_series.append(20.0)
                continue
            lats = stream.latency_ms[idx[-64:]]
            if bname == "last":
                pred_series.append(float(lats[-1]))
            else:
                level = lats[0]
                for x in lats[1:]:
                    level = 0.875 * level + 0.125 * x
                pred_series.append(float(level))
        p, r, f1, nt, npred = f1_on_positions(list(true_series), list(pred_series), th)
        print(f"baseline {bname}: P {p:.3f} R {r:.3f} F1 {f1:.3f} (pred {npred})")
        results[bname] = f1

    print("ratios: LF/MSE = {:.2f}, LF/best-naive = {:.2f}".format(
        results["LF(a=10)"] / max(results["MSE(a=1)"], 1e-9),
        results["LF(a=10)"] / max(results["last"], results["ewma"], 1e-9),
    ))


if __name__ == "__main__":
    main()
