#!/usr/bin/env python3
"""
Demo Script - Deep MPC authority-allocation simulator
Walks through bounds estimation, reference generation and both closed loops
"""
import sys

import numpy as np
from loguru import logger

from src.artifacts import RunArtifacts, records_frame
from src.config import RunConfig, dump_run_config, output_root
from src.errors import DeepMPCError
from src.experiment import DeepMPCExperiment, acceptance_report


def main(steps: int = 100) -> int:
    """Run the default scenario with narrated output"""
    logger.info("🚀 Starting Deep MPC demo")
    config = RunConfig(steps=steps)
    experiment = DeepMPCExperiment(config)
    artifacts = RunArtifacts(output_root() / "demo")
    dump_run_config(config, artifacts.path("config.cfg"))

    # Step 1: bounds from exploration data
    logger.info("\n📏 STEP 1: Estimating disturbance and learning-authority bounds")
    try:
        bounds = experiment.estimate_authority()
        logger.info(f"   - w_max (transition residual): {bounds.w_max:.4f}")
        logger.info(f"   - estimated u_max_a with margin: {bounds.u_max_a:.4f}")
        logger.info(f"   - configured u_max_a used below: {config.u_max_a}")
    except DeepMPCError as e:
        logger.error(f"❌ Bounds estimation failed: {e}")
        return 1

    u_max_a = config.u_max_a

    # Step 2: reference on the tightened sets
    logger.info("\n🧭 STEP 2: Generating the reference trajectory")
    try:
        reference = experiment.generate_reference(u_max_a)
        artifacts.write_reference(reference)
        logger.info(f"   - horizon: {reference.horizon} steps")
        logger.info(f"   - terminal state: {np.round(reference.states[-1], 6)}")
        logger.info(f"   - largest |control|: {np.abs(reference.controls).max():.4f}")
    except DeepMPCError as e:
        logger.error(f"❌ Reference generation failed: {e}")
        return 1

    # Step 3: closed loops
    frames = {}
    for mode in ("tube", "deep"):
        logger.info(f"\n🔁 STEP 3: Running {mode} MPC for {steps} steps")
        try:
            records = experiment.run_mode(mode, reference, u_max_a, artifacts, show_progress=True)
        except DeepMPCError as e:
            logger.error(f"❌ {mode} MPC failed: {e}")
            return 1
        frames[mode] = records_frame(records)
        logger.info(f"   - cumulative tracking cost: {frames[mode]['tracking_cost'].sum():.4f}")
        logger.info(f"   - max |u|: {np.abs(frames[mode][['u_F_L', 'u_F_R']].to_numpy()).max():.4f}")

    # Step 4: what the learner did
    logger.info("\n📊 STEP 4: Comparing the two controllers")
    column_bound = None
    if steps > 0:
        report = acceptance_report(frames["deep"], frames["tube"], config, u_max_a)
        artifacts.write_metrics({"acceptance": report, "u_max_a": u_max_a})
        logger.info(f"   - clip-active fraction after step 10: {report['clip_active_fraction_after_10']}")
        logger.info(f"   - K on its projection bound after step 10: "
                    f"{report['authority_saturated_fraction_after_10']} ({report['regime']} regime)")
        column_bound = report["column_bound"]
        logger.info(f"   - RMS gap per state: {report['rms_gap']}")
        logger.info(f"   - mean ||u~|| first/middle/last: {report['u_tilde_first20']}, "
                    f"{report['u_tilde_20_40']}, {report['u_tilde_last20']}")
        logger.info(f"   - safety: {report['safety']}")
    artifacts.write_plots(frames, u_max_a, column_bound)

    logger.info(f"\n✅ Demo finished, artifacts in {artifacts.directory}")
    return 0


if __name__ == "__main__":
    sys.exit(main(int(sys.argv[1]) if len(sys.argv) > 1 else 100))
