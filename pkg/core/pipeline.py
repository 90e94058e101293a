"""Streaming fusion: front-end, robustification and sliding-window back-end."""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Tuple

import numpy as np

from config.settings import RunConfig
from core.backend.factors import ImuFactor
from core.backend.initializer import initialize
from core.backend.optimizer import LmSettings, optimize
from core.backend.problem import FactorSettings, Problem, RobustModels, add_epoch
from core.backend.state import NavState
from core.errors import EstimationError, InitializationDeferred, PreintegrationError
from core.geodesy.frames import GeodeticPoint
from core.geodesy.rotation import quat_from_euler, quat_to_matrix
from core.gnss.measurement_models import build_tdcp, elevation_filter, pseudorange_residual, receiver_position_ecef
from core.gnss.observations import GnssEpoch
from core.interface.noise_model import ScalarNoiseModel
from core.io.dataset import DatasetRecord
from core.io.diagnostics import DiagnosticsLog
from core.preintegration.imu_preintegration import (
    ImuBias,
    ImuNoiseParams,
    ImuPreintegrator,
    PreintegratedImu,
    correct_for_bias,
    predict_state,
)
from core.radar.ego_velocity import RadarScan, RansacParams, estimate_ego_velocity
from core.radar.velocity_preintegration import RadarVelocityIntegrator
from core.robust.cycle_slip import screen_tdcp
from core.robust.gmm import ResidualHistory, fit_gmm
from factory.noise_model_factory import NoiseModelFactory

logger = logging.getLogger(__name__)


@dataclass
class PipelineSummary:
    """Outcome of a fusion run."""

    initialized_at: Optional[float] = None
    epochs_processed: int = 0
    states_written: int = 0
    deferred_epochs: int = 0
    dropped_epochs: int = 0
    rejected_tdcp: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class FusionPipeline:
    """Consumes time-ordered dataset records and emits final NavStates.

    A state is final when it leaves the sliding window; the rest of the
    window is flushed when the stream ends.
    """

    def __init__(
        self,
        config: Optional[RunConfig] = None,
        sink: Optional[Callable[[NavState], None]] = None,
        diagnostics: Optional[DiagnosticsLog] = None,
    ):
        """Initialize the pipeline.

        Args:
            config (Optional[RunConfig]): run configuration
            sink (Optional[Callable[[NavState], None]]): receives every final state in time order
            diagnostics (Optional[DiagnosticsLog]): per-epoch diagnostics destination
        """
        self.config = config or RunConfig()
        self.sink = sink or (lambda state: None)
        self.diagnostics = diagnostics
        imu = self.config.imu
        self.gravity = np.array([0.0, 0.0, -imu.gravity])
        self.imu_noise = ImuNoiseParams(
            imu.accel_noise, imu.gyro_noise, imu.accel_bias_rw, imu.gyro_bias_rw, imu.max_sample_gap
        )
        radar = self.config.radar
        self.ransac = RansacParams(
            radar.min_points,
            radar.inlier_threshold,
            radar.ransac_iterations,
            radar.early_exit_fraction,
            radar.min_consensus_fraction,
            radar.seed,
        )
        self.noise_model_type = self.config.ablation.resolved_noise_model
        self.preintegrator = ImuPreintegrator(self.imu_noise)
        self.radar_integrator = RadarVelocityIntegrator(radar.velocity_sigma)
        self.history = ResidualHistory(self.config.robust.history_window, self.config.robust.min_residuals)
        self.metadata: dict = {}
        self.problem: Optional[Problem] = None
        self.summary = PipelineSummary()
        self._init_epochs: List[GnssEpoch] = []
        self._waiting: List[GnssEpoch] = []
        self._scans: List[RadarScan] = []
        self._last_epoch: Optional[GnssEpoch] = None
        self._last_imu_time = -math.inf

    # -- stream handling -------------------------------------------------

    def run(self, records: Iterable[DatasetRecord]) -> PipelineSummary:
        """Process a whole record stream.

        Raises:
            EstimationError: If initialization is never achieved or the estimate diverges
        """
        for record in records:
            self.process(record)
        return self.finish()

    def process(self, record: DatasetRecord) -> None:
        if record.type == "meta":
            self.metadata.update(record.payload)
        elif record.type == "imu":
            self.preintegrator.add_sample(record.payload)
            self._last_imu_time = record.t
            self._drain()
        elif record.type == "radar_scan":
            self._scans.append(record.payload)
        elif record.type == "gnss_epoch":
            self._waiting.append(record.payload)
            self._drain()
        else:
            logger.debug("Ignoring %s record at t=%.3f", record.type, record.t)

    def finish(self) -> PipelineSummary:
        """Flush the window at the end of the stream."""
        if self._waiting:
            logger.warning(
                "Dropping %d GNSS epochs not covered by IMU data at the end of the stream", len(self._waiting)
            )
            self.summary.dropped_epochs += len(self._waiting)
            self._waiting = []
        if self.problem is None:
            raise EstimationError(
                f"Initialization never achieved ({self.summary.deferred_epochs} epochs deferred, "
                f"{len(self._init_epochs)} pending)"
            )
        for state in self.problem.states:
            self._emit(state)
        self.problem.states = []
        self.problem.factors = []
        if self.diagnostics is not None:
            logger.info("Diagnostics: %s", self.diagnostics.summary())
        return self.summary

    def _drain(self) -> None:
        # an epoch is processed once IMU data reaches its timestamp
        while self._waiting and self._waiting[0].timestamp <= self._last_imu_time:
            epoch = self._waiting.pop(0)
            if self.problem is None:
                self._try_initialize(epoch)
            else:
                self._process_epoch(epoch)

    def _emit(self, state: NavState) -> None:
        self.sink(state)
        self.summary.states_written += 1

    # -- initialization --------------------------------------------------

    def _frames_arguments(self) -> Tuple[Optional[np.ndarray], Optional[np.ndarray], Optional[GeodeticPoint]]:
        frames = self.config.frames
        meta = self.metadata if frames.use_dataset_metadata else {}

        lever = frames.lever_arm_gnss if frames.lever_arm_gnss is not None else meta.get("lever_arm_gnss")
        if frames.radar_mounting_rpy_deg is not None:
            roll, pitch, yaw = (math.radians(a) for a in frames.radar_mounting_rpy_deg)
            rotation = quat_to_matrix(quat_from_euler(roll, pitch, yaw))
        elif meta.get("rotation_body_from_radar") is not None:
            rotation = np.asarray(meta["rotation_body_from_radar"], dtype=float).reshape(3, 3)
        else:
            rotation = None
        origin_deg = frames.enu_origin if frames.enu_origin is not None else meta.get("enu_origin")
        origin = None
        if origin_deg is not None:
            origin = GeodeticPoint(math.radians(origin_deg[0]), math.radians(origin_deg[1]), float(origin_deg[2]))
        return (None if lever is None else np.asarray(lever, dtype=float)), rotation, origin

    def _try_initialize(self, epoch: GnssEpoch) -> None:
        self._init_epochs.append(epoch)
        if len(self._init_epochs) < self.config.backend.initialization_epochs:
            return
        lever, rotation, origin = self._frames_arguments()
        try:
            result = initialize(
                self._init_epochs,
                self.preintegrator.samples_until(epoch.timestamp),
                lever_arm_gnss=lever,
                rotation_body_from_radar=rotation,
                enu_origin=origin,
            )
        except InitializationDeferred as exc:
            logger.warning("Initialization deferred at t=%.3f: %s", epoch.timestamp, exc)
            self._init_epochs.pop(0)
            self.summary.deferred_epochs += 1
            return

        backend = self.config.backend
        gnss = self.config.gnss
        ablation = self.config.ablation
        settings = FactorSettings(
            clock_bias_sigma=gnss.clock_bias_sigma,
            clock_drift_sigma=gnss.clock_drift_sigma,
            tdcp_sigma=gnss.tdcp_sigma,
            elevation_mask=math.radians(gnss.elevation_mask_deg),
            enable_radar=ablation.radar_enabled,
            enable_tdcp=ablation.tdcp_enabled,
        )
        self.problem = Problem(result.frames, backend.window_size, self.gravity, settings)
        self.problem.add_state(result.state)
        self.problem.add_prior(result.state, self._prior_sigmas())
        self.preintegrator.start(result.state.timestamp)
        self._scans = [s for s in self._scans if s.timestamp > result.state.timestamp]
        self._last_epoch = self._init_epochs[0]
        self.summary.initialized_at = result.state.timestamp

        remaining, self._init_epochs = self._init_epochs[1:], []
        for pending in remaining:
            self._process_epoch(pending)

    def _prior_sigmas(self) -> np.ndarray:
        b = self.config.backend
        return np.concatenate([
            np.full(3, b.prior_position_sigma),
            np.full(3, b.prior_velocity_sigma),
            np.full(3, b.prior_attitude_sigma),
            np.full(3, b.prior_accel_bias_sigma),
            np.full(3, b.prior_gyro_bias_sigma),
            [b.prior_clock_bias_sigma, b.prior_clock_drift_sigma],
        ])

    # -- per-epoch processing --------------------------------------------

    def _radar_term(self, t_start: float, t_end: float, preint: PreintegratedImu):
        scans = [s for s in self._scans if t_start < s.timestamp <= t_end]
        self._scans = [s for s in self._scans if s.timestamp > t_end]
        if not self.config.ablation.radar_enabled:
            return None
        rotation = self.problem.frames.rotation_body_from_radar
        estimates = []
        for scan in scans:
            estimate = estimate_ego_velocity(scan, self.ransac, rotation)
            if not estimate.valid:
                logger.warning("Radar ego-velocity invalid at t=%.3f (%d points)", scan.timestamp, len(scan))
            estimates.append((scan.timestamp, estimate))
        return self.radar_integrator.integrate_interval(t_start, t_end, estimates, preint.rotation_at)

    def _noise_model(self, predicted: NavState, epoch: GnssEpoch) -> ScalarNoiseModel:
        sigma = self.config.gnss.pseudorange_sigma
        if self.noise_model_type != "gmm":
            return NoiseModelFactory.create_noise_model(self.noise_model_type, sigma)
        frames = self.problem.frames
        visible = elevation_filter(
            epoch, receiver_position_ecef(predicted, frames), self.problem.settings.elevation_mask
        )
        self.history.extend(
            pseudorange_residual(visible.observations[i], visible.sat_states[i], predicted, frames)
            for i in visible.sat_ids
        )
        gmm = None
        if self.history.ready:
            robust = self.config.robust
            gmm = fit_gmm(self.history.snapshot(), max_iters=robust.em_max_iterations, tol=robust.em_tolerance)
        return NoiseModelFactory.create_noise_model("gmm", sigma, gmm)

    def _process_epoch(self, epoch: GnssEpoch) -> None:
        problem = self.problem
        previous = problem.states[-1]
        if problem.is_full:
            self._emit(problem.marginalize_oldest())

        try:
            preint = self.preintegrator.finish(epoch.timestamp, ImuBias.from_state(previous))
        except PreintegrationError as exc:
            logger.warning("Skipping GNSS epoch t=%.3f: %s", epoch.timestamp, exc)
            self.summary.dropped_epochs += 1
            return
        preint_radar = self._radar_term(previous.timestamp, epoch.timestamp, preint)
        predicted = predict_state(preint, previous, self.gravity).replace(timestamp=epoch.timestamp)

        gnss = self.config.gnss
        tdcp = []
        if problem.settings.enable_tdcp and self._last_epoch is not None:
            tdcp = screen_tdcp(
                build_tdcp(self._last_epoch, epoch), self._last_epoch, epoch,
                gnss.cycle_slip_threshold, gnss.doppler_sign,
            )
        rejected = sum(1 for m in tdcp if not m.accepted)
        noise = self._noise_model(predicted, epoch)
        add_epoch(problem, preint, preint_radar, epoch, RobustModels(noise, tdcp, self._last_epoch))

        _, report = optimize(problem, self._lm_settings())
        self._relinearize_imu()
        self._check_bias(problem.states[-1])

        self._last_epoch = epoch
        self.summary.epochs_processed += 1
        self.summary.rejected_tdcp += rejected
        if self.diagnostics is not None:
            self.diagnostics.log_epoch(
                epoch.timestamp,
                problem.factor_counts(),
                rejected,
                noise.describe(),
                report.to_dict(),
                {"window": len(problem), "satellites": len(epoch), "radar": preint_radar is not None},
            )

    def _check_bias(self, state: NavState) -> None:
        imu = self.config.imu
        if not ImuBias.from_state(state).check_bounds(imu.accel_bias_bound, imu.gyro_bias_bound):
            raise EstimationError(
                f"IMU bias outside its sanity bound at t={state.timestamp:.3f}: "
                f"accel {np.round(state.accel_bias, 4).tolist()} m/s^2, gyro {np.round(state.gyro_bias, 5).tolist()} rad/s"
            )

    def _lm_settings(self) -> LmSettings:
        b = self.config.backend
        return LmSettings(
            max_iterations=b.max_iterations,
            gradient_tolerance=b.gradient_tolerance,
            step_tolerance=b.step_tolerance,
            cost_tolerance=b.cost_tolerance,
            initial_lambda=b.initial_lambda,
            lambda_increase=b.lambda_increase,
            lambda_decrease=b.lambda_decrease,
        )

    def _relinearize_imu(self) -> None:
        """Re-integrate IMU factors whose start bias moved past the threshold."""
        threshold = self.config.imu.bias_relinearization_threshold
        problem = self.problem
        for i, factor in enumerate(problem.factors):
            if not isinstance(factor, ImuFactor):
                continue
            start = problem.states[problem.index_of(factor.keys[0])]
            bias = ImuBias.from_state(start)
            d_ba, d_bg = bias.delta(factor.preintegrated.linearization_bias)
            if max(np.max(np.abs(d_ba)), np.max(np.abs(d_bg))) <= threshold:
                continue
            corrected = correct_for_bias(factor.preintegrated, bias, threshold, self.imu_noise)
            problem.factors[i] = ImuFactor(factor.keys, corrected, factor.gravity)
            logger.debug("Re-linearized IMU factor %s at the new bias", factor.keys)
