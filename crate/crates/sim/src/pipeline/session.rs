//! End-to-end session: one-time batch training, then the stream is
//! replayed through the module actors on the simulated fabric.
//!
//! Every module is an actor bound to the node its deployment plan assigns.
//! Actors talk only through bus topics, handle one message at a time and
//! ignore redelivered duplicates. Computation is charged from the
//! calibration (or measured, under the wall clock) and communication from
//! the routed link costs.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::time::{Duration, Instant};

use hybrid_core::forecaster::{
    ArtifactProducer, Fidelity, ModelArtifact, ModelParams, NetworkConfig, TrainConfig,
};
use hybrid_core::timeseries::{
    make_supervised, MinMaxScaler, Series, Tick, TimeWindow, DEFAULT_LAG,
};
use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::inference::{
    batch_infer, hybrid_infer, refresh_weights, speed_infer, train_params, Framing, PartialKind,
    PartialPrediction, SpeedOutput, WeightingMode,
};
use super::injector::{inject, replay_ticks, InjectionConfig};
use super::result::{ResultFlags, WindowResult};
use super::slot::SpeedModelSlot;
use super::PipelineError;
use crate::fabric::clock::{ticks_to_seconds, TICKS_PER_SECOND};
use crate::fabric::codec::WindowPayload;
use crate::fabric::handlers::{
    archive_idempotent, handle_data_archiving, result_key, speed_model_key, training_failure_key,
    SpeedTrainingHandler, TrainingRequest,
};
use crate::fabric::{
    place, Bus, BusConfig, Calibration, Delivery, DeploymentPlan, FabricError, LatencyLedger,
    Module, NodeId, ObjectStore, Phase, Preset, Scheduler, SignedToken, Topology,
    TOPIC_ARCHIVE_DATA, TOPIC_BATCH_PREDICTIONS, TOPIC_MODEL, TOPIC_RESULTS,
    TOPIC_SPEED_PREDICTIONS, TOPIC_WINDOW,
};

pub const BATCH_MODEL_KEY: &str = "models/batch.bin";

/// Starting point of each speed-training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeedInit {
    /// Fresh random weights every window.
    Scratch,
    /// The batch model's weights every window.
    Batch,
    /// The most recent speed model, or the batch model before the first.
    #[default]
    Latest,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ClockMode {
    /// Deterministic discrete-event time.
    #[default]
    Simulated,
    /// Events are paced against the host clock and computation is charged
    /// as measured. `time_scale` simulated seconds pass per host second.
    Wall { time_scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outage {
    pub node: NodeId,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub a: NodeId,
    pub b: NodeId,
    pub start_s: f64,
    pub end_s: f64,
}

/// Node outages and link partitions, in seconds of simulated time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FaultSchedule {
    #[serde(default)]
    pub outages: Vec<Outage>,
    #[serde(default)]
    pub partitions: Vec<Partition>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub preset: Preset,
    pub calibration: Calibration,
    pub injection: InjectionConfig,
    /// Replay rate of the stream in records per second.
    pub replay_rate: f64,
    pub weighting: WeightingMode,
    pub lag: usize,
    pub network: NetworkConfig,
    pub batch_training: TrainConfig,
    pub speed_training: TrainConfig,
    pub speed_init: SpeedInit,
    pub max_windows: Option<usize>,
    pub bus: BusConfig,
    pub faults: FaultSchedule,
    pub clock: ClockMode,
}

impl SessionConfig {
    pub fn new(preset: Preset, weighting: WeightingMode, fidelity: Fidelity, seed: u64) -> Self {
        Self {
            preset,
            calibration: Calibration::default(),
            injection: InjectionConfig::default(),
            replay_rate: 7.0,
            weighting,
            lag: DEFAULT_LAG,
            network: NetworkConfig::default().with_seed(seed),
            batch_training: TrainConfig::batch_layer(fidelity).with_seed(seed),
            speed_training: TrainConfig::speed_layer(fidelity).with_seed(seed),
            speed_init: SpeedInit::default(),
            max_windows: None,
            bus: BusConfig {
                redelivery_probability: 0.0,
                seed,
            },
            faults: FaultSchedule::default(),
            clock: ClockMode::Simulated,
        }
    }
}

/// A recoverable per-window failure; the session carries on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionIssue {
    pub window: Option<u64>,
    pub module: Module,
    pub message: String,
}

#[derive(Debug)]
pub struct SessionOutcome {
    /// Ordered by window index.
    pub results: Vec<WindowResult>,
    pub ledger: LatencyLedger,
    pub issues: Vec<SessionIssue>,
    pub warnings: Vec<String>,
    pub plan: DeploymentPlan,
    pub store: ObjectStore,
    pub windows_injected: usize,
    pub messages_published: u64,
    pub deliveries: u64,
    pub redeliveries: u64,
    pub speed_models_trained: u64,
    pub final_tick: Tick,
}

/// Store plus artifact caching for resumable runs.
#[derive(Debug)]
pub struct SessionResources {
    pub store: ObjectStore,
    /// Reuse batch and speed artifacts already present in the store
    /// instead of retraining them.
    pub reuse_artifacts: bool,
}

impl SessionResources {
    pub fn in_memory(seed: u64) -> Self {
        Self {
            store: ObjectStore::in_memory(seed),
            reuse_artifacts: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Role {
    Batch,
    Speed,
    Hybrid,
    DataSync,
    DataArchive,
    PredictionArchive,
    ModelSync,
    TrainingDispatch,
}

impl Role {
    fn module(self) -> Module {
        match self {
            Role::Batch => Module::BatchInference,
            Role::Speed => Module::SpeedInference,
            Role::Hybrid => Module::HybridInference,
            Role::DataSync => Module::DataSync,
            Role::DataArchive => Module::DataArchiving,
            Role::PredictionArchive => Module::PredictionArchiving,
            Role::ModelSync => Module::ModelSync,
            Role::TrainingDispatch => Module::SpeedTraining,
        }
    }
}

#[derive(Debug)]
enum Finish {
    Publish {
        from: NodeId,
        topic: &'static str,
        payload: Vec<u8>,
        charge: Option<(u64, Phase)>,
    },
    Install(ModelArtifact),
    Nothing,
}

#[derive(Debug)]
enum Event {
    WindowClosed(usize),
    Deliver(Delivery),
    Finished(Role, Finish),
    Trained {
        window: u64,
        artifact: Option<ModelArtifact>,
    },
    Stored {
        window: u64,
        artifact: Option<ModelArtifact>,
    },
    Fault {
        index: usize,
        active: bool,
    },
}

#[derive(Debug, Clone)]
enum FaultKind {
    Down(NodeId),
    Cut(NodeId, NodeId),
}

#[derive(Debug, Default)]
struct Actor {
    busy: bool,
    inbox: VecDeque<Delivery>,
}

#[derive(Debug, Default)]
struct PendingPair {
    batch: Option<(PartialPrediction, Tick)>,
    speed: Option<(PartialPrediction, Tick)>,
}

struct Engine<'a> {
    cfg: &'a SessionConfig,
    topo: Topology,
    plan: DeploymentPlan,
    bus: Bus,
    store: ObjectStore,
    reuse: bool,
    sched: Scheduler<Event>,
    roles: Vec<Role>,
    actors: BTreeMap<Role, Actor>,
    seen: BTreeSet<(Role, u64)>,
    framing: Framing,
    batch_model: ModelParams,
    slot: SpeedModelSlot,
    producer: ArtifactProducer,
    latest_speed: Option<ModelParams>,
    handler: SpeedTrainingHandler,
    dispatch_node: NodeId,
    payloads: Vec<Vec<u8>>,
    window_close: Vec<Tick>,
    inbound: BTreeMap<(u64, PartialKind), Tick>,
    pending: BTreeMap<u64, PendingPair>,
    last_result: Option<WindowResult>,
    results: Vec<WindowResult>,
    ledger: LatencyLedger,
    issues: Vec<SessionIssue>,
    faults: Vec<FaultKind>,
    deliveries: u64,
    redeliveries: u64,
    trained: u64,
    wall_start: Instant,
}

/// Runs a session with an in-memory store.
pub fn run_session(
    cfg: &SessionConfig,
    historical: &Series,
    stream: &Series,
) -> Result<SessionOutcome, PipelineError> {
    run_session_with(
        cfg,
        historical,
        stream,
        SessionResources::in_memory(cfg.bus.seed),
    )
}

pub fn run_session_with(
    cfg: &SessionConfig,
    historical: &Series,
    stream: &Series,
    resources: SessionResources,
) -> Result<SessionOutcome, PipelineError> {
    validate(cfg, historical, stream)?;
    let topo = cfg.calibration.topology()?;
    let plan = place(
        cfg.preset,
        &topo,
        &cfg.calibration.sites,
        &cfg.calibration.footprints_mb,
    )?;
    let dispatch_node = plan.training_dispatch(&topo)?;
    let mut store = resources.store;
    let mut warnings = Vec::new();

    let framing = Framing {
        scaler: MinMaxScaler::fit(historical)?,
        lag: cfg.lag,
        target: historical.target_index(),
    };
    let batch_model = batch_model(
        cfg,
        &framing,
        historical,
        &mut store,
        resources.reuse_artifacts,
    )?;

    let arrivals = stream
        .records()
        .iter()
        .cloned()
        .zip(replay_ticks(stream.len(), cfg.replay_rate));
    let (mut windows, rest) = inject(arrivals, cfg.injection)?;
    if let Some(max) = cfg.max_windows {
        windows.truncate(max);
    }
    if windows.is_empty() {
        warnings.push(format!(
            "stream of {} records is shorter than one window; no results",
            stream.len()
        ));
    } else if !rest.is_empty() && cfg.max_windows.is_none_or(|m| windows.len() < m) {
        warnings.push(format!(
            "{} trailing records did not fill a window",
            rest.len()
        ));
    }
    let (payloads, window_close) = window_payloads(&windows, cfg.lag);

    let mut engine = Engine {
        cfg,
        bus: Bus::new(cfg.bus),
        store,
        reuse: resources.reuse_artifacts,
        sched: Scheduler::new(),
        roles: Vec::new(),
        actors: BTreeMap::new(),
        seen: BTreeSet::new(),
        framing,
        batch_model,
        slot: SpeedModelSlot::new(),
        producer: ArtifactProducer::new(),
        latest_speed: None,
        handler: SpeedTrainingHandler::new(),
        dispatch_node,
        payloads,
        window_close,
        inbound: BTreeMap::new(),
        pending: BTreeMap::new(),
        last_result: None,
        results: Vec::new(),
        ledger: LatencyLedger::new(),
        issues: Vec::new(),
        faults: Vec::new(),
        deliveries: 0,
        redeliveries: 0,
        trained: 0,
        wall_start: Instant::now(),
        topo,
        plan,
    };
    engine.wire()?;
    engine.schedule_faults();
    for (i, close) in engine.window_close.clone().into_iter().enumerate() {
        engine.sched.schedule(close, Event::WindowClosed(i));
    }
    engine.run()?;

    let held = engine.bus.held_len();
    if held > 0 {
        warnings.push(format!(
            "{held} messages still held by unreachable subscribers at session end"
        ));
    }
    if engine.handler.queue_depth() > 0 {
        warnings.push(format!(
            "{} training events still queued at session end",
            engine.handler.queue_depth()
        ));
    }
    engine.results.sort_by_key(|r| r.window_index);
    Ok(SessionOutcome {
        windows_injected: engine.payloads.len(),
        results: engine.results,
        ledger: engine.ledger,
        issues: engine.issues,
        warnings,
        plan: engine.plan,
        store: engine.store,
        messages_published: engine.bus.published(),
        deliveries: engine.deliveries,
        redeliveries: engine.redeliveries,
        speed_models_trained: engine.trained,
        final_tick: engine.sched.now(),
    })
}

fn validate(
    cfg: &SessionConfig,
    historical: &Series,
    stream: &Series,
) -> Result<(), PipelineError> {
    let bad = |m: String| Err(PipelineError::InvalidConfig(m));
    if historical.width() != stream.width() || historical.target_index() != stream.target_index() {
        return bad("historical and stream series have different layouts".into());
    }
    if cfg.network.row_width() != cfg.lag * historical.width() {
        return bad(format!(
            "network takes {} inputs but lag {} x {} variables gives {}",
            cfg.network.row_width(),
            cfg.lag,
            historical.width(),
            cfg.lag * historical.width()
        ));
    }
    if !(cfg.replay_rate > 0.0 && cfg.replay_rate.is_finite()) {
        return bad("replay rate must be positive".into());
    }
    if let ClockMode::Wall { time_scale } = cfg.clock {
        if !(time_scale > 0.0 && time_scale.is_finite()) {
            return bad("wall clock time scale must be positive".into());
        }
    }
    cfg.injection.validate()
}

fn batch_model(
    cfg: &SessionConfig,
    framing: &Framing,
    historical: &Series,
    store: &mut ObjectStore,
    reuse: bool,
) -> Result<ModelParams, PipelineError> {
    if reuse {
        if let Ok(bytes) = store.get_object(BATCH_MODEL_KEY) {
            let artifact = ModelArtifact::deserialize(&bytes)?;
            if artifact.config() == &cfg.network {
                return Ok(artifact.params().clone());
            }
        }
    }
    let scaled = framing.scaler.transform(historical)?;
    let set = make_supervised(&scaled, cfg.lag)?;
    let params = ModelParams::init(cfg.network)?
        .train(&set, &cfg.batch_training)?
        .params;
    store.put_object(
        BATCH_MODEL_KEY,
        &ModelArtifact::new(params.clone(), 0, None).serialize(),
    )?;
    Ok(params)
}

/// Encoded payloads with carried-over lag context, and close ticks.
fn window_payloads(windows: &[TimeWindow], lag: usize) -> (Vec<Vec<u8>>, Vec<Tick>) {
    let mut payloads = Vec::with_capacity(windows.len());
    let mut closes = Vec::with_capacity(windows.len());
    let mut context = Vec::new();
    for w in windows {
        let payload = WindowPayload {
            window: w.clone(),
            context: std::mem::take(&mut context),
        };
        payloads.push(payload.encode());
        closes.push(w.close_tick);
        let start = w.records.len().saturating_sub(lag);
        context = w.records[start..].to_vec();
    }
    (payloads, closes)
}

impl Engine<'_> {
    fn wire(&mut self) -> Result<(), PipelineError> {
        let node = |m: Module| self.plan.node_of(m).clone();
        let subs = [
            (node(Module::BatchInference), TOPIC_WINDOW, Role::Batch),
            (node(Module::SpeedInference), TOPIC_WINDOW, Role::Speed),
            (
                self.dispatch_node.clone(),
                TOPIC_WINDOW,
                Role::TrainingDispatch,
            ),
            (node(Module::DataSync), TOPIC_WINDOW, Role::DataSync),
            (
                node(Module::DataArchiving),
                TOPIC_ARCHIVE_DATA,
                Role::DataArchive,
            ),
            (
                node(Module::HybridInference),
                "results/inference/+",
                Role::Hybrid,
            ),
            (
                node(Module::PredictionArchiving),
                "results/inference/#",
                Role::PredictionArchive,
            ),
            (node(Module::ModelSync), TOPIC_MODEL, Role::ModelSync),
        ];
        for (n, filter, role) in subs {
            let id = self.bus.subscribe(&self.topo, &n, filter)?;
            debug_assert_eq!(id.0, self.roles.len());
            self.roles.push(role);
            self.actors.entry(role).or_default();
        }
        Ok(())
    }

    fn schedule_faults(&mut self) {
        let secs = |s: f64| (s.max(0.0) * TICKS_PER_SECOND as f64).round() as Tick;
        let mut spans = Vec::new();
        for o in &self.cfg.faults.outages {
            spans.push((FaultKind::Down(o.node.clone()), o.start_s, o.end_s));
        }
        for p in &self.cfg.faults.partitions {
            spans.push((FaultKind::Cut(p.a.clone(), p.b.clone()), p.start_s, p.end_s));
        }
        for (kind, start, end) in spans {
            let index = self.faults.len();
            self.faults.push(kind);
            self.sched.schedule(
                secs(start),
                Event::Fault {
                    index,
                    active: true,
                },
            );
            self.sched.schedule(
                secs(end),
                Event::Fault {
                    index,
                    active: false,
                },
            );
        }
    }

    fn run(&mut self) -> Result<(), PipelineError> {
        while let Some(ev) = self.sched.advance() {
            self.pace(ev.tick);
            match ev.event {
                Event::WindowClosed(i) => {
                    let from = self.plan.node_of(Module::DataInjection).clone();
                    let payload = self.payloads[i].clone();
                    self.publish(&from, TOPIC_WINDOW, payload, None)?;
                }
                Event::Deliver(d) => self.on_delivery(d)?,
                Event::Finished(role, finish) => {
                    self.apply(finish)?;
                    self.actors.get_mut(&role).expect("wired").busy = false;
                    self.start_next(role)?;
                }
                Event::Trained { window, artifact } => self.on_trained(window, artifact)?,
                Event::Stored { window, artifact } => self.on_stored(window, artifact)?,
                Event::Fault { index, active } => self.on_fault(index, active)?,
            }
        }
        Ok(())
    }

    fn pace(&self, tick: Tick) {
        if let ClockMode::Wall { time_scale } = self.cfg.clock {
            let target = Duration::from_secs_f64(ticks_to_seconds(tick) / time_scale);
            if let Some(wait) = target.checked_sub(self.wall_start.elapsed()) {
                std::thread::sleep(wait);
            }
        }
    }

    fn now(&self) -> Tick {
        self.sched.now()
    }

    /// Calibrated cost, or the measured duration under the wall clock.
    fn compute(
        &self,
        node: &NodeId,
        base_ms: f64,
        measured: Duration,
    ) -> Result<Tick, PipelineError> {
        Ok(match self.cfg.clock {
            ClockMode::Simulated => self.topo.compute_ticks(node, base_ms)?,
            ClockMode::Wall { .. } => (measured.as_micros() as Tick).max(1),
        })
    }

    fn publish(
        &mut self,
        from: &NodeId,
        topic: &str,
        payload: Vec<u8>,
        charge: Option<(u64, Phase)>,
    ) -> Result<(), PipelineError> {
        let now = self.now();
        let deliveries = self.bus.publish(&self.topo, from, topic, payload, now)?;
        if let Some((window, phase)) = charge {
            let out = deliveries
                .iter()
                .map(|d| d.communication)
                .max()
                .unwrap_or(0);
            self.ledger.add_communication(window, phase, out);
        }
        self.enqueue(deliveries);
        Ok(())
    }

    fn enqueue(&mut self, deliveries: Vec<Delivery>) {
        for d in deliveries {
            self.sched.schedule(d.deliver_at, Event::Deliver(d));
        }
    }

    fn issue(&mut self, window: Option<u64>, module: Module, message: String) {
        warn!("window {window:?} {module}: {message}");
        self.issues.push(SessionIssue {
            window,
            module,
            message,
        });
    }

    fn on_delivery(&mut self, d: Delivery) -> Result<(), PipelineError> {
        self.deliveries += 1;
        if d.redelivery {
            self.redeliveries += 1;
        }
        let role = self.roles[d.subscriber.0];
        if !self.seen.insert((role, d.message.seq)) {
            return Ok(());
        }
        if role == Role::TrainingDispatch {
            return self.on_training_event(d);
        }
        self.actors
            .get_mut(&role)
            .expect("wired")
            .inbox
            .push_back(d);
        if !self.actors[&role].busy {
            self.start_next(role)?;
        }
        Ok(())
    }

    fn start_next(&mut self, role: Role) -> Result<(), PipelineError> {
        while let Some(d) = self.actors.get_mut(&role).expect("wired").inbox.pop_front() {
            let job = match self.start(role, &d) {
                Ok(job) => job,
                Err(e) => {
                    let window = WindowPayload::decode(&d.message.payload)
                        .ok()
                        .map(|p| p.window.index);
                    self.issue(window, role.module(), e.to_string());
                    None
                }
            };
            if let Some((duration, finish)) = job {
                self.actors.get_mut(&role).expect("wired").busy = true;
                self.sched
                    .schedule_in(duration, Event::Finished(role, finish));
                return Ok(());
            }
        }
        Ok(())
    }

    /// Does a message's work now; returns its duration and what to do on
    /// completion, or `None` when nothing needs to run.
    fn start(&mut self, role: Role, d: &Delivery) -> Result<Option<(Tick, Finish)>, PipelineError> {
        let node = d.node.clone();
        let costs = &self.cfg.calibration.costs;
        match role {
            Role::Batch | Role::Speed => {
                let window = WindowPayload::decode(&d.message.payload)?;
                let w = window.window.index;
                let started = Instant::now();
                let set = self.framing.supervise(&window.records_with_context())?;
                let (kind, phase, topic, values, version, trained_on, base) = if role == Role::Batch
                {
                    let v = batch_infer(&self.batch_model, &set)?;
                    let base = costs.batch_inference.ms(set.len(), 0);
                    (
                        PartialKind::Batch,
                        Phase::BatchInference,
                        TOPIC_BATCH_PREDICTIONS,
                        Some(v),
                        0,
                        None,
                        base,
                    )
                } else {
                    let base = costs.speed_inference.ms(set.len(), 0);
                    let (v, version, trained_on) = match speed_infer(&self.slot, &set)? {
                        SpeedOutput::Predictions {
                            values,
                            version,
                            trained_on,
                        } => (Some(values), version, trained_on),
                        SpeedOutput::NoModel => (None, 0, None),
                    };
                    (
                        PartialKind::Speed,
                        Phase::SpeedInference,
                        TOPIC_SPEED_PREDICTIONS,
                        v,
                        version,
                        trained_on,
                        base,
                    )
                };
                let comp = self.compute(&node, base, started.elapsed())?;
                self.inbound.insert((w, kind), d.communication);
                self.ledger.add_communication(w, phase, d.communication);
                self.ledger.add_computation(w, phase, comp);
                let partial = PartialPrediction {
                    window_index: w,
                    kind,
                    values,
                    truth: set.targets,
                    version,
                    trained_on,
                };
                Ok(Some((
                    comp,
                    Finish::Publish {
                        from: node,
                        topic,
                        payload: partial.encode(),
                        charge: Some((w, phase)),
                    },
                )))
            }
            Role::Hybrid => self.start_hybrid(d),
            Role::DataSync => {
                let w = WindowPayload::decode(&d.message.payload)?.window.index;
                let comp = self.compute(&node, costs.data_sync.ms(0, 0), Duration::ZERO)?;
                debug!("data sync window {w}");
                Ok(Some((
                    comp,
                    Finish::Publish {
                        from: node,
                        topic: TOPIC_ARCHIVE_DATA,
                        payload: d.message.payload.clone(),
                        charge: None,
                    },
                )))
            }
            Role::DataArchive => {
                handle_data_archiving(&mut self.store, &d.message.payload)?;
                let comp = self.compute(&node, costs.archiving.ms(0, 0), Duration::ZERO)?;
                Ok(Some((comp, Finish::Nothing)))
            }
            Role::PredictionArchive => {
                let key = if d.message.topic == TOPIC_RESULTS {
                    result_key(
                        "hybrid",
                        WindowResult::decode(&d.message.payload)?.window_index,
                    )
                } else {
                    let p = PartialPrediction::decode(&d.message.payload)?;
                    let kind = match p.kind {
                        PartialKind::Batch => "batch",
                        PartialKind::Speed => "speed",
                    };
                    result_key(kind, p.window_index)
                };
                archive_idempotent(&mut self.store, &key, &d.message.payload)?;
                let comp = self.compute(&node, costs.archiving.ms(0, 0), Duration::ZERO)?;
                Ok(Some((comp, Finish::Nothing)))
            }
            Role::ModelSync => {
                let token = SignedToken::decode(&d.message.payload)?;
                let bytes = self.store.fetch_with_token(&token, self.now())?;
                let started = Instant::now();
                let artifact = ModelArtifact::deserialize(&bytes)?;
                let w = artifact.trained_on_window().unwrap_or(0);
                let fetch = self
                    .topo
                    .transfer_ticks(&self.plan.services, &node, bytes.len())?
                    .ok_or_else(|| {
                        FabricError::InvalidTopology(format!(
                            "object store unreachable from {node}"
                        ))
                    })?;
                let comp = self.compute(&node, costs.model_sync.ms(0, 0), started.elapsed())?;
                self.ledger
                    .add_communication(w, Phase::SpeedTraining, d.communication + fetch);
                self.ledger.add_computation(w, Phase::SpeedTraining, comp);
                Ok(Some((fetch + comp, Finish::Install(artifact))))
            }
            Role::TrainingDispatch => unreachable!("dispatch is not an actor"),
        }
    }

    fn start_hybrid(&mut self, d: &Delivery) -> Result<Option<(Tick, Finish)>, PipelineError> {
        let partial = PartialPrediction::decode(&d.message.payload)?;
        let w = partial.window_index;
        let entry = self.pending.entry(w).or_default();
        match partial.kind {
            PartialKind::Batch => entry.batch = Some((partial, d.communication)),
            PartialKind::Speed => entry.speed = Some((partial, d.communication)),
        }
        if entry.batch.is_none() || entry.speed.is_none() {
            return Ok(None);
        }
        let pair = self.pending.remove(&w).expect("present");
        let ((batch, batch_comm), (speed, speed_comm)) = (pair.batch.unwrap(), pair.speed.unwrap());
        let node = d.node.clone();
        let started = Instant::now();

        let refresh = refresh_weights(self.last_result.as_ref(), self.cfg.weighting, w)?;
        let speed_out = match &speed.values {
            Some(v) => SpeedOutput::Predictions {
                values: v.clone(),
                version: speed.version,
                trained_on: speed.trained_on,
            },
            None => SpeedOutput::NoModel,
        };
        let batch_values = batch.values.clone().unwrap_or_default();
        let out = hybrid_infer(&batch_values, &speed_out, &refresh.weights)?;
        let flags = ResultFlags {
            first_window_fallback: refresh.fallback || out.fallback,
            no_speed_model: speed.values.is_none(),
            solver_not_converged: refresh.not_converged,
            degenerate_fit: refresh.degenerate,
        };
        let result = WindowResult {
            window_index: w,
            truth: batch.truth,
            batch: batch_values,
            speed: speed.values,
            hybrid: out.predictions,
            weights: out.weights,
            speed_model_version: speed.version,
            speed_trained_on: speed.trained_on,
            flags,
            fit: refresh.fit,
        };
        if !result.lengths_consistent() {
            return Err(PipelineError::InvalidConfig(format!(
                "window {w}: prediction lengths differ"
            )));
        }

        let costs = &self.cfg.calibration.costs;
        let mut base = costs.combine.ms(result.len(), 0);
        if matches!(self.cfg.weighting, WeightingMode::Dynamic) && !refresh.fallback {
            base += costs.weight_fit.ms(result.len(), refresh.iterations);
        }
        let comp = self.compute(&node, base, started.elapsed())?;
        let inbound = |k: PartialKind, c: Tick| self.inbound.get(&(w, k)).copied().unwrap_or(0) + c;
        let comm =
            inbound(PartialKind::Batch, batch_comm).max(inbound(PartialKind::Speed, speed_comm));
        self.ledger
            .add_communication(w, Phase::HybridInference, comm);
        self.ledger.add_computation(w, Phase::HybridInference, comp);

        let payload = result.encode();
        self.last_result = Some(result.clone());
        self.results.push(result);
        Ok(Some((
            comp,
            Finish::Publish {
                from: node,
                topic: TOPIC_RESULTS,
                payload,
                charge: Some((w, Phase::HybridInference)),
            },
        )))
    }

    fn apply(&mut self, finish: Finish) -> Result<(), PipelineError> {
        match finish {
            Finish::Publish {
                from,
                topic,
                payload,
                charge,
            } => self.publish(&from, topic, payload, charge),
            Finish::Install(artifact) => {
                self.slot.install(artifact);
                Ok(())
            }
            Finish::Nothing => Ok(()),
        }
    }

    fn trainer(&self) -> &NodeId {
        self.plan.node_of(Module::SpeedTraining)
    }

    /// The compute node is up and reachable from the dispatcher and the
    /// object store.
    fn trainer_available(&self) -> bool {
        let t = self.trainer();
        let reach = |a: &NodeId, b: &NodeId| matches!(self.topo.route(a, b), Ok(Some(_)));
        self.topo.is_up(t) && reach(&self.dispatch_node, t) && reach(t, &self.plan.services)
    }

    fn on_training_event(&mut self, d: Delivery) -> Result<(), PipelineError> {
        let payload = d.message.payload.clone();
        let window_index = match WindowPayload::decode(&payload) {
            Ok(p) => p.window.index,
            Err(e) => {
                self.issue(None, Module::SpeedTraining, e.to_string());
                return Ok(());
            }
        };
        self.ledger
            .add_communication(window_index, Phase::SpeedTraining, d.communication);
        let req = TrainingRequest {
            window_index,
            payload,
            received_at: self.now(),
        };
        let available = self.trainer_available();
        if let Some(next) = self.handler.on_event(req, available) {
            self.dispatch(next)?;
        }
        Ok(())
    }

    fn dispatch(&mut self, req: TrainingRequest) -> Result<(), PipelineError> {
        let w = req.window_index;
        let trainer = self.trainer().clone();
        let transfer = self
            .topo
            .transfer_ticks(&self.dispatch_node, &trainer, req.payload.len())?
            .unwrap_or(0);
        let started = Instant::now();
        let artifact = match self.train(&req) {
            Ok(a) => Some(a),
            Err(e) => {
                let msg = format!("training failed: {e}");
                self.store
                    .put_object(&training_failure_key(w), msg.as_bytes())?;
                self.issue(Some(w), Module::SpeedTraining, msg);
                None
            }
        };
        let base = self.cfg.calibration.costs.speed_training.ms(0, 0);
        let comp = self.compute(&trainer, base, started.elapsed())?;
        self.ledger
            .add_communication(w, Phase::SpeedTraining, transfer);
        self.ledger.add_computation(w, Phase::SpeedTraining, comp);
        self.sched.schedule_in(
            transfer + comp,
            Event::Trained {
                window: w,
                artifact,
            },
        );
        Ok(())
    }

    fn train(&mut self, req: &TrainingRequest) -> Result<ModelArtifact, PipelineError> {
        let window = WindowPayload::decode(&req.payload)?.window;
        let version = self.producer.last_version() + 1;
        let cached = self
            .reuse
            .then(|| self.store.get_object(&speed_model_key(version)).ok())
            .flatten()
            .and_then(|b| ModelArtifact::deserialize(&b).ok())
            .filter(|a| {
                a.trained_on_window() == Some(window.index) && a.config() == &self.cfg.network
            });
        let params = match cached {
            Some(a) => a.params().clone(),
            None => {
                let init = match self.cfg.speed_init {
                    SpeedInit::Scratch => ModelParams::init(
                        self.cfg
                            .network
                            .with_seed(self.cfg.network.seed ^ window.index),
                    )?,
                    SpeedInit::Batch => self.batch_model.clone(),
                    SpeedInit::Latest => self
                        .latest_speed
                        .clone()
                        .unwrap_or_else(|| self.batch_model.clone()),
                };
                let cfg = self
                    .cfg
                    .speed_training
                    .with_seed(self.cfg.speed_training.seed.wrapping_add(window.index));
                train_params(&self.framing, &window, &init, &cfg)?
            }
        };
        self.latest_speed = Some(params.clone());
        self.trained += 1;
        Ok(self.producer.publish(params, Some(window.index)))
    }

    fn on_trained(
        &mut self,
        window: u64,
        artifact: Option<ModelArtifact>,
    ) -> Result<(), PipelineError> {
        let Some(artifact) = artifact else {
            return self.training_done();
        };
        let size = artifact.serialize().len();
        let put = self
            .topo
            .transfer_ticks(self.trainer(), &self.plan.services, size)?
            .unwrap_or(0);
        self.ledger
            .add_communication(window, Phase::SpeedTraining, put);
        self.sched.schedule_in(
            put,
            Event::Stored {
                window,
                artifact: Some(artifact),
            },
        );
        Ok(())
    }

    fn on_stored(
        &mut self,
        window: u64,
        artifact: Option<ModelArtifact>,
    ) -> Result<(), PipelineError> {
        if let Some(artifact) = artifact {
            let key = speed_model_key(artifact.version());
            archive_idempotent(&mut self.store, &key, &artifact.serialize())?;
            let ttl = self.cfg.calibration.token_ttl();
            let token = self.store.presign(&key, ttl, self.now())?;
            let services = self.plan.services.clone();
            debug!(
                "window {window}: published speed model v{}",
                artifact.version()
            );
            self.publish(&services, TOPIC_MODEL, token.encode(), None)?;
        }
        self.training_done()
    }

    fn training_done(&mut self) -> Result<(), PipelineError> {
        let available = self.trainer_available();
        if let Some(next) = self.handler.on_complete(available) {
            self.dispatch(next)?;
        }
        Ok(())
    }

    fn on_fault(&mut self, index: usize, active: bool) -> Result<(), PipelineError> {
        match self.faults[index].clone() {
            FaultKind::Down(n) => self.topo.set_down(&n, active)?,
            FaultKind::Cut(a, b) => self.topo.set_partitioned(&a, &b, active)?,
        }
        if !active {
            let now = self.now();
            let released = self.bus.release(&self.topo, now)?;
            self.enqueue(released);
            if self.trainer_available() {
                if let Some(next) = self.handler.on_recovery() {
                    self.dispatch(next)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hybrid_core::drift::{synth_base, BaseSignalConfig};
    use hybrid_core::timeseries::split;

    fn small_net(seed: u64) -> NetworkConfig {
        NetworkConfig {
            lstm_units: 6,
            dense_units: 4,
            ..NetworkConfig::default().with_seed(seed)
        }
    }

    pub(crate) fn quick_config(preset: Preset, weighting: WeightingMode) -> SessionConfig {
        let mut cfg = SessionConfig::new(preset, weighting, Fidelity::Desk, 7);
        cfg.network = small_net(7);
        cfg.batch_training.epochs = 2;
        cfg.speed_training.epochs = 2;
        cfg.injection = InjectionConfig::by_count(60);
        if preset == Preset::EdgeCentric {
            let edge = cfg.calibration.sites.edge.clone();
            cfg.calibration.node_mut(&edge).unwrap().memory_mb = 8192;
        }
        cfg
    }

    fn data(n: usize) -> (Series, Series) {
        let s = synth_base(&BaseSignalConfig::turbine(n, 3));
        split(&s, 0.4).unwrap()
    }

    #[test]
    fn windows_flow_end_to_end() {
        let (hist, stream) = data(1000);
        let cfg = quick_config(Preset::EdgeCloud, WeightingMode::Dynamic);
        let out = run_session(&cfg, &hist, &stream).unwrap();
        assert_eq!(out.results.len(), 10);
        assert!(out.issues.is_empty(), "{:?}", out.issues);
        let first = &out.results[0];
        assert!(first.flags.first_window_fallback && first.flags.no_speed_model);
        assert_eq!(first.len(), 60 - cfg.lag);
        assert!(out.results[1..].iter().all(|r| r.len() == 60));
        assert!(out.results.iter().all(|r| r.lengths_consistent()));
        assert!(out
            .results
            .windows(2)
            .all(|p| p[0].speed_model_version <= p[1].speed_model_version));
        assert!(out.results.last().unwrap().speed.is_some());
        assert_eq!(out.store.list("data/").unwrap().len(), 10);
        assert_eq!(out.store.list("results/hybrid/").unwrap().len(), 10);
        assert_eq!(out.speed_models_trained, 10);
    }

    #[test]
    fn dynamic_fit_dominates_on_fitting_window() {
        let (hist, stream) = data(1000);
        let out = run_session(
            &quick_config(Preset::CloudCentric, WeightingMode::Dynamic),
            &hist,
            &stream,
        )
        .unwrap();
        let fitted: Vec<_> = out.results.iter().filter_map(|r| r.fit).collect();
        assert!(!fitted.is_empty());
        for f in fitted {
            assert!(f.hybrid_rmse <= f.batch_rmse.min(f.speed_rmse) + 1e-9);
        }
    }

    #[test]
    fn batch_predictions_do_not_depend_on_weighting() {
        let (hist, stream) = data(800);
        let a = run_session(
            &quick_config(Preset::EdgeCloud, WeightingMode::Dynamic),
            &hist,
            &stream,
        )
        .unwrap();
        let s = WeightingMode::Static {
            speed: 0.5,
            batch: 0.5,
        };
        let b = run_session(&quick_config(Preset::EdgeCloud, s), &hist, &stream).unwrap();
        for (x, y) in a.results.iter().zip(&b.results) {
            assert_eq!(x.batch, y.batch);
            assert_eq!(x.speed, y.speed);
        }
    }

    #[test]
    fn same_seed_same_outcome() {
        let (hist, stream) = data(800);
        let mut cfg = quick_config(Preset::CloudCentric, WeightingMode::Dynamic);
        cfg.bus.redelivery_probability = 0.3;
        let a = run_session(&cfg, &hist, &stream).unwrap();
        let b = run_session(&cfg, &hist, &stream).unwrap();
        assert_eq!(a.results, b.results);
        assert_eq!(a.ledger, b.ledger);
        assert!(a.redeliveries > 0);
    }

    #[test]
    fn short_stream_gives_empty_result_and_warning() {
        let (hist, _) = data(1000);
        let stream = Series::new(hist.records()[..30].to_vec(), hist.meta().clone()).unwrap();
        let out = run_session(
            &quick_config(Preset::EdgeCloud, WeightingMode::Dynamic),
            &hist,
            &stream,
        )
        .unwrap();
        assert!(out.results.is_empty());
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn edge_centric_default_memory_fails_placement() {
        let (hist, stream) = data(600);
        let mut cfg = quick_config(Preset::EdgeCentric, WeightingMode::Dynamic);
        cfg.calibration = Calibration::default();
        match run_session(&cfg, &hist, &stream) {
            Err(PipelineError::Fabric(FabricError::OutOfMemory { module, .. })) => {
                assert_eq!(module, Module::SpeedTraining)
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn compute_outage_queues_training_and_models_go_stale() {
        let (hist, stream) = data(1000);
        let mut cfg = quick_config(Preset::EdgeCloud, WeightingMode::Dynamic);
        let vm = cfg.calibration.sites.compute.clone();
        // windows close every 60/7 s; take the VM away for about three windows
        cfg.faults.outages.push(Outage {
            node: vm,
            start_s: 20.0,
            end_s: 50.0,
        });
        let out = run_session(&cfg, &hist, &stream).unwrap();
        assert_eq!(out.results.len(), 10);
        assert_eq!(out.speed_models_trained, 10);
        assert!(out
            .results
            .iter()
            .any(|r| r.speed_staleness().is_some_and(|s| s > 0)));
        let trained: Vec<u64> = out
            .store
            .list("models/speed/")
            .unwrap()
            .iter()
            .map(|k| {
                ModelArtifact::deserialize(&out.store.get_object(k).unwrap())
                    .unwrap()
                    .trained_on_window()
                    .unwrap()
            })
            .collect();
        assert_eq!(trained, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn partition_holds_and_releases_windows() {
        let (hist, stream) = data(1000);
        let mut cfg = quick_config(Preset::CloudCentric, WeightingMode::Dynamic);
        let (edge, services) = (
            cfg.calibration.sites.edge.clone(),
            cfg.calibration.sites.services.clone(),
        );
        cfg.faults.partitions.push(Partition {
            a: edge,
            b: services,
            start_s: 5.0,
            end_s: 40.0,
        });
        let out = run_session(&cfg, &hist, &stream).unwrap();
        assert_eq!(out.results.len(), 10);
        let order: Vec<u64> = out.results.iter().map(|r| r.window_index).collect();
        assert_eq!(order, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn cached_artifacts_reproduce_results() {
        let (hist, stream) = data(800);
        let dir = tempfile::tempdir().unwrap();
        let cfg = quick_config(Preset::EdgeCloud, WeightingMode::Dynamic);
        let res = |reuse| SessionResources {
            store: ObjectStore::in_directory(dir.path(), 0).unwrap(),
            reuse_artifacts: reuse,
        };
        let a = run_session_with(&cfg, &hist, &stream, res(false)).unwrap();
        let b = run_session_with(&cfg, &hist, &stream, res(true)).unwrap();
        assert_eq!(a.results, b.results);
        assert_eq!(a.ledger, b.ledger);
    }

    #[test]
    fn mismatched_network_rejected() {
        let (hist, stream) = data(600);
        let mut cfg = quick_config(Preset::EdgeCloud, WeightingMode::Dynamic);
        cfg.lag = 4;
        assert!(matches!(
            run_session(&cfg, &hist, &stream),
            Err(PipelineError::InvalidConfig(_))
        ));
    }
}
