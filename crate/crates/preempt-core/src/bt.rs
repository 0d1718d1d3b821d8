//! Tick-driven behavior-tree engine for the preemptive retry supervisor.
//!
//! The tree built by [`build_twist_insert_tree`] runs a twist-insert skill
//! against a [`SimulatedPlant`]: a top-level parallel with a recording stub,
//! the insertion retry loop, and a classifier observer. The plant schedules
//! each attempt with [`crate::sim::sample_attempt`] on the same per-episode
//! RNG stream as the simulator, so an engine episode reproduces the
//! simulator's attempt event sequence exactly; only timing differs, by at
//! most one tick per attempt from quantizing onto the tick grid.
//!
//! Preemption flows through a mailbox: when the plant's scheduled negative
//! verdict comes due, the observer posts a preempt request during its tick,
//! and the episode runner drains the mailbox after the traversal ends. The
//! runner then records the attempt, halts and resets the tree, and re-arms
//! the plant for the next attempt. Nothing interrupts a traversal midway,
//! which keeps replays deterministic, and the drain happens on the same
//! tick the observer fires, so preemption lands within one tick of the
//! scheduled verdict time.
//!
//! The recording and observer branches are halted as soon as the insertion
//! branch resolves (main-child-decides parallel). An alternative reading
//! keeps the recording branch alive across the whole episode; since the
//! engine models no recording payload the two are indistinguishable here.

use std::collections::HashMap;
use std::io::Read;

use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{self, Expr, Value};
use crate::formulas::Policy;
use crate::params::GuardedParams;
use crate::rng::episode_rng;
use crate::sim::{
    sample_attempt, AttemptEvent, AttemptOutcome, EpisodeResult, FloorMode, GroundTruth, Verdict,
    DEFAULT_MAX_ATTEMPTS,
};

/// Traversal period of the engine clock in seconds.
pub const DEFAULT_TICK_DT: f64 = 0.02;

/// Blackboard keys used by the twist-insert tree.
pub const ITER_KEY: &str = "iter";
pub const Z_KEY: &str = "z";
pub const Z_TARGET_KEY: &str = "z_target";
pub const TWIST_DEG_KEY: &str = "twist_deg";
pub const ROTATION_KEY: &str = "rotation_deg";

/// Initial tool height, target seating height, and twist amplitude the
/// runner seeds into the blackboard.
pub const Z_START_M: f64 = 0.05;
pub const Z_TARGET_M: f64 = 0.02;
pub const TWIST_AMPLITUDE_DEG: f64 = 15.0;

/// Height the press action reports when an attempt ends unseated. Any
/// value above the target works; the condition only checks the sign.
const Z_SHORTFALL_M: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BtError {
    #[error("malformed tree: {message}")]
    MalformedTree { message: String },
    #[error("tree document: {message}")]
    TreeLoad { message: String },
    #[error("invalid run config: {message}")]
    InvalidConfig { message: String },
    #[error("episode {episode} exceeded the attempt limit {limit}")]
    AttemptLimitExceeded { episode: u64, limit: u32 },
    #[error(
        "episode {episode} stalled at tick {tick}: the tree never resolved \
         an attempt the plant had already decided"
    )]
    StalledTree { episode: u64, tick: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Success,
    Failure,
    Running,
}

impl NodeStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeStatus::Success => "success",
            NodeStatus::Failure => "failure",
            NodeStatus::Running => "running",
        }
    }
}

/// Leaf bindings against the simulated plant. `Noop` and `FailStub` are
/// inert test leaves that resolve immediately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantBinding {
    /// Service branch; never resolves on its own.
    Recording,
    /// Physical twist; motion time is folded into the attempt dwell.
    Twist,
    /// Small back-off between twists; also instantaneous here.
    ReliefLift,
    /// Downward press. Runs until the plant's attempt ends, then reports
    /// the reached height on the blackboard.
    Press,
    /// Watches the plant for a due negative verdict and posts a preempt
    /// request to the mailbox.
    ClassifierObserver,
    Noop,
    FailStub,
}

/// One write to the blackboard, kept for audit and tests.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlackboardWrite {
    pub tick: u64,
    pub key: String,
    pub value: Value,
}

/// Shared key-value store the tree's expressions read and write. Reads of
/// absent keys are reported as node failures, never defaults.
#[derive(Debug, Clone, Default)]
pub struct Blackboard {
    values: HashMap<String, Value>,
    writes: Vec<BlackboardWrite>,
    diagnostics: Vec<String>,
    current_tick: u64,
}

impl Blackboard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn begin_tick(&mut self, tick: u64) {
        self.current_tick = tick;
    }

    pub fn get(&self, key: &str) -> Option<Value> {
        self.values.get(key).copied()
    }

    pub fn set(&mut self, key: impl Into<String>, value: Value) {
        let key = key.into();
        self.writes.push(BlackboardWrite {
            tick: self.current_tick,
            key: key.clone(),
            value,
        });
        self.values.insert(key, value);
    }

    pub fn values(&self) -> &HashMap<String, Value> {
        &self.values
    }

    pub fn writes(&self) -> &[BlackboardWrite] {
        &self.writes
    }

    pub fn diagnostics(&self) -> &[String] {
        &self.diagnostics
    }

    fn diagnose(&mut self, message: String) {
        self.diagnostics.push(message);
    }
}

/// Simulated insertion plant. Each attempt is scheduled up front with
/// [`sample_attempt`] on the episode stream: ground truth, verdict kind and
/// time, and the terminal dwell. The engine only observes the schedule
/// through [`Self::attempt_ended`] and the observer hooks, so the draw
/// order stays identical to the simulator's.
#[derive(Debug, Clone)]
pub struct SimulatedPlant {
    params: GuardedParams,
    floor_mode: FloorMode,
    rng: ChaCha12Rng,
    now_s: f64,
    attempt_start_s: f64,
    schedule: Option<AttemptOutcome>,
    preempt_posted: bool,
    preempt_enacted: bool,
}

impl SimulatedPlant {
    pub fn new(params: &GuardedParams, seed: u64, episode: u64, floor_mode: FloorMode) -> Self {
        Self {
            params: *params,
            floor_mode,
            rng: episode_rng(seed, episode),
            now_s: 0.0,
            attempt_start_s: 0.0,
            schedule: None,
            preempt_posted: false,
            preempt_enacted: false,
        }
    }

    pub fn now_s(&self) -> f64 {
        self.now_s
    }

    pub fn set_now(&mut self, now_s: f64) {
        debug_assert!(now_s >= self.now_s);
        self.now_s = now_s;
    }

    /// Draws the next attempt schedule at the current sim-time.
    pub fn begin_attempt(&mut self) {
        self.schedule = Some(sample_attempt(
            &mut self.rng,
            &self.params,
            Policy::Preemptive,
            self.floor_mode,
        ));
        self.attempt_start_s = self.now_s;
        self.preempt_posted = false;
        self.preempt_enacted = false;
    }

    pub fn schedule(&self) -> Option<&AttemptOutcome> {
        self.schedule.as_ref()
    }

    pub fn attempt_start_s(&self) -> f64 {
        self.attempt_start_s
    }

    /// True once the current attempt can no longer progress: either the
    /// preemption was enacted, or an unpreempted schedule reached its
    /// terminal dwell. A schedule carrying a negative verdict has no
    /// terminal time of its own; it only ends through the mailbox.
    pub fn attempt_ended(&self) -> bool {
        if self.preempt_enacted {
            return true;
        }
        match &self.schedule {
            Some(outcome) => {
                !outcome.preempted && self.now_s >= self.attempt_start_s + outcome.duration_s
            }
            None => false,
        }
    }

    /// True when an ended attempt seated the part.
    pub fn attempt_succeeded(&self) -> bool {
        debug_assert!(self.attempt_ended());
        match &self.schedule {
            Some(outcome) => outcome.ground_truth == GroundTruth::Success && !outcome.preempted,
            None => false,
        }
    }

    /// True when the scheduled negative verdict has come due and has not
    /// been posted yet.
    pub fn verdict_due(&self) -> bool {
        if self.preempt_posted || self.attempt_ended() {
            return false;
        }
        match &self.schedule {
            Some(outcome) => {
                outcome.verdict == Verdict::Neg
                    && outcome
                        .verdict_time_s
                        .map(|v| self.now_s >= self.attempt_start_s + v)
                        .unwrap_or(false)
            }
            None => false,
        }
    }

    /// Observer-side mailbox post. Idempotent within an attempt.
    pub fn post_preempt(&mut self) {
        self.preempt_posted = true;
    }

    pub fn preempt_pending(&self) -> bool {
        self.preempt_posted && !self.preempt_enacted
    }

    /// Runner-side mailbox drain: ends the attempt at the current tick.
    pub fn enact_preempt(&mut self) {
        debug_assert!(self.preempt_posted);
        self.preempt_enacted = true;
    }
}

/// Everything a node may touch during its tick.
pub struct TickContext<'a> {
    pub blackboard: &'a mut Blackboard,
    pub plant: &'a mut SimulatedPlant,
}

/// Behavior-tree node. Composite variants carry their own traversal state
/// (sequence cursor, retry failure count); [`BtNode::reset`] clears it.
#[derive(Debug, Clone, PartialEq)]
pub enum BtNode {
    Sequence {
        memory: bool,
        children: Vec<BtNode>,
        cursor: usize,
    },
    Fallback {
        children: Vec<BtNode>,
    },
    Parallel {
        main_child: usize,
        halt_siblings: bool,
        children: Vec<BtNode>,
    },
    Retry {
        limit: u32,
        child: Box<BtNode>,
        failures: u32,
    },
    AlwaysSuccess {
        child: Box<BtNode>,
    },
    Condition {
        source: String,
        expr: Expr,
    },
    Expression {
        target_key: String,
        source: String,
        expr: Expr,
    },
    Action {
        binding: PlantBinding,
    },
}

impl BtNode {
    pub fn sequence(memory: bool, children: Vec<BtNode>) -> Self {
        BtNode::Sequence {
            memory,
            children,
            cursor: 0,
        }
    }

    pub fn fallback(children: Vec<BtNode>) -> Self {
        BtNode::Fallback { children }
    }

    pub fn parallel(main_child: usize, halt_siblings: bool, children: Vec<BtNode>) -> Self {
        BtNode::Parallel {
            main_child,
            halt_siblings,
            children,
        }
    }

    pub fn retry(limit: u32, child: BtNode) -> Self {
        BtNode::Retry {
            limit,
            child: Box::new(child),
            failures: 0,
        }
    }

    pub fn always_success(child: BtNode) -> Self {
        BtNode::AlwaysSuccess {
            child: Box::new(child),
        }
    }

    pub fn condition(source: &str) -> Result<Self, BtError> {
        let expr = expr::parse(source).map_err(|e| BtError::TreeLoad {
            message: format!("condition `{source}`: {e}"),
        })?;
        Ok(BtNode::Condition {
            source: source.to_string(),
            expr,
        })
    }

    pub fn expression(target_key: &str, source: &str) -> Result<Self, BtError> {
        let expr = expr::parse(source).map_err(|e| BtError::TreeLoad {
            message: format!("expression `{source}`: {e}"),
        })?;
        Ok(BtNode::Expression {
            target_key: target_key.to_string(),
            source: source.to_string(),
            expr,
        })
    }

    pub fn action(binding: PlantBinding) -> Self {
        BtNode::Action { binding }
    }

    /// Clears traversal state in this subtree, halting anything Running.
    pub fn reset(&mut self) {
        match self {
            BtNode::Sequence {
                children, cursor, ..
            } => {
                *cursor = 0;
                for child in children {
                    child.reset();
                }
            }
            BtNode::Fallback { children } | BtNode::Parallel { children, .. } => {
                for child in children {
                    child.reset();
                }
            }
            BtNode::Retry {
                child, failures, ..
            } => {
                *failures = 0;
                child.reset();
            }
            BtNode::AlwaysSuccess { child } => child.reset(),
            BtNode::Condition { .. } | BtNode::Expression { .. } | BtNode::Action { .. } => {}
        }
    }

    /// Visits every node in the subtree, parents before children.
    pub fn for_each(&self, f: &mut impl FnMut(&BtNode)) {
        f(self);
        match self {
            BtNode::Sequence { children, .. }
            | BtNode::Fallback { children }
            | BtNode::Parallel { children, .. } => {
                for child in children {
                    child.for_each(f);
                }
            }
            BtNode::Retry { child, .. } | BtNode::AlwaysSuccess { child } => child.for_each(f),
            _ => {}
        }
    }

    fn tick_node(&mut self, ctx: &mut TickContext<'_>) -> Result<NodeStatus, BtError> {
        match self {
            BtNode::Sequence {
                memory,
                children,
                cursor,
            } => {
                if children.is_empty() {
                    return Err(BtError::MalformedTree {
                        message: "sequence has no children".into(),
                    });
                }
                let mut idx = if *memory { *cursor } else { 0 };
                while idx < children.len() {
                    match children[idx].tick_node(ctx)? {
                        NodeStatus::Success => idx += 1,
                        NodeStatus::Running => {
                            *cursor = if *memory { idx } else { 0 };
                            return Ok(NodeStatus::Running);
                        }
                        NodeStatus::Failure => {
                            *cursor = 0;
                            return Ok(NodeStatus::Failure);
                        }
                    }
                }
                *cursor = 0;
                Ok(NodeStatus::Success)
            }
            BtNode::Fallback { children } => {
                if children.is_empty() {
                    return Err(BtError::MalformedTree {
                        message: "fallback has no children".into(),
                    });
                }
                for child in children {
                    match child.tick_node(ctx)? {
                        NodeStatus::Failure => continue,
                        status => return Ok(status),
                    }
                }
                Ok(NodeStatus::Failure)
            }
            BtNode::Parallel {
                main_child,
                halt_siblings,
                children,
            } => {
                if *main_child >= children.len() {
                    return Err(BtError::MalformedTree {
                        message: format!(
                            "parallel main_child {} out of bounds for {} children",
                            main_child,
                            children.len()
                        ),
                    });
                }
                let mut main_status = NodeStatus::Running;
                for (idx, child) in children.iter_mut().enumerate() {
                    let status = child.tick_node(ctx)?;
                    if idx == *main_child {
                        main_status = status;
                    }
                }
                if main_status != NodeStatus::Running && *halt_siblings {
                    for (idx, child) in children.iter_mut().enumerate() {
                        if idx != *main_child {
                            child.reset();
                        }
                    }
                }
                Ok(main_status)
            }
            BtNode::Retry {
                limit,
                child,
                failures,
            } => {
                if *limit == 0 {
                    return Err(BtError::MalformedTree {
                        message: "retry limit must be at least 1".into(),
                    });
                }
                // A failed iteration restarts the child within the same
                // traversal, so a child that fails immediately exhausts
                // every iteration in one tick.
                loop {
                    match child.tick_node(ctx)? {
                        NodeStatus::Running => return Ok(NodeStatus::Running),
                        NodeStatus::Success => {
                            *failures = 0;
                            return Ok(NodeStatus::Success);
                        }
                        NodeStatus::Failure => {
                            *failures += 1;
                            if *failures >= *limit {
                                *failures = 0;
                                return Ok(NodeStatus::Failure);
                            }
                            child.reset();
                        }
                    }
                }
            }
            BtNode::AlwaysSuccess { child } => match child.tick_node(ctx)? {
                NodeStatus::Running => Ok(NodeStatus::Running),
                _ => Ok(NodeStatus::Success),
            },
            BtNode::Condition { source, expr } => match expr::eval(expr, ctx.blackboard.values()) {
                Ok(Value::Bool(true)) => Ok(NodeStatus::Success),
                Ok(Value::Bool(false)) => Ok(NodeStatus::Failure),
                Ok(other) => {
                    ctx.blackboard.diagnose(format!(
                        "condition `{source}`: expected boolean, got {}",
                        other.type_name()
                    ));
                    Ok(NodeStatus::Failure)
                }
                Err(e) => {
                    ctx.blackboard
                        .diagnose(format!("condition `{source}`: {e}"));
                    Ok(NodeStatus::Failure)
                }
            },
            BtNode::Expression {
                target_key,
                source,
                expr,
            } => match expr::eval(expr, ctx.blackboard.values()) {
                Ok(value) => {
                    ctx.blackboard.set(target_key.clone(), value);
                    Ok(NodeStatus::Success)
                }
                Err(e) => {
                    ctx.blackboard
                        .diagnose(format!("expression `{source}`: {e}"));
                    Ok(NodeStatus::Failure)
                }
            },
            BtNode::Action { binding } => Ok(tick_action(*binding, ctx)),
        }
    }
}

fn tick_action(binding: PlantBinding, ctx: &mut TickContext<'_>) -> NodeStatus {
    match binding {
        PlantBinding::Recording => NodeStatus::Running,
        PlantBinding::Twist | PlantBinding::ReliefLift | PlantBinding::Noop => NodeStatus::Success,
        PlantBinding::FailStub => NodeStatus::Failure,
        PlantBinding::Press => {
            if !ctx.plant.attempt_ended() {
                return NodeStatus::Running;
            }
            let target = match ctx.blackboard.get(Z_TARGET_KEY) {
                Some(Value::Number(z)) => z,
                other => {
                    ctx.blackboard.diagnose(format!(
                        "press: blackboard key `{Z_TARGET_KEY}` missing or non-numeric ({other:?})"
                    ));
                    return NodeStatus::Failure;
                }
            };
            let reached = if ctx.plant.attempt_succeeded() {
                target
            } else {
                target + Z_SHORTFALL_M
            };
            ctx.blackboard.set(Z_KEY, Value::Number(reached));
            NodeStatus::Success
        }
        PlantBinding::ClassifierObserver => {
            if ctx.plant.verdict_due() {
                ctx.plant.post_preempt();
            }
            NodeStatus::Running
        }
    }
}

/// Runs one traversal of the tree.
pub fn tick(
    root: &mut BtNode,
    blackboard: &mut Blackboard,
    plant: &mut SimulatedPlant,
) -> Result<NodeStatus, BtError> {
    root.tick_node(&mut TickContext { blackboard, plant })
}

/// Checks the structural invariants tick relies on.
pub fn validate_tree(root: &BtNode) -> Result<(), BtError> {
    match root {
        BtNode::Sequence { children, .. } | BtNode::Fallback { children } => {
            if children.is_empty() {
                return Err(BtError::MalformedTree {
                    message: "composite node has no children".into(),
                });
            }
            children.iter().try_for_each(validate_tree)
        }
        BtNode::Parallel {
            main_child,
            children,
            ..
        } => {
            if children.is_empty() {
                return Err(BtError::MalformedTree {
                    message: "parallel has no children".into(),
                });
            }
            if *main_child >= children.len() {
                return Err(BtError::MalformedTree {
                    message: format!(
                        "parallel main_child {} out of bounds for {} children",
                        main_child,
                        children.len()
                    ),
                });
            }
            children.iter().try_for_each(validate_tree)
        }
        BtNode::Retry { limit, child, .. } => {
            if *limit == 0 {
                return Err(BtError::MalformedTree {
                    message: "retry limit must be at least 1".into(),
                });
            }
            validate_tree(child)
        }
        BtNode::AlwaysSuccess { child } => validate_tree(child),
        BtNode::Condition { .. } | BtNode::Expression { .. } | BtNode::Action { .. } => Ok(()),
    }
}

/// Number of twist iterations one attempt may spend before the skill
/// reports failure.
pub const INSERT_RETRY_LIMIT: u32 = 6;

/// Builds the twist-insert supervisor tree: a parallel of the recording
/// stub, the insertion retry loop, and the classifier observer. Each loop
/// iteration rotates the part (alternating direction), backs off, presses
/// down, and checks the seated height.
pub fn build_twist_insert_tree() -> BtNode {
    let rotation = BtNode::expression(
        ROTATION_KEY,
        &format!("${TWIST_DEG_KEY} * (1 - 2 * (${ITER_KEY} % 2))"),
    )
    .expect("rotation expression parses");
    let advance = BtNode::expression(ITER_KEY, &format!("${ITER_KEY} + 1"))
        .expect("iteration expression parses");
    let seated = BtNode::condition(&format!("${Z_KEY} <= ${Z_TARGET_KEY}"))
        .expect("seated condition parses");
    let loop_body = BtNode::sequence(
        true,
        vec![
            rotation,
            advance,
            BtNode::always_success(BtNode::action(PlantBinding::Twist)),
            BtNode::always_success(BtNode::action(PlantBinding::ReliefLift)),
            BtNode::always_success(BtNode::action(PlantBinding::Press)),
            seated,
        ],
    );
    BtNode::parallel(
        1,
        true,
        vec![
            BtNode::action(PlantBinding::Recording),
            BtNode::retry(INSERT_RETRY_LIMIT, loop_body),
            BtNode::action(PlantBinding::ClassifierObserver),
        ],
    )
}

fn default_bt_episodes() -> u64 {
    1000
}

fn default_bt_max_attempts() -> u32 {
    DEFAULT_MAX_ATTEMPTS
}

fn default_tick_dt() -> f64 {
    DEFAULT_TICK_DT
}

/// Engine run configuration. The engine always acts on negative verdicts;
/// a reactive baseline comes from the simulator, not from this tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BtRunConfig {
    #[serde(default = "default_bt_episodes")]
    pub n_episodes: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_bt_max_attempts")]
    pub max_attempts_per_episode: u32,
    #[serde(default)]
    pub floor_mode: FloorMode,
    #[serde(default = "default_tick_dt")]
    pub tick_dt: f64,
}

impl Default for BtRunConfig {
    fn default() -> Self {
        Self {
            n_episodes: default_bt_episodes(),
            seed: 0,
            max_attempts_per_episode: DEFAULT_MAX_ATTEMPTS,
            floor_mode: FloorMode::None,
            tick_dt: DEFAULT_TICK_DT,
        }
    }
}

fn event_label(outcome: &AttemptOutcome) -> &'static str {
    match outcome.event {
        AttemptEvent::Classified(event) => event.label(),
        AttemptEvent::Reactive(GroundTruth::Success) => "S",
        AttemptEvent::Reactive(GroundTruth::Failure) => "F",
    }
}

/// Copies the plant schedule into an attempt record, with the duration
/// replaced by the tick-quantized span the attempt actually occupied.
fn record_attempt(plant: &SimulatedPlant) -> AttemptOutcome {
    let schedule = plant
        .schedule()
        .expect("attempt resolved without a schedule");
    debug_assert!(plant.attempt_ended());
    AttemptOutcome {
        duration_s: plant.now_s() - plant.attempt_start_s(),
        ..*schedule
    }
}

fn check_config(cfg: &BtRunConfig) -> Result<(), BtError> {
    if !(cfg.tick_dt.is_finite() && cfg.tick_dt > 0.0) {
        return Err(BtError::InvalidConfig {
            message: format!("tick_dt must be positive and finite, got {}", cfg.tick_dt),
        });
    }
    Ok(())
}

fn rearm_attempt(blackboard: &mut Blackboard) {
    blackboard.set(ITER_KEY, Value::Number(0.0));
    blackboard.set(Z_KEY, Value::Number(Z_START_M));
}

fn run_inner(
    tree_template: &BtNode,
    params: &GuardedParams,
    cfg: &BtRunConfig,
    episode: u64,
    mut trace: Option<&mut Vec<String>>,
) -> Result<EpisodeResult, BtError> {
    check_config(cfg)?;
    let mut tree = tree_template.clone();
    validate_tree(&tree)?;
    let mut node_count = 0u64;
    tree.for_each(&mut |_| node_count += 1);
    // A resolvable attempt (terminal dwell reached, or negative verdict due)
    // must resolve within a few traversals of a working skill tree; a tree
    // missing its press or observer would otherwise spin forever.
    let stall_budget_s = cfg.tick_dt * (64.0 + 2.0 * node_count as f64);
    let mut blackboard = Blackboard::new();
    blackboard.set(Z_TARGET_KEY, Value::Number(Z_TARGET_M));
    blackboard.set(TWIST_DEG_KEY, Value::Number(TWIST_AMPLITUDE_DEG));
    rearm_attempt(&mut blackboard);
    let mut plant = SimulatedPlant::new(params, cfg.seed, episode, cfg.floor_mode);
    plant.begin_attempt();
    let mut attempts: Vec<AttemptOutcome> = Vec::new();
    let mut tick_index: u64 = 0;
    loop {
        plant.set_now(tick_index as f64 * cfg.tick_dt);
        blackboard.begin_tick(tick_index);
        let status = tree.tick_node(&mut TickContext {
            blackboard: &mut blackboard,
            plant: &mut plant,
        })?;
        if let Some(lines) = trace.as_deref_mut() {
            lines.push(format!(
                "tick={tick_index} t={:.3} root={}",
                plant.now_s(),
                status.as_str()
            ));
        }
        // Drain the mailbox after the traversal. A posted preempt always
        // finds the attempt unresolved: its schedule has no terminal time,
        // so the insertion branch was still Running this tick.
        let resolved = if plant.preempt_pending() {
            debug_assert_eq!(status, NodeStatus::Running);
            plant.enact_preempt();
            Some(NodeStatus::Failure)
        } else {
            match status {
                NodeStatus::Running => None,
                done => Some(done),
            }
        };
        if let Some(outcome) = resolved {
            let record = record_attempt(&plant);
            if let Some(lines) = trace.as_deref_mut() {
                lines.push(format!(
                    "attempt={} event={} preempted={} duration={:.3}",
                    attempts.len() + 1,
                    event_label(&record),
                    record.preempted,
                    record.duration_s
                ));
            }
            attempts.push(record);
            if outcome == NodeStatus::Success {
                let makespan_s = plant.now_s();
                if let Some(lines) = trace.as_deref_mut() {
                    lines.push(format!("episode={episode} makespan={makespan_s:.3}"));
                }
                return Ok(EpisodeResult {
                    episode,
                    seed: cfg.seed,
                    attempts,
                    makespan_s,
                });
            }
            if attempts.len() as u32 >= cfg.max_attempts_per_episode {
                return Err(BtError::AttemptLimitExceeded {
                    episode,
                    limit: cfg.max_attempts_per_episode,
                });
            }
            tree.reset();
            rearm_attempt(&mut blackboard);
            plant.begin_attempt();
        } else {
            let schedule = plant.schedule().expect("attempt in flight");
            let resolvable_at = plant.attempt_start_s()
                + if schedule.preempted {
                    schedule.verdict_time_s.unwrap_or(schedule.duration_s)
                } else {
                    schedule.duration_s
                };
            if plant.now_s() > resolvable_at + stall_budget_s {
                return Err(BtError::StalledTree {
                    episode,
                    tick: tick_index,
                });
            }
        }
        tick_index += 1;
    }
}

/// Runs one episode of the twist-insert tree. Attempt events mirror the
/// simulator's for the same (seed, episode); durations and the makespan
/// are quantized up to the tick grid.
pub fn run_pbt_episode(
    params: &GuardedParams,
    cfg: &BtRunConfig,
    episode: u64,
) -> Result<EpisodeResult, BtError> {
    run_inner(&build_twist_insert_tree(), params, cfg, episode, None)
}

/// As [`run_pbt_episode`], also returning the line-oriented status trace.
pub fn run_pbt_episode_traced(
    params: &GuardedParams,
    cfg: &BtRunConfig,
    episode: u64,
) -> Result<(EpisodeResult, Vec<String>), BtError> {
    run_pbt_episode_with_tree_traced(&build_twist_insert_tree(), params, cfg, episode)
}

/// Runs one episode with a caller-supplied tree (fresh copy per episode).
pub fn run_pbt_episode_with_tree(
    tree: &BtNode,
    params: &GuardedParams,
    cfg: &BtRunConfig,
    episode: u64,
) -> Result<EpisodeResult, BtError> {
    run_inner(tree, params, cfg, episode, None)
}

/// As [`run_pbt_episode_with_tree`], also returning the status trace.
pub fn run_pbt_episode_with_tree_traced(
    tree: &BtNode,
    params: &GuardedParams,
    cfg: &BtRunConfig,
    episode: u64,
) -> Result<(EpisodeResult, Vec<String>), BtError> {
    let mut trace = Vec::new();
    let result = run_inner(tree, params, cfg, episode, Some(&mut trace))?;
    Ok((result, trace))
}

/// Runs all episodes on the rayon pool; episode `i` uses stream `i`, so
/// scheduling cannot change results.
pub fn run_pbt_episodes(
    params: &GuardedParams,
    cfg: &BtRunConfig,
) -> Result<Vec<EpisodeResult>, BtError> {
    run_pbt_episodes_with_tree(&build_twist_insert_tree(), params, cfg)
}

/// As [`run_pbt_episodes`] with a caller-supplied tree.
pub fn run_pbt_episodes_with_tree(
    tree: &BtNode,
    params: &GuardedParams,
    cfg: &BtRunConfig,
) -> Result<Vec<EpisodeResult>, BtError> {
    check_config(cfg)?;
    if cfg.n_episodes == 0 {
        return Err(BtError::InvalidConfig {
            message: "at least one episode required".into(),
        });
    }
    let results: Vec<Result<EpisodeResult, BtError>> = (0..cfg.n_episodes)
        .into_par_iter()
        .map(|episode| run_inner(tree, params, cfg, episode, None))
        .collect();
    results.into_iter().collect()
}

/// Serialized tree shape: node type tag plus per-type fields, expressions
/// as source strings. Unknown extra keys are ignored.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum TreeDoc {
    Sequence {
        #[serde(default)]
        memory: bool,
        children: Vec<TreeDoc>,
    },
    Fallback {
        children: Vec<TreeDoc>,
    },
    Parallel {
        main_child: usize,
        #[serde(default)]
        halt_siblings: bool,
        children: Vec<TreeDoc>,
    },
    Retry {
        limit: u32,
        child: Box<TreeDoc>,
    },
    AlwaysSuccess {
        child: Box<TreeDoc>,
    },
    Condition {
        expr: String,
    },
    Expression {
        target_key: String,
        expr: String,
    },
    Action {
        binding: PlantBinding,
    },
}

fn build_doc(doc: TreeDoc) -> Result<BtNode, BtError> {
    match doc {
        TreeDoc::Sequence { memory, children } => Ok(BtNode::sequence(
            memory,
            children
                .into_iter()
                .map(build_doc)
                .collect::<Result<_, _>>()?,
        )),
        TreeDoc::Fallback { children } => Ok(BtNode::fallback(
            children
                .into_iter()
                .map(build_doc)
                .collect::<Result<_, _>>()?,
        )),
        TreeDoc::Parallel {
            main_child,
            halt_siblings,
            children,
        } => Ok(BtNode::parallel(
            main_child,
            halt_siblings,
            children
                .into_iter()
                .map(build_doc)
                .collect::<Result<_, _>>()?,
        )),
        TreeDoc::Retry { limit, child } => Ok(BtNode::retry(limit, build_doc(*child)?)),
        TreeDoc::AlwaysSuccess { child } => Ok(BtNode::always_success(build_doc(*child)?)),
        TreeDoc::Condition { expr } => BtNode::condition(&expr),
        TreeDoc::Expression { target_key, expr } => BtNode::expression(&target_key, &expr),
        TreeDoc::Action { binding } => Ok(BtNode::action(binding)),
    }
}

/// Loads and validates a tree from a JSON document.
pub fn load_tree<R: Read>(reader: R) -> Result<BtNode, BtError> {
    let doc: TreeDoc = serde_json::from_reader(reader).map_err(|e| BtError::TreeLoad {
        message: e.to_string(),
    })?;
    let tree = build_doc(doc)?;
    validate_tree(&tree)?;
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{apply_guards, ConfusionSpec, GuardKind, TaskTimings};
    use crate::sim::{run_episodes, ClassifierEvent, SimConfig};

    fn worked_params() -> GuardedParams {
        let timings = TaskTimings::new(20.0, 10.0, 5.0).unwrap();
        let confusion = ConfusionSpec::new(0.4, 0.1, 0.3, 0.1, 0.05, 0.05).unwrap();
        apply_guards(&timings, &confusion).unwrap()
    }

    fn certain_params(confusion: ConfusionSpec) -> GuardedParams {
        let timings = TaskTimings::new(20.0, 10.0, 5.0).unwrap();
        let params = apply_guards(&timings, &confusion).unwrap();
        assert_eq!(params.guard_applied, GuardKind::None);
        params
    }

    fn test_plant() -> SimulatedPlant {
        SimulatedPlant::new(&worked_params(), 0, 0, FloorMode::None)
    }

    fn tick_once(root: &mut BtNode, bb: &mut Blackboard) -> NodeStatus {
        let mut plant = test_plant();
        tick(root, bb, &mut plant).unwrap()
    }

    fn number(bb: &Blackboard, key: &str) -> f64 {
        match bb.get(key) {
            Some(Value::Number(v)) => v,
            other => panic!("expected number at {key}, got {other:?}"),
        }
    }

    #[test]
    fn always_success_masks_failing_action() {
        let mut tree = BtNode::always_success(BtNode::action(PlantBinding::FailStub));
        let mut bb = Blackboard::new();
        assert_eq!(tick_once(&mut tree, &mut bb), NodeStatus::Success);
    }

    #[test]
    fn retry_exhausts_after_six_failed_iterations() {
        // The counter expression runs once per iteration, so it measures
        // how many restarts the retry actually performed.
        let body = BtNode::sequence(
            false,
            vec![
                BtNode::expression("n", "$n + 1").unwrap(),
                BtNode::action(PlantBinding::FailStub),
            ],
        );
        let mut tree = BtNode::retry(6, body);
        let mut bb = Blackboard::new();
        bb.set("n", Value::Number(0.0));
        assert_eq!(tick_once(&mut tree, &mut bb), NodeStatus::Failure);
        assert_eq!(number(&bb, "n"), 6.0);
    }

    #[test]
    fn retry_succeeds_before_limit() {
        // Fails twice, then succeeds: $n < 3 goes true on the third try.
        let body = BtNode::sequence(
            false,
            vec![
                BtNode::expression("n", "$n + 1").unwrap(),
                BtNode::condition("$n >= 3").unwrap(),
            ],
        );
        let mut tree = BtNode::retry(6, body);
        let mut bb = Blackboard::new();
        bb.set("n", Value::Number(0.0));
        assert_eq!(tick_once(&mut tree, &mut bb), NodeStatus::Success);
        assert_eq!(number(&bb, "n"), 3.0);
    }

    #[test]
    fn condition_compares_blackboard_values() {
        let mut tree = BtNode::condition("$z <= $z_target").unwrap();
        let mut bb = Blackboard::new();
        bb.set("z", Value::Number(0.01));
        bb.set("z_target", Value::Number(0.02));
        assert_eq!(tick_once(&mut tree, &mut bb), NodeStatus::Success);
        bb.set("z", Value::Number(0.03));
        assert_eq!(tick_once(&mut tree, &mut bb), NodeStatus::Failure);
    }

    #[test]
    fn condition_absent_key_fails_with_diagnostic() {
        let mut tree = BtNode::condition("$missing <= 1").unwrap();
        let mut bb = Blackboard::new();
        assert_eq!(tick_once(&mut tree, &mut bb), NodeStatus::Failure);
        assert_eq!(bb.diagnostics().len(), 1);
        assert!(bb.diagnostics()[0].contains("missing"));
    }

    #[test]
    fn condition_non_boolean_result_fails_with_diagnostic() {
        let mut tree = BtNode::condition("1 + 1").unwrap();
        let mut bb = Blackboard::new();
        assert_eq!(tick_once(&mut tree, &mut bb), NodeStatus::Failure);
        assert!(bb.diagnostics()[0].contains("expected boolean"));
    }

    #[test]
    fn fallback_stops_at_first_non_failure() {
        let mut tree = BtNode::fallback(vec![
            BtNode::action(PlantBinding::FailStub),
            BtNode::action(PlantBinding::Noop),
            BtNode::expression("untouched", "1").unwrap(),
        ]);
        let mut bb = Blackboard::new();
        assert_eq!(tick_once(&mut tree, &mut bb), NodeStatus::Success);
        assert!(bb.get("untouched").is_none());

        let mut all_fail = BtNode::fallback(vec![
            BtNode::action(PlantBinding::FailStub),
            BtNode::action(PlantBinding::FailStub),
        ]);
        assert_eq!(tick_once(&mut all_fail, &mut bb), NodeStatus::Failure);
    }

    #[test]
    fn sequence_failure_skips_later_children() {
        let mut tree = BtNode::sequence(
            false,
            vec![
                BtNode::action(PlantBinding::FailStub),
                BtNode::expression("untouched", "1").unwrap(),
            ],
        );
        let mut bb = Blackboard::new();
        assert_eq!(tick_once(&mut tree, &mut bb), NodeStatus::Failure);
        assert!(bb.get("untouched").is_none());
    }

    #[test]
    fn memory_sequence_resumes_at_running_child() {
        let children = vec![
            BtNode::expression("n", "$n + 1").unwrap(),
            BtNode::action(PlantBinding::Recording),
        ];
        let mut with_memory = BtNode::sequence(true, children.clone());
        let mut bb = Blackboard::new();
        bb.set("n", Value::Number(0.0));
        assert_eq!(tick_once(&mut with_memory, &mut bb), NodeStatus::Running);
        assert_eq!(tick_once(&mut with_memory, &mut bb), NodeStatus::Running);
        assert_eq!(number(&bb, "n"), 1.0);

        let mut reactive = BtNode::sequence(false, children);
        bb.set("n", Value::Number(0.0));
        assert_eq!(tick_once(&mut reactive, &mut bb), NodeStatus::Running);
        assert_eq!(tick_once(&mut reactive, &mut bb), NodeStatus::Running);
        assert_eq!(number(&bb, "n"), 2.0);
    }

    #[test]
    fn parallel_adopts_main_child_status_and_halts_siblings() {
        let sibling = BtNode::sequence(
            true,
            vec![
                BtNode::expression("side", "$side + 1").unwrap(),
                BtNode::action(PlantBinding::Recording),
            ],
        );
        let mut tree = BtNode::parallel(0, true, vec![BtNode::action(PlantBinding::Noop), sibling]);
        let mut bb = Blackboard::new();
        bb.set("side", Value::Number(0.0));
        assert_eq!(tick_once(&mut tree, &mut bb), NodeStatus::Success);
        // The sibling was ticked this traversal, then halted: its memory
        // cursor is back at the start.
        assert_eq!(number(&bb, "side"), 1.0);
        match &tree {
            BtNode::Parallel { children, .. } => match &children[1] {
                BtNode::Sequence { cursor, .. } => assert_eq!(*cursor, 0),
                other => panic!("unexpected child {other:?}"),
            },
            other => panic!("unexpected root {other:?}"),
        }

        let mut failing_main = BtNode::parallel(
            1,
            true,
            vec![
                BtNode::action(PlantBinding::Recording),
                BtNode::action(PlantBinding::FailStub),
            ],
        );
        assert_eq!(tick_once(&mut failing_main, &mut bb), NodeStatus::Failure);
    }

    #[test]
    fn parallel_out_of_bounds_main_child_is_malformed() {
        let mut tree = BtNode::parallel(2, true, vec![BtNode::action(PlantBinding::Noop)]);
        let mut bb = Blackboard::new();
        let mut plant = test_plant();
        let err = tick(&mut tree, &mut bb, &mut plant).unwrap_err();
        assert!(matches!(err, BtError::MalformedTree { .. }));
        assert!(validate_tree(&tree).is_err());
    }

    #[test]
    fn twist_tree_has_one_retry_of_six_and_observer() {
        let tree = build_twist_insert_tree();
        validate_tree(&tree).unwrap();
        let mut retry_limits = Vec::new();
        let mut observers = 0;
        tree.for_each(&mut |node| match node {
            BtNode::Retry { limit, .. } => retry_limits.push(*limit),
            BtNode::Action {
                binding: PlantBinding::ClassifierObserver,
            } => observers += 1,
            _ => {}
        });
        assert_eq!(retry_limits, vec![6]);
        assert_eq!(observers, 1);
        match &tree {
            BtNode::Parallel {
                main_child,
                halt_siblings,
                children,
            } => {
                assert_eq!(*main_child, 1);
                assert!(*halt_siblings);
                assert_eq!(children.len(), 3);
            }
            other => panic!("unexpected root {other:?}"),
        }
    }

    #[test]
    fn rotation_alternates_sign_across_iterations() {
        // A terminal failure (FP schedule runs to its dwell) exhausts all
        // six iterations; the rotation writes must alternate +15 / -15.
        let params = certain_params(ConfusionSpec::new(0.0, 0.0, 0.0, 1.0, 0.0, 0.0).unwrap());
        let mut tree = build_twist_insert_tree();
        let mut bb = Blackboard::new();
        bb.set(Z_TARGET_KEY, Value::Number(Z_TARGET_M));
        bb.set(TWIST_DEG_KEY, Value::Number(TWIST_AMPLITUDE_DEG));
        bb.set(ITER_KEY, Value::Number(0.0));
        bb.set(Z_KEY, Value::Number(Z_START_M));
        let mut plant = SimulatedPlant::new(&params, 11, 0, FloorMode::None);
        plant.begin_attempt();
        let mut status = NodeStatus::Running;
        for tick_index in 0..100_000 {
            plant.set_now(tick_index as f64 * DEFAULT_TICK_DT);
            bb.begin_tick(tick_index);
            status = tick(&mut tree, &mut bb, &mut plant).unwrap();
            if status != NodeStatus::Running {
                break;
            }
        }
        assert_eq!(status, NodeStatus::Failure);
        let rotations: Vec<f64> = bb
            .writes()
            .iter()
            .filter(|w| w.key == ROTATION_KEY)
            .map(|w| match w.value {
                Value::Number(v) => v,
                Value::Bool(_) => panic!("boolean rotation"),
            })
            .collect();
        assert_eq!(rotations, vec![15.0, -15.0, 15.0, -15.0, 15.0, -15.0]);
    }

    #[test]
    fn observer_posts_on_scheduled_negative_verdict() {
        let params = certain_params(ConfusionSpec::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0).unwrap());
        let mut plant = SimulatedPlant::new(&params, 3, 0, FloorMode::None);
        plant.begin_attempt();
        let verdict_time = plant.schedule().unwrap().verdict_time_s.unwrap();
        let mut tree = BtNode::action(PlantBinding::ClassifierObserver);
        let mut bb = Blackboard::new();
        let mut posted_at = None;
        for tick_index in 0..1_000_000 {
            plant.set_now(tick_index as f64 * DEFAULT_TICK_DT);
            assert_eq!(
                tick(&mut tree, &mut bb, &mut plant).unwrap(),
                NodeStatus::Running
            );
            if plant.preempt_pending() {
                posted_at = Some(plant.now_s());
                break;
            }
        }
        let posted_at = posted_at.expect("observer never posted");
        assert!(posted_at >= verdict_time - 1e-9);
        assert!(posted_at < verdict_time + DEFAULT_TICK_DT + 1e-9);
    }

    #[test]
    fn certain_tp_episode_matches_scheduled_dwell_within_one_tick() {
        let params = certain_params(ConfusionSpec::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0).unwrap());
        let cfg = BtRunConfig {
            seed: 42,
            ..BtRunConfig::default()
        };
        let episode = run_pbt_episode(&params, &cfg, 0).unwrap();
        assert_eq!(episode.attempt_count(), 1);

        let sim_cfg = SimConfig {
            policy: Policy::Preemptive,
            n_episodes: 1,
            seed: 42,
            ..SimConfig::default()
        };
        let sim_episode = &run_episodes(&params, &sim_cfg).unwrap()[0];
        let scheduled = sim_episode.attempts[0].duration_s;
        assert!(episode.makespan_s >= scheduled - 1e-9);
        assert!(episode.makespan_s < scheduled + cfg.tick_dt + 1e-9);
    }

    #[test]
    fn episodes_reproduce_simulator_attempts() {
        let params = worked_params();
        let cfg = BtRunConfig {
            n_episodes: 150,
            seed: 7,
            ..BtRunConfig::default()
        };
        let sim_cfg = SimConfig {
            policy: Policy::Preemptive,
            n_episodes: cfg.n_episodes,
            seed: cfg.seed,
            ..SimConfig::default()
        };
        let bt_runs = run_pbt_episodes(&params, &cfg).unwrap();
        let sim_runs = run_episodes(&params, &sim_cfg).unwrap();
        assert_eq!(bt_runs.len(), sim_runs.len());
        let mut saw_preempt = false;
        for (bt, sim) in bt_runs.iter().zip(&sim_runs) {
            assert_eq!(bt.attempt_count(), sim.attempt_count());
            for (b, s) in bt.attempts.iter().zip(&sim.attempts) {
                assert_eq!(b.event, s.event);
                assert_eq!(b.ground_truth, s.ground_truth);
                assert_eq!(b.preempted, s.preempted);
                assert_eq!(b.verdict, s.verdict);
                assert_eq!(b.verdict_time_s, s.verdict_time_s);
                // Quantization only ever lengthens an attempt, by less
                // than one tick.
                assert!(b.duration_s >= s.duration_s - 1e-9);
                assert!(b.duration_s < s.duration_s + cfg.tick_dt + 1e-9);
                if b.preempted {
                    saw_preempt = true;
                    let verdict = b.verdict_time_s.unwrap();
                    assert!(b.duration_s >= verdict - 1e-9);
                    assert!(b.duration_s < verdict + cfg.tick_dt + 1e-9);
                }
            }
            let slack = cfg.tick_dt * bt.attempt_count() as f64;
            assert!(bt.makespan_s >= sim.makespan_s - 1e-9);
            assert!(bt.makespan_s < sim.makespan_s + slack + 1e-9);
        }
        assert!(saw_preempt, "worked parameters should preempt sometimes");
    }

    #[test]
    fn traced_runs_are_deterministic() {
        let params = worked_params();
        let cfg = BtRunConfig {
            seed: 9,
            ..BtRunConfig::default()
        };
        let (first, first_trace) = run_pbt_episode_traced(&params, &cfg, 3).unwrap();
        let (second, second_trace) = run_pbt_episode_traced(&params, &cfg, 3).unwrap();
        assert_eq!(first, second);
        assert_eq!(first_trace, second_trace);
        assert!(first_trace[0].starts_with("tick=0 t=0.000 root=running"));
        assert!(first_trace
            .last()
            .unwrap()
            .starts_with("episode=3 makespan="));
        assert!(first_trace
            .iter()
            .any(|l| l.starts_with("attempt=1 event=")));
    }

    #[test]
    fn hopeless_episode_hits_attempt_limit() {
        let params = certain_params(ConfusionSpec::new(0.0, 1.0, 0.0, 0.0, 0.0, 0.0).unwrap());
        let cfg = BtRunConfig {
            max_attempts_per_episode: 25,
            ..BtRunConfig::default()
        };
        let err = run_pbt_episode(&params, &cfg, 0).unwrap_err();
        assert_eq!(
            err,
            BtError::AttemptLimitExceeded {
                episode: 0,
                limit: 25
            }
        );
    }

    #[test]
    fn observerless_tree_stalls_instead_of_hanging() {
        // All attempts draw a negative verdict; without an observer the
        // plant can never end them, which the runner must detect.
        let params = certain_params(ConfusionSpec::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0).unwrap());
        let tree = BtNode::sequence(
            true,
            vec![
                BtNode::always_success(BtNode::action(PlantBinding::Press)),
                BtNode::condition("$z <= $z_target").unwrap(),
            ],
        );
        let cfg = BtRunConfig::default();
        let err = run_pbt_episode_with_tree(&tree, &params, &cfg, 0).unwrap_err();
        assert!(matches!(err, BtError::StalledTree { episode: 0, .. }));
    }

    #[test]
    fn custom_tree_run_matches_builtin_for_equal_trees() {
        let params = worked_params();
        let cfg = BtRunConfig {
            n_episodes: 5,
            seed: 31,
            ..BtRunConfig::default()
        };
        let built_in = run_pbt_episodes(&params, &cfg).unwrap();
        let custom = run_pbt_episodes_with_tree(&build_twist_insert_tree(), &params, &cfg).unwrap();
        assert_eq!(built_in, custom);
    }

    #[test]
    fn makespan_lies_on_tick_grid() {
        let params = worked_params();
        let cfg = BtRunConfig {
            n_episodes: 20,
            seed: 5,
            ..BtRunConfig::default()
        };
        for episode in run_pbt_episodes(&params, &cfg).unwrap() {
            let ticks = (episode.makespan_s / cfg.tick_dt).round();
            assert!((episode.makespan_s - ticks * cfg.tick_dt).abs() < 1e-9);
        }
    }

    #[test]
    fn preempted_attempts_never_count_as_success() {
        let params = worked_params();
        let cfg = BtRunConfig {
            n_episodes: 60,
            seed: 13,
            ..BtRunConfig::default()
        };
        for episode in run_pbt_episodes(&params, &cfg).unwrap() {
            let (last, rest) = episode.attempts.split_last().unwrap();
            assert_eq!(last.ground_truth, GroundTruth::Success);
            assert!(!last.preempted);
            assert!(matches!(
                last.event,
                AttemptEvent::Classified(ClassifierEvent::Tp)
                    | AttemptEvent::Classified(ClassifierEvent::Ncs)
            ));
            // Everything before the terminal attempt either failed or was
            // preempted; an unpreempted success would have ended it.
            for attempt in rest {
                assert!(attempt.preempted || attempt.ground_truth == GroundTruth::Failure);
            }
        }
    }

    #[test]
    fn tree_loads_from_json_and_matches_builtin() {
        let doc = r##"{
            "type": "parallel",
            "main_child": 1,
            "halt_siblings": true,
            "children": [
                { "type": "action", "binding": "recording" },
                {
                    "type": "retry",
                    "limit": 6,
                    "child": {
                        "type": "sequence",
                        "memory": true,
                        "children": [
                            { "type": "expression", "target_key": "rotation_deg",
                              "expr": "$twist_deg * (1 - 2 * ($iter % 2))" },
                            { "type": "expression", "target_key": "iter",
                              "expr": "$iter + 1" },
                            { "type": "always_success",
                              "child": { "type": "action", "binding": "twist" } },
                            { "type": "always_success",
                              "child": { "type": "action", "binding": "relief_lift" } },
                            { "type": "always_success",
                              "child": { "type": "action", "binding": "press" } },
                            { "type": "condition", "expr": "$z <= $z_target" }
                        ]
                    }
                },
                { "type": "action", "binding": "classifier_observer" }
            ]
        }"##;
        let loaded = load_tree(doc.as_bytes()).unwrap();
        assert_eq!(loaded, build_twist_insert_tree());
    }

    #[test]
    fn tree_load_rejects_bad_documents() {
        let zero_limit = r#"{ "type": "retry", "limit": 0,
            "child": { "type": "action", "binding": "noop" } }"#;
        assert!(matches!(
            load_tree(zero_limit.as_bytes()).unwrap_err(),
            BtError::MalformedTree { .. }
        ));

        let bad_expr = r#"{ "type": "condition", "expr": "1 +" }"#;
        let err = load_tree(bad_expr.as_bytes()).unwrap_err();
        match err {
            BtError::TreeLoad { message } => assert!(message.contains("1 +")),
            other => panic!("unexpected error {other:?}"),
        }

        let unknown = r#"{ "type": "mystery" }"#;
        assert!(matches!(
            load_tree(unknown.as_bytes()).unwrap_err(),
            BtError::TreeLoad { .. }
        ));
    }

    #[test]
    fn shifted_floor_mode_still_matches_simulator() {
        let params = worked_params();
        let cfg = BtRunConfig {
            n_episodes: 40,
            seed: 21,
            floor_mode: FloorMode::Shifted,
            ..BtRunConfig::default()
        };
        let sim_cfg = SimConfig {
            policy: Policy::Preemptive,
            n_episodes: cfg.n_episodes,
            seed: cfg.seed,
            floor_mode: FloorMode::Shifted,
            ..SimConfig::default()
        };
        let bt_runs = run_pbt_episodes(&params, &cfg).unwrap();
        let sim_runs = run_episodes(&params, &sim_cfg).unwrap();
        for (bt, sim) in bt_runs.iter().zip(&sim_runs) {
            assert_eq!(bt.attempt_count(), sim.attempt_count());
            for (b, s) in bt.attempts.iter().zip(&sim.attempts) {
                assert_eq!(b.event, s.event);
            }
        }
    }
}
