//! Closed-loop grasp refinement: sense, describe, extract an action, act.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats;
use crate::geometry::pose::MIN_COMMANDED_DEPTH_MM;
use crate::geometry::{
    compute_displacement_field, sample_point_cloud, seat_pose, ContactPose, Primitive, SensorSpec,
    TactilePointCloud, DEFAULT_POINTS,
};
use crate::label::{compute_contact_state, ContactState};
use crate::vocab::{DepthCat, PositionCat};

pub const MOVE_STEP_MM: f64 = 1.5;
pub const FORCE_STEP_MM: f64 = 0.4;
pub const DEFAULT_NOISE_MM: f64 = 0.2;
pub const DEFAULT_MAX_ITERS: usize = 10;
pub const GRASP_OBJECT_RADIUS_MM: f64 = 7.0;
pub const SUCCESS_WORDS: [&str; 4] = ["Stable", "Appropriate", "Secure", "Reliable"];
pub const DEFAULT_INSTRUCTION: &str = "Adjust the grasp until the contact is centered with moderate force.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionPrimitive {
    MoveUp,
    MoveDown,
    MoveLeft,
    MoveRight,
    IncreaseForce,
    DecreaseForce,
    Reset,
}

impl ActionPrimitive {
    pub const ALL: [ActionPrimitive; 7] = [
        Self::MoveUp,
        Self::MoveDown,
        Self::MoveLeft,
        Self::MoveRight,
        Self::IncreaseForce,
        Self::DecreaseForce,
        Self::Reset,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            Self::MoveUp => "move_up",
            Self::MoveDown => "move_down",
            Self::MoveLeft => "move_left",
            Self::MoveRight => "move_right",
            Self::IncreaseForce => "increase_force",
            Self::DecreaseForce => "decrease_force",
            Self::Reset => "reset",
        }
    }

    pub fn from_keyword(word: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.keyword() == word)
    }
}

impl fmt::Display for ActionPrimitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// Maximal runs of alphanumerics and underscores, in text order.
fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_')).filter(|w| !w.is_empty())
}

/// First action keyword appearing as a whole word.
pub fn extract_action(text: &str) -> Option<ActionPrimitive> {
    words(text).find_map(ActionPrimitive::from_keyword)
}

/// True if any success word appears as a whole word, case-sensitively.
pub fn detect_success(text: &str) -> bool {
    words(text).any(|w| SUCCESS_WORDS.contains(&w))
}

/// Everything a reasoner may look at for one step.
#[derive(Debug, Clone, Copy)]
pub struct ReasonerInput<'a> {
    pub cloud: &'a TactilePointCloud,
    /// Where the cloud was written, if it was.
    pub cloud_path: Option<&'a Path>,
    pub state: &'a ContactState,
    pub instruction: &'a str,
}

/// Turns a tactile observation into a free-text description.
pub trait Reasoner {
    fn describe(&mut self, input: ReasonerInput<'_>) -> Result<String>;
}

/// Fixed policy: recenter first, then correct force, then declare success.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBasedReasoner;

pub fn rule_based_action(state: &ContactState) -> Option<ActionPrimitive> {
    let pos = state.position_cat;
    match (pos.row(), pos.col()) {
        (2, _) => Some(ActionPrimitive::MoveDown),
        (0, _) => Some(ActionPrimitive::MoveUp),
        (_, 0) => Some(ActionPrimitive::MoveLeft),
        (_, 2) => Some(ActionPrimitive::MoveRight),
        _ => match state.depth_cat {
            DepthCat::VeryDeep => Some(ActionPrimitive::DecreaseForce),
            DepthCat::Slight => Some(ActionPrimitive::IncreaseForce),
            _ => None,
        },
    }
}

pub fn reason_rule_based(state: &ContactState, _instruction: &str) -> String {
    let (depth, pos) = (state.depth_cat.word(), state.position_cat.word());
    match rule_based_action(state) {
        Some(a) => format!("Contact is {depth} at {pos}, so {a}."),
        None => format!("Contact is {depth} at {pos}; the grasp is Stable."),
    }
}

impl Reasoner for RuleBasedReasoner {
    fn describe(&mut self, input: ReasonerInput<'_>) -> Result<String> {
        Ok(reason_rule_based(input.state, input.instruction))
    }
}

#[derive(Debug, Serialize)]
struct ReasonerRequest<'a> {
    cloud_path: String,
    state: &'a ContactState,
    instruction: &'a str,
}

/// A child process speaking one JSON request line in, one text line out.
pub struct ExternalReasoner {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl ExternalReasoner {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::file(program, e))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self { child, stdin, stdout })
    }
}

impl Reasoner for ExternalReasoner {
    fn describe(&mut self, input: ReasonerInput<'_>) -> Result<String> {
        let req = ReasonerRequest {
            cloud_path: input.cloud_path.map(|p| p.display().to_string()).unwrap_or_default(),
            state: input.state,
            instruction: input.instruction,
        };
        let mut line = serde_json::to_string(&req)?;
        line.push('\n');
        self.stdin.write_all(line.as_bytes())?;
        self.stdin.flush()?;
        let mut reply = String::new();
        if self.stdout.read_line(&mut reply)? == 0 {
            return Err(Error::Data("reasoner closed its output".into()));
        }
        Ok(reply.trim_end_matches(['\r', '\n']).to_string())
    }
}

impl Drop for ExternalReasoner {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Gripper and object state in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvSnapshot {
    /// Where the object's lowest point sits relative to the gel center.
    pub offset_mm: [f64; 2],
    pub indentation_mm: f64,
}

/// A smooth sphere pressed into the gel, moved by action primitives with
/// uniform actuation noise.
#[derive(Debug, Clone)]
pub struct GraspEnv {
    pub sensor: SensorSpec,
    pub object: Primitive,
    pub state: EnvSnapshot,
    pub noise_mm: f64,
    pub num_points: usize,
    rng: ChaCha8Rng,
}

impl GraspEnv {
    /// Random initial state from `seed`.
    pub fn new(sensor: SensorSpec, seed: u64, noise_mm: f64) -> Self {
        let mut env = Self::with_state(sensor, EnvSnapshot { offset_mm: [0.0; 2], indentation_mm: 1.0 }, noise_mm, seed);
        env.reset();
        env
    }

    pub fn with_state(sensor: SensorSpec, state: EnvSnapshot, noise_mm: f64, seed: u64) -> Self {
        Self {
            sensor,
            object: Primitive::sphere(GRASP_OBJECT_RADIUS_MM),
            state,
            noise_mm,
            num_points: DEFAULT_POINTS,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// The three-step scenario: low contact, then excessive force.
    pub fn fig6(sensor: SensorSpec, seed: u64) -> Self {
        Self::with_state(sensor, EnvSnapshot { offset_mm: [0.0, -3.5], indentation_mm: 2.7 }, 0.0, seed)
    }

    pub fn reset(&mut self) {
        let (hx, hy) = (0.3 * self.sensor.width_mm, 0.3 * self.sensor.height_mm);
        self.state = EnvSnapshot {
            offset_mm: [self.rng.random_range(-hx..=hx), self.rng.random_range(-hy..=hy)],
            indentation_mm: self.rng.random_range(0.3..=3.3),
        };
    }

    fn noise(&mut self) -> f64 {
        if self.noise_mm > 0.0 {
            self.rng.random_range(-self.noise_mm..=self.noise_mm)
        } else {
            0.0
        }
    }

    /// Applies an action. Returns true if the result had to be clamped.
    pub fn step(&mut self, action: ActionPrimitive) -> bool {
        let (hx, hy) = (self.sensor.width_mm / 2.0, self.sensor.height_mm / 2.0);
        let (dx, dy, dd) = match action {
            ActionPrimitive::MoveDown => (0.0, MOVE_STEP_MM, 0.0),
            ActionPrimitive::MoveUp => (0.0, -MOVE_STEP_MM, 0.0),
            ActionPrimitive::MoveLeft => (MOVE_STEP_MM, 0.0, 0.0),
            ActionPrimitive::MoveRight => (-MOVE_STEP_MM, 0.0, 0.0),
            ActionPrimitive::IncreaseForce => (0.0, 0.0, FORCE_STEP_MM),
            ActionPrimitive::DecreaseForce => (0.0, 0.0, -FORCE_STEP_MM),
            ActionPrimitive::Reset => {
                self.reset();
                return false;
            }
        };
        let n = self.noise();
        let s = &mut self.state;
        let (x, y, d) = (
            s.offset_mm[0] + if dx != 0.0 { dx + n } else { 0.0 },
            s.offset_mm[1] + if dy != 0.0 { dy + n } else { 0.0 },
            s.indentation_mm + if dd != 0.0 { dd + n } else { 0.0 },
        );
        let clamped = (
            x.clamp(-hx, hx),
            y.clamp(-hy, hy),
            d.clamp(MIN_COMMANDED_DEPTH_MM, self.sensor.max_depth_mm),
        );
        *s = EnvSnapshot { offset_mm: [clamped.0, clamped.1], indentation_mm: clamped.2 };
        clamped != (x, y, d)
    }

    pub fn pose(&self) -> Result<ContactPose> {
        let s = self.state;
        let guess = ContactPose::new(
            UnitQuaternion::identity(),
            Vector3::new(s.offset_mm[0], s.offset_mm[1], GRASP_OBJECT_RADIUS_MM - s.indentation_mm),
            s.indentation_mm,
        );
        seat_pose(&self.object, &guess, &self.sensor)
    }

    /// Regenerates the field, a point cloud and the contact state.
    pub fn sense(&mut self) -> Result<(TactilePointCloud, ContactState)> {
        let field = compute_displacement_field(&self.object, &self.pose()?, &self.sensor)?;
        let state = compute_contact_state(&field, &self.object, &self.sensor)?;
        let cloud = sample_point_cloud(&field, self.num_points, &mut self.rng)?;
        Ok((cloud, state))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub cloud_id: String,
    pub description: String,
    pub position_cat: PositionCat,
    pub depth_cat: DepthCat,
    pub action: Option<ActionPrimitive>,
    pub success: bool,
    /// Neither an action nor a success word was found.
    pub no_op: bool,
    pub clamped: bool,
    pub env_after: EnvSnapshot,
}

impl TraceStep {
    pub fn outcome(&self) -> String {
        match (self.success, self.action) {
            (true, _) => SUCCESS_WORDS
                .into_iter()
                .find(|w| words(&self.description).any(|t| t == *w))
                .unwrap_or("success")
                .to_string(),
            (false, Some(a)) => a.to_string(),
            (false, None) => "no_op".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "message", rename_all = "snake_case")]
pub enum TraceStatus {
    Success,
    MaxIters,
    Error(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementTrace {
    pub instruction: String,
    pub initial: EnvSnapshot,
    pub steps: Vec<TraceStep>,
    pub status: TraceStatus,
}

impl RefinementTrace {
    pub fn outcomes(&self) -> Vec<String> {
        self.steps.iter().map(TraceStep::outcome).collect()
    }

    /// One line per step: index, description, outcome.
    pub fn to_text(&self) -> String {
        self.steps
            .iter()
            .map(|s| format!("{}\t{}\t{}\n", s.step, s.description, s.outcome()))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Writes `trace.json` and `trace.txt`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        let json = dir.join("trace.json");
        fs::write(&json, self.to_json()?).map_err(|e| Error::file(&json, e))?;
        let txt = dir.join("trace.txt");
        fs::write(&txt, self.to_text()).map_err(|e| Error::file(&txt, e))
    }
}

/// Runs sense → describe → check success → extract → act until success or
/// `max_iters` steps. When `cloud_dir` is set, each observed cloud is saved
/// there so external reasoners can read it.
pub fn run_refinement(
    env: &mut GraspEnv,
    reasoner: &mut dyn Reasoner,
    instruction: &str,
    max_iters: usize,
    cloud_dir: Option<&Path>,
) -> RefinementTrace {
    let mut trace = RefinementTrace {
        instruction: instruction.to_string(),
        initial: env.state,
        steps: Vec::new(),
        status: TraceStatus::MaxIters,
    };
    for step in 1..=max_iters {
        let result = (|| -> Result<TraceStep> {
            let (cloud, state) = env.sense()?;
            let cloud_id = format!("step{step:02}");
            let path: Option<PathBuf> = match cloud_dir {
                Some(dir) => {
                    let p = dir.join(format!("{cloud_id}.tclp"));
                    formats::write_cloud(&p, &cloud)?;
                    Some(p)
                }
                None => None,
            };
            let description = reasoner.describe(ReasonerInput {
                cloud: &cloud,
                cloud_path: path.as_deref(),
                state: &state,
                instruction,
            })?;
            let success = detect_success(&description);
            let action = if success { None } else { extract_action(&description) };
            let clamped = action.map(|a| env.step(a)).unwrap_or(false);
            Ok(TraceStep {
                step,
                cloud_id,
                description,
                position_cat: state.position_cat,
                depth_cat: state.depth_cat,
                action,
                success,
                no_op: !success && action.is_none(),
                clamped,
                env_after: env.state,
            })
        })();
        match result {
            Ok(s) => {
                let done = s.success;
                trace.steps.push(s);
                if done {
                    trace.status = TraceStatus::Success;
                    break;
                }
            }
            Err(e) => {
                trace.status = TraceStatus::Error(e.to_string());
                break;
            }
        }
    }
    trace
}

/// Positional error outside the center cell.
pub fn centering_excess(offset: [f64; 2], sensor: &SensorSpec) -> f64 {
    (offset[0].abs() - sensor.width_mm / 6.0).max(0.0) + (offset[1].abs() - sensor.height_mm / 6.0).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{AreaCat, Shape, Texture};

    fn state(position: PositionCat, depth: DepthCat) -> ContactState {
        ContactState {
            shape: Shape::Sphere,
            texture: Texture::Smooth,
            depth_cat: depth,
            d_max_mm: 1.0,
            position_cat: position,
            deepest_xy_mm: [0.0, 0.0],
            area_cat: AreaCat::Medium,
            area_fraction: 0.1,
            warn_ambiguous_position: false,
        }
    }

    #[test]
    fn matching_rules() {
        assert_eq!(extract_action("please move_down slightly"), Some(ActionPrimitive::MoveDown));
        assert_eq!(extract_action("Stable grasp achieved"), None);
        assert_eq!(extract_action("move_left then move_up"), Some(ActionPrimitive::MoveLeft));
        assert_eq!(extract_action("remove_down or move_downward"), None);
        assert!(detect_success("Grasp is Secure"));
        assert!(!detect_success("stable"));
        assert!(!detect_success(""));
        assert!(!detect_success("Unstable"));
        assert!(detect_success("(Reliable)"));
    }

    #[test]
    fn rule_based_sentences() {
        let s = reason_rule_based(&state(PositionCat::BottomCenter, DepthCat::Moderate), "");
        assert!(s.contains("move_down"));
        let s = reason_rule_based(&state(PositionCat::Center, DepthCat::VeryDeep), "");
        assert!(s.contains("decrease_force"));
        let s = reason_rule_based(&state(PositionCat::Center, DepthCat::Moderate), "");
        assert!(s.contains("Stable"));
        for &p in PositionCat::ALL {
            for &d in DepthCat::ALL {
                let text = reason_rule_based(&state(p, d), "");
                let hits = words(&text)
                    .filter(|w| ActionPrimitive::from_keyword(w).is_some() || SUCCESS_WORDS.contains(w))
                    .count();
                assert_eq!(hits, 1, "{text}");
                assert_eq!(detect_success(&text), rule_based_action(&state(p, d)).is_none());
            }
        }
    }

    #[test]
    fn kinematics() {
        let s = SensorSpec::default();
        let mut env = GraspEnv::with_state(s.clone(), EnvSnapshot { offset_mm: [0.0, -4.0], indentation_mm: 2.0 }, 0.2, 3);
        env.step(ActionPrimitive::MoveDown);
        let dec = 4.0 - env.state.offset_mm[1].abs();
        assert!((dec - 1.5).abs() <= 0.2 + 1e-12);
        let mut env = GraspEnv::with_state(s.clone(), EnvSnapshot { offset_mm: [0.0; 2], indentation_mm: 2.6 }, 0.2, 4);
        env.step(ActionPrimitive::DecreaseForce);
        assert!((env.state.indentation_mm - 2.2).abs() <= 0.2 + 1e-12);
        let mut env = GraspEnv::with_state(s.clone(), EnvSnapshot { offset_mm: [9.5, 0.0], indentation_mm: 3.4 }, 0.0, 4);
        assert!(!env.step(ActionPrimitive::MoveRight));
        assert!(env.step(ActionPrimitive::IncreaseForce));
        assert_eq!(env.state.indentation_mm, s.max_depth_mm);
    }

    #[test]
    fn reset_is_seeded_and_bounded() {
        let s = SensorSpec::default();
        let a = GraspEnv::new(s.clone(), 9, 0.2);
        let b = GraspEnv::new(s.clone(), 9, 0.2);
        assert_eq!(a.state, b.state);
        let mut env = a;
        for _ in 0..50 {
            env.step(ActionPrimitive::Reset);
            assert!(env.state.offset_mm[0].abs() <= s.width_mm / 2.0);
            assert!(env.state.offset_mm[1].abs() <= s.height_mm / 2.0);
            assert!((0.0..=s.max_depth_mm).contains(&env.state.indentation_mm));
        }
    }

    #[test]
    fn sensing_matches_offset() {
        let s = SensorSpec::default();
        let mut env = GraspEnv::with_state(s, EnvSnapshot { offset_mm: [0.0, -3.5], indentation_mm: 2.7 }, 0.0, 1);
        let (cloud, st) = env.sense().unwrap();
        assert_eq!(cloud.len(), DEFAULT_POINTS);
        assert_eq!(st.position_cat, PositionCat::BottomCenter);
        assert_eq!(st.depth_cat, DepthCat::VeryDeep);
        assert!((st.d_max_mm - 2.7).abs() < 0.02, "{}", st.d_max_mm);
    }

    #[test]
    fn scripted_scenario() {
        let mut env = GraspEnv::fig6(SensorSpec::default(), 0);
        let trace = run_refinement(&mut env, &mut RuleBasedReasoner, DEFAULT_INSTRUCTION, DEFAULT_MAX_ITERS, None);
        assert_eq!(trace.status, TraceStatus::Success);
        assert_eq!(trace.outcomes(), ["move_down", "decrease_force", "Stable"]);
        let text = trace.to_text();
        assert_eq!(text.lines().count(), 3);
        assert!(text.trim_end().ends_with("Stable"));
        assert_eq!(RefinementTrace::from_json(&trace.to_json().unwrap()).unwrap(), trace);
    }

    #[test]
    fn already_satisfied() {
        let s = SensorSpec::default();
        let mut env = GraspEnv::with_state(s, EnvSnapshot { offset_mm: [0.5, 0.3], indentation_mm: 1.2 }, 0.2, 2);
        let trace = run_refinement(&mut env, &mut RuleBasedReasoner, "", 10, None);
        assert_eq!(trace.status, TraceStatus::Success);
        assert_eq!(trace.steps.len(), 1);
        assert!(trace.steps[0].action.is_none());
    }

    struct Mute;
    impl Reasoner for Mute {
        fn describe(&mut self, _: ReasonerInput<'_>) -> Result<String> {
            Ok("I am not sure.".into())
        }
    }

    #[test]
    fn silent_reasoner_runs_out_of_iterations() {
        let mut env = GraspEnv::new(SensorSpec::default(), 1, 0.2);
        let before = env.state;
        let trace = run_refinement(&mut env, &mut Mute, "", 4, None);
        assert_eq!(trace.status, TraceStatus::MaxIters);
        assert_eq!(trace.steps.len(), 4);
        assert!(trace.steps.iter().all(|s| s.no_op));
        assert_eq!(env.state, before);
    }

    #[test]
    fn noiseless_positional_steps_shrink_excess() {
        let s = SensorSpec::default();
        for seed in 0..20 {
            let mut env = GraspEnv::new(s.clone(), seed, 0.0);
            for _ in 0..10 {
                let (_, st) = env.sense().unwrap();
                let Some(a) = rule_based_action(&st) else { break };
                let before = centering_excess(env.state.offset_mm, &s);
                env.step(a);
                if matches!(a, ActionPrimitive::MoveUp | ActionPrimitive::MoveDown | ActionPrimitive::MoveLeft | ActionPrimitive::MoveRight) {
                    assert!(centering_excess(env.state.offset_mm, &s) < before);
                }
            }
        }
    }
}
