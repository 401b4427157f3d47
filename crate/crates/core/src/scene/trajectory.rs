use std::f64::consts::PI;
use std::fmt;

use thiserror::Error;

use crate::geometry::Vec3;
use crate::params::{ParamEntry, ParamPath};

/// Move bounds: position ±0.2 m, euler ±π around the initial value.
pub const MOVE_POS_RANGE: f64 = 0.2;
pub const MOVE_EULER_RANGE: f64 = PI;

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Grasp { target: String, euler: Vec3 },
    Move { pos: Vec3, euler: Vec3 },
    Release,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub actions: Vec<Action>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("action {index}: {msg}")]
    InvalidSequence { index: usize, msg: String },
}

impl Trajectory {
    pub fn new(actions: Vec<Action>) -> Self {
        Trajectory { actions }
    }

    /// Grasp only when empty-handed, release only while holding.
    pub fn check_sequence(&self) -> Result<(), TrajectoryError> {
        let mut holding = false;
        for (index, a) in self.actions.iter().enumerate() {
            match a {
                Action::Grasp { .. } if holding => {
                    return Err(TrajectoryError::InvalidSequence {
                        index,
                        msg: "grasp while already holding".into(),
                    })
                }
                Action::Grasp { .. } => holding = true,
                Action::Release if !holding => {
                    return Err(TrajectoryError::InvalidSequence {
                        index,
                        msg: "release without a grasp".into(),
                    })
                }
                Action::Release => holding = false,
                Action::Move { .. } => {}
            }
        }
        Ok(())
    }

    pub fn get(&self, path: ParamPath) -> Option<f64> {
        match path {
            ParamPath::MovePos { action, axis } => match self.actions.get(action) {
                Some(Action::Move { pos, .. }) => pos.get(axis).copied(),
                _ => None,
            },
            ParamPath::MoveEuler { action, axis } => match self.actions.get(action) {
                Some(Action::Move { euler, .. }) => euler.get(axis).copied(),
                _ => None,
            },
            ParamPath::PartParameter { .. } => None,
        }
    }

    pub fn set(&mut self, path: ParamPath, value: f64) -> bool {
        let (action, axis, is_pos) = match path {
            ParamPath::MovePos { action, axis } => (action, axis, true),
            ParamPath::MoveEuler { action, axis } => (action, axis, false),
            ParamPath::PartParameter { .. } => return false,
        };
        match self.actions.get_mut(action) {
            Some(Action::Move { pos, euler }) if axis < 3 => {
                if is_pos {
                    pos[axis] = value;
                } else {
                    euler[axis] = value;
                }
                true
            }
            _ => false,
        }
    }

    /// Parse `grasp(id, ex, ey, ez)`, `move(x, y, z, ex, ey, ez)` and `release()`
    /// lines. Blank lines and `#` comments are skipped; a surrounding code fence
    /// or `def manipulate():` header is tolerated.
    pub fn parse(text: &str) -> Result<Trajectory, TrajectoryError> {
        let mut actions = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let err = |msg: String| TrajectoryError::Parse { line, msg };
            let code = raw.split('#').next().unwrap_or("").trim();
            let code = code.trim_end_matches(';').trim();
            if code.is_empty() || code.starts_with("```") || code.starts_with("def ") {
                continue;
            }
            let open = code
                .find('(')
                .ok_or_else(|| err(format!("expected a call, got {code:?}")))?;
            if !code.ends_with(')') {
                return Err(err(format!("unterminated call {code:?}")));
            }
            let name = code[..open].trim();
            let inner = &code[open + 1..code.len() - 1];
            let args: Vec<&str> = if inner.trim().is_empty() {
                Vec::new()
            } else {
                inner
                    .split(',')
                    .map(|a| a.trim().trim_matches(|c| c == '(' || c == ')' || c == '[' || c == ']').trim())
                    .collect()
            };
            let nums = |xs: &[&str]| -> Result<Vec<f64>, TrajectoryError> {
                xs.iter()
                    .map(|a| {
                        a.parse::<f64>()
                            .ok()
                            .filter(|v| v.is_finite())
                            .ok_or_else(|| err(format!("invalid number {a:?}")))
                    })
                    .collect()
            };
            let action = match name {
                "grasp" => {
                    if args.len() != 4 {
                        return Err(err(format!("grasp takes 4 arguments, got {}", args.len())));
                    }
                    let target = args[0].trim_matches(|c| c == '"' || c == '\'').to_string();
                    if target.is_empty() {
                        return Err(err("grasp target is empty".into()));
                    }
                    let e = nums(&args[1..])?;
                    Action::Grasp {
                        target,
                        euler: Vec3::new(e[0], e[1], e[2]),
                    }
                }
                "move" => {
                    if args.len() != 6 {
                        return Err(err(format!("move takes 6 arguments, got {}", args.len())));
                    }
                    let v = nums(&args)?;
                    Action::Move {
                        pos: Vec3::new(v[0], v[1], v[2]),
                        euler: Vec3::new(v[3], v[4], v[5]),
                    }
                }
                "release" => {
                    if !args.is_empty() {
                        return Err(err("release takes no arguments".into()));
                    }
                    Action::Release
                }
                other => return Err(err(format!("unknown call {other:?}; expected grasp, move or release"))),
            };
            actions.push(action);
        }
        let t = Trajectory { actions };
        t.check_sequence()?;
        Ok(t)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Grasp { target, euler } => {
                write!(f, "grasp({target}, {}, {}, {})", euler.x, euler.y, euler.z)
            }
            Action::Move { pos, euler } => write!(
                f,
                "move({}, {}, {}, {}, {}, {})",
                pos.x, pos.y, pos.z, euler.x, euler.y, euler.z
            ),
            Action::Release => write!(f, "release()"),
        }
    }
}

impl fmt::Display for Trajectory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in &self.actions {
            writeln!(f, "{a}")?;
        }
        Ok(())
    }
}

/// Six entries per Move in document order; Grasp eulers are not optimized.
pub fn trajectory_parameters(traj: &Trajectory) -> Vec<ParamEntry> {
    let mut out = Vec::new();
    for (action, a) in traj.actions.iter().enumerate() {
        if let Action::Move { pos, euler } = a {
            for axis in 0..3 {
                out.push(ParamEntry {
                    path: ParamPath::MovePos { action, axis },
                    value: pos[axis],
                    lower: pos[axis] - MOVE_POS_RANGE,
                    upper: pos[axis] + MOVE_POS_RANGE,
                });
            }
            for axis in 0..3 {
                out.push(ParamEntry {
                    path: ParamPath::MoveEuler { action, axis },
                    value: euler[axis],
                    lower: euler[axis] - MOVE_EULER_RANGE,
                    upper: euler[axis] + MOVE_EULER_RANGE,
                });
            }
        }
    }
    out
}
