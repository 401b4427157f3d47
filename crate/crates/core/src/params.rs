use std::fmt;

/// Location of one optimizable scalar inside a tool spec or trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamPath {
    PartParameter { part: usize, index: usize },
    MovePos { action: usize, axis: usize },
    MoveEuler { action: usize, axis: usize },
}

impl fmt::Display for ParamPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamPath::PartParameter { part, index } => write!(f, "parts[{part}].parameters[{index}]"),
            ParamPath::MovePos { action, axis } => write!(f, "actions[{action}].pos[{axis}]"),
            ParamPath::MoveEuler { action, axis } => write!(f, "actions[{action}].euler[{axis}]"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamEntry {
    pub path: ParamPath,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

impl ParamEntry {
    pub fn is_shape(&self) -> bool {
        matches!(self.path, ParamPath::PartParameter { .. })
    }
}
