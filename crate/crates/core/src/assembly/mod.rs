//! Line-oriented single-assignment DSL that turns a parts list into meshes.
//!
//! ```text
//! head = PRIMITIVE(part 0)
//! handle = PRIMITIVE(part 1)
//! bb = GET_BBOX(head)
//! h2 = MOVE(handle, -(bb[3] - bb[0]), 0, 0)
//! tool = CONCAT(head, h2)
//! EXPORT(tool)
//! ```

mod exec;
mod parse;

use std::fmt;

use thiserror::Error;

pub use exec::{
    eval_expression, execute, execute_tagged, execute_with, AssembledMesh, Environment, ExecOptions,
    Value, NO_PART,
};
pub use parse::parse_program;

use crate::geometry::GeometryError;
use crate::provider::ProviderError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Opcode {
    Primitive,
    Generate3d,
    RotateToAlign,
    Rescale,
    Move,
    Concat,
    GetPosition,
    GetBbox,
    GetVolume,
    GridNew,
    GridAdd,
    GridSub,
    GridCut,
    GridToMesh,
    Export,
}

impl Opcode {
    pub const ALL: [Opcode; 15] = [
        Opcode::Primitive,
        Opcode::Generate3d,
        Opcode::RotateToAlign,
        Opcode::Rescale,
        Opcode::Move,
        Opcode::Concat,
        Opcode::GetPosition,
        Opcode::GetBbox,
        Opcode::GetVolume,
        Opcode::GridNew,
        Opcode::GridAdd,
        Opcode::GridSub,
        Opcode::GridCut,
        Opcode::GridToMesh,
        Opcode::Export,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Opcode::Primitive => "PRIMITIVE",
            Opcode::Generate3d => "GENERATE3D",
            Opcode::RotateToAlign => "ROTATE_TO_ALIGN",
            Opcode::Rescale => "RESCALE",
            Opcode::Move => "MOVE",
            Opcode::Concat => "CONCAT",
            Opcode::GetPosition => "GET_POSITION",
            Opcode::GetBbox => "GET_BBOX",
            Opcode::GetVolume => "GET_VOLUME",
            Opcode::GridNew => "GRID_NEW",
            Opcode::GridAdd => "GRID_ADD",
            Opcode::GridSub => "GRID_SUB",
            Opcode::GridCut => "GRID_CUT",
            Opcode::GridToMesh => "GRID_TO_MESH",
            Opcode::Export => "EXPORT",
        }
    }

    pub fn from_name(s: &str) -> Option<Opcode> {
        Opcode::ALL.iter().copied().find(|o| o.name() == s)
    }

    /// Inclusive range of accepted argument counts.
    pub fn arg_range(self) -> (usize, usize) {
        match self {
            Opcode::Primitive | Opcode::Generate3d => (1, 1),
            Opcode::RotateToAlign | Opcode::GetPosition | Opcode::GetBbox | Opcode::GetVolume => (1, 1),
            Opcode::Rescale => (2, 2),
            Opcode::Move => (2, 4),
            Opcode::Concat => (1, usize::MAX),
            Opcode::GridNew => (0, 1),
            Opcode::GridAdd | Opcode::GridSub => (2, 2),
            Opcode::GridCut => (1, 1),
            Opcode::GridToMesh => (1, 3),
            Opcode::Export => (1, 1),
        }
    }

    pub fn outputs(self) -> usize {
        match self {
            Opcode::GridCut => 2,
            Opcode::Export => 0,
            _ => 1,
        }
    }

    fn takes_part(self) -> bool {
        matches!(self, Opcode::Primitive | Opcode::Generate3d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Name(String),
    Index(String, usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Arg {
    Expr(Expr),
    Part(usize),
}

#[derive(Debug, Clone)]
pub struct Instruction {
    pub outputs: Vec<String>,
    pub opcode: Opcode,
    pub args: Vec<Arg>,
    /// 1-based source line; ignored by equality.
    pub line: usize,
}

impl PartialEq for Instruction {
    fn eq(&self, other: &Self) -> bool {
        self.outputs == other.outputs && self.opcode == other.opcode && self.args == other.args
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AssemblyProgram {
    pub instructions: Vec<Instruction>,
}

impl AssemblyProgram {
    pub fn exports(&self) -> impl Iterator<Item = &Instruction> {
        self.instructions.iter().filter(|i| i.opcode == Opcode::Export)
    }

    /// Part indices referenced by `PRIMITIVE`/`GENERATE3D`.
    pub fn referenced_parts(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .instructions
            .iter()
            .flat_map(|i| i.args.iter())
            .filter_map(|a| match a {
                Arg::Part(p) => Some(*p),
                _ => None,
            })
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("line {line}, column {column}: {msg}")]
    SyntaxError {
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("line {line}: name {name:?} is used before it is bound")]
    ForwardReference { name: String, line: usize },
    #[error("line {line}: name {name:?} is already bound")]
    DuplicateBinding { name: String, line: usize },
    #[error("program has no EXPORT instruction")]
    NoExport,
}

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("line {line}: part index {index} out of range ({count} parts)")]
    PartIndexOutOfRange {
        line: usize,
        index: usize,
        count: usize,
    },
    #[error("line {line}: expected {expected}, found {found}")]
    TypeMismatch {
        line: usize,
        expected: String,
        found: String,
    },
    #[error("line {line}: division by zero")]
    DivisionByZero { line: usize },
    #[error("line {line}: unbound name {name:?}")]
    UnboundName { line: usize, name: String },
    #[error("line {line}: index {index} out of range for {name:?} of length {len}")]
    IndexOutOfRange {
        line: usize,
        name: String,
        index: usize,
        len: usize,
    },
    #[error("line {line}: {source}")]
    Geometry {
        line: usize,
        #[source]
        source: GeometryError,
    },
    #[error("line {line}: {source}")]
    Provider {
        line: usize,
        #[source]
        source: ProviderError,
    },
    #[error("line {line}: text-to-3D generation is disabled")]
    GenerationDisabled { line: usize },
}

impl fmt::Display for BinOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Min => "min",
            BinOp::Max => "max",
        })
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Name(n) => f.write_str(n),
            Expr::Index(n, i) => write!(f, "{n}[{i}]"),
            Expr::Neg(e) => write!(f, "-{e}"),
            Expr::Bin(op @ (BinOp::Min | BinOp::Max), a, b) => write!(f, "{op}({a}, {b})"),
            Expr::Bin(op, a, b) => write!(f, "({a} {op} {b})"),
        }
    }
}

impl fmt::Display for Arg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arg::Expr(e) => write!(f, "{e}"),
            Arg::Part(p) => write!(f, "part {p}"),
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.outputs.is_empty() {
            write!(f, "{} = ", self.outputs.join(", "))?;
        }
        write!(f, "{}(", self.opcode.name())?;
        for (k, a) in self.args.iter().enumerate() {
            if k > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str(")")
    }
}

impl fmt::Display for AssemblyProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, ins) in self.instructions.iter().enumerate() {
            if k > 0 {
                f.write_str("\n")?;
            }
            write!(f, "{ins}")?;
        }
        Ok(())
    }
}
