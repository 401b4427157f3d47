use std::collections::HashMap;
use std::sync::Arc;

use super::{Arg, AssemblyError, AssemblyProgram, BinOp, Expr, Instruction, Opcode};
use crate::geometry::{
    self, add_mesh, concat, cut_grid, empty_grid, get_axis_aligned_bounding_box, get_position,
    get_volume, grid_to_mesh, rescale, rotate_to_align, sub_mesh, translate, GeometryError, TriMesh,
    Vec3, VoxelGrid, DEFAULT_GRID_RES, DEFAULT_TARGET_FACES,
};
use crate::provider::MeshProvider;
use crate::toolspec::{GeomKind, PartSpec};

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Mesh(Arc<TriMesh>),
    Grid(Arc<VoxelGrid>),
    Scalar(f64),
    Tuple(Vec<f64>),
}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Mesh(_) => "mesh",
            Value::Grid(_) => "grid",
            Value::Scalar(_) => "scalar",
            Value::Tuple(_) => "tuple",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Environment {
    values: HashMap<String, Value>,
}

impl Environment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, name: impl Into<String>, v: Value) {
        self.values.insert(name.into(), v);
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.values.get(name)
    }
}

#[derive(Debug, Clone)]
pub struct ExecOptions {
    /// Resolution used by `GRID_NEW()` without an argument.
    pub grid_res: usize,
    pub allow_generate: bool,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            grid_res: DEFAULT_GRID_RES,
            allow_generate: true,
        }
    }
}

fn eval(expr: &Expr, env: &Environment, line: usize) -> Result<Value, AssemblyError> {
    let scalar = |e: &Expr| -> Result<f64, AssemblyError> {
        match eval(e, env, line)? {
            Value::Scalar(v) => Ok(v),
            other => Err(AssemblyError::TypeMismatch {
                line,
                expected: "scalar".into(),
                found: other.type_name().into(),
            }),
        }
    };
    match expr {
        Expr::Num(v) => Ok(Value::Scalar(*v)),
        Expr::Name(n) => env.get(n).cloned().ok_or_else(|| AssemblyError::UnboundName {
            line,
            name: n.clone(),
        }),
        Expr::Index(n, i) => match env.get(n) {
            None => Err(AssemblyError::UnboundName {
                line,
                name: n.clone(),
            }),
            Some(Value::Tuple(t)) => t.get(*i).map(|&v| Value::Scalar(v)).ok_or_else(|| {
                AssemblyError::IndexOutOfRange {
                    line,
                    name: n.clone(),
                    index: *i,
                    len: t.len(),
                }
            }),
            Some(other) => Err(AssemblyError::TypeMismatch {
                line,
                expected: "tuple".into(),
                found: other.type_name().into(),
            }),
        },
        Expr::Neg(e) => Ok(Value::Scalar(-scalar(e)?)),
        Expr::Bin(op, a, b) => {
            let x = scalar(a)?;
            let y = scalar(b)?;
            let v = match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => {
                    if y.abs() < 1e-12 {
                        return Err(AssemblyError::DivisionByZero { line });
                    }
                    x / y
                }
                BinOp::Min => x.min(y),
                BinOp::Max => x.max(y),
            };
            Ok(Value::Scalar(v))
        }
    }
}

/// Evaluate an expression against bound values.
pub fn eval_expression(expr: &Expr, env: &Environment) -> Result<Value, AssemblyError> {
    eval(expr, env, 0)
}

struct Ctx<'a> {
    env: Environment,
    parts: &'a [PartSpec],
    provider: &'a dyn MeshProvider,
    opts: &'a ExecOptions,
    exports: Vec<AssembledMesh>,
    face_parts: HashMap<String, Vec<u32>>,
}

impl Ctx<'_> {
    fn arg(&self, ins: &Instruction, k: usize) -> Result<Value, AssemblyError> {
        match &ins.args[k] {
            Arg::Expr(e) => eval(e, &self.env, ins.line),
            Arg::Part(_) => Err(AssemblyError::TypeMismatch {
                line: ins.line,
                expected: "expression".into(),
                found: "part".into(),
            }),
        }
    }

    fn mismatch(ins: &Instruction, expected: &str, v: &Value) -> AssemblyError {
        AssemblyError::TypeMismatch {
            line: ins.line,
            expected: expected.into(),
            found: v.type_name().into(),
        }
    }

    fn mesh(&self, ins: &Instruction, k: usize) -> Result<Arc<TriMesh>, AssemblyError> {
        match self.arg(ins, k)? {
            Value::Mesh(m) => Ok(m),
            v => Err(Self::mismatch(ins, "mesh", &v)),
        }
    }

    fn grid(&self, ins: &Instruction, k: usize) -> Result<Arc<VoxelGrid>, AssemblyError> {
        match self.arg(ins, k)? {
            Value::Grid(g) => Ok(g),
            v => Err(Self::mismatch(ins, "grid", &v)),
        }
    }

    fn scalar(&self, ins: &Instruction, k: usize) -> Result<f64, AssemblyError> {
        match self.arg(ins, k)? {
            Value::Scalar(s) => Ok(s),
            v => Err(Self::mismatch(ins, "scalar", &v)),
        }
    }

    fn count(&self, ins: &Instruction, k: usize) -> Result<usize, AssemblyError> {
        let v = self.scalar(ins, k)?;
        if v < 0.0 || v.fract() != 0.0 || !v.is_finite() {
            return Err(AssemblyError::TypeMismatch {
                line: ins.line,
                expected: "non-negative integer".into(),
                found: v.to_string(),
            });
        }
        Ok(v as usize)
    }

    fn part(&self, ins: &Instruction) -> Result<&PartSpec, AssemblyError> {
        let Arg::Part(i) = ins.args[0] else {
            return Err(AssemblyError::TypeMismatch {
                line: ins.line,
                expected: "part".into(),
                found: "expression".into(),
            });
        };
        self.parts.get(i).ok_or(AssemblyError::PartIndexOutOfRange {
            line: ins.line,
            index: i,
            count: self.parts.len(),
        })
    }

    fn tags_of(&self, ins: &Instruction, k: usize, n: usize) -> Vec<u32> {
        match &ins.args[k] {
            Arg::Expr(Expr::Name(name)) => match self.face_parts.get(name) {
                Some(t) if t.len() == n => t.clone(),
                _ => vec![NO_PART; n],
            },
            _ => vec![NO_PART; n],
        }
    }

    /// Per-face part provenance for a freshly produced mesh.
    fn output_tags(&self, ins: &Instruction, out: &TriMesh) -> Vec<u32> {
        let n = out.faces.len();
        match ins.opcode {
            Opcode::Primitive | Opcode::Generate3d => match ins.args[0] {
                Arg::Part(i) => vec![i as u32; n],
                _ => vec![NO_PART; n],
            },
            Opcode::RotateToAlign | Opcode::Rescale | Opcode::Move => self.tags_of(ins, 0, n),
            Opcode::Concat => {
                let mut t = Vec::with_capacity(n);
                for k in 0..ins.args.len() {
                    let len = match self.arg(ins, k) {
                        Ok(Value::Mesh(m)) => m.faces.len(),
                        _ => 0,
                    };
                    t.extend(self.tags_of(ins, k, len));
                }
                t
            }
            _ => vec![NO_PART; n],
        }
    }

    fn step(&mut self, ins: &Instruction) -> Result<Vec<Value>, AssemblyError> {
        let line = ins.line;
        let geo = |source: GeometryError| AssemblyError::Geometry { line, source };
        let mesh_val = |m: TriMesh| Value::Mesh(Arc::new(m));
        let grid_val = |g: VoxelGrid| Value::Grid(Arc::new(g));
        let out = match ins.opcode {
            Opcode::Primitive => {
                let part = self.part(ins)?;
                let Some(kind) = part.geom.primitive_kind() else {
                    return Err(AssemblyError::TypeMismatch {
                        line,
                        expected: "primitive part".into(),
                        found: part.geom.name().into(),
                    });
                };
                vec![mesh_val(geometry::primitive(kind, &part.parameters).map_err(geo)?)]
            }
            Opcode::Generate3d => {
                let part = self.part(ins)?;
                if part.geom != GeomKind::Mesh {
                    return Err(AssemblyError::TypeMismatch {
                        line,
                        expected: "mesh part".into(),
                        found: part.geom.name().into(),
                    });
                }
                if !self.opts.allow_generate {
                    return Err(AssemblyError::GenerationDisabled { line });
                }
                let raw = self
                    .provider
                    .generate(&part.prompt)
                    .map_err(|source| AssemblyError::Provider { line, source })?;
                let aligned = rotate_to_align(&raw).map_err(geo)?;
                let ext = aligned.aabb().map_err(geo)?.extents();
                let target = part.parameters.first().copied().unwrap_or(ext.x);
                let ratio = if ext.x > 0.0 { target / ext.x } else { 1.0 };
                vec![mesh_val(rescale(&aligned, ratio).map_err(geo)?)]
            }
            Opcode::RotateToAlign => {
                let m = self.mesh(ins, 0)?;
                vec![mesh_val(rotate_to_align(&m).map_err(geo)?)]
            }
            Opcode::Rescale => {
                let m = self.mesh(ins, 0)?;
                let r = self.scalar(ins, 1)?;
                vec![mesh_val(rescale(&m, r).map_err(geo)?)]
            }
            Opcode::Move => {
                let m = self.mesh(ins, 0)?;
                let offset = if ins.args.len() == 2 {
                    match self.arg(ins, 1)? {
                        Value::Tuple(t) if t.len() == 3 => Vec3::new(t[0], t[1], t[2]),
                        v => return Err(Self::mismatch(ins, "3-tuple", &v)),
                    }
                } else {
                    Vec3::new(self.scalar(ins, 1)?, self.scalar(ins, 2)?, self.scalar(ins, 3)?)
                };
                vec![mesh_val(translate(&m, &offset))]
            }
            Opcode::Concat => {
                let ms: Vec<Arc<TriMesh>> = (0..ins.args.len())
                    .map(|k| self.mesh(ins, k))
                    .collect::<Result<_, _>>()?;
                let refs: Vec<&TriMesh> = ms.iter().map(|m| m.as_ref()).collect();
                vec![mesh_val(concat(&refs).map_err(geo)?)]
            }
            Opcode::GetPosition => {
                let p = get_position(&*self.mesh(ins, 0)?).map_err(geo)?;
                vec![Value::Tuple(vec![p.x, p.y, p.z])]
            }
            Opcode::GetBbox => {
                let bb = get_axis_aligned_bounding_box(&*self.mesh(ins, 0)?).map_err(geo)?;
                vec![Value::Tuple(bb.to_tuple().to_vec())]
            }
            Opcode::GetVolume => vec![Value::Scalar(get_volume(&*self.mesh(ins, 0)?).map_err(geo)?)],
            Opcode::GridNew => {
                let res = if ins.args.is_empty() {
                    self.opts.grid_res
                } else {
                    self.count(ins, 0)?
                };
                vec![grid_val(empty_grid(res).map_err(geo)?)]
            }
            Opcode::GridAdd | Opcode::GridSub => {
                let g = self.grid(ins, 0)?;
                let m = self.mesh(ins, 1)?;
                let r = if ins.opcode == Opcode::GridAdd {
                    add_mesh(&g, &m)
                } else {
                    sub_mesh(&g, &m)
                };
                vec![grid_val(r.map_err(geo)?)]
            }
            Opcode::GridCut => {
                let (up, bottom) = cut_grid(&*self.grid(ins, 0)?);
                vec![grid_val(up), grid_val(bottom)]
            }
            Opcode::GridToMesh => {
                let g = self.grid(ins, 0)?;
                let simplify = if ins.args.len() > 1 {
                    self.scalar(ins, 1)? != 0.0
                } else {
                    true
                };
                let target = if ins.args.len() > 2 {
                    self.count(ins, 2)?
                } else {
                    DEFAULT_TARGET_FACES
                };
                vec![mesh_val(grid_to_mesh(&g, simplify, target))]
            }
            Opcode::Export => {
                let m = self.mesh(ins, 0)?;
                let face_part = self.tags_of(ins, 0, m.faces.len());
                self.exports.push(AssembledMesh {
                    mesh: m.as_ref().clone(),
                    face_part,
                });
                vec![]
            }
        };
        Ok(out)
    }
}

/// Face tag for faces not traceable to a single part (grid output).
pub const NO_PART: u32 = u32::MAX;

/// An exported mesh with the index of the part each face came from.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledMesh {
    pub mesh: TriMesh,
    pub face_part: Vec<u32>,
}

impl AssembledMesh {
    /// Faces belonging to `part`, or every face when none is tagged with it.
    pub fn faces_of_part(&self, part: usize) -> Vec<u32> {
        let own: Vec<u32> = (0..self.mesh.faces.len() as u32)
            .filter(|&f| self.face_part[f as usize] == part as u32)
            .collect();
        if own.is_empty() {
            (0..self.mesh.faces.len() as u32).collect()
        } else {
            own
        }
    }
}

/// Run `program` with default options; returns the exported meshes in order.
pub fn execute(
    program: &AssemblyProgram,
    parts: &[PartSpec],
    provider: &dyn MeshProvider,
) -> Result<Vec<TriMesh>, AssemblyError> {
    execute_with(program, parts, provider, &ExecOptions::default())
}

pub fn execute_with(
    program: &AssemblyProgram,
    parts: &[PartSpec],
    provider: &dyn MeshProvider,
    opts: &ExecOptions,
) -> Result<Vec<TriMesh>, AssemblyError> {
    Ok(execute_tagged(program, parts, provider, opts)?
        .into_iter()
        .map(|a| a.mesh)
        .collect())
}

/// Like [`execute_with`] but keeps per-face part provenance.
pub fn execute_tagged(
    program: &AssemblyProgram,
    parts: &[PartSpec],
    provider: &dyn MeshProvider,
    opts: &ExecOptions,
) -> Result<Vec<AssembledMesh>, AssemblyError> {
    let mut ctx = Ctx {
        env: Environment::new(),
        parts,
        provider,
        opts,
        exports: Vec::new(),
        face_parts: HashMap::new(),
    };
    for ins in &program.instructions {
        let values = ctx.step(ins)?;
        for (name, v) in ins.outputs.iter().zip(values) {
            if let Value::Mesh(m) = &v {
                let tags = ctx.output_tags(ins, m);
                ctx.face_parts.insert(name.clone(), tags);
            }
            ctx.env.bind(name.clone(), v);
        }
    }
    Ok(ctx.exports)
}
