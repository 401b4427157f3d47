//! Tool spec documents: parts, assembly program and placement.

use std::fmt;

use serde_json::{Map, Value};
use thiserror::Error;

use crate::assembly::{parse_program, AssemblyProgram, ParseError};
use crate::geometry::{PrimitiveKind, Transform, Vec3};
use crate::params::{ParamEntry, ParamPath};

pub const FORMAT: &str = "toolspec/1";

/// Shape bounds are `[SHAPE_LOWER·s⁰, SHAPE_UPPER·s⁰]`.
pub const SHAPE_LOWER: f64 = 0.5;
pub const SHAPE_UPPER: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GeomKind {
    Cube,
    Ball,
    Cylinder,
    Ring,
    Tube,
    Mesh,
}

impl GeomKind {
    pub const ALL: [GeomKind; 6] = [
        GeomKind::Cube,
        GeomKind::Ball,
        GeomKind::Cylinder,
        GeomKind::Ring,
        GeomKind::Tube,
        GeomKind::Mesh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GeomKind::Cube => "cube",
            GeomKind::Ball => "ball",
            GeomKind::Cylinder => "cylinder",
            GeomKind::Ring => "ring",
            GeomKind::Tube => "tube",
            GeomKind::Mesh => "mesh",
        }
    }

    pub fn from_name(s: &str) -> Option<GeomKind> {
        GeomKind::ALL.iter().copied().find(|g| g.name() == s)
    }

    pub fn arity(self) -> usize {
        match self {
            GeomKind::Ball => 1,
            GeomKind::Cylinder | GeomKind::Ring => 2,
            GeomKind::Cube | GeomKind::Tube | GeomKind::Mesh => 3,
        }
    }

    pub fn primitive_kind(self) -> Option<PrimitiveKind> {
        match self {
            GeomKind::Cube => Some(PrimitiveKind::Cube),
            GeomKind::Ball => Some(PrimitiveKind::Ball),
            GeomKind::Cylinder => Some(PrimitiveKind::Cylinder),
            GeomKind::Ring => Some(PrimitiveKind::Ring),
            GeomKind::Tube => Some(PrimitiveKind::Tube),
            GeomKind::Mesh => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartSpec {
    pub geom: GeomKind,
    pub prompt: String,
    pub parameters: Vec<f64>,
    pub is_graspable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementSpec {
    pub position: Vec3,
    pub euler: Vec3,
    pub scale: Vec3,
}

impl Default for PlacementSpec {
    fn default() -> Self {
        PlacementSpec {
            position: Vec3::zeros(),
            euler: Vec3::zeros(),
            scale: Vec3::repeat(1.0),
        }
    }
}

impl PlacementSpec {
    pub fn transform(&self) -> Transform {
        Transform::from_pos_euler(self.position, self.euler)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolSpec {
    pub name: String,
    pub parts: Vec<PartSpec>,
    pub assembly: AssemblyProgram,
    pub placement: PlacementSpec,
}

impl ToolSpec {
    pub fn graspable_part(&self) -> Option<usize> {
        self.parts.iter().position(|p| p.is_graspable)
    }

    pub fn get(&self, path: ParamPath) -> Option<f64> {
        match path {
            ParamPath::PartParameter { part, index } => {
                self.parts.get(part).and_then(|p| p.parameters.get(index)).copied()
            }
            _ => None,
        }
    }

    /// Write a shape parameter; returns false if the path is not a shape path or is out of range.
    pub fn set(&mut self, path: ParamPath, value: f64) -> bool {
        match path {
            ParamPath::PartParameter { part, index } => {
                match self.parts.get_mut(part).and_then(|p| p.parameters.get_mut(index)) {
                    Some(slot) => {
                        *slot = value;
                        true
                    }
                    None => false,
                }
            }
            _ => false,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecError {
    #[error("line {line}, column {column}: {msg}")]
    SyntaxError {
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("unknown field {field:?} in {path}")]
    UnknownField { path: String, field: String },
    #[error("missing field {field:?} in {path}")]
    MissingField { path: String, field: String },
    #[error("assembly: {0}")]
    Assembly(#[from] ParseError),
}

/// Line and column (1-based) of the first occurrence of `needle`, or (0, 0).
fn locate(text: &str, needle: &str) -> (usize, usize) {
    match text.find(needle) {
        Some(off) => {
            let before = &text[..off];
            let line = before.matches('\n').count() + 1;
            let col = before.len() - before.rfind('\n').map(|i| i + 1).unwrap_or(0) + 1;
            (line, col)
        }
        None => (0, 0),
    }
}

struct Walker<'a> {
    text: &'a str,
}

impl Walker<'_> {
    fn syntax(&self, value: &Value, msg: String) -> SpecError {
        let needle = serde_json::to_string(value).unwrap_or_default();
        let (line, column) = locate(self.text, &needle);
        SpecError::SyntaxError { line, column, msg }
    }

    fn object<'v>(
        &self,
        v: &'v Value,
        path: &str,
        allowed: &[&str],
    ) -> Result<&'v Map<String, Value>, SpecError> {
        let obj = v
            .as_object()
            .ok_or_else(|| self.syntax(v, format!("{path} must be an object")))?;
        if let Some(k) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(SpecError::UnknownField {
                path: path.to_string(),
                field: k.clone(),
            });
        }
        // Report missing fields in declaration order.
        if let Some(k) = allowed.iter().find(|k| !obj.contains_key(**k)) {
            return Err(SpecError::MissingField {
                path: path.to_string(),
                field: k.to_string(),
            });
        }
        Ok(obj)
    }

    fn string(&self, v: &Value, path: &str) -> Result<String, SpecError> {
        v.as_str()
            .map(str::to_string)
            .ok_or_else(|| self.syntax(v, format!("{path} must be a string")))
    }

    fn numbers(&self, v: &Value, path: &str) -> Result<Vec<f64>, SpecError> {
        let arr = v
            .as_array()
            .ok_or_else(|| self.syntax(v, format!("{path} must be an array of numbers")))?;
        arr.iter()
            .map(|x| {
                x.as_f64()
                    .ok_or_else(|| self.syntax(x, format!("{path} must contain only numbers")))
            })
            .collect()
    }

    fn vec3(&self, v: &Value, path: &str) -> Result<Vec3, SpecError> {
        let xs = self.numbers(v, path)?;
        if xs.len() != 3 {
            return Err(self.syntax(v, format!("{path} must have 3 entries, got {}", xs.len())));
        }
        Ok(Vec3::new(xs[0], xs[1], xs[2]))
    }

    fn part(&self, v: &Value, path: &str) -> Result<PartSpec, SpecError> {
        let obj = self.object(v, path, &["geom", "prompt", "parameters", "is_graspable"])?;
        let geom_v = &obj["geom"];
        let geom_name = self.string(geom_v, &format!("{path}.geom"))?;
        let geom = GeomKind::from_name(&geom_name).ok_or_else(|| {
            self.syntax(
                geom_v,
                format!(
                    "{path}.geom: unknown geometry {geom_name:?}, expected one of cube, ball, cylinder, ring, tube, mesh"
                ),
            )
        })?;
        let prompt = self.string(&obj["prompt"], &format!("{path}.prompt"))?;
        let parameters = self.numbers(&obj["parameters"], &format!("{path}.parameters"))?;
        let g = &obj["is_graspable"];
        let is_graspable = g
            .as_bool()
            .ok_or_else(|| self.syntax(g, format!("{path}.is_graspable must be a boolean")))?;
        Ok(PartSpec {
            geom,
            prompt,
            parameters,
            is_graspable,
        })
    }
}

/// Parse a tool spec document. Structural checks only; see [`validate`].
pub fn parse_tool_spec(text: &str) -> Result<ToolSpec, SpecError> {
    let root: Value = serde_json::from_str(text).map_err(|e| SpecError::SyntaxError {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    let w = Walker { text };
    let obj = w.object(&root, "spec", &["format", "name", "parts", "assembly", "placement"])?;
    let format = w.string(&obj["format"], "format")?;
    if format != FORMAT {
        return Err(w.syntax(&obj["format"], format!("unsupported format {format:?}, expected {FORMAT:?}")));
    }
    let name = w.string(&obj["name"], "name")?;
    let parts_v = obj["parts"]
        .as_array()
        .ok_or_else(|| w.syntax(&obj["parts"], "parts must be an array".into()))?;
    let parts = parts_v
        .iter()
        .enumerate()
        .map(|(i, p)| w.part(p, &format!("parts[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    let source = w.string(&obj["assembly"], "assembly")?;
    let assembly = parse_program(&source)?;
    let pl = w.object(&obj["placement"], "placement", &["position", "euler", "scale"])?;
    let placement = PlacementSpec {
        position: w.vec3(&pl["position"], "placement.position")?,
        euler: w.vec3(&pl["euler"], "placement.euler")?,
        scale: w.vec3(&pl["scale"], "placement.scale")?,
    };
    Ok(ToolSpec {
        name,
        parts,
        assembly,
        placement,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationCode {
    NoParts,
    ArityMismatch { part: usize, expected: usize, got: usize },
    NonPositiveParameter { part: usize, index: usize, value: f64 },
    PromptMismatch { part: usize },
    GraspableCountViolation { count: usize },
    NonPositiveScale { axis: usize, value: f64 },
    DegenerateGeometry { part: usize, reason: String },
    PartReferenceOutOfRange { part: usize },
    TextTo3dDisabled { part: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub code: ViolationCode,
    pub path: String,
}

impl Violation {
    pub fn code_name(&self) -> &'static str {
        match self.code {
            ViolationCode::NoParts => "NoParts",
            ViolationCode::ArityMismatch { .. } => "ArityMismatch",
            ViolationCode::NonPositiveParameter { .. } => "NonPositiveParameter",
            ViolationCode::PromptMismatch { .. } => "PromptMismatch",
            ViolationCode::GraspableCountViolation { .. } => "GraspableCountViolation",
            ViolationCode::NonPositiveScale { .. } => "NonPositiveScale",
            ViolationCode::DegenerateGeometry { .. } => "DegenerateGeometry",
            ViolationCode::PartReferenceOutOfRange { .. } => "PartReferenceOutOfRange",
            ViolationCode::TextTo3dDisabled { .. } => "TextTo3dDisabled",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = self.code_name();
        match &self.code {
            ViolationCode::NoParts => write!(f, "{name}"),
            ViolationCode::ArityMismatch { part, expected, got } => {
                write!(f, "{name}(part {part}, expected {expected}, got {got})")
            }
            ViolationCode::NonPositiveParameter { part, index, value } => {
                write!(f, "{name}(part {part}, index {index}, value {value})")
            }
            ViolationCode::PromptMismatch { part }
            | ViolationCode::PartReferenceOutOfRange { part }
            | ViolationCode::TextTo3dDisabled { part } => write!(f, "{name}(part {part})"),
            ViolationCode::GraspableCountViolation { count } => write!(f, "{name}(count {count})"),
            ViolationCode::NonPositiveScale { axis, value } => {
                write!(f, "{name}(axis {axis}, value {value})")
            }
            ViolationCode::DegenerateGeometry { part, reason } => {
                write!(f, "{name}(part {part}, {reason})")
            }
        }?;
        write!(f, " at {}", self.path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidationOptions {
    pub allow_mesh_parts: bool,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            allow_mesh_parts: true,
        }
    }
}

pub fn validate(spec: &ToolSpec) -> Vec<Violation> {
    validate_with(spec, ValidationOptions::default())
}

/// Collect every violation rather than stopping at the first.
pub fn validate_with(spec: &ToolSpec, opts: ValidationOptions) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |code, path: String| out.push(Violation { code, path });
    if spec.parts.is_empty() {
        push(ViolationCode::NoParts, "parts".into());
    }
    for (i, p) in spec.parts.iter().enumerate() {
        let base = format!("parts[{i}]");
        if p.parameters.len() != p.geom.arity() {
            push(
                ViolationCode::ArityMismatch {
                    part: i,
                    expected: p.geom.arity(),
                    got: p.parameters.len(),
                },
                format!("{base}.parameters"),
            );
        }
        let mut positive = true;
        for (j, &v) in p.parameters.iter().enumerate() {
            if !(v > 0.0) || !v.is_finite() {
                positive = false;
                push(
                    ViolationCode::NonPositiveParameter {
                        part: i,
                        index: j,
                        value: v,
                    },
                    format!("{base}.parameters[{j}]"),
                );
            }
        }
        let is_mesh = p.geom == GeomKind::Mesh;
        if is_mesh == p.prompt.trim().is_empty() {
            push(ViolationCode::PromptMismatch { part: i }, format!("{base}.prompt"));
        }
        if is_mesh && !opts.allow_mesh_parts {
            push(ViolationCode::TextTo3dDisabled { part: i }, format!("{base}.geom"));
        }
        if positive && p.geom == GeomKind::Ring && p.parameters.len() == 2 {
            let (major, thickness) = (p.parameters[0], p.parameters[1]);
            if thickness / 2.0 >= major {
                push(
                    ViolationCode::DegenerateGeometry {
                        part: i,
                        reason: format!("ring thickness {thickness} closes the hole of radius {major}"),
                    },
                    format!("{base}.parameters"),
                );
            }
        }
    }
    let count = spec.parts.iter().filter(|p| p.is_graspable).count();
    if !spec.parts.is_empty() && count != 1 {
        push(ViolationCode::GraspableCountViolation { count }, "parts".into());
    }
    for part in spec.assembly.referenced_parts() {
        if part >= spec.parts.len() {
            push(ViolationCode::PartReferenceOutOfRange { part }, "assembly".into());
        }
    }
    for (axis, &v) in spec.placement.scale.iter().enumerate() {
        if !(v > 0.0) {
            push(
                ViolationCode::NonPositiveScale { axis, value: v },
                format!("placement.scale[{axis}]"),
            );
        }
    }
    out
}

fn num(v: f64) -> String {
    serde_json::to_string(&v).unwrap_or_else(|_| "null".into())
}

fn str_lit(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization")
}

fn vec_lit(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|&x| num(x)).collect();
    format!("[{}]", items.join(", "))
}

/// Canonical document: fixed key order, shortest round-trip floats.
pub fn serialize(spec: &ToolSpec) -> String {
    let mut s = String::new();
    s.push_str("{\n");
    s.push_str(&format!("  \"format\": {},\n", str_lit(FORMAT)));
    s.push_str(&format!("  \"name\": {},\n", str_lit(&spec.name)));
    s.push_str("  \"parts\": [");
    for (i, p) in spec.parts.iter().enumerate() {
        s.push_str(if i == 0 { "\n" } else { ",\n" });
        s.push_str("    {\n");
        s.push_str(&format!("      \"geom\": {},\n", str_lit(p.geom.name())));
        s.push_str(&format!("      \"prompt\": {},\n", str_lit(&p.prompt)));
        s.push_str(&format!("      \"parameters\": {},\n", vec_lit(&p.parameters)));
        s.push_str(&format!("      \"is_graspable\": {}\n", p.is_graspable));
        s.push_str("    }");
    }
    if !spec.parts.is_empty() {
        s.push_str("\n  ");
    }
    s.push_str("],\n");
    s.push_str(&format!("  \"assembly\": {},\n", str_lit(&spec.assembly.to_string())));
    s.push_str("  \"placement\": {\n");
    let pl = &spec.placement;
    s.push_str(&format!("    \"position\": {},\n", vec_lit(pl.position.as_slice())));
    s.push_str(&format!("    \"euler\": {},\n", vec_lit(pl.euler.as_slice())));
    s.push_str(&format!("    \"scale\": {}\n", vec_lit(pl.scale.as_slice())));
    s.push_str("  }\n}\n");
    s
}

/// One entry per part parameter in document order, bounded by `[0.5·v, 2·v]`.
pub fn shape_parameters(spec: &ToolSpec) -> Vec<ParamEntry> {
    spec.parts
        .iter()
        .enumerate()
        .flat_map(|(part, p)| {
            p.parameters.iter().enumerate().map(move |(index, &value)| ParamEntry {
                path: ParamPath::PartParameter { part, index },
                value,
                lower: SHAPE_LOWER * value,
                upper: SHAPE_UPPER * value,
            })
        })
        .collect()
}
