//! Prompt texts. Placeholders are `$NAME$` and must all be bound.

use std::collections::BTreeMap;

use super::AgentError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateId {
    Proposer,
    Critic,
    ToolUser,
}

impl TemplateId {
    pub fn text(self) -> &'static str {
        match self {
            TemplateId::Proposer => PROPOSER,
            TemplateId::Critic => CRITIC,
            TemplateId::ToolUser => TOOL_USER,
        }
    }
}

pub const DEFAULT_PRINCIPLES: &str = "\
- Every part touches at least one other part; nothing floats.
- Exactly one part is marked graspable and fits inside an 8 cm gripper opening.
- The working end reaches the target without the gripper touching other objects.";

const PROPOSER: &str = "\
A parallel-jaw gripper works above a table. Goal: $TASK_DESCRIPTION$.

Scene layout (units are meters, z is up, the table top is z = 0):
```json
$3D_CONFIGURATION$
```

Design one rigid tool that helps the gripper reach this goal. Describe it as a
`toolspec/1` JSON document inside a single fenced ```json block with the keys
`format`, `name`, `parts`, `assembly` and `placement`.

Parts: `geom` is one of cube [sx, sy, sz], ball [r], cylinder [r, h],
ring [r_major, r_minor], tube [r_out, r_in, h], or mesh [sx, sy, sz] with a
non-empty `prompt` naming the object to fetch. Primitive parts use an empty
prompt. Mark exactly one part with `is_graspable: true`.

Assembly is one statement per line, `name = OP(args)`, ending with EXPORT(name).
Arithmetic on numbers and bbox entries (`bb[3] - bb[0]`) is allowed in arguments.
Ops: PRIMITIVE(part i), GENERATE3D(part i), ROTATE_TO_ALIGN(m) (center it, longest
extent along x), RESCALE(m, factor), MOVE(m, dx, dy, dz), CONCAT(a, b, ...),
GET_POSITION(m), GET_BBOX(m) (min x, y, z then max x, y, z), GET_VOLUME(m),
GRID_NEW(), GRID_ADD(g, m), GRID_SUB(g, m), upper, lower = GRID_CUT(g),
GRID_TO_MESH(g). Grids span the cube [-0.5, 0.5] in each axis.

Placement gives the tool's pose on the table: position, euler (radians) and scale.

Rules to respect:
$USER_PROVIDED_PRINCIPLES$

After the JSON block, explain in a few sentences why the design suits the goal.";

const CRITIC: &str = "\
You review tool designs for a gripper working above a table. Goal: $TASK_DESCRIPTION$.

Scene layout:
```json
$3D_CONFIGURATION$
```

The attached images show the proposed tool from four sides. The designer's notes:
$RATIONALE$

Check the design against these rules:
$USER_PROVIDED_PRINCIPLES$

If the tool is fit for the goal, reply with the single word DONE. Otherwise list
concrete changes (which part, which parameter, by how much).";

const TOOL_USER: &str = "\
A parallel-jaw gripper works above a table. Goal: $TASK_DESCRIPTION$.

Scene layout:
```json
$3D_CONFIGURATION$
```

A tool has been added to the scene as body `tool`:
```json
$TOOL_SPEC$
```

Write the gripper program, one call per line, using only:
grasp(body_id, ex, ey, ez)   close the gripper on a body with the given orientation
move(x, y, z, ex, ey, ez)    move the gripper to a world position and orientation
release()                    open the gripper
Angles are radians. Start with a grasp of the tool. Output only the calls.";

/// Substitute `$NAME$` placeholders. Every placeholder in the template must
/// have a binding; extra bindings are ignored.
pub fn render_prompt(template: TemplateId, bindings: &BTreeMap<String, String>) -> Result<String, AgentError> {
    render_text(template.text(), bindings)
}

pub fn render_text(text: &str, bindings: &BTreeMap<String, String>) -> Result<String, AgentError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find('$') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let name_len = after
            .find(|c: char| !(c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_'))
            .unwrap_or(after.len());
        if name_len > 0 && after[name_len..].starts_with('$') {
            let name = &after[..name_len];
            let value = bindings
                .get(name)
                .ok_or_else(|| AgentError::UnboundPlaceholder(name.to_string()))?;
            out.push_str(value);
            rest = &after[name_len + 1..];
        } else {
            out.push('$');
            rest = after;
        }
    }
    out.push_str(rest);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn substitutes_and_reports_missing() {
        let t = render_text("a $X$ b $Y_2$ $ c $lower$", &b(&[("X", "1"), ("Y_2", "2")])).unwrap();
        assert_eq!(t, "a 1 b 2 $ c $lower$");
        let e = render_prompt(TemplateId::Proposer, &b(&[("TASK_DESCRIPTION", "x")])).unwrap_err();
        assert_eq!(e, AgentError::UnboundPlaceholder("3D_CONFIGURATION".into()));
    }

    #[test]
    fn empty_principles() {
        let t = render_prompt(
            TemplateId::Proposer,
            &b(&[("TASK_DESCRIPTION", "pull the cube"), ("3D_CONFIGURATION", "{}"), ("USER_PROVIDED_PRINCIPLES", "")]),
        )
        .unwrap();
        assert!(t.contains("Rules to respect:\n\n"));
        assert!(!t.contains('$'));
    }
}
