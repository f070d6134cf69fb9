//! Source-level lowerings that make implicit initialization behaviour
//! explicit in the flow relations: superclass initialization, compile-time
//! field initializers, and the initialization edge at the program entry.
//!
//! All three are idempotent and return a new [`Program`]. Synthetic points are
//! labelled with the [`SYNTHETIC_PREFIX`] so they round-trip through render
//! and parse.

use super::build::{fresh_label, materialize_missing_clinits};
use super::{ClassId, Instruction, MethodDecl, MethodId, MethodName, Point, PointId, Program, SYNTHETIC_PREFIX};

const SUPER_INIT_BASE: &str = "$super";
const ENTRY_INIT_BASE: &str = "$entry";

/// Placement of synthesized field-initializer writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FieldInitMode {
    /// Leave field initializers out of the model entirely.
    #[default]
    Ignore,
    /// Write initialized fields before the superclass-initialization point
    /// (the behaviour observed in Sun's VM).
    PreSuper,
    /// Write initialized fields right after the superclass-initialization
    /// point (the officially specified order).
    PostSuper,
}

fn add_point(
    program: &mut Program,
    method: MethodId,
    label: String,
    instr: Instruction,
    succs: Vec<PointId>,
    clinit: Vec<ClassId>,
) -> PointId {
    let id = PointId(program.points.len() as u32);
    program.points.push(Point {
        method,
        label,
        instr: Some(instr),
        succs,
        calls: Vec::new(),
        clinit,
        synthetic: true,
    });
    id
}

fn has_super_init_point(program: &Program, method: MethodId, superclass: ClassId) -> bool {
    program.method(method).body.iter().any(|&p| {
        let point = program.point(p);
        point.synthetic
            && point.label.starts_with(SUPER_INIT_BASE)
            && point.clinit == [superclass]
    })
}

/// Prepends, to every declared class-initializer body whose class has a
/// superclass, a point carrying an initialization edge to that superclass.
/// Classes without a declared initializer are left alone.
pub fn desugar_super_init(program: &Program) -> Program {
    let mut out = program.clone();
    for class in program.class_ids() {
        let Some(superclass) = out.class(class).superclass else {
            continue;
        };
        let Some(method) = out.class(class).clinit else {
            continue;
        };
        if out.method(method).materialized {
            continue;
        }
        if has_super_init_point(&out, method, superclass) {
            continue;
        }
        let former_first = out.first(method);
        let label = fresh_label(&out, method, SUPER_INIT_BASE);
        let point = add_point(
            &mut out,
            method,
            label,
            Instruction::Any,
            vec![former_first],
            vec![superclass],
        );
        out.methods[method.index()].body.insert(0, point);
    }
    materialize_missing_clinits(&mut out);
    out
}

fn init_point_for(program: &Program, method: MethodId, field: super::FieldId) -> Option<PointId> {
    program.method(method).body.iter().copied().find(|&p| {
        let point = program.point(p);
        point.synthetic
            && point.label.starts_with("$init")
            && point.instr == Some(Instruction::Put(field))
    })
}

/// Synthesizes a write for each field flagged with a field initializer, in
/// declaration order, inside its class initializer (creating one when the
/// class has none). `PreSuper` places the writes before the superclass
/// initialization point, `PostSuper` right after it.
pub fn desugar_field_initializers(program: &Program, mode: FieldInitMode) -> Program {
    if mode == FieldInitMode::Ignore {
        return program.clone();
    }
    let mut out = program.clone();
    for class in program.class_ids() {
        let flagged: Vec<super::FieldId> = out
            .class(class)
            .fields
            .iter()
            .copied()
            .filter(|&f| out.field(f).has_initializer)
            .collect();
        if flagged.is_empty() {
            continue;
        }

        let method = match out.class(class).clinit {
            Some(m) => m,
            None => {
                // Fresh initializer: the synthesized writes need a return to
                // complete, so seed the body with one.
                let method = MethodId(out.methods.len() as u32);
                let ret = PointId(out.points.len() as u32);
                let last = PointId(out.points.len() as u32 + 1);
                out.points.push(Point {
                    method,
                    label: super::build::MATERIALIZED_RETURN_LABEL.to_string(),
                    instr: Some(Instruction::Return),
                    succs: vec![last],
                    calls: Vec::new(),
                    clinit: Vec::new(),
                    synthetic: true,
                });
                out.points.push(Point {
                    method,
                    label: super::END_LABEL.to_string(),
                    instr: None,
                    succs: Vec::new(),
                    calls: Vec::new(),
                    clinit: Vec::new(),
                    synthetic: false,
                });
                out.methods.push(MethodDecl {
                    class,
                    name: MethodName::ClassInit,
                    body: vec![ret],
                    last,
                    materialized: false,
                });
                out.classes[class.index()].clinit = Some(method);
                method
            }
        };
        // Inserting writes turns a materialized body into real content.
        out.methods[method.index()].materialized = false;

        let pending: Vec<super::FieldId> = flagged
            .into_iter()
            .filter(|&f| init_point_for(&out, method, f).is_none())
            .collect();
        if pending.is_empty() {
            continue;
        }

        let super_index = out.method(method).body.iter().position(|&p| {
            let point = out.point(p);
            point.synthetic && point.label.starts_with(SUPER_INIT_BASE)
        });
        let insert_at = match (mode, super_index) {
            (FieldInitMode::PreSuper, _) | (FieldInitMode::PostSuper, None) => {
                super_index.filter(|_| mode == FieldInitMode::PreSuper).map_or(0, |i| i.min(0))
            }
            (FieldInitMode::PostSuper, Some(i)) => i + 1,
            (FieldInitMode::Ignore, _) => unreachable!(),
        };

        let body = &out.method(method).body;
        let continuation = body
            .get(insert_at)
            .copied()
            .unwrap_or_else(|| out.method(method).last);
        // Rewire the superclass point at the continuation seam for PostSuper.
        let rewire_from = (mode == FieldInitMode::PostSuper && insert_at > 0)
            .then(|| body[insert_at - 1]);

        let mut chain: Vec<PointId> = Vec::with_capacity(pending.len());
        for &field in &pending {
            let base = format!("$init_{}", out.field(field).name);
            let label = fresh_label(&out, method, &base);
            let id = add_point(&mut out, method, label, Instruction::Put(field), Vec::new(), Vec::new());
            chain.push(id);
        }
        for (i, &id) in chain.iter().enumerate() {
            let next = chain.get(i + 1).copied().unwrap_or(continuation);
            out.points[id.index()].succs = vec![next];
        }
        if let Some(super_point) = rewire_from {
            out.points[super_point.index()].succs = vec![chain[0]];
        }
        let body = &mut out.methods[method.index()].body;
        for (i, &id) in chain.iter().enumerate() {
            body.insert(insert_at + i, id);
        }
    }
    materialize_missing_clinits(&mut out);
    out
}

/// Prepends to the entry method a point carrying an initialization edge to
/// the entry method's own class.
pub fn add_entry_class_init(program: &Program) -> Program {
    let mut out = program.clone();
    let method = out.entry;
    let class = out.method(method).class;
    let already = out.method(method).body.first().is_some_and(|&p| {
        let point = out.point(p);
        point.synthetic && point.label.starts_with(ENTRY_INIT_BASE) && point.clinit == [class]
    });
    if already {
        return out;
    }
    let former_first = out.first(method);
    let label = fresh_label(&out, method, ENTRY_INIT_BASE);
    let point = add_point(
        &mut out,
        method,
        label,
        Instruction::Any,
        vec![former_first],
        vec![class],
    );
    out.methods[method.index()].body.insert(0, point);
    materialize_missing_clinits(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ProgramBuilder;

    fn extends_program() -> Program {
        let mut b = ProgramBuilder::new();
        b.entry("C", "main");
        b.class("A", None).clinit_body(|m| {
            m.point("0", "return");
        });
        b.class("B", Some("A")).clinit_body(|m| {
            m.point("10", "any").to(&["11"]);
            m.point("11", "return");
        });
        b.class("C", None).method_body("main", |m| {
            m.point("20", "any").clinit("B").to(&["21"]);
            m.point("21", "return");
        });
        b.finish().unwrap()
    }

    #[test]
    fn super_init_prepends_edge_to_superclass() {
        let p = desugar_super_init(&extends_program());
        let clinit = p
            .find_method("B", &MethodName::ClassInit)
            .unwrap();
        let first = p.first(clinit);
        let point = p.point(first);
        assert!(point.synthetic);
        assert_eq!(point.clinit, vec![p.find_class("A").unwrap()]);
        assert_eq!(point.instr, Some(Instruction::Any));
        // The synthetic point falls through to the former first point.
        assert_eq!(p.point(point.succs[0]).label, "10");
    }

    #[test]
    fn super_init_skips_root_and_bodyless_classes() {
        let base = extends_program();
        let p = desugar_super_init(&base);
        let a_clinit = p.find_method("A", &MethodName::ClassInit).unwrap();
        assert_eq!(p.first(a_clinit), base.first(base.find_method("A", &MethodName::ClassInit).unwrap()));
    }

    #[test]
    fn super_init_is_idempotent() {
        let once = desugar_super_init(&extends_program());
        let twice = desugar_super_init(&once);
        assert_eq!(once, twice);
    }

    fn field_init_program(extends: bool) -> Program {
        let mut b = ProgramBuilder::new();
        b.entry("C", "main");
        b.class("S", None).clinit_body(|m| {
            m.point("0", "return");
        });
        b.class("A", extends.then_some("S"))
            .field("f", true)
            .field("g", false)
            .clinit_body(|m| {
                m.point("1", "return");
            });
        b.class("C", None).method_body("main", |m| {
            m.point("2", "any").clinit("A").to(&["3"]);
            m.point("3", "return");
        });
        b.finish().unwrap()
    }

    #[test]
    fn ignore_mode_is_identity() {
        let p = field_init_program(true);
        assert_eq!(desugar_field_initializers(&p, FieldInitMode::Ignore), p);
    }

    #[test]
    fn pre_super_places_write_before_super_point() {
        let p = desugar_super_init(&field_init_program(true));
        let p = desugar_field_initializers(&p, FieldInitMode::PreSuper);
        let clinit = p.find_method("A", &MethodName::ClassInit).unwrap();
        let labels: Vec<&str> = p
            .method(clinit)
            .body
            .iter()
            .map(|&pt| p.point(pt).label.as_str())
            .collect();
        assert_eq!(labels, ["$init_f", "$super", "1"]);
        let f = p.find_field("A", "f").unwrap();
        let first = p.first(clinit);
        assert_eq!(p.point(first).instr, Some(Instruction::Put(f)));
        assert_eq!(p.point(p.point(first).succs[0]).label, "$super");
    }

    #[test]
    fn post_super_places_write_after_super_point() {
        let p = desugar_super_init(&field_init_program(true));
        let p = desugar_field_initializers(&p, FieldInitMode::PostSuper);
        let clinit = p.find_method("A", &MethodName::ClassInit).unwrap();
        let labels: Vec<&str> = p
            .method(clinit)
            .body
            .iter()
            .map(|&pt| p.point(pt).label.as_str())
            .collect();
        assert_eq!(labels, ["$super", "$init_f", "1"]);
        let super_point = p.first(clinit);
        assert_eq!(p.point(p.point(super_point).succs[0]).label, "$init_f");
        let init = p.point_named("A.<clinit>/$init_f").unwrap();
        assert_eq!(p.point(p.point(init).succs[0]).label, "1");
    }

    #[test]
    fn field_init_creates_missing_clinit_with_return() {
        let mut b = ProgramBuilder::new();
        b.entry("C", "main");
        b.class("A", None).field("f", true);
        b.class("C", None).method_body("main", |m| {
            m.point("0", "return");
        });
        let p = desugar_field_initializers(&b.finish().unwrap(), FieldInitMode::PreSuper);
        let clinit = p.find_method("A", &MethodName::ClassInit).unwrap();
        assert!(!p.method(clinit).materialized);
        let labels: Vec<&str> = p
            .method(clinit)
            .body
            .iter()
            .map(|&pt| p.point(pt).label.as_str())
            .collect();
        assert_eq!(labels, ["$init_f", "$ret"]);
    }

    #[test]
    fn field_init_is_idempotent() {
        let p = desugar_super_init(&field_init_program(true));
        let once = desugar_field_initializers(&p, FieldInitMode::PostSuper);
        let twice = desugar_field_initializers(&once, FieldInitMode::PostSuper);
        assert_eq!(once, twice);
    }

    #[test]
    fn entry_class_init_prepends_and_is_idempotent() {
        let p = extends_program();
        let once = add_entry_class_init(&p);
        let main = once.entry();
        let first = once.first(main);
        assert!(once.point(first).synthetic);
        assert_eq!(once.point(first).clinit, vec![once.find_class("C").unwrap()]);
        let twice = add_entry_class_init(&once);
        assert_eq!(once, twice);
        // C had no initializer; one is materialized for the new edge.
        assert!(once
            .method(once.find_method("C", &MethodName::ClassInit).unwrap())
            .materialized);
    }

    #[test]
    fn entry_and_super_desugarings_commute() {
        let p = extends_program();
        let ab = add_entry_class_init(&desugar_super_init(&p));
        let ba = desugar_super_init(&add_entry_class_init(&p));
        assert_eq!(ab, ba);
    }
}
