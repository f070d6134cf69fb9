//! Program model: classes, methods, fields, program points and the three
//! control flow relations (intra-procedural edges, call edges, and
//! initialization edges to class initializers).
//!
//! A [`Program`] is immutable once built (see [`ProgramBuilder`]) and safe to
//! share across threads. The few mutators that exist ([`Program::remove_intra_edge`],
//! solution editing in `analysis`) are for tooling and tests that need to
//! construct ill-formed inputs on purpose.

mod build;
mod desugar;
mod validate;

pub use build::{BuildError, BuildErrorKind, ProgramBuilder};
pub use desugar::{add_entry_class_init, desugar_field_initializers, desugar_super_init, FieldInitMode};
pub use validate::{validate, Severity, Violation, ViolationKind};

use std::fmt;

/// Reserved prefix for labels of synthesized program points.
pub const SYNTHETIC_PREFIX: char = '$';
/// Local label of every method's exit anchor.
pub const END_LABEL: &str = "end";

macro_rules! id_type {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub(crate) u32);

        impl $name {
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!(stringify!($name), "({})"), self.0)
            }
        }
    };
}

id_type!(
    /// Handle to a class declaration in a [`Program`].
    ClassId
);
id_type!(
    /// Handle to a method (named method or class initializer).
    MethodId
);
id_type!(
    /// Handle to a static field declaration.
    FieldId
);
id_type!(
    /// Handle to a program point. Every method has an instruction-free exit
    /// anchor point labelled `end` in addition to its instruction points.
    PointId
);

/// Method selector within a class.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MethodName {
    Named(String),
    /// The class initializer, spelled `<clinit>` in qualified names.
    ClassInit,
}

impl fmt::Display for MethodName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodName::Named(n) => f.write_str(n),
            MethodName::ClassInit => f.write_str("<clinit>"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassDecl {
    pub name: String,
    pub superclass: Option<ClassId>,
    /// Declared fields, in declaration order.
    pub fields: Vec<FieldId>,
    pub clinit: Option<MethodId>,
    /// Named methods, in declaration order.
    pub methods: Vec<MethodId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldDecl {
    pub class: ClassId,
    pub name: String,
    /// Whether the source carried a compile-time field initializer. Only
    /// meaningful to [`desugar_field_initializers`].
    pub has_initializer: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodDecl {
    pub class: ClassId,
    pub name: MethodName,
    /// Instruction points in declaration order. The method entry is the first
    /// entry, or the exit anchor when the body is empty.
    pub body: Vec<PointId>,
    /// Exit anchor; carries no instruction.
    pub last: PointId,
    /// True for class initializers synthesized because an initialization edge
    /// targets a class without a declared body. These render as nothing and
    /// are reconstructed on parse.
    pub materialized: bool,
}

/// The four instruction kinds plus `Get`, a read marker that behaves exactly
/// like `Any` in both the semantics and the analysis and exists so the
/// read-before-init checker has something to anchor on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instruction {
    Put(FieldId),
    Get(FieldId),
    Invoke,
    Return,
    Any,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Point {
    pub method: MethodId,
    pub label: String,
    /// `None` only for exit anchors.
    pub instr: Option<Instruction>,
    /// Intra-procedural successors, sorted by target label.
    pub succs: Vec<PointId>,
    /// Call targets, sorted by qualified method name. Non-empty only at
    /// `Invoke` points in a well-formed program.
    pub calls: Vec<MethodId>,
    /// Initialization edges. A well-formed program has at most one entry;
    /// extra entries are reported by [`validate`].
    pub clinit: Vec<ClassId>,
    /// True for points introduced by desugaring (labelled with
    /// [`SYNTHETIC_PREFIX`]).
    pub synthetic: bool,
}

/// An immutable program: entry method, declarations, instruction map and the
/// three flow relations (stored per point as `succs`, `calls` and `clinit`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub(crate) entry: MethodId,
    pub(crate) classes: Vec<ClassDecl>,
    pub(crate) methods: Vec<MethodDecl>,
    pub(crate) fields: Vec<FieldDecl>,
    pub(crate) points: Vec<Point>,
}

impl Program {
    pub fn entry(&self) -> MethodId {
        self.entry
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn field_count(&self) -> usize {
        self.fields.len()
    }

    pub fn point_count(&self) -> usize {
        self.points.len()
    }

    pub fn class_ids(&self) -> impl Iterator<Item = ClassId> {
        (0..self.classes.len() as u32).map(ClassId)
    }

    pub fn method_ids(&self) -> impl Iterator<Item = MethodId> {
        (0..self.methods.len() as u32).map(MethodId)
    }

    pub fn field_ids(&self) -> impl Iterator<Item = FieldId> {
        (0..self.fields.len() as u32).map(FieldId)
    }

    pub fn point_ids(&self) -> impl Iterator<Item = PointId> {
        (0..self.points.len() as u32).map(PointId)
    }

    pub fn class(&self, id: ClassId) -> &ClassDecl {
        &self.classes[id.index()]
    }

    pub fn method(&self, id: MethodId) -> &MethodDecl {
        &self.methods[id.index()]
    }

    pub fn field(&self, id: FieldId) -> &FieldDecl {
        &self.fields[id.index()]
    }

    pub fn point(&self, id: PointId) -> &Point {
        &self.points[id.index()]
    }

    /// Method entry point: first body point, or the exit anchor for an empty
    /// body.
    pub fn first(&self, m: MethodId) -> PointId {
        let decl = self.method(m);
        decl.body.first().copied().unwrap_or(decl.last)
    }

    /// Method exit anchor.
    pub fn last(&self, m: MethodId) -> PointId {
        self.method(m).last
    }

    pub fn instruction(&self, p: PointId) -> Option<&Instruction> {
        self.point(p).instr.as_ref()
    }

    /// The initialization edge leaving `p`, viewed as a partial function.
    /// When [`validate`] reports no duplicate targets this is the only entry.
    pub fn clinit_edge(&self, p: PointId) -> Option<ClassId> {
        self.point(p).clinit.first().copied()
    }

    pub fn intra_succs(&self, p: PointId) -> &[PointId] {
        &self.point(p).succs
    }

    pub fn call_targets(&self, p: PointId) -> &[MethodId] {
        &self.point(p).calls
    }

    pub fn class_name(&self, id: ClassId) -> &str {
        &self.class(id).name
    }

    /// Qualified method name, e.g. `C.main` or `A.<clinit>`.
    pub fn method_name(&self, id: MethodId) -> String {
        let m = self.method(id);
        format!("{}.{}", self.class(m.class).name, m.name)
    }

    /// Qualified field name, e.g. `A.f`.
    pub fn field_name(&self, id: FieldId) -> String {
        let f = self.field(id);
        format!("{}.{}", self.class(f.class).name, f.name)
    }

    /// Qualified point name, e.g. `C.main/2` or `A.<clinit>/end`.
    pub fn point_name(&self, id: PointId) -> String {
        let p = self.point(id);
        format!("{}/{}", self.method_name(p.method), p.label)
    }

    pub fn instruction_text(&self, p: PointId) -> Option<String> {
        self.instruction(p).map(|i| match i {
            Instruction::Put(f) => format!("put {}", self.field_name(*f)),
            Instruction::Get(f) => format!("get {}", self.field_name(*f)),
            Instruction::Invoke => "invoke".to_string(),
            Instruction::Return => "return".to_string(),
            Instruction::Any => "any".to_string(),
        })
    }

    pub fn find_class(&self, name: &str) -> Option<ClassId> {
        self.classes
            .iter()
            .position(|c| c.name == name)
            .map(|i| ClassId(i as u32))
    }

    pub fn find_method(&self, class: &str, name: &MethodName) -> Option<MethodId> {
        let class = self.find_class(class)?;
        let decl = self.class(class);
        match name {
            MethodName::ClassInit => decl.clinit,
            MethodName::Named(_) => decl
                .methods
                .iter()
                .copied()
                .find(|&m| self.method(m).name == *name),
        }
    }

    pub fn find_field(&self, class: &str, field: &str) -> Option<FieldId> {
        let class = self.find_class(class)?;
        self.class(class)
            .fields
            .iter()
            .copied()
            .find(|&f| self.field(f).name == field)
    }

    pub fn find_point(&self, method: MethodId, label: &str) -> Option<PointId> {
        let decl = self.method(method);
        if label == END_LABEL {
            return Some(decl.last);
        }
        decl.body
            .iter()
            .copied()
            .find(|&p| self.point(p).label == label)
    }

    /// Looks up a point by qualified name (`Class.method/label`).
    pub fn point_named(&self, qualified: &str) -> Option<PointId> {
        let (method_part, label) = qualified.rsplit_once('/')?;
        let (class, method) = method_part.split_once('.')?;
        let name = if method == "<clinit>" {
            MethodName::ClassInit
        } else {
            MethodName::Named(method.to_string())
        };
        let method = self.find_method(class, &name)?;
        self.find_point(method, label)
    }

    /// Methods ordered by (class name, initializer first, method name); the
    /// canonical order for reports.
    pub fn methods_in_display_order(&self) -> Vec<MethodId> {
        let mut ids: Vec<MethodId> = self.method_ids().collect();
        ids.sort_by(|&a, &b| {
            let (ma, mb) = (self.method(a), self.method(b));
            self.class(ma.class)
                .name
                .cmp(&self.class(mb.class).name)
                .then_with(|| ma.name.to_string().cmp(&mb.name.to_string()))
        });
        ids
    }

    /// All points in report order: methods in display order, body points in
    /// declaration order, exit anchor after the body.
    pub fn points_in_display_order(&self) -> Vec<PointId> {
        let mut out = Vec::with_capacity(self.points.len());
        for m in self.methods_in_display_order() {
            let decl = self.method(m);
            out.extend(decl.body.iter().copied());
            out.push(decl.last);
        }
        out
    }

    /// Points carrying an initialization edge to `class`.
    pub fn clinit_sources(&self, class: ClassId) -> Vec<PointId> {
        self.point_ids()
            .filter(|&p| self.clinit_edge(p) == Some(class))
            .collect()
    }

    /// Invoke points with a call edge to `method`.
    pub fn call_sites(&self, method: MethodId) -> Vec<PointId> {
        self.point_ids()
            .filter(|&p| self.point(p).calls.contains(&method))
            .collect()
    }

    /// Removes an intra-procedural edge. Returns whether the edge existed.
    /// Intended for tests and tools that need ill-formed programs.
    pub fn remove_intra_edge(&mut self, from: PointId, to: PointId) -> bool {
        let succs = &mut self.points[from.index()].succs;
        let before = succs.len();
        succs.retain(|&s| s != to);
        succs.len() != before
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse;

    const TWO_PATH: &str = include_str!("../../tests/fixtures/two_path_init.sfi");

    #[test]
    fn qualified_names_resolve() {
        let p = parse(TWO_PATH).unwrap();
        let pt = p.point_named("A.<clinit>/6").unwrap();
        assert_eq!(p.point_name(pt), "A.<clinit>/6");
        assert_eq!(p.instruction_text(pt).unwrap(), "put A.f");
        let end = p.point_named("C.m/end").unwrap();
        assert!(p.instruction(end).is_none());
    }

    #[test]
    fn display_order_groups_by_class_then_method() {
        let p = parse(TWO_PATH).unwrap();
        let names: Vec<String> = p
            .methods_in_display_order()
            .into_iter()
            .map(|m| p.method_name(m))
            .collect();
        assert_eq!(names, ["A.<clinit>", "B.<clinit>", "C.m", "C.main"]);
    }

    #[test]
    fn successors_are_sorted_by_label() {
        let p = parse(TWO_PATH).unwrap();
        let zero = p.point_named("C.main/0").unwrap();
        let labels: Vec<&str> = p
            .intra_succs(zero)
            .iter()
            .map(|&s| p.point(s).label.as_str())
            .collect();
        assert_eq!(labels, ["1", "3"]);
    }
}
