//! Program construction and name resolution.
//!
//! The builder accepts textual references and resolves them in [`ProgramBuilder::finish`].
//! Resolution failures are reported as [`BuildError`]s carrying the span the
//! parser attached to the reference, when there is one.

use std::collections::BTreeMap;

use crate::frontend::SourceSpan;

use super::{
    ClassDecl, ClassId, FieldDecl, FieldId, Instruction, MethodDecl, MethodId, MethodName, Point,
    PointId, Program, SYNTHETIC_PREFIX,
};

pub(crate) const MATERIALIZED_RETURN_LABEL: &str = "$ret";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BuildErrorKind {
    UnknownClass,
    UnknownMethod,
    UnknownField,
    UnknownLabel,
    DuplicateClass,
    DuplicateField,
    DuplicateMethod,
    DuplicateLabel,
    ReservedLabel,
    CyclicSuperclass,
    MissingEntry,
    ClinitCallTarget,
    CallsOnNonInvoke,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message}")]
pub struct BuildError {
    pub kind: BuildErrorKind,
    pub span: Option<SourceSpan>,
    /// The offending name, when one exists.
    pub found: String,
    pub message: String,
}

impl BuildError {
    fn new(kind: BuildErrorKind, span: Option<SourceSpan>, found: &str, message: String) -> Self {
        BuildError {
            kind,
            span,
            found: found.to_string(),
            message,
        }
    }

    /// Whether this is a dangling reference (as opposed to a structural
    /// declaration error).
    pub fn is_unresolved_reference(&self) -> bool {
        matches!(
            self.kind,
            BuildErrorKind::UnknownClass
                | BuildErrorKind::UnknownMethod
                | BuildErrorKind::UnknownField
                | BuildErrorKind::UnknownLabel
        )
    }
}

type Spanned<T> = (T, Option<SourceSpan>);

#[derive(Debug, Clone)]
pub(crate) enum RawInstruction {
    Put(Spanned<(String, String)>),
    Get(Spanned<(String, String)>),
    Invoke,
    Return,
    Any,
}

#[derive(Debug, Clone)]
pub(crate) struct RawPoint {
    pub label: Spanned<String>,
    pub instr: RawInstruction,
    pub succs: Vec<Spanned<String>>,
    pub calls: Vec<Spanned<(String, MethodName)>>,
    pub clinit: Vec<Spanned<String>>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct RawMethod {
    pub points: Vec<RawPoint>,
}

#[derive(Debug, Clone)]
pub(crate) struct RawClass {
    pub name: Spanned<String>,
    pub superclass: Option<Spanned<String>>,
    pub fields: Vec<(Spanned<String>, bool)>,
    pub clinit: Option<RawMethod>,
    pub methods: Vec<(Spanned<String>, RawMethod)>,
}

/// Builds a [`Program`] from textual declarations. Used by the parser, the
/// random program generator and tests.
#[derive(Debug, Default)]
pub struct ProgramBuilder {
    entry: Option<Spanned<(String, MethodName)>>,
    classes: Vec<RawClass>,
}

/// Fluent handle for declaring one method body.
pub struct MethodBody<'a> {
    method: &'a mut RawMethod,
}

impl MethodBody<'_> {
    fn raw_point(&mut self, label: &str, instr: RawInstruction) -> &mut RawPoint {
        self.method.points.push(RawPoint {
            label: (label.to_string(), None),
            instr,
            succs: Vec::new(),
            calls: Vec::new(),
            clinit: Vec::new(),
        });
        self.method.points.last_mut().unwrap()
    }

    pub fn point(&mut self, label: &str, instr: &str) -> &mut Self {
        let raw = match instr {
            "any" => RawInstruction::Any,
            "return" => RawInstruction::Return,
            "invoke" => RawInstruction::Invoke,
            other => panic!("unknown instruction shorthand `{other}`"),
        };
        self.raw_point(label, raw);
        self
    }

    pub fn put(&mut self, label: &str, class: &str, field: &str) -> &mut Self {
        self.raw_point(
            label,
            RawInstruction::Put(((class.to_string(), field.to_string()), None)),
        );
        self
    }

    pub fn get(&mut self, label: &str, class: &str, field: &str) -> &mut Self {
        self.raw_point(
            label,
            RawInstruction::Get(((class.to_string(), field.to_string()), None)),
        );
        self
    }

    fn last_point(&mut self) -> &mut RawPoint {
        self.method
            .points
            .last_mut()
            .expect("attribute before any point")
    }

    /// Adds intra successors to the most recently declared point.
    pub fn to(&mut self, labels: &[&str]) -> &mut Self {
        let point = self.last_point();
        point
            .succs
            .extend(labels.iter().map(|l| (l.to_string(), None)));
        self
    }

    /// Adds call targets to the most recently declared point.
    pub fn calls(&mut self, targets: &[(&str, &str)]) -> &mut Self {
        let point = self.last_point();
        point.calls.extend(targets.iter().map(|(c, m)| {
            (
                (c.to_string(), MethodName::Named(m.to_string())),
                None,
            )
        }));
        self
    }

    /// Attaches an initialization edge to the most recently declared point.
    pub fn clinit(&mut self, class: &str) -> &mut Self {
        let point = self.last_point();
        point.clinit.push((class.to_string(), None));
        self
    }
}

impl ProgramBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entry(&mut self, class: &str, method: &str) -> &mut Self {
        self.entry_at(class, parse_method_name(method), None);
        self
    }

    pub(crate) fn entry_at(&mut self, class: &str, method: MethodName, span: Option<SourceSpan>) {
        self.entry = Some(((class.to_string(), method), span));
    }

    pub fn class(&mut self, name: &str, superclass: Option<&str>) -> &mut Self {
        self.class_at(name, None, superclass.map(|s| (s.to_string(), None)));
        self
    }

    pub(crate) fn class_at(
        &mut self,
        name: &str,
        span: Option<SourceSpan>,
        superclass: Option<Spanned<String>>,
    ) -> &mut RawClass {
        self.classes.push(RawClass {
            name: (name.to_string(), span),
            superclass,
            fields: Vec::new(),
            clinit: None,
            methods: Vec::new(),
        });
        self.classes.last_mut().unwrap()
    }

    fn current_class(&mut self) -> &mut RawClass {
        self.classes.last_mut().expect("member before any class")
    }

    pub fn field(&mut self, name: &str, has_initializer: bool) -> &mut Self {
        self.current_class()
            .fields
            .push(((name.to_string(), None), has_initializer));
        self
    }

    pub fn clinit_body(&mut self, build: impl FnOnce(&mut MethodBody<'_>)) -> &mut Self {
        let class = self.current_class();
        let method = class.clinit.get_or_insert_with(RawMethod::default);
        build(&mut MethodBody { method });
        self
    }

    pub fn method_body(&mut self, name: &str, build: impl FnOnce(&mut MethodBody<'_>)) -> &mut Self {
        let class = self.current_class();
        class
            .methods
            .push(((name.to_string(), None), RawMethod::default()));
        let method = &mut class.methods.last_mut().unwrap().1;
        build(&mut MethodBody { method });
        self
    }

    pub(crate) fn raw_classes_mut(&mut self) -> &mut Vec<RawClass> {
        &mut self.classes
    }

    /// Resolves all references and freezes the program. Implicit
    /// `return -> end` edges are added, successor lists are sorted and
    /// deduplicated, and classes targeted by an initialization edge without a
    /// declared initializer receive a materialized one-return body.
    pub fn finish(self) -> Result<Program, Vec<BuildError>> {
        Resolver::new(self).run()
    }
}

fn parse_method_name(name: &str) -> MethodName {
    if name == "<clinit>" {
        MethodName::ClassInit
    } else {
        MethodName::Named(name.to_string())
    }
}

struct Resolver {
    builder: ProgramBuilder,
    errors: Vec<BuildError>,
    program: Program,
}

impl Resolver {
    fn new(builder: ProgramBuilder) -> Self {
        Resolver {
            builder,
            errors: Vec::new(),
            program: Program {
                entry: MethodId(0),
                classes: Vec::new(),
                methods: Vec::new(),
                fields: Vec::new(),
                points: Vec::new(),
            },
        }
    }

    fn error(&mut self, kind: BuildErrorKind, span: Option<SourceSpan>, found: &str, msg: String) {
        self.errors.push(BuildError::new(kind, span, found, msg));
    }

    fn run(mut self) -> Result<Program, Vec<BuildError>> {
        let classes = std::mem::take(&mut self.builder.classes);

        // Pass 1: declare classes.
        for raw in &classes {
            let (name, span) = &raw.name;
            if self.program.find_class(name).is_some() {
                self.error(
                    BuildErrorKind::DuplicateClass,
                    *span,
                    name,
                    format!("class `{name}` is declared twice"),
                );
                continue;
            }
            self.program.classes.push(ClassDecl {
                name: name.clone(),
                superclass: None,
                fields: Vec::new(),
                clinit: None,
                methods: Vec::new(),
            });
        }

        // Pass 2: superclasses, fields, method declarations.
        for raw in &classes {
            let Some(class_id) = self.program.find_class(&raw.name.0) else {
                continue;
            };
            if let Some((sup, span)) = &raw.superclass {
                match self.program.find_class(sup) {
                    Some(sup_id) => self.program.classes[class_id.index()].superclass = Some(sup_id),
                    None => self.error(
                        BuildErrorKind::UnknownClass,
                        *span,
                        sup,
                        format!("superclass `{sup}` of `{}` is not declared", raw.name.0),
                    ),
                }
            }
            for ((fname, span), has_init) in &raw.fields {
                if self.program.find_field(&raw.name.0, fname).is_some() {
                    self.error(
                        BuildErrorKind::DuplicateField,
                        *span,
                        fname,
                        format!("field `{}.{fname}` is declared twice", raw.name.0),
                    );
                    continue;
                }
                let id = FieldId(self.program.fields.len() as u32);
                self.program.fields.push(FieldDecl {
                    class: class_id,
                    name: fname.clone(),
                    has_initializer: *has_init,
                });
                self.program.classes[class_id.index()].fields.push(id);
            }
            if raw.clinit.is_some() {
                let id = self.declare_method(class_id, MethodName::ClassInit);
                self.program.classes[class_id.index()].clinit = Some(id);
            }
            for ((mname, span), _) in &raw.methods {
                let name = MethodName::Named(mname.clone());
                if self.program.find_method(&raw.name.0, &name).is_some() {
                    self.error(
                        BuildErrorKind::DuplicateMethod,
                        *span,
                        mname,
                        format!("method `{}.{mname}` is declared twice", raw.name.0),
                    );
                    continue;
                }
                let id = self.declare_method(class_id, name);
                self.program.classes[class_id.index()].methods.push(id);
            }
        }

        self.check_superclass_cycles();

        // Pass 3: points and their labels.
        for raw in &classes {
            let Some(class_id) = self.program.find_class(&raw.name.0) else {
                continue;
            };
            if let Some(body) = &raw.clinit {
                if let Some(m) = self.program.classes[class_id.index()].clinit {
                    self.declare_points(m, body);
                }
            }
            for ((mname, _), body) in &raw.methods {
                let name = MethodName::Named(mname.clone());
                if let Some(m) = self.program.find_method(&raw.name.0, &name) {
                    self.declare_points(m, body);
                }
            }
        }

        // Pass 4: resolve per-point references.
        for raw in &classes {
            let Some(class_id) = self.program.find_class(&raw.name.0) else {
                continue;
            };
            if let Some(body) = &raw.clinit {
                if let Some(m) = self.program.classes[class_id.index()].clinit {
                    self.resolve_points(m, body);
                }
            }
            for ((mname, _), body) in &raw.methods {
                let name = MethodName::Named(mname.clone());
                if let Some(m) = self.program.find_method(&raw.name.0, &name) {
                    self.resolve_points(m, body);
                }
            }
        }

        // Entry.
        match std::mem::take(&mut self.builder.entry) {
            None => self.error(
                BuildErrorKind::MissingEntry,
                None,
                "",
                "program has no entry declaration".to_string(),
            ),
            Some(((class, method), span)) => match self.program.find_method(&class, &method) {
                Some(m) => self.program.entry = m,
                None => self.error(
                    BuildErrorKind::UnknownMethod,
                    span,
                    &format!("{class}.{method}"),
                    format!("entry method `{class}.{method}` is not declared"),
                ),
            },
        }

        if !self.errors.is_empty() {
            return Err(self.errors);
        }

        let mut program = self.program;
        normalize_edges(&mut program);
        materialize_missing_clinits(&mut program);
        Ok(program)
    }

    fn declare_method(&mut self, class: ClassId, name: MethodName) -> MethodId {
        let id = MethodId(self.program.methods.len() as u32);
        self.program.methods.push(MethodDecl {
            class,
            name,
            body: Vec::new(),
            last: PointId(0), // patched in declare_points
            materialized: false,
        });
        id
    }

    fn declare_points(&mut self, method: MethodId, body: &RawMethod) {
        for raw in &body.points {
            let (label, span) = &raw.label;
            if label == super::END_LABEL {
                self.error(
                    BuildErrorKind::ReservedLabel,
                    *span,
                    label,
                    "label `end` is reserved for the method exit".to_string(),
                );
                continue;
            }
            if self.program.find_point(method, label).is_some() {
                self.error(
                    BuildErrorKind::DuplicateLabel,
                    *span,
                    label,
                    format!(
                        "label `{label}` is declared twice in {}",
                        self.program.method_name(method)
                    ),
                );
                continue;
            }
            let id = PointId(self.program.points.len() as u32);
            self.program.points.push(Point {
                method,
                label: label.clone(),
                instr: Some(Instruction::Any), // patched in resolve_points
                succs: Vec::new(),
                calls: Vec::new(),
                clinit: Vec::new(),
                synthetic: label.starts_with(SYNTHETIC_PREFIX),
            });
            self.program.methods[method.index()].body.push(id);
        }
        // Exit anchor. A declared-empty initializer body is normalized to a
        // single synthetic return so that entering it always lands on an
        // instruction.
        if self.program.methods[method.index()].body.is_empty()
            && self.program.methods[method.index()].name == MethodName::ClassInit
        {
            let id = PointId(self.program.points.len() as u32);
            self.program.points.push(Point {
                method,
                label: MATERIALIZED_RETURN_LABEL.to_string(),
                instr: Some(Instruction::Return),
                succs: Vec::new(),
                calls: Vec::new(),
                clinit: Vec::new(),
                synthetic: true,
            });
            self.program.methods[method.index()].body.push(id);
        }
        let last = PointId(self.program.points.len() as u32);
        self.program.points.push(Point {
            method,
            label: super::END_LABEL.to_string(),
            instr: None,
            succs: Vec::new(),
            calls: Vec::new(),
            clinit: Vec::new(),
            synthetic: false,
        });
        self.program.methods[method.index()].last = last;
    }

    fn resolve_points(&mut self, method: MethodId, body: &RawMethod) {
        for raw in &body.points {
            let Some(point) = self.program.find_point(method, &raw.label.0) else {
                continue; // declaration error already reported
            };
            let instr = match &raw.instr {
                RawInstruction::Any => Some(Instruction::Any),
                RawInstruction::Return => Some(Instruction::Return),
                RawInstruction::Invoke => Some(Instruction::Invoke),
                RawInstruction::Put(fref) => self.resolve_field(fref).map(Instruction::Put),
                RawInstruction::Get(fref) => self.resolve_field(fref).map(Instruction::Get),
            };
            if let Some(instr) = instr {
                self.program.points[point.index()].instr = Some(instr);
            }
            for (label, span) in &raw.succs {
                match self.program.find_point(method, label) {
                    Some(succ) => self.program.points[point.index()].succs.push(succ),
                    None => self.error(
                        BuildErrorKind::UnknownLabel,
                        *span,
                        label,
                        format!(
                            "label `{label}` does not exist in {}",
                            self.program.method_name(method)
                        ),
                    ),
                }
            }
            for ((class, mname), span) in &raw.calls {
                if !matches!(raw.instr, RawInstruction::Invoke) {
                    self.error(
                        BuildErrorKind::CallsOnNonInvoke,
                        *span,
                        &format!("{class}.{mname}"),
                        "`calls` is only allowed on invoke points".to_string(),
                    );
                    continue;
                }
                if *mname == MethodName::ClassInit {
                    self.error(
                        BuildErrorKind::ClinitCallTarget,
                        *span,
                        &format!("{class}.{mname}"),
                        "class initializers cannot be called directly".to_string(),
                    );
                    continue;
                }
                match self.program.find_method(class, mname) {
                    Some(target) => self.program.points[point.index()].calls.push(target),
                    None => self.error(
                        BuildErrorKind::UnknownMethod,
                        *span,
                        &format!("{class}.{mname}"),
                        format!("method `{class}.{mname}` is not declared"),
                    ),
                }
            }
            for (class, span) in &raw.clinit {
                match self.program.find_class(class) {
                    Some(c) => self.program.points[point.index()].clinit.push(c),
                    None => self.error(
                        BuildErrorKind::UnknownClass,
                        *span,
                        class,
                        format!("class `{class}` is not declared"),
                    ),
                }
            }
        }
    }

    fn resolve_field(&mut self, fref: &Spanned<(String, String)>) -> Option<FieldId> {
        let ((class, field), span) = fref;
        if self.program.find_class(class).is_none() {
            self.error(
                BuildErrorKind::UnknownClass,
                *span,
                class,
                format!("class `{class}` is not declared"),
            );
            return None;
        }
        let id = self.program.find_field(class, field);
        if id.is_none() {
            self.error(
                BuildErrorKind::UnknownField,
                *span,
                &format!("{class}.{field}"),
                format!("field `{class}.{field}` is not declared"),
            );
        }
        id
    }

    fn check_superclass_cycles(&mut self) {
        for start in self.program.class_ids() {
            let mut slow = self.program.class(start).superclass;
            let mut fast = slow.and_then(|c| self.program.class(c).superclass);
            while let (Some(a), Some(b)) = (slow, fast) {
                if a == b {
                    let name = self.program.class(start).name.clone();
                    if self
                        .errors
                        .iter()
                        .any(|e| e.kind == BuildErrorKind::CyclicSuperclass)
                    {
                        return;
                    }
                    self.error(
                        BuildErrorKind::CyclicSuperclass,
                        None,
                        &name,
                        format!("superclass chain starting at `{name}` is cyclic"),
                    );
                    return;
                }
                slow = self.program.class(a).superclass;
                fast = self
                    .program
                    .class(b)
                    .superclass
                    .and_then(|c| self.program.class(c).superclass);
            }
        }
    }
}

/// Adds implicit `return -> end` edges and sorts/dedups edge lists.
pub(crate) fn normalize_edges(program: &mut Program) {
    for m in 0..program.methods.len() {
        let last = program.methods[m].last;
        for &p in &program.methods[m].body.clone() {
            if matches!(program.points[p.index()].instr, Some(Instruction::Return)) {
                program.points[p.index()].succs.push(last);
            }
        }
    }
    let labels: Vec<String> = program.points.iter().map(|p| p.label.clone()).collect();
    let method_names: BTreeMap<MethodId, String> = program
        .method_ids()
        .map(|m| (m, program.method_name(m)))
        .collect();
    for point in &mut program.points {
        point.succs.sort_by(|a, b| labels[a.index()].cmp(&labels[b.index()]));
        point.succs.dedup();
        point.calls.sort_by(|a, b| method_names[a].cmp(&method_names[b]));
        point.calls.dedup();
        point.clinit.sort();
        point.clinit.dedup();
    }
}

/// Gives every class targeted by an initialization edge a class-initializer
/// body. Classes without a declared one receive a materialized single-return
/// body, so that initializer entry always lands on an instruction and the
/// analysis always has an exit state to read.
pub(crate) fn materialize_missing_clinits(program: &mut Program) {
    let targeted: Vec<ClassId> = {
        let mut seen: Vec<ClassId> = program
            .points
            .iter()
            .flat_map(|p| p.clinit.iter().copied())
            .collect();
        seen.sort();
        seen.dedup();
        seen
    };
    for class in targeted {
        if program.classes[class.index()].clinit.is_some() {
            continue;
        }
        let method = MethodId(program.methods.len() as u32);
        let ret = PointId(program.points.len() as u32);
        let last = PointId(program.points.len() as u32 + 1);
        program.points.push(Point {
            method,
            label: MATERIALIZED_RETURN_LABEL.to_string(),
            instr: Some(Instruction::Return),
            succs: vec![last],
            calls: Vec::new(),
            clinit: Vec::new(),
            synthetic: true,
        });
        program.points.push(Point {
            method,
            label: super::END_LABEL.to_string(),
            instr: None,
            succs: Vec::new(),
            calls: Vec::new(),
            clinit: Vec::new(),
            synthetic: false,
        });
        program.methods.push(MethodDecl {
            class,
            name: MethodName::ClassInit,
            body: vec![ret],
            last,
            materialized: true,
        });
        program.classes[class.index()].clinit = Some(method);
    }
}

/// Returns a label not yet used in `method`, derived from `base`.
pub(crate) fn fresh_label(program: &Program, method: MethodId, base: &str) -> String {
    if program.find_point(method, base).is_none() {
        return base.to_string();
    }
    for i in 1.. {
        let candidate = format!("{base}{i}");
        if program.find_point(method, &candidate).is_none() {
            return candidate;
        }
    }
    unreachable!()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> ProgramBuilder {
        let mut b = ProgramBuilder::new();
        b.entry("C", "main");
        b.class("C", None).method_body("main", |m| {
            m.point("0", "return");
        });
        b
    }

    #[test]
    fn minimal_program_builds() {
        let p = minimal().finish().unwrap();
        let main = p.entry();
        assert_eq!(p.method_name(main), "C.main");
        let zero = p.first(main);
        // Implicit return edge to the exit anchor.
        assert_eq!(p.intra_succs(zero), &[p.last(main)]);
    }

    #[test]
    fn unknown_references_are_reported() {
        let mut b = ProgramBuilder::new();
        b.entry("C", "main");
        b.class("C", None).method_body("main", |m| {
            m.put("0", "X", "f").to(&["nowhere"]);
        });
        let errs = b.finish().unwrap_err();
        assert!(errs.iter().any(|e| e.kind == BuildErrorKind::UnknownClass));
        assert!(errs.iter().any(|e| e.kind == BuildErrorKind::UnknownLabel));
        assert!(errs.iter().all(|e| e.is_unresolved_reference()));
    }

    #[test]
    fn cyclic_superclasses_are_rejected() {
        let mut b = ProgramBuilder::new();
        b.entry("A", "main");
        b.class("A", Some("B")).method_body("main", |m| {
            m.point("0", "return");
        });
        b.class("B", Some("A"));
        let errs = b.finish().unwrap_err();
        assert!(errs
            .iter()
            .any(|e| e.kind == BuildErrorKind::CyclicSuperclass));
    }

    #[test]
    fn clinit_call_targets_are_rejected() {
        let mut b = ProgramBuilder::new();
        b.entry("C", "main");
        b.class("C", None).method_body("main", |m| {
            m.point("0", "invoke");
            m.method
                .points
                .last_mut()
                .unwrap()
                .calls
                .push((("C".to_string(), MethodName::ClassInit), None));
        });
        b.clinit_body(|m| {
            m.point("1", "return");
        });
        let errs = b.finish().unwrap_err();
        assert!(errs
            .iter()
            .any(|e| e.kind == BuildErrorKind::ClinitCallTarget));
    }

    #[test]
    fn clinit_edge_target_without_body_is_materialized() {
        let mut b = ProgramBuilder::new();
        b.entry("C", "main");
        b.class("A", None);
        b.class("C", None).method_body("main", |m| {
            m.point("0", "return").clinit("A");
        });
        let p = b.finish().unwrap();
        let clinit = p.find_method("A", &MethodName::ClassInit).unwrap();
        assert!(p.method(clinit).materialized);
        let first = p.first(clinit);
        assert!(matches!(p.instruction(first), Some(Instruction::Return)));
    }

    #[test]
    fn entry_is_required() {
        let b = ProgramBuilder::new();
        let errs = b.finish().unwrap_err();
        assert!(errs.iter().any(|e| e.kind == BuildErrorKind::MissingEntry));
    }
}
