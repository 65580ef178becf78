use std::cell::Cell;
use std::sync::Arc;
use std::time::{Duration, Instant};

use mico_core::heuristics::PriorityFn;
use mico_core::sim::PolicyError;
use mico_core::trace::VmType;
use rhai::packages::{
    ArithmeticPackage, BasicArrayPackage, BasicMapPackage, BasicMathPackage, CorePackage, LogicPackage,
    MoreStringPackage, Package,
};
use rhai::{Array, CallFnOptions, Dynamic, Engine, EvalAltResult, Map, Scope, AST, FLOAT, INT};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::{PolicyArtifact, PolicyKind};

/// Language notes shown to the generator so that it emits runnable code.
pub const DIALECT: &str = "\
Write the function in Rhai (https://rhai.rs), not Python. Rules of the dialect:
- Declare functions with `fn name(args) { ... }`; variables with `let`; no type annotations.
- Functions cannot be nested and cannot read outer variables; pass values as arguments.
- Arrays are `[a, b]` (index with `a[0]`, `a.len()`); maps are `#{key: value}` (`m[\"key\"]`, `m.keys()`).
- Loops: `for i in 0..n { }`, `for x in array { }`, `while cond { }`.
- `bin` and `item` are arrays of floats; write float literals with a decimal point (`1.0`, `0.5`).
- Available math: abs, sqrt, exp, ln, log, floor, ceiling, round, min, max, sum(array), mean(array), std(array), clamp(x, lo, hi), inf(), neg_inf().
- Use `neg_inf()` for negative infinity. There is no randomness, clock, file or network access.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyVmError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("forbidden construct `{0}`")]
    ForbiddenConstruct(String),
    #[error("empty source")]
    EmptySource,
    #[error("no {0} entry function found")]
    MissingEntry(PolicyKind),
    #[error("expected a {expected} policy, got {found}")]
    WrongKind { expected: PolicyKind, found: PolicyKind },
    #[error("runtime fault: {0}")]
    RuntimeFault(String),
    #[error("call exceeded its budget")]
    Timeout,
    #[error("score {0} is neither finite nor -inf")]
    InvalidScore(f64),
    #[error("selector returned {0}, outside 1..={1}")]
    OutOfRange(String, usize),
    #[error("vectors differ in dimension: bin {bin}, item {item}")]
    DimensionMismatch { bin: usize, item: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SandboxLimits {
    /// Interpreter operations per call.
    pub max_operations: u64,
    /// Wall time per call.
    pub max_wall: Duration,
    pub max_call_levels: usize,
    pub max_expr_depth: usize,
    pub max_string_size: usize,
    pub max_array_size: usize,
    pub max_map_size: usize,
}

impl Default for SandboxLimits {
    fn default() -> Self {
        Self {
            max_operations: 200_000,
            max_wall: Duration::from_millis(250),
            max_call_levels: 16,
            max_expr_depth: 64,
            max_string_size: 4096,
            max_array_size: 4096,
            max_map_size: 256,
        }
    }
}

thread_local! {
    static DEADLINE: Cell<Option<Instant>> = const { Cell::new(None) };
}

const TIMEOUT_TOKEN: &str = "wall-time budget exceeded";

fn numbers(arr: &Array) -> Result<Vec<FLOAT>, Box<EvalAltResult>> {
    arr.iter()
        .map(|v| {
            v.as_float()
                .or_else(|_| v.as_int().map(|i| i as FLOAT))
                .map_err(|t| format!("expected a number, found {t}").into())
        })
        .collect()
}

fn build_engine(limits: &SandboxLimits) -> Engine {
    let mut engine = Engine::new_raw();
    engine.register_global_module(CorePackage::new().as_shared_module());
    engine.register_global_module(LogicPackage::new().as_shared_module());
    engine.register_global_module(ArithmeticPackage::new().as_shared_module());
    engine.register_global_module(BasicArrayPackage::new().as_shared_module());
    engine.register_global_module(BasicMapPackage::new().as_shared_module());
    engine.register_global_module(BasicMathPackage::new().as_shared_module());
    engine.register_global_module(MoreStringPackage::new().as_shared_module());

    engine
        .set_max_operations(limits.max_operations)
        .set_max_call_levels(limits.max_call_levels)
        .set_max_expr_depths(limits.max_expr_depth, limits.max_expr_depth)
        .set_max_string_size(limits.max_string_size)
        .set_max_array_size(limits.max_array_size)
        .set_max_map_size(limits.max_map_size)
        .set_strict_variables(true);
    engine.disable_symbol("eval");
    engine.on_print(|_| {});
    engine.on_debug(|_, _, _| {});
    engine.on_progress(|ops| {
        if ops % 512 != 0 {
            return None;
        }
        let late = DEADLINE.with(|d| d.get().is_some_and(|t| Instant::now() >= t));
        late.then(|| Dynamic::from(TIMEOUT_TOKEN))
    });

    // The built-in float comparisons are epsilon based and break on
    // infinities; replace them with plain IEEE ones.
    engine.set_fast_operators(false);
    engine
        .register_fn("==", |a: FLOAT, b: FLOAT| a == b)
        .register_fn("!=", |a: FLOAT, b: FLOAT| a != b)
        .register_fn("<", |a: FLOAT, b: FLOAT| a < b)
        .register_fn("<=", |a: FLOAT, b: FLOAT| a <= b)
        .register_fn(">", |a: FLOAT, b: FLOAT| a > b)
        .register_fn(">=", |a: FLOAT, b: FLOAT| a >= b)
        .register_fn("==", |a: FLOAT, b: INT| a == b as FLOAT)
        .register_fn("!=", |a: FLOAT, b: INT| a != b as FLOAT)
        .register_fn("<", |a: FLOAT, b: INT| a < b as FLOAT)
        .register_fn("<=", |a: FLOAT, b: INT| a <= b as FLOAT)
        .register_fn(">", |a: FLOAT, b: INT| a > b as FLOAT)
        .register_fn(">=", |a: FLOAT, b: INT| a >= b as FLOAT)
        .register_fn("==", |a: INT, b: FLOAT| a as FLOAT == b)
        .register_fn("!=", |a: INT, b: FLOAT| a as FLOAT != b)
        .register_fn("<", |a: INT, b: FLOAT| (a as FLOAT) < b)
        .register_fn("<=", |a: INT, b: FLOAT| a as FLOAT <= b)
        .register_fn(">", |a: INT, b: FLOAT| a as FLOAT > b)
        .register_fn(">=", |a: INT, b: FLOAT| a as FLOAT >= b);

    engine.register_fn("neg_inf", || FLOAT::NEG_INFINITY);
    engine.register_fn("inf", || FLOAT::INFINITY);
    engine.register_fn("sum", |a: Array| numbers(&a).map(|v| v.iter().sum::<FLOAT>()));
    engine.register_fn("mean", |a: Array| {
        numbers(&a).map(|v| if v.is_empty() { 0.0 } else { v.iter().sum::<FLOAT>() / v.len() as FLOAT })
    });
    engine.register_fn("std", |a: Array| {
        numbers(&a).map(|v| {
            if v.is_empty() {
                return 0.0;
            }
            let m = v.iter().sum::<FLOAT>() / v.len() as FLOAT;
            (v.iter().map(|x| (x - m) * (x - m)).sum::<FLOAT>() / v.len() as FLOAT).sqrt()
        })
    });
    engine.register_fn("clamp", |x: FLOAT, lo: FLOAT, hi: FLOAT| x.max(lo).min(hi));
    engine.register_fn("clamp", |x: INT, lo: INT, hi: INT| x.max(lo).min(hi));
    engine
}

/// Identifiers in `source`, skipping comments and string literals.
fn identifiers(source: &str) -> Vec<&str> {
    let bytes = source.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if source[i..].starts_with("//") {
            i = source[i..].find('\n').map_or(bytes.len(), |n| i + n);
        } else if source[i..].starts_with("/*") {
            i = source[i + 2..].find("*/").map_or(bytes.len(), |n| i + n + 4);
        } else if c == b'"' || c == b'`' || c == b'\'' {
            i += 1;
            while i < bytes.len() && bytes[i] != c {
                i += if bytes[i] == b'\\' { 2 } else { 1 };
            }
            i += 1;
        } else if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(&source[start..i]);
        } else {
            i += 1;
        }
    }
    out
}

fn forbidden(kind: PolicyKind) -> &'static [&'static str] {
    match kind {
        PolicyKind::Priority => &["eval", "import", "timestamp"],
        PolicyKind::Selector => &["eval", "import", "timestamp", "random", "rand"],
    }
}

/// Entry point: the plain name if present, otherwise the highest `_vN`.
fn resolve_entry(ast: &AST, base: &str, arity: usize) -> Option<String> {
    let mut best: Option<(i64, String)> = None;
    for f in ast.iter_functions().filter(|f| f.params.len() == arity) {
        let rank = if f.name == base {
            i64::MAX
        } else if let Some(n) = f.name.strip_prefix(base).and_then(|s| s.strip_prefix("_v")) {
            match n.parse::<i64>() {
                Ok(n) => n,
                Err(_) => continue,
            }
        } else {
            continue;
        };
        if best.as_ref().is_none_or(|(r, _)| rank > *r) {
            best = Some((rank, f.name.to_string()));
        }
    }
    best.map(|(_, name)| name)
}

/// Shared, immutable engine configured with the sandbox limits.
#[derive(Clone)]
pub struct Sandbox {
    engine: Arc<Engine>,
    limits: SandboxLimits,
}

impl std::fmt::Debug for Sandbox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Sandbox").field("limits", &self.limits).finish_non_exhaustive()
    }
}

impl Default for Sandbox {
    fn default() -> Self {
        Self::new(SandboxLimits::default())
    }
}

impl Sandbox {
    pub fn new(limits: SandboxLimits) -> Self {
        Self { engine: Arc::new(build_engine(&limits)), limits }
    }

    pub fn limits(&self) -> &SandboxLimits {
        &self.limits
    }

    pub fn compile(&self, artifact: &PolicyArtifact) -> Result<CompiledPolicy, PolicyVmError> {
        self.compile_source(artifact.kind, &artifact.source)
    }

    pub fn compile_source(&self, kind: PolicyKind, source: &str) -> Result<CompiledPolicy, PolicyVmError> {
        if source.trim().is_empty() {
            return Err(PolicyVmError::EmptySource);
        }
        if let Some(bad) = identifiers(source).into_iter().find(|id| forbidden(kind).contains(id)) {
            return Err(PolicyVmError::ForbiddenConstruct(bad.to_owned()));
        }
        let ast = self.engine.compile(source).map_err(|e| {
            let pos = e.position();
            PolicyVmError::Parse {
                line: pos.line().unwrap_or(0),
                column: pos.position().unwrap_or(0),
                message: e.err_type().to_string(),
            }
        })?;
        let (base, arity) = match kind {
            PolicyKind::Priority => ("priority", 2),
            PolicyKind::Selector => ("heuristic_selector", 1),
        };
        let entry = resolve_entry(&ast, base, arity).ok_or(PolicyVmError::MissingEntry(kind))?;
        Ok(CompiledPolicy { kind, entry, ast: Arc::new(ast), sandbox: self.clone() })
    }

    /// True when `source` parses, whatever its entry points.
    pub fn parses(&self, source: &str) -> bool {
        self.engine.compile(source).is_ok()
    }
}

/// Per-window proportions of the five VM types, oldest window first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectorContext {
    pub groups: Vec<[f64; 5]>,
}

impl SelectorContext {
    pub fn uniform(groups: usize) -> Self {
        Self { groups: vec![[0.2; 5]; groups] }
    }

    pub fn single_type(ty: VmType, groups: usize) -> Self {
        let mut g = [0.0; 5];
        g[ty.index()] = 1.0;
        Self { groups: vec![g; groups] }
    }

    fn to_rhai(&self) -> Array {
        self.groups
            .iter()
            .map(|g| {
                let map: Map = VmType::ALL.iter().map(|t| (t.key().into(), Dynamic::from_float(g[t.index()]))).collect();
                Dynamic::from_map(map)
            })
            .collect()
    }
}

/// A compiled handle; cheap to clone and callable from many threads. Every
/// call gets a fresh scope.
#[derive(Clone)]
pub struct CompiledPolicy {
    kind: PolicyKind,
    entry: String,
    ast: Arc<AST>,
    sandbox: Sandbox,
}

impl std::fmt::Debug for CompiledPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CompiledPolicy").field("kind", &self.kind).field("entry", &self.entry).finish()
    }
}

fn floats(v: &[u64]) -> Array {
    v.iter().map(|&x| Dynamic::from_float(x as FLOAT)).collect()
}

impl CompiledPolicy {
    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn entry(&self) -> &str {
        &self.entry
    }

    fn call(&self, args: impl rhai::FuncArgs) -> Result<Dynamic, PolicyVmError> {
        let deadline = Instant::now() + self.sandbox.limits.max_wall;
        let previous = DEADLINE.with(|d| d.replace(Some(deadline)));
        let result = self.sandbox.engine.call_fn_with_options::<Dynamic>(
            CallFnOptions::new().eval_ast(false).rewind_scope(true),
            &mut Scope::new(),
            &self.ast,
            &self.entry,
            args,
        );
        DEADLINE.with(|d| d.set(previous));
        result.map_err(|e| match *e {
            EvalAltResult::ErrorTooManyOperations(_) | EvalAltResult::ErrorTerminated(..) => PolicyVmError::Timeout,
            other => PolicyVmError::RuntimeFault(other.to_string()),
        })
    }

    fn expect(&self, kind: PolicyKind) -> Result<(), PolicyVmError> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(PolicyVmError::WrongKind { expected: kind, found: self.kind })
        }
    }

    /// The raw returned number, before the finiteness rule.
    pub fn raw_priority(&self, bin: &[u64], item: &[u64]) -> Result<f64, PolicyVmError> {
        self.expect(PolicyKind::Priority)?;
        if bin.len() != item.len() {
            return Err(PolicyVmError::DimensionMismatch { bin: bin.len(), item: item.len() });
        }
        let out = self.call((floats(bin), floats(item)))?;
        out.as_float()
            .or_else(|_| out.as_int().map(|i| i as f64))
            .map_err(|t| PolicyVmError::RuntimeFault(format!("priority returned {t}")))
    }

    /// A finite score or `-inf`.
    pub fn eval_priority(&self, bin: &[u64], item: &[u64]) -> Result<f64, PolicyVmError> {
        let s = self.raw_priority(bin, item)?;
        if s.is_finite() || s == f64::NEG_INFINITY {
            Ok(s)
        } else {
            Err(PolicyVmError::InvalidScore(s))
        }
    }

    /// The raw returned number; integral floats are accepted.
    pub fn raw_selector(&self, ctx: &SelectorContext) -> Result<f64, PolicyVmError> {
        self.expect(PolicyKind::Selector)?;
        let out = self.call((ctx.to_rhai(),))?;
        out.as_int()
            .map(|i| i as f64)
            .or_else(|_| out.as_float())
            .map_err(|t| PolicyVmError::RuntimeFault(format!("selector returned {t}")))
    }

    /// 1-based option index in `1..=n_options`; never clamped.
    pub fn eval_selector(&self, ctx: &SelectorContext, n_options: usize) -> Result<usize, PolicyVmError> {
        let v = self.raw_selector(ctx)?;
        if v.fract() == 0.0 && v >= 1.0 && v <= n_options as f64 {
            Ok(v as usize)
        } else {
            Err(PolicyVmError::OutOfRange(v.to_string(), n_options))
        }
    }
}

impl PriorityFn for CompiledPolicy {
    fn score(&self, bin: &[u64], item: &[u64]) -> Result<f64, PolicyError> {
        self.eval_priority(bin, item).map_err(|e| PolicyError::new(e.to_string()))
    }
}
