//! Tree-walking evaluator with persistent namespaces and an execution budget.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use stepcode_core::ExecStatus;

use super::ast::*;
use super::format::{format_value, json_dumps, percent_format, str_format, FmtError};
use super::parser::parse_program;
use super::value::*;

const MAX_ITEMS: usize = 10_000_000;
const MAX_STR_BYTES: usize = 256 * 1024 * 1024;
const MAX_CALL_DEPTH: usize = 200;
const INTERP_STACK_BYTES: usize = 256 * 1024 * 1024;

/// Marker printed by `final_answer(...)`.
pub const FINAL_ANSWER_PREFIX: &str = "FINAL ANSWER:";

/// How the execution budget is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Clock {
    /// Deterministic: every interpreter step costs one op and
    /// `ops_per_ms` ops make one virtual millisecond.
    Virtual { ops_per_ms: u64 },
    /// Real elapsed time.
    Wall,
}

impl Default for Clock {
    fn default() -> Self {
        Clock::Virtual { ops_per_ms: 1000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToolFailureKind {
    UnknownTool,
    InvalidParams,
    Http,
    Transport,
}

impl ToolFailureKind {
    fn exc_name(self) -> &'static str {
        match self {
            ToolFailureKind::UnknownTool => "UnknownToolError",
            ToolFailureKind::InvalidParams => "ToolParamError",
            ToolFailureKind::Http => "ToolHTTPError",
            ToolFailureKind::Transport => "ToolError",
        }
    }
}

/// A tool call failure, surfaced to sandbox code as a catchable exception.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolFailure {
    pub kind: ToolFailureKind,
    pub message: String,
}

/// Backend for the injected `call_tool` helper.
pub trait ToolHost: Send + Sync {
    fn call_tool(&self, session: &str, tool: &str, params: Json) -> Result<Json, ToolFailure>;
}

pub struct ExecContext<'a> {
    pub session_id: &'a str,
    pub timeout_ms: u64,
    pub clock: Clock,
    pub tools: Option<&'a dyn ToolHost>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecOutcome {
    pub status: ExecStatus,
    pub stdout: String,
    pub stderr: String,
    pub wall_time_ms: u64,
}

/// Persistent global bindings of one session.
#[derive(Debug, Clone, Default)]
pub struct Namespace {
    globals: HashMap<String, Value>,
}

impl Namespace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.globals.contains_key(name)
    }

    /// Execute `code`, keeping bindings made up to any failure point.
    pub fn exec(&mut self, code: &str, ctx: &ExecContext<'_>) -> ExecOutcome {
        // deep user recursion needs more stack than test threads provide
        std::thread::scope(|scope| {
            std::thread::Builder::new()
                .name("interp".into())
                .stack_size(INTERP_STACK_BYTES)
                .spawn_scoped(scope, || self.exec_inline(code, ctx))
                .expect("spawn interpreter thread")
                .join()
                .unwrap_or_else(|_| ExecOutcome {
                    status: ExecStatus::RuntimeError,
                    stdout: String::new(),
                    stderr: "SystemError: interpreter panicked\n".into(),
                    wall_time_ms: 0,
                })
        })
    }

    fn exec_inline(&mut self, code: &str, ctx: &ExecContext<'_>) -> ExecOutcome {
        let prog = match parse_program(code) {
            Ok(p) => p,
            Err(e) => {
                return ExecOutcome {
                    status: ExecStatus::RuntimeError,
                    stdout: String::new(),
                    stderr: format!(
                        "  File \"<step>\", line {}\nSyntaxError: {}\n",
                        e.line, e.msg
                    ),
                    wall_time_ms: 0,
                }
            }
        };
        let mut it = Interp::new(&mut self.globals, ctx);
        let res = it.exec_block(&prog);
        let wall_time_ms = it.elapsed_ms();
        let stdout = std::mem::take(&mut it.stdout);
        let (status, stderr) = match res {
            Ok(Flow::Normal) => (ExecStatus::Success, String::new()),
            Ok(_) => (
                ExecStatus::RuntimeError,
                "SyntaxError: 'return', 'break' or 'continue' outside function or loop\n".into(),
            ),
            Err(Signal::Exc(e)) => (ExecStatus::RuntimeError, e.traceback()),
            Err(Signal::Timeout) => (
                ExecStatus::Timeout,
                format!(
                    "TimeoutError: execution exceeded {} ms\n",
                    ctx.timeout_ms
                ),
            ),
        };
        let wall_time_ms = if status == ExecStatus::Timeout {
            wall_time_ms.max(ctx.timeout_ms)
        } else {
            wall_time_ms
        };
        ExecOutcome {
            status,
            stdout,
            stderr,
            wall_time_ms,
        }
    }
}

#[derive(Debug, Clone)]
struct PyErr {
    kind: String,
    msg: String,
    trace: Option<Vec<(String, usize)>>,
}

impl PyErr {
    fn traceback(&self) -> String {
        let mut out = String::from("Traceback (most recent call last):\n");
        for (func, line) in self.trace.iter().flatten() {
            out.push_str(&format!("  File \"<step>\", line {line}, in {func}\n"));
        }
        if self.msg.is_empty() {
            out.push_str(&format!("{}\n", self.kind));
        } else {
            out.push_str(&format!("{}: {}\n", self.kind, self.msg));
        }
        out
    }

    fn to_value(&self) -> Value {
        Value::Exc(ExcValue {
            kind: self.kind.clone(),
            msg: self.msg.clone(),
        })
    }
}

enum Signal {
    Exc(PyErr),
    Timeout,
}

type R<T> = Result<T, Signal>;
type CallArgs = (Vec<Value>, Vec<(String, Value)>);

fn exc(kind: &str, msg: impl Into<String>) -> Signal {
    Signal::Exc(PyErr {
        kind: kind.into(),
        msg: msg.into(),
        trace: None,
    })
}

fn type_err(msg: impl Into<String>) -> Signal {
    exc("TypeError", msg)
}

fn value_err(msg: impl Into<String>) -> Signal {
    exc("ValueError", msg)
}

impl From<FmtError> for Signal {
    fn from(e: FmtError) -> Self {
        exc(e.kind, e.msg)
    }
}

enum Flow {
    Normal,
    Break,
    Continue,
    Return(Value),
}

struct Frame {
    name: String,
    line: usize,
    locals: HashMap<String, Value>,
    global_names: HashSet<String>,
}

struct Place {
    root: String,
    global: bool,
    keys: Vec<Value>,
}

const EXCEPTIONS: &[(&str, &str)] = &[
    ("BaseException", ""),
    ("Exception", "BaseException"),
    ("ArithmeticError", "Exception"),
    ("LookupError", "Exception"),
    ("ValueError", "Exception"),
    ("TypeError", "Exception"),
    ("NameError", "Exception"),
    ("AttributeError", "Exception"),
    ("RuntimeError", "Exception"),
    ("AssertionError", "Exception"),
    ("OSError", "Exception"),
    ("ImportError", "Exception"),
    ("StopIteration", "Exception"),
    ("MemoryError", "Exception"),
    ("ToolError", "Exception"),
    ("ZeroDivisionError", "ArithmeticError"),
    ("OverflowError", "ArithmeticError"),
    ("KeyError", "LookupError"),
    ("IndexError", "LookupError"),
    ("JSONDecodeError", "ValueError"),
    ("UnboundLocalError", "NameError"),
    ("RecursionError", "RuntimeError"),
    ("NotImplementedError", "RuntimeError"),
    ("ModuleNotFoundError", "ImportError"),
    ("TimeoutError", "OSError"),
    ("ConnectionError", "OSError"),
    ("UnknownToolError", "ToolError"),
    ("ToolParamError", "ToolError"),
    ("ToolHTTPError", "ToolError"),
];

fn exception_parent(kind: &str) -> Option<&'static str> {
    match EXCEPTIONS.iter().find(|(k, _)| *k == kind) {
        Some((_, "")) => None,
        Some((_, p)) => Some(p),
        None => Some("Exception"),
    }
}

fn is_subclass(kind: &str, of: &str) -> bool {
    let mut cur = Some(kind);
    let mut hops = 0;
    while let Some(k) = cur {
        if k == of {
            return true;
        }
        hops += 1;
        if hops > 16 {
            break;
        }
        cur = exception_parent(k);
    }
    false
}

const BUILTINS: &[&str] = &[
    "print", "len", "str", "int", "float", "bool", "list", "dict", "tuple", "range", "sum", "min",
    "max", "sorted", "enumerate", "zip", "abs", "round", "repr", "isinstance", "any", "all", "map",
    "filter", "reversed", "type", "format", "call_tool", "final_answer", "sleep",
];

const MODULE_MEMBERS: &[&str] = &[
    "json.dumps",
    "json.loads",
    "time.sleep",
    "time.time",
    "math.sqrt",
    "math.floor",
    "math.ceil",
    "math.log",
    "math.exp",
    "math.fabs",
];

const MODULES: &[&str] = &["json", "time", "math"];

const MUTATING: &[&str] = &[
    "append", "extend", "insert", "pop", "remove", "clear", "sort", "reverse", "update",
    "setdefault", "popitem",
];

const STR_METHODS: &[&str] = &[
    "upper", "lower", "strip", "lstrip", "rstrip", "split", "join", "replace", "startswith",
    "endswith", "find", "index", "count", "format", "isdigit", "isalpha", "isalnum", "isspace",
    "title", "capitalize", "splitlines", "zfill", "ljust", "rjust",
];
const LIST_METHODS: &[&str] = &[
    "append", "extend", "insert", "pop", "remove", "clear", "sort", "reverse", "index", "count",
    "copy",
];
const DICT_METHODS: &[&str] = &[
    "get", "keys", "values", "items", "update", "pop", "setdefault", "copy", "clear", "popitem",
];
const TUPLE_METHODS: &[&str] = &["index", "count"];

fn builtin_value(name: &str) -> Option<Value> {
    if let Some(b) = BUILTINS.iter().find(|b| **b == name) {
        return Some(Value::Builtin(b));
    }
    if EXCEPTIONS.iter().any(|(k, _)| *k == name) {
        return Some(Value::ExcClass(name.to_string()));
    }
    None
}

fn module_attr(module: &str, attr: &str) -> Option<Value> {
    let full = format!("{module}.{attr}");
    if let Some(m) = MODULE_MEMBERS.iter().find(|m| **m == full) {
        return Some(Value::Builtin(m));
    }
    match (module, attr) {
        ("json", "JSONDecodeError") => Some(Value::ExcClass("JSONDecodeError".into())),
        ("math", "pi") => Some(Value::Float(std::f64::consts::PI)),
        ("math", "e") => Some(Value::Float(std::f64::consts::E)),
        ("math", "inf") => Some(Value::Float(f64::INFINITY)),
        _ => None,
    }
}

fn as_index(v: &Value) -> Option<i64> {
    match v {
        Value::Int(i) => Some(*i),
        Value::Bool(b) => Some(i64::from(*b)),
        _ => None,
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Int(i) => Some(*i as f64),
        Value::Bool(b) => Some(f64::from(u8::from(*b))),
        Value::Float(f) => Some(*f),
        _ => None,
    }
}

fn normalize_index(i: i64, len: usize) -> Option<usize> {
    let len = len as i64;
    let j = if i < 0 { i + len } else { i };
    (0..len).contains(&j).then_some(j as usize)
}

fn check_hashable(k: &Value) -> R<()> {
    match k {
        Value::List(_) | Value::Dict(_) => {
            Err(type_err(format!("unhashable type: '{}'", k.type_name())))
        }
        Value::Tuple(items) => items.iter().try_for_each(check_hashable),
        _ => Ok(()),
    }
}

fn not_subscriptable(v: &Value) -> Signal {
    type_err(format!("'{}' object is not subscriptable", v.type_name()))
}

fn item_ref<'v>(c: &'v Value, k: &Value) -> R<&'v Value> {
    match c {
        Value::List(items) | Value::Tuple(items) => {
            let what = c.type_name();
            let i = as_index(k).ok_or_else(|| {
                type_err(format!(
                    "{what} indices must be integers or slices, not {}",
                    k.type_name()
                ))
            })?;
            let j = normalize_index(i, items.len())
                .ok_or_else(|| exc("IndexError", format!("{what} index out of range")))?;
            Ok(&items[j])
        }
        Value::Dict(d) => {
            check_hashable(k)?;
            d.get(k).ok_or_else(|| exc("KeyError", k.repr()))
        }
        other => Err(not_subscriptable(other)),
    }
}

fn item_mut<'v>(c: &'v mut Value, k: &Value) -> R<&'v mut Value> {
    match c {
        Value::List(items) => {
            let i = as_index(k).ok_or_else(|| {
                type_err(format!(
                    "list indices must be integers or slices, not {}",
                    k.type_name()
                ))
            })?;
            let j = normalize_index(i, items.len())
                .ok_or_else(|| exc("IndexError", "list index out of range"))?;
            Ok(&mut items[j])
        }
        Value::Dict(d) => {
            check_hashable(k)?;
            d.get_mut(k).ok_or_else(|| exc("KeyError", k.repr()))
        }
        Value::Tuple(_) | Value::Str(_) => Err(type_err(format!(
            "'{}' object does not support item assignment",
            c.type_name()
        ))),
        other => Err(not_subscriptable(other)),
    }
}

fn get_item(c: &Value, k: &Value) -> R<Value> {
    match c {
        Value::Str(s) => {
            let i = as_index(k).ok_or_else(|| {
                type_err(format!(
                    "string indices must be integers, not '{}'",
                    k.type_name()
                ))
            })?;
            let n = s.chars().count();
            let j = normalize_index(i, n)
                .ok_or_else(|| exc("IndexError", "string index out of range"))?;
            Ok(Value::str(s.chars().nth(j).unwrap().to_string()))
        }
        Value::Range(a, b, st) => {
            let i = as_index(k).ok_or_else(|| type_err("range indices must be integers"))?;
            let n = range_len(*a, *b, *st) as usize;
            let j = normalize_index(i, n)
                .ok_or_else(|| exc("IndexError", "range object index out of range"))?;
            Ok(Value::Int(a + j as i64 * st))
        }
        _ => item_ref(c, k).cloned(),
    }
}

fn set_item(c: &mut Value, k: Value, v: Value) -> R<()> {
    match c {
        Value::List(items) => {
            let i = as_index(&k).ok_or_else(|| {
                type_err(format!(
                    "list indices must be integers or slices, not {}",
                    k.type_name()
                ))
            })?;
            let j = normalize_index(i, items.len())
                .ok_or_else(|| exc("IndexError", "list assignment index out of range"))?;
            items[j] = v;
            Ok(())
        }
        Value::Dict(d) => {
            check_hashable(&k)?;
            d.insert(k, v);
            Ok(())
        }
        other => Err(type_err(format!(
            "'{}' object does not support item assignment",
            other.type_name()
        ))),
    }
}

fn slice_bounds(start: Option<i64>, end: Option<i64>, len: usize) -> (usize, usize) {
    let len = len as i64;
    let clamp = |v: i64| {
        let v = if v < 0 { v + len } else { v };
        v.clamp(0, len) as usize
    };
    let s = start.map(clamp).unwrap_or(0);
    let e = end.map(clamp).unwrap_or(len as usize);
    (s, e.max(s))
}

fn materialize(v: &Value) -> R<Vec<Value>> {
    Ok(match v {
        Value::List(items) | Value::Tuple(items) => items.clone(),
        Value::Str(s) => s.chars().map(|c| Value::str(c.to_string())).collect(),
        Value::Dict(d) => d.entries.iter().map(|(k, _)| k.clone()).collect(),
        Value::Range(a, b, s) => {
            if range_len(*a, *b, *s) as usize > MAX_ITEMS {
                return Err(exc("MemoryError", "range too large to materialize"));
            }
            range_iter(*a, *b, *s).map(Value::Int).collect()
        }
        other => {
            return Err(type_err(format!(
                "'{}' object is not iterable",
                other.type_name()
            )))
        }
    })
}

enum PyIter {
    Items(std::vec::IntoIter<Value>),
    Range(i64, i64, i64),
}

impl Iterator for PyIter {
    type Item = Value;

    fn next(&mut self) -> Option<Value> {
        match self {
            PyIter::Items(it) => it.next(),
            PyIter::Range(cur, stop, step) => {
                let live = if *step > 0 { *cur < *stop } else { *cur > *stop };
                if !live {
                    return None;
                }
                let v = *cur;
                *cur += *step;
                Some(Value::Int(v))
            }
        }
    }
}

fn iterate(v: Value) -> R<PyIter> {
    match v {
        Value::Range(a, b, s) => Ok(PyIter::Range(a, b, s)),
        Value::List(items) | Value::Tuple(items) => Ok(PyIter::Items(items.into_iter())),
        other => Ok(PyIter::Items(materialize(&other)?.into_iter())),
    }
}

fn checked(v: Option<i64>) -> R<Value> {
    v.map(Value::Int)
        .ok_or_else(|| exc("OverflowError", "integer result out of range"))
}

fn repeat<T: Clone>(items: &[T], n: i64, unit: usize) -> R<Vec<T>> {
    let n = n.max(0) as usize;
    if items.len().saturating_mul(n).saturating_mul(unit.max(1)) > MAX_STR_BYTES {
        return Err(exc("MemoryError", "result too large"));
    }
    let mut out = Vec::with_capacity(items.len() * n);
    for _ in 0..n {
        out.extend_from_slice(items);
    }
    Ok(out)
}

fn binop(a: &Value, op: BinOp, b: &Value) -> R<Value> {
    use BinOp::*;
    if let (Some(x), Some(y)) = (as_index(a), as_index(b)) {
        if !matches!(a, Value::Float(_)) && !matches!(b, Value::Float(_)) {
            return match op {
                Add => checked(x.checked_add(y)),
                Sub => checked(x.checked_sub(y)),
                Mul => checked(x.checked_mul(y)),
                Div => {
                    if y == 0 {
                        Err(exc("ZeroDivisionError", "division by zero"))
                    } else {
                        Ok(Value::Float(x as f64 / y as f64))
                    }
                }
                FloorDiv => {
                    if y == 0 {
                        return Err(exc("ZeroDivisionError", "integer division or modulo by zero"));
                    }
                    let q = x.checked_div(y).ok_or_else(|| exc("OverflowError", "integer result out of range"))?;
                    Ok(Value::Int(if x % y != 0 && ((x < 0) != (y < 0)) { q - 1 } else { q }))
                }
                Mod => {
                    if y == 0 {
                        return Err(exc("ZeroDivisionError", "integer modulo by zero"));
                    }
                    let r = x.checked_rem(y).unwrap_or(0);
                    Ok(Value::Int(if r != 0 && ((r < 0) != (y < 0)) { r + y } else { r }))
                }
                Pow => {
                    if y >= 0 {
                        checked(u32::try_from(y).ok().and_then(|e| x.checked_pow(e)))
                    } else if x == 0 {
                        Err(exc("ZeroDivisionError", "0.0 cannot be raised to a negative power"))
                    } else {
                        Ok(Value::Float((x as f64).powf(y as f64)))
                    }
                }
            };
        }
    }
    if let (Some(x), Some(y)) = (as_f64(a), as_f64(b)) {
        return match op {
            Add => Ok(Value::Float(x + y)),
            Sub => Ok(Value::Float(x - y)),
            Mul => Ok(Value::Float(x * y)),
            Div if y == 0.0 => Err(exc("ZeroDivisionError", "float division by zero")),
            Div => Ok(Value::Float(x / y)),
            FloorDiv if y == 0.0 => Err(exc("ZeroDivisionError", "float floor division by zero")),
            FloorDiv => Ok(Value::Float((x / y).floor())),
            Mod if y == 0.0 => Err(exc("ZeroDivisionError", "float modulo")),
            Mod => {
                let r = x % y;
                Ok(Value::Float(if r != 0.0 && ((r < 0.0) != (y < 0.0)) { r + y } else { r }))
            }
            Pow if x == 0.0 && y < 0.0 => Err(exc(
                "ZeroDivisionError",
                "0.0 cannot be raised to a negative power",
            )),
            Pow if x < 0.0 && y.fract() != 0.0 => {
                Err(value_err("math domain error"))
            }
            Pow => Ok(Value::Float(x.powf(y))),
        };
    }
    match (a, op, b) {
        (Value::Str(x), Add, Value::Str(y)) => {
            if x.len() + y.len() > MAX_STR_BYTES {
                return Err(exc("MemoryError", "result too large"));
            }
            Ok(Value::str(format!("{x}{y}")))
        }
        (Value::Str(_), Add, other) => Err(type_err(format!(
            "can only concatenate str (not \"{}\") to str",
            other.type_name()
        ))),
        (Value::Str(s), Mul, n) | (n, Mul, Value::Str(s)) if as_index(n).is_some() => {
            let bytes = repeat(s.as_bytes(), as_index(n).unwrap(), 1)?;
            Ok(Value::str(String::from_utf8(bytes).unwrap_or_default()))
        }
        (Value::List(x), Add, Value::List(y)) => Ok(Value::List([x.as_slice(), y].concat())),
        (Value::Tuple(x), Add, Value::Tuple(y)) => Ok(Value::Tuple([x.as_slice(), y].concat())),
        (Value::List(x), Mul, n) | (n, Mul, Value::List(x)) if as_index(n).is_some() => {
            Ok(Value::List(repeat(x, as_index(n).unwrap(), 8)?))
        }
        (Value::Tuple(x), Mul, n) | (n, Mul, Value::Tuple(x)) if as_index(n).is_some() => {
            Ok(Value::Tuple(repeat(x, as_index(n).unwrap(), 8)?))
        }
        (Value::Str(fmt), Mod, args) => Ok(Value::str(percent_format(fmt, args)?)),
        _ => Err(type_err(format!(
            "unsupported operand type(s) for {}: '{}' and '{}'",
            op_symbol(op),
            a.type_name(),
            b.type_name()
        ))),
    }
}

fn op_symbol(op: BinOp) -> &'static str {
    match op {
        BinOp::Add => "+",
        BinOp::Sub => "-",
        BinOp::Mul => "*",
        BinOp::Div => "/",
        BinOp::FloorDiv => "//",
        BinOp::Mod => "%",
        BinOp::Pow => "** or pow()",
    }
}

fn contains(container: &Value, item: &Value) -> R<bool> {
    match container {
        Value::Str(s) => match item {
            Value::Str(sub) => Ok(s.contains(&**sub)),
            other => Err(type_err(format!(
                "'in <string>' requires string as left operand, not {}",
                other.type_name()
            ))),
        },
        Value::List(items) | Value::Tuple(items) => Ok(items.iter().any(|v| v.py_eq(item))),
        Value::Dict(d) => {
            check_hashable(item)?;
            Ok(d.get(item).is_some())
        }
        Value::Range(a, b, s) => Ok(match as_index(item) {
            Some(i) => {
                let inside = if *s > 0 { *a <= i && i < *b } else { *b < i && i <= *a };
                inside && (i - a) % s == 0
            }
            None => false,
        }),
        other => Err(type_err(format!(
            "argument of type '{}' is not iterable",
            other.type_name()
        ))),
    }
}

fn compare(a: &Value, op: CmpOp, b: &Value) -> R<bool> {
    let ord = |a: &Value, b: &Value, sym: &str| {
        a.py_cmp(b).ok_or_else(|| {
            type_err(format!(
                "'{sym}' not supported between instances of '{}' and '{}'",
                a.type_name(),
                b.type_name()
            ))
        })
    };
    Ok(match op {
        CmpOp::Eq => a.py_eq(b),
        CmpOp::Ne => !a.py_eq(b),
        CmpOp::Lt => ord(a, b, "<")? == Ordering::Less,
        CmpOp::Le => ord(a, b, "<=")? != Ordering::Greater,
        CmpOp::Gt => ord(a, b, ">")? == Ordering::Greater,
        CmpOp::Ge => ord(a, b, ">=")? != Ordering::Less,
        CmpOp::In => contains(b, a)?,
        CmpOp::NotIn => !contains(b, a)?,
        CmpOp::Is => identical(a, b),
        CmpOp::IsNot => !identical(a, b),
    })
}

fn identical(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::None, Value::None) => true,
        (Value::None, _) | (_, Value::None) => false,
        _ => a.type_name() == b.type_name() && a.py_eq(b),
    }
}

fn arg<'v>(args: &'v [Value], i: usize, func: &str) -> R<&'v Value> {
    args.get(i).ok_or_else(|| {
        type_err(format!("{func}() missing required argument (pos {})", i + 1))
    })
}

fn kwarg<'v>(kwargs: &'v [(String, Value)], name: &str) -> Option<&'v Value> {
    kwargs.iter().find(|(k, _)| k == name).map(|(_, v)| v)
}

fn expect_str<'v>(v: &'v Value, what: &str) -> R<&'v str> {
    match v {
        Value::Str(s) => Ok(s),
        other => Err(type_err(format!(
            "{what} must be str, not {}",
            other.type_name()
        ))),
    }
}

fn python_round(x: f64) -> f64 {
    let r = x.round();
    if (x - x.trunc()).abs() == 0.5 {
        2.0 * (x / 2.0).round()
    } else {
        r
    }
}

fn parse_int(s: &str) -> Option<i64> {
    let t = s.trim().replace('_', "");
    t.parse::<i64>().ok()
}

fn parse_float(s: &str) -> Option<f64> {
    let t = s.trim().to_ascii_lowercase();
    match t.as_str() {
        "inf" | "+inf" | "infinity" => Some(f64::INFINITY),
        "-inf" | "-infinity" => Some(f64::NEG_INFINITY),
        "nan" | "+nan" | "-nan" => Some(f64::NAN),
        _ => t.replace('_', "").parse().ok(),
    }
}

/// Non-mutating methods of builtin types.
fn method_ref(recv: &Value, name: &str, args: &[Value], kwargs: &[(String, Value)]) -> R<Value> {
    match recv {
        Value::Str(s) => str_method(s, name, args, kwargs),
        Value::List(items) | Value::Tuple(items) => match name {
            "index" => {
                let x = arg(args, 0, "index")?;
                items
                    .iter()
                    .position(|v| v.py_eq(x))
                    .map(|i| Value::Int(i as i64))
                    .ok_or_else(|| value_err(format!("{} is not in list", x.repr())))
            }
            "count" => {
                let x = arg(args, 0, "count")?;
                Ok(Value::Int(items.iter().filter(|v| v.py_eq(x)).count() as i64))
            }
            "copy" if matches!(recv, Value::List(_)) => Ok(recv.clone()),
            _ => Err(no_attr(recv, name)),
        },
        Value::Dict(d) => match name {
            "get" => {
                let k = arg(args, 0, "get")?;
                check_hashable(k)?;
                Ok(d.get(k)
                    .cloned()
                    .unwrap_or_else(|| args.get(1).cloned().unwrap_or(Value::None)))
            }
            "keys" => Ok(Value::List(d.entries.iter().map(|(k, _)| k.clone()).collect())),
            "values" => Ok(Value::List(d.entries.iter().map(|(_, v)| v.clone()).collect())),
            "items" => Ok(Value::List(
                d.entries
                    .iter()
                    .map(|(k, v)| Value::Tuple(vec![k.clone(), v.clone()]))
                    .collect(),
            )),
            "copy" => Ok(recv.clone()),
            _ => Err(no_attr(recv, name)),
        },
        _ => Err(no_attr(recv, name)),
    }
}

fn no_attr(recv: &Value, name: &str) -> Signal {
    exc(
        "AttributeError",
        format!("'{}' object has no attribute '{name}'", recv.type_name()),
    )
}

fn strip_set<'s>(s: &'s str, chars: Option<&Value>, left: bool, right: bool) -> R<&'s str> {
    let set: Option<Vec<char>> = match chars {
        None | Some(Value::None) => None,
        Some(Value::Str(c)) => Some(c.chars().collect()),
        Some(other) => {
            return Err(type_err(format!(
                "strip arg must be None or str, not {}",
                other.type_name()
            )))
        }
    };
    let pred = |c: char| match &set {
        Some(set) => set.contains(&c),
        None => c.is_whitespace(),
    };
    let mut out = s;
    if left {
        out = out.trim_start_matches(pred);
    }
    if right {
        out = out.trim_end_matches(pred);
    }
    Ok(out)
}

fn prefix_match(s: &str, pat: &Value, start: bool) -> R<bool> {
    let test = |p: &str| if start { s.starts_with(p) } else { s.ends_with(p) };
    match pat {
        Value::Str(p) => Ok(test(p)),
        Value::Tuple(items) => {
            for it in items {
                if test(expect_str(it, "tuple item")?) {
                    return Ok(true);
                }
            }
            Ok(false)
        }
        other => Err(type_err(format!(
            "{}with first arg must be str or a tuple of str, not {}",
            if start { "starts" } else { "ends" },
            other.type_name()
        ))),
    }
}

fn str_method(s: &str, name: &str, args: &[Value], kwargs: &[(String, Value)]) -> R<Value> {
    let sv = |x: &str| Value::str(x);
    Ok(match name {
        "upper" => sv(&s.to_uppercase()),
        "lower" => sv(&s.to_lowercase()),
        "strip" => sv(strip_set(s, args.first(), true, true)?),
        "lstrip" => sv(strip_set(s, args.first(), true, false)?),
        "rstrip" => sv(strip_set(s, args.first(), false, true)?),
        "split" => {
            let sep = args.first().or_else(|| kwarg(kwargs, "sep"));
            let maxsplit = args
                .get(1)
                .or_else(|| kwarg(kwargs, "maxsplit"))
                .and_then(as_index)
                .unwrap_or(-1);
            let parts: Vec<String> = match sep {
                None | Some(Value::None) => {
                    if maxsplit < 0 {
                        s.split_whitespace().map(str::to_string).collect()
                    } else {
                        let mut out = Vec::new();
                        let mut rest = s.trim_start();
                        while !rest.is_empty() && (out.len() as i64) < maxsplit {
                            let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
                            out.push(rest[..end].to_string());
                            rest = rest[end..].trim_start();
                        }
                        if !rest.is_empty() {
                            out.push(rest.to_string());
                        }
                        out
                    }
                }
                Some(v) => {
                    let sep = expect_str(v, "separator")?;
                    if sep.is_empty() {
                        return Err(value_err("empty separator"));
                    }
                    if maxsplit < 0 {
                        s.split(sep).map(str::to_string).collect()
                    } else {
                        s.splitn(maxsplit as usize + 1, sep).map(str::to_string).collect()
                    }
                }
            };
            Value::List(parts.into_iter().map(Value::str).collect())
        }
        "join" => {
            let items = materialize(arg(args, 0, "join")?)?;
            let mut out = String::new();
            for (i, it) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(s);
                }
                match it {
                    Value::Str(x) => out.push_str(x),
                    other => {
                        return Err(type_err(format!(
                            "sequence item {i}: expected str instance, {} found",
                            other.type_name()
                        )))
                    }
                }
            }
            Value::str(out)
        }
        "replace" => {
            let a = expect_str(arg(args, 0, "replace")?, "replace() argument 1")?;
            let b = expect_str(arg(args, 1, "replace")?, "replace() argument 2")?;
            match args.get(2).and_then(as_index) {
                Some(n) if n >= 0 => sv(&s.replacen(a, b, n as usize)),
                _ => sv(&s.replace(a, b)),
            }
        }
        "startswith" => Value::Bool(prefix_match(s, arg(args, 0, "startswith")?, true)?),
        "endswith" => Value::Bool(prefix_match(s, arg(args, 0, "endswith")?, false)?),
        "find" | "index" => {
            let sub = expect_str(arg(args, 0, name)?, "substring")?;
            match s.find(sub) {
                Some(byte) => Value::Int(s[..byte].chars().count() as i64),
                None if name == "find" => Value::Int(-1),
                None => return Err(value_err("substring not found")),
            }
        }
        "count" => {
            let sub = expect_str(arg(args, 0, "count")?, "substring")?;
            if sub.is_empty() {
                Value::Int(s.chars().count() as i64 + 1)
            } else {
                Value::Int(s.matches(sub).count() as i64)
            }
        }
        "format" => sv(&str_format(s, args, kwargs)?),
        "isdigit" => Value::Bool(!s.is_empty() && s.chars().all(|c| c.is_ascii_digit())),
        "isalpha" => Value::Bool(!s.is_empty() && s.chars().all(char::is_alphabetic)),
        "isalnum" => Value::Bool(!s.is_empty() && s.chars().all(char::is_alphanumeric)),
        "isspace" => Value::Bool(!s.is_empty() && s.chars().all(char::is_whitespace)),
        "title" => {
            let mut out = String::new();
            let mut prev_alpha = false;
            for c in s.chars() {
                if c.is_alphabetic() {
                    if prev_alpha {
                        out.extend(c.to_lowercase());
                    } else {
                        out.extend(c.to_uppercase());
                    }
                    prev_alpha = true;
                } else {
                    out.push(c);
                    prev_alpha = false;
                }
            }
            sv(&out)
        }
        "capitalize" => {
            let mut cs = s.chars();
            match cs.next() {
                Some(f) => sv(&format!("{}{}", f.to_uppercase(), cs.as_str().to_lowercase())),
                None => sv(""),
            }
        }
        "splitlines" => Value::List(s.lines().map(Value::str).collect()),
        "zfill" => {
            let w = as_index(arg(args, 0, "zfill")?).unwrap_or(0).max(0) as usize;
            let n = s.chars().count();
            if n >= w {
                sv(s)
            } else {
                let (sign, digits) = match s.strip_prefix(['-', '+']) {
                    Some(rest) => (&s[..1], rest),
                    None => ("", s),
                };
                sv(&format!("{sign}{}{digits}", "0".repeat(w - n)))
            }
        }
        "ljust" | "rjust" => {
            let w = as_index(arg(args, 0, name)?).unwrap_or(0).max(0) as usize;
            let fill = match args.get(1) {
                Some(Value::Str(f)) if f.chars().count() == 1 => f.chars().next().unwrap(),
                Some(_) => return Err(type_err("The fill character must be exactly one character long")),
                None => ' ',
            };
            let n = s.chars().count();
            let pad: String = std::iter::repeat_n(fill, w.saturating_sub(n)).collect();
            if name == "ljust" {
                sv(&format!("{s}{pad}"))
            } else {
                sv(&format!("{pad}{s}"))
            }
        }
        _ => return Err(no_attr(&Value::str(s), name)),
    })
}

struct Interp<'a, 'c> {
    globals: &'a mut HashMap<String, Value>,
    frames: Vec<Frame>,
    module_line: usize,
    stdout: String,
    ctx: &'a ExecContext<'c>,
    ops: u64,
    budget: u64,
    start: Instant,
    handling: Vec<PyErr>,
}

impl<'a, 'c> Interp<'a, 'c> {
    fn new(globals: &'a mut HashMap<String, Value>, ctx: &'a ExecContext<'c>) -> Self {
        let budget = match ctx.clock {
            Clock::Virtual { ops_per_ms } => ctx.timeout_ms.saturating_mul(ops_per_ms.max(1)),
            Clock::Wall => u64::MAX,
        };
        Self {
            globals,
            frames: Vec::new(),
            module_line: 0,
            stdout: String::new(),
            ctx,
            ops: 0,
            budget,
            start: Instant::now(),
            handling: Vec::new(),
        }
    }

    fn elapsed_ms(&self) -> u64 {
        match self.ctx.clock {
            Clock::Virtual { ops_per_ms } => self.ops.min(self.budget) / ops_per_ms.max(1),
            Clock::Wall => self.start.elapsed().as_millis() as u64,
        }
    }

    fn tick(&mut self) -> R<()> {
        self.ops += 1;
        match self.ctx.clock {
            Clock::Virtual { .. } if self.ops > self.budget => Err(Signal::Timeout),
            Clock::Wall
                if self.ops.is_multiple_of(256)
                    && self.start.elapsed() >= Duration::from_millis(self.ctx.timeout_ms) =>
            {
                Err(Signal::Timeout)
            }
            _ => Ok(()),
        }
    }

    fn sleep(&mut self, secs: f64) -> R<()> {
        if secs.is_nan() || secs < 0.0 {
            return Err(value_err("sleep length must be non-negative"));
        }
        match self.ctx.clock {
            Clock::Virtual { ops_per_ms } => {
                let cost = (secs * 1000.0 * ops_per_ms as f64).min(u64::MAX as f64) as u64;
                self.ops = self.ops.saturating_add(cost);
                if self.ops > self.budget {
                    self.ops = self.budget;
                    return Err(Signal::Timeout);
                }
                Ok(())
            }
            Clock::Wall => {
                let limit = Duration::from_millis(self.ctx.timeout_ms);
                let remaining = limit.saturating_sub(self.start.elapsed());
                let want = Duration::from_secs_f64(secs.min(1e9));
                if want >= remaining {
                    std::thread::sleep(remaining);
                    return Err(Signal::Timeout);
                }
                std::thread::sleep(want);
                Ok(())
            }
        }
    }

    fn set_line(&mut self, line: usize) {
        match self.frames.last_mut() {
            Some(f) => f.line = line,
            None => self.module_line = line,
        }
    }

    fn snapshot(&self) -> Vec<(String, usize)> {
        let mut out = vec![("<module>".to_string(), self.module_line)];
        out.extend(self.frames.iter().map(|f| (f.name.clone(), f.line)));
        out
    }

    fn with_trace(&self, s: Signal) -> Signal {
        match s {
            Signal::Exc(mut e) if e.trace.is_none() => {
                e.trace = Some(self.snapshot());
                Signal::Exc(e)
            }
            other => other,
        }
    }

    // ----- names and places -----

    fn name_is_global(&self, name: &str) -> bool {
        match self.frames.last() {
            None => true,
            Some(f) => f.global_names.contains(name) || !f.locals.contains_key(name),
        }
    }

    fn lookup(&self, name: &str) -> R<Value> {
        if let Some(f) = self.frames.last() {
            if !f.global_names.contains(name) {
                if let Some(v) = f.locals.get(name) {
                    return Ok(v.clone());
                }
            }
        }
        if let Some(v) = self.globals.get(name) {
            return Ok(v.clone());
        }
        builtin_value(name)
            .ok_or_else(|| exc("NameError", format!("name '{name}' is not defined")))
    }

    fn assign_name(&mut self, name: &str, v: Value) {
        match self.frames.last_mut() {
            Some(f) if !f.global_names.contains(name) => {
                f.locals.insert(name.to_string(), v);
            }
            _ => {
                self.globals.insert(name.to_string(), v);
            }
        }
    }

    fn try_place(&mut self, e: &Expr) -> R<Option<Place>> {
        match e {
            Expr::Name(n) => {
                let global = self.name_is_global(n);
                let exists = if global {
                    self.globals.contains_key(n)
                } else {
                    true
                };
                Ok(exists.then(|| Place {
                    root: n.clone(),
                    global,
                    keys: Vec::new(),
                }))
            }
            Expr::Index(base, key) => match self.try_place(base)? {
                Some(mut p) => {
                    p.keys.push(self.eval(key)?);
                    Ok(Some(p))
                }
                None => Ok(None),
            },
            _ => Ok(None),
        }
    }

    fn root(&self, p: &Place) -> R<&Value> {
        let v = if p.global {
            self.globals.get(&p.root)
        } else {
            self.frames.last().and_then(|f| f.locals.get(&p.root))
        };
        v.ok_or_else(|| exc("NameError", format!("name '{}' is not defined", p.root)))
    }

    fn place_ref(&self, p: &Place) -> R<&Value> {
        let mut cur = self.root(p)?;
        for k in &p.keys {
            cur = item_ref(cur, k)?;
        }
        Ok(cur)
    }

    fn place_mut(&mut self, p: &Place) -> R<&mut Value> {
        let root = if p.global {
            self.globals.get_mut(&p.root)
        } else {
            self.frames.last_mut().and_then(|f| f.locals.get_mut(&p.root))
        };
        let mut cur =
            root.ok_or_else(|| exc("NameError", format!("name '{}' is not defined", p.root)))?;
        for k in &p.keys {
            cur = item_mut(cur, k)?;
        }
        Ok(cur)
    }

    fn assign(&mut self, t: &Target, v: Value) -> R<()> {
        match t {
            Target::Name(n) => {
                self.assign_name(n, v);
                Ok(())
            }
            Target::Index(base, key) => {
                let place = self.try_place(base)?;
                let k = self.eval(key)?;
                match place {
                    Some(p) => set_item(self.place_mut(&p)?, k, v),
                    None => {
                        let mut tmp = self.eval(base)?;
                        set_item(&mut tmp, k, v)
                    }
                }
            }
            Target::Tuple(targets) => {
                let items = materialize(&v)?;
                if items.len() < targets.len() {
                    return Err(value_err(format!(
                        "not enough values to unpack (expected {}, got {})",
                        targets.len(),
                        items.len()
                    )));
                }
                if items.len() > targets.len() {
                    return Err(value_err(format!(
                        "too many values to unpack (expected {})",
                        targets.len()
                    )));
                }
                for (t, item) in targets.iter().zip(items) {
                    self.assign(t, item)?;
                }
                Ok(())
            }
        }
    }

    // ----- statements -----

    fn exec_block(&mut self, body: &[Stmt]) -> R<Flow> {
        for s in body {
            match self.exec_stmt(s)? {
                Flow::Normal => {}
                other => return Ok(other),
            }
        }
        Ok(Flow::Normal)
    }

    fn exec_stmt(&mut self, s: &Stmt) -> R<Flow> {
        self.set_line(s.line);
        self.tick()?;
        self.exec_kind(&s.kind).map_err(|e| self.with_trace(e))
    }

    fn exec_kind(&mut self, kind: &StmtKind) -> R<Flow> {
        match kind {
            StmtKind::Expr(e) => {
                self.eval(e)?;
            }
            StmtKind::Assign(targets, value) => {
                let v = self.eval(value)?;
                for t in targets {
                    self.assign(t, v.clone())?;
                }
            }
            StmtKind::AugAssign(target, op, value) => match target {
                Target::Name(n) => {
                    let cur = self.lookup(n)?;
                    let rhs = self.eval(value)?;
                    let new = binop(&cur, *op, &rhs)?;
                    self.assign_name(n, new);
                }
                Target::Index(base, key) => {
                    let place = self.try_place(base)?;
                    let k = self.eval(key)?;
                    let rhs = self.eval(value)?;
                    match place {
                        Some(p) => {
                            let slot = self.place_mut(&p)?;
                            let cur = get_item(slot, &k)?;
                            let new = binop(&cur, *op, &rhs)?;
                            set_item(slot, k, new)?;
                        }
                        None => {
                            let mut tmp = self.eval(base)?;
                            let cur = get_item(&tmp, &k)?;
                            set_item(&mut tmp, k, binop(&cur, *op, &rhs)?)?;
                        }
                    }
                }
                Target::Tuple(_) => {
                    return Err(exc(
                        "SyntaxError",
                        "illegal expression for augmented assignment",
                    ))
                }
            },
            StmtKind::If(branches, orelse) => {
                for (cond, body) in branches {
                    if self.eval(cond)?.truthy() {
                        return self.exec_block(body);
                    }
                }
                if let Some(body) = orelse {
                    return self.exec_block(body);
                }
            }
            StmtKind::While(cond, body) => loop {
                self.tick()?;
                if !self.eval(cond)?.truthy() {
                    break;
                }
                match self.exec_block(body)? {
                    Flow::Break => break,
                    Flow::Return(v) => return Ok(Flow::Return(v)),
                    Flow::Normal | Flow::Continue => {}
                }
            },
            StmtKind::For(target, iter, body) => {
                let it = iterate(self.eval(iter)?)?;
                for item in it {
                    self.tick()?;
                    self.assign(target, item)?;
                    match self.exec_block(body)? {
                        Flow::Break => break,
                        Flow::Return(v) => return Ok(Flow::Return(v)),
                        Flow::Normal | Flow::Continue => {}
                    }
                }
            }
            StmtKind::Break => return Ok(Flow::Break),
            StmtKind::Continue => return Ok(Flow::Continue),
            StmtKind::Pass => {}
            StmtKind::Try {
                body,
                handlers,
                orelse,
                finally,
            } => return self.exec_try(body, handlers, orelse.as_deref(), finally.as_deref()),
            StmtKind::Raise(None) => {
                return Err(match self.handling.last() {
                    Some(e) => Signal::Exc(e.clone()),
                    None => exc("RuntimeError", "No active exception to reraise"),
                })
            }
            StmtKind::Raise(Some(e)) => {
                let v = self.eval(e)?;
                return Err(match v {
                    Value::Exc(x) => exc(&x.kind, x.msg),
                    Value::ExcClass(k) => exc(&k, ""),
                    _ => type_err("exceptions must derive from BaseException"),
                });
            }
            StmtKind::Import(names) => {
                for (module, alias) in names {
                    let v = self.import(module)?;
                    self.assign_name(alias, v);
                }
            }
            StmtKind::Def(def) => {
                let f = self.make_function(def.clone());
                self.assign_name(&def.name, f);
            }
            StmtKind::Return(e) => {
                if self.frames.is_empty() {
                    return Err(exc("SyntaxError", "'return' outside function"));
                }
                let v = match e {
                    Some(e) => self.eval(e)?,
                    None => Value::None,
                };
                return Ok(Flow::Return(v));
            }
            StmtKind::Global(names) => {
                if let Some(f) = self.frames.last_mut() {
                    f.global_names.extend(names.iter().cloned());
                }
            }
            StmtKind::Assert(cond, msg) => {
                if !self.eval(cond)?.truthy() {
                    let m = match msg {
                        Some(m) => self.eval(m)?.to_str(),
                        None => String::new(),
                    };
                    return Err(exc("AssertionError", m));
                }
            }
        }
        Ok(Flow::Normal)
    }

    fn exec_try(
        &mut self,
        body: &[Stmt],
        handlers: &[Handler],
        orelse: Option<&[Stmt]>,
        finally: Option<&[Stmt]>,
    ) -> R<Flow> {
        let result = match self.exec_block(body) {
            Err(Signal::Exc(e)) => {
                let handler = handlers.iter().find(|h| {
                    h.types.is_empty()
                        || h.types.iter().any(|t| {
                            is_subclass(&e.kind, t.rsplit('.').next().unwrap_or(t))
                        })
                });
                match handler {
                    Some(h) => {
                        if let Some(name) = &h.name {
                            self.assign_name(name, e.to_value());
                        }
                        self.handling.push(e);
                        let r = self.exec_block(&h.body);
                        self.handling.pop();
                        r
                    }
                    None => Err(Signal::Exc(e)),
                }
            }
            Ok(Flow::Normal) => match orelse {
                Some(b) => self.exec_block(b),
                None => Ok(Flow::Normal),
            },
            other => other,
        };
        if matches!(result, Err(Signal::Timeout)) {
            return result;
        }
        if let Some(fin) = finally {
            match self.exec_block(fin)? {
                Flow::Normal => {}
                other => return Ok(other),
            }
        }
        result
    }

    fn import(&self, module: &str) -> R<Value> {
        if MODULES.contains(&module) {
            let m = MODULES.iter().find(|m| **m == module).unwrap();
            return Ok(Value::Module(m));
        }
        if let Some((m, attr)) = module.split_once('.') {
            if MODULES.contains(&m) {
                return module_attr(m, attr).ok_or_else(|| {
                    exc(
                        "ImportError",
                        format!("cannot import name '{attr}' from '{m}'"),
                    )
                });
            }
        }
        Err(exc(
            "ModuleNotFoundError",
            format!("No module named '{}'", module.split('.').next().unwrap_or(module)),
        ))
    }

    fn make_function(&self, def: Arc<FuncDef>) -> Value {
        let captured = match self.frames.last() {
            Some(f) => {
                let mut c: Vec<(String, Value)> = f
                    .locals
                    .iter()
                    .filter(|(_, v)| !matches!(v, Value::Func(_)))
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect();
                c.sort_by(|a, b| a.0.cmp(&b.0));
                c
            }
            None => Vec::new(),
        };
        Value::Func(Arc::new(Closure { def, captured }))
    }

    // ----- expressions -----

    fn eval(&mut self, e: &Expr) -> R<Value> {
        match e {
            Expr::Const(v) => Ok(v.clone()),
            Expr::Name(n) => self.lookup(n),
            Expr::List(items) => Ok(Value::List(self.eval_all(items)?)),
            Expr::Tuple(items) => Ok(Value::Tuple(self.eval_all(items)?)),
            Expr::Dict(pairs) => {
                let mut d = Dict::default();
                for (k, v) in pairs {
                    let k = self.eval(k)?;
                    check_hashable(&k)?;
                    let v = self.eval(v)?;
                    d.insert(k, v);
                }
                Ok(Value::Dict(d))
            }
            Expr::FStr(parts) => {
                let mut out = String::new();
                for p in parts {
                    match p {
                        FPart::Lit(s) => out.push_str(s),
                        FPart::Expr(e, spec) => {
                            let v = self.eval(e)?;
                            out.push_str(&self.fstring_field(v, spec.as_deref())?);
                        }
                    }
                }
                Ok(Value::str(out))
            }
            Expr::Bin(a, op, b) => {
                let x = self.eval(a)?;
                let y = self.eval(b)?;
                binop(&x, *op, &y)
            }
            Expr::Unary(op, a) => {
                let v = self.eval(a)?;
                match (op, &v) {
                    (UnOp::Not, _) => Ok(Value::Bool(!v.truthy())),
                    (UnOp::Neg, Value::Float(f)) => Ok(Value::Float(-f)),
                    (UnOp::Pos, Value::Float(_)) => Ok(v),
                    (UnOp::Neg, _) if as_index(&v).is_some() => {
                        checked(as_index(&v).unwrap().checked_neg())
                    }
                    (UnOp::Pos, _) if as_index(&v).is_some() => Ok(Value::Int(as_index(&v).unwrap())),
                    _ => Err(type_err(format!(
                        "bad operand type for unary {}: '{}'",
                        if *op == UnOp::Neg { "-" } else { "+" },
                        v.type_name()
                    ))),
                }
            }
            Expr::And(a, b) => {
                let x = self.eval(a)?;
                if !x.truthy() {
                    return Ok(x);
                }
                self.eval(b)
            }
            Expr::Or(a, b) => {
                let x = self.eval(a)?;
                if x.truthy() {
                    return Ok(x);
                }
                self.eval(b)
            }
            Expr::Compare(first, rest) => {
                let mut left = self.eval(first)?;
                for (op, right) in rest {
                    let r = self.eval(right)?;
                    if !compare(&left, *op, &r)? {
                        return Ok(Value::Bool(false));
                    }
                    left = r;
                }
                Ok(Value::Bool(true))
            }
            Expr::Call {
                func,
                args,
                kwargs,
                star_kwargs,
            } => self.eval_call(func, args, kwargs, star_kwargs.as_deref()),
            Expr::Attr(obj, name) => {
                let v = self.eval(obj)?;
                self.get_attr(v, name)
            }
            Expr::Index(base, key) => {
                if let Some(p) = self.try_place(base)? {
                    let k = self.eval(key)?;
                    let c = self.place_ref(&p)?;
                    return get_item(c, &k);
                }
                let c = self.eval(base)?;
                let k = self.eval(key)?;
                get_item(&c, &k)
            }
            Expr::Slice(base, start, end) => {
                let c = self.eval(base)?;
                let bound = |s: &mut Self, e: &Option<Box<Expr>>| -> R<Option<i64>> {
                    match e {
                        None => Ok(None),
                        Some(e) => match s.eval(e)? {
                            Value::None => Ok(None),
                            v => as_index(&v).map(Some).ok_or_else(|| {
                                type_err("slice indices must be integers or None")
                            }),
                        },
                    }
                };
                let s0 = bound(self, start)?;
                let s1 = bound(self, end)?;
                match c {
                    Value::List(items) => {
                        let (a, b) = slice_bounds(s0, s1, items.len());
                        Ok(Value::List(items[a..b].to_vec()))
                    }
                    Value::Tuple(items) => {
                        let (a, b) = slice_bounds(s0, s1, items.len());
                        Ok(Value::Tuple(items[a..b].to_vec()))
                    }
                    Value::Str(s) => {
                        let chars: Vec<char> = s.chars().collect();
                        let (a, b) = slice_bounds(s0, s1, chars.len());
                        Ok(Value::str(chars[a..b].iter().collect::<String>()))
                    }
                    other => Err(not_subscriptable(&other)),
                }
            }
            Expr::IfElse(cond, then, other) => {
                if self.eval(cond)?.truthy() {
                    self.eval(then)
                } else {
                    self.eval(other)
                }
            }
            Expr::ListComp {
                elt,
                target,
                iter,
                conds,
            } => {
                let it = iterate(self.eval(iter)?)?;
                let mut out = Vec::new();
                'items: for item in it {
                    self.tick()?;
                    self.assign(target, item)?;
                    for c in conds {
                        if !self.eval(c)?.truthy() {
                            continue 'items;
                        }
                    }
                    out.push(self.eval(elt)?);
                    if out.len() > MAX_ITEMS {
                        return Err(exc("MemoryError", "list too large"));
                    }
                }
                Ok(Value::List(out))
            }
            Expr::Lambda(def) => Ok(self.make_function(def.clone())),
        }
    }

    fn eval_all(&mut self, items: &[Expr]) -> R<Vec<Value>> {
        items.iter().map(|e| self.eval(e)).collect()
    }

    fn fstring_field(&mut self, v: Value, spec: Option<&str>) -> R<String> {
        let Some(spec) = spec else {
            return Ok(v.to_str());
        };
        let (v, rest) = if let Some(r) = spec.strip_prefix("!r") {
            (Value::str(v.repr()), r)
        } else if let Some(r) = spec.strip_prefix("!s") {
            (Value::str(v.to_str()), r)
        } else {
            (v, spec)
        };
        let fmt = rest.strip_prefix(':').unwrap_or(rest);
        Ok(format_value(&v, fmt)?)
    }

    fn get_attr(&self, v: Value, name: &str) -> R<Value> {
        match &v {
            Value::Module(m) => module_attr(m, name).ok_or_else(|| {
                exc(
                    "AttributeError",
                    format!("module '{m}' has no attribute '{name}'"),
                )
            }),
            Value::ExcClass(k) if name == "__name__" => Ok(Value::str(k.as_str())),
            Value::Builtin(b) if name == "__name__" => Ok(Value::str(*b)),
            Value::Exc(e) if name == "args" => Ok(Value::Tuple(vec![Value::str(e.msg.as_str())])),
            Value::Str(_) if STR_METHODS.contains(&name) => Ok(Value::Bound(Box::new(v), name.into())),
            Value::List(_) if LIST_METHODS.contains(&name) => Ok(Value::Bound(Box::new(v), name.into())),
            Value::Dict(_) if DICT_METHODS.contains(&name) => Ok(Value::Bound(Box::new(v), name.into())),
            Value::Tuple(_) if TUPLE_METHODS.contains(&name) => Ok(Value::Bound(Box::new(v), name.into())),
            _ => Err(no_attr(&v, name)),
        }
    }

    fn eval_args(
        &mut self,
        args: &[Expr],
        kwargs: &[(String, Expr)],
        star: Option<&Expr>,
    ) -> R<CallArgs> {
        let a = self.eval_all(args)?;
        let mut kw = Vec::with_capacity(kwargs.len());
        for (k, e) in kwargs {
            kw.push((k.clone(), self.eval(e)?));
        }
        if let Some(s) = star {
            match self.eval(s)? {
                Value::Dict(d) => {
                    for (k, v) in d.entries {
                        match k {
                            Value::Str(k) => kw.push((k.to_string(), v)),
                            _ => return Err(type_err("keywords must be strings")),
                        }
                    }
                }
                other => {
                    return Err(type_err(format!(
                        "argument after ** must be a mapping, not {}",
                        other.type_name()
                    )))
                }
            }
        }
        Ok((a, kw))
    }

    fn eval_call(
        &mut self,
        func: &Expr,
        args: &[Expr],
        kwargs: &[(String, Expr)],
        star: Option<&Expr>,
    ) -> R<Value> {
        if let Expr::Attr(obj, method) = func {
            if let Some(p) = self.try_place(obj)? {
                if !matches!(self.place_ref(&p)?, Value::Module(_)) {
                    let (a, kw) = self.eval_args(args, kwargs, star)?;
                    let recv = self.place_ref(&p)?;
                    let mutating = MUTATING.contains(&method.as_str())
                        && matches!(recv, Value::List(_) | Value::Dict(_));
                    if !mutating {
                        if let Value::Exc(_) | Value::ExcClass(_) | Value::Builtin(_) = recv {
                            let v = recv.clone();
                            let f = self.get_attr(v, method)?;
                            return self.call_value(f, a, kw);
                        }
                        return method_ref(recv, method, &a, &kw);
                    }
                    let mut taken = std::mem::replace(self.place_mut(&p)?, Value::None);
                    let r = self.call_method_mut(&mut taken, method, a, kw);
                    if let Ok(slot) = self.place_mut(&p) {
                        *slot = taken;
                    }
                    return r;
                }
            }
        }
        let f = self.eval(func)?;
        let (a, kw) = self.eval_args(args, kwargs, star)?;
        self.call_value(f, a, kw)
    }

    fn call_value(&mut self, f: Value, args: Vec<Value>, kwargs: Vec<(String, Value)>) -> R<Value> {
        self.tick()?;
        match f {
            Value::Builtin(name) => self.call_builtin(name, args, kwargs),
            Value::Func(c) => self.call_function(&c, args, kwargs),
            Value::Bound(recv, m) => {
                if MUTATING.contains(&m.as_str()) && matches!(*recv, Value::List(_) | Value::Dict(_)) {
                    let mut tmp = *recv;
                    self.call_method_mut(&mut tmp, &m, args, kwargs)
                } else {
                    method_ref(&recv, &m, &args, &kwargs)
                }
            }
            Value::ExcClass(kind) => {
                let msg = match args.first() {
                    None => String::new(),
                    Some(v) if kind == "KeyError" => v.repr(),
                    Some(v) => v.to_str(),
                };
                Ok(Value::Exc(ExcValue { kind, msg }))
            }
            other => Err(type_err(format!(
                "'{}' object is not callable",
                other.type_name()
            ))),
        }
    }

    fn call_function(
        &mut self,
        c: &Closure,
        args: Vec<Value>,
        kwargs: Vec<(String, Value)>,
    ) -> R<Value> {
        if self.frames.len() >= MAX_CALL_DEPTH {
            return Err(exc("RecursionError", "maximum recursion depth exceeded"));
        }
        let def = &c.def;
        let mut locals: HashMap<String, Value> = c.captured.iter().cloned().collect();
        if args.len() > def.params.len() {
            return Err(type_err(format!(
                "{}() takes {} positional arguments but {} were given",
                def.name,
                def.params.len(),
                args.len()
            )));
        }
        let mut bound: Vec<Option<Value>> = vec![None; def.params.len()];
        for (i, a) in args.into_iter().enumerate() {
            bound[i] = Some(a);
        }
        for (k, v) in kwargs {
            let Some(i) = def.params.iter().position(|(p, _)| *p == k) else {
                return Err(type_err(format!(
                    "{}() got an unexpected keyword argument '{k}'",
                    def.name
                )));
            };
            if bound[i].is_some() {
                return Err(type_err(format!(
                    "{}() got multiple values for argument '{k}'",
                    def.name
                )));
            }
            bound[i] = Some(v);
        }
        for (i, (pname, default)) in def.params.iter().enumerate() {
            let v = match bound[i].take() {
                Some(v) => v,
                None => match default {
                    Some(d) => self.eval(d)?,
                    None => {
                        return Err(type_err(format!(
                            "{}() missing 1 required positional argument: '{pname}'",
                            def.name
                        )))
                    }
                },
            };
            locals.insert(pname.clone(), v);
        }
        self.frames.push(Frame {
            name: def.name.clone(),
            line: 0,
            locals,
            global_names: HashSet::new(),
        });
        let r = self.exec_block(&def.body);
        self.frames.pop();
        match r? {
            Flow::Return(v) => Ok(v),
            _ => Ok(Value::None),
        }
    }

    fn call_method_mut(
        &mut self,
        recv: &mut Value,
        name: &str,
        args: Vec<Value>,
        kwargs: Vec<(String, Value)>,
    ) -> R<Value> {
        match recv {
            Value::List(items) => match name {
                "append" => {
                    items.push(arg(&args, 0, "append")?.clone());
                    Ok(Value::None)
                }
                "extend" => {
                    let more = materialize(arg(&args, 0, "extend")?)?;
                    items.extend(more);
                    Ok(Value::None)
                }
                "insert" => {
                    let i = as_index(arg(&args, 0, "insert")?)
                        .ok_or_else(|| type_err("insert index must be an integer"))?;
                    let len = items.len() as i64;
                    let j = if i < 0 { (i + len).max(0) } else { i.min(len) } as usize;
                    items.insert(j, arg(&args, 1, "insert")?.clone());
                    Ok(Value::None)
                }
                "pop" => {
                    if items.is_empty() {
                        return Err(exc("IndexError", "pop from empty list"));
                    }
                    let i = match args.first() {
                        Some(v) => as_index(v).ok_or_else(|| type_err("pop index must be an integer"))?,
                        None => -1,
                    };
                    let j = normalize_index(i, items.len())
                        .ok_or_else(|| exc("IndexError", "pop index out of range"))?;
                    Ok(items.remove(j))
                }
                "remove" => {
                    let x = arg(&args, 0, "remove")?;
                    let i = items
                        .iter()
                        .position(|v| v.py_eq(x))
                        .ok_or_else(|| value_err("list.remove(x): x not in list"))?;
                    items.remove(i);
                    Ok(Value::None)
                }
                "clear" => {
                    items.clear();
                    Ok(Value::None)
                }
                "reverse" => {
                    items.reverse();
                    Ok(Value::None)
                }
                "sort" => {
                    let key = kwarg(&kwargs, "key").cloned();
                    let reverse = kwarg(&kwargs, "reverse").is_some_and(Value::truthy);
                    let taken = std::mem::take(items);
                    let sorted = self.sort_values(taken, key, reverse)?;
                    if let Value::List(items) = recv {
                        *items = sorted;
                    }
                    Ok(Value::None)
                }
                _ => method_ref(recv, name, &args, &kwargs),
            },
            Value::Dict(d) => match name {
                "update" => {
                    if let Some(other) = args.first() {
                        match other {
                            Value::Dict(o) => {
                                for (k, v) in &o.entries {
                                    d.insert(k.clone(), v.clone());
                                }
                            }
                            other => {
                                for pair in materialize(other)? {
                                    let kv = materialize(&pair)?;
                                    if kv.len() != 2 {
                                        return Err(value_err(
                                            "dictionary update sequence element has wrong length",
                                        ));
                                    }
                                    check_hashable(&kv[0])?;
                                    d.insert(kv[0].clone(), kv[1].clone());
                                }
                            }
                        }
                    }
                    for (k, v) in kwargs {
                        d.insert(Value::str(k), v);
                    }
                    Ok(Value::None)
                }
                "pop" => {
                    let k = arg(&args, 0, "pop")?;
                    check_hashable(k)?;
                    match d.remove(k) {
                        Some(v) => Ok(v),
                        None => args.get(1).cloned().ok_or_else(|| exc("KeyError", k.repr())),
                    }
                }
                "setdefault" => {
                    let k = arg(&args, 0, "setdefault")?.clone();
                    check_hashable(&k)?;
                    if let Some(v) = d.get(&k) {
                        return Ok(v.clone());
                    }
                    let v = args.get(1).cloned().unwrap_or(Value::None);
                    d.insert(k, v.clone());
                    Ok(v)
                }
                "clear" => {
                    d.entries.clear();
                    Ok(Value::None)
                }
                "popitem" => {
                    let (k, v) = d
                        .entries
                        .pop()
                        .ok_or_else(|| exc("KeyError", "'popitem(): dictionary is empty'"))?;
                    Ok(Value::Tuple(vec![k, v]))
                }
                _ => method_ref(recv, name, &args, &kwargs),
            },
            _ => method_ref(recv, name, &args, &kwargs),
        }
    }

    fn sort_values(&mut self, items: Vec<Value>, key: Option<Value>, reverse: bool) -> R<Vec<Value>> {
        let keys: Vec<Value> = match key {
            Some(f) if f != Value::None => {
                let mut ks = Vec::with_capacity(items.len());
                for v in &items {
                    ks.push(self.call_value(f.clone(), vec![v.clone()], Vec::new())?);
                }
                ks
            }
            _ => items.clone(),
        };
        let mut idx: Vec<usize> = (0..items.len()).collect();
        let mut failure = None;
        idx.sort_by(|&a, &b| match keys[a].py_cmp(&keys[b]) {
            Some(o) if reverse => o.reverse(),
            Some(o) => o,
            None => {
                failure.get_or_insert_with(|| {
                    format!(
                        "'<' not supported between instances of '{}' and '{}'",
                        keys[a].type_name(),
                        keys[b].type_name()
                    )
                });
                Ordering::Equal
            }
        });
        if let Some(msg) = failure {
            return Err(type_err(msg));
        }
        let mut slots: Vec<Option<Value>> = items.into_iter().map(Some).collect();
        Ok(idx.into_iter().map(|i| slots[i].take().unwrap()).collect())
    }

    fn extreme(&mut self, name: &str, args: Vec<Value>, kwargs: &[(String, Value)]) -> R<Value> {
        let items = if args.len() == 1 {
            materialize(&args[0])?
        } else {
            args
        };
        if items.is_empty() {
            return match kwarg(kwargs, "default") {
                Some(d) => Ok(d.clone()),
                None => Err(value_err(format!("{name}() arg is an empty sequence"))),
            };
        }
        let key = kwarg(kwargs, "key").cloned().filter(|k| *k != Value::None);
        let mut best = 0;
        let mut best_key = match &key {
            Some(f) => self.call_value(f.clone(), vec![items[0].clone()], Vec::new())?,
            None => items[0].clone(),
        };
        for (i, item) in items.iter().enumerate().skip(1) {
            let k = match &key {
                Some(f) => self.call_value(f.clone(), vec![item.clone()], Vec::new())?,
                None => item.clone(),
            };
            let ord = k.py_cmp(&best_key).ok_or_else(|| {
                type_err(format!(
                    "'<' not supported between instances of '{}' and '{}'",
                    k.type_name(),
                    best_key.type_name()
                ))
            })?;
            let better = if name == "max" {
                ord == Ordering::Greater
            } else {
                ord == Ordering::Less
            };
            if better {
                best = i;
                best_key = k;
            }
        }
        Ok(items.into_iter().nth(best).unwrap())
    }

    fn call_tool(&mut self, args: Vec<Value>, kwargs: Vec<(String, Value)>) -> R<Value> {
        let tool = match args.first() {
            Some(Value::Str(s)) => s.to_string(),
            Some(other) => {
                return Err(type_err(format!(
                    "tool name must be str, not {}",
                    other.type_name()
                )))
            }
            None => match kwarg(&kwargs, "tool_name").or_else(|| kwarg(&kwargs, "name")) {
                Some(Value::Str(s)) => s.to_string(),
                _ => return Err(type_err("call_tool() missing required argument: 'tool_name'")),
            },
        };
        let mut params = Dict::default();
        match args.get(1) {
            None | Some(Value::None) => {}
            Some(Value::Dict(d)) => params = d.clone(),
            Some(other) => {
                return Err(type_err(format!(
                    "call_tool() params must be a dict, not {}",
                    other.type_name()
                )))
            }
        }
        for (k, v) in kwargs {
            if k == "tool_name" || k == "name" && args.is_empty() {
                continue;
            }
            if k == "params" {
                if let Value::Dict(d) = v {
                    for (pk, pv) in d.entries {
                        params.insert(pk, pv);
                    }
                    continue;
                }
            }
            params.insert(Value::str(k), v);
        }
        let json = Value::Dict(params)
            .to_json()
            .map_err(|m| exc("ToolParamError", m))?;
        let Some(host) = self.ctx.tools else {
            return Err(exc("ToolError", "tool access is not available in this session"));
        };
        self.tick()?;
        match host.call_tool(self.ctx.session_id, &tool, json) {
            Ok(body) => Ok(Value::from_json(&body)),
            Err(f) => Err(exc(f.kind.exc_name(), f.message)),
        }
    }

    fn call_builtin(&mut self, name: &str, args: Vec<Value>, kwargs: Vec<(String, Value)>) -> R<Value> {
        let one = |args: &[Value]| -> R<Value> {
            args.first()
                .cloned()
                .ok_or_else(|| type_err(format!("{name}() takes exactly one argument (0 given)")))
        };
        match name {
            "print" => {
                let sep = match kwarg(&kwargs, "sep") {
                    Some(Value::None) | None => " ".to_string(),
                    Some(v) => v.to_str(),
                };
                let end = match kwarg(&kwargs, "end") {
                    Some(Value::None) | None => "\n".to_string(),
                    Some(v) => v.to_str(),
                };
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        self.stdout.push_str(&sep);
                    }
                    self.stdout.push_str(&a.to_str());
                }
                self.stdout.push_str(&end);
                Ok(Value::None)
            }
            "final_answer" => {
                let text: Vec<String> = args.iter().map(Value::to_str).collect();
                self.stdout
                    .push_str(&format!("{FINAL_ANSWER_PREFIX} {}\n", text.join(" ")));
                Ok(Value::None)
            }
            "call_tool" => self.call_tool(args, kwargs),
            "len" => {
                let v = one(&args)?;
                let n = match &v {
                    Value::Str(s) => s.chars().count(),
                    Value::List(x) | Value::Tuple(x) => x.len(),
                    Value::Dict(d) => d.len(),
                    Value::Range(a, b, s) => range_len(*a, *b, *s) as usize,
                    other => {
                        return Err(type_err(format!(
                            "object of type '{}' has no len()",
                            other.type_name()
                        )))
                    }
                };
                Ok(Value::Int(n as i64))
            }
            "str" => Ok(Value::str(args.first().map(Value::to_str).unwrap_or_default())),
            "repr" => Ok(Value::str(one(&args)?.repr())),
            "bool" => Ok(Value::Bool(args.first().is_some_and(Value::truthy))),
            "int" => match args.first() {
                None => Ok(Value::Int(0)),
                Some(Value::Int(i)) => Ok(Value::Int(*i)),
                Some(Value::Bool(b)) => Ok(Value::Int(i64::from(*b))),
                Some(Value::Float(f)) => {
                    if f.is_nan() {
                        Err(value_err("cannot convert float NaN to integer"))
                    } else if f.is_infinite() || f.abs() >= 9.2e18 {
                        Err(exc("OverflowError", "cannot convert float infinity to integer"))
                    } else {
                        Ok(Value::Int(f.trunc() as i64))
                    }
                }
                Some(Value::Str(s)) => parse_int(s).map(Value::Int).ok_or_else(|| {
                    value_err(format!(
                        "invalid literal for int() with base 10: {}",
                        Value::str(s.to_string()).repr()
                    ))
                }),
                Some(other) => Err(type_err(format!(
                    "int() argument must be a string, a bytes-like object or a real number, not '{}'",
                    other.type_name()
                ))),
            },
            "float" => match args.first() {
                None => Ok(Value::Float(0.0)),
                Some(Value::Str(s)) => parse_float(s).map(Value::Float).ok_or_else(|| {
                    value_err(format!(
                        "could not convert string to float: {}",
                        Value::str(s.to_string()).repr()
                    ))
                }),
                Some(v) => as_f64(v).map(Value::Float).ok_or_else(|| {
                    type_err(format!(
                        "float() argument must be a string or a real number, not '{}'",
                        v.type_name()
                    ))
                }),
            },
            "list" => Ok(Value::List(match args.first() {
                Some(v) => materialize(v)?,
                None => Vec::new(),
            })),
            "tuple" => Ok(Value::Tuple(match args.first() {
                Some(v) => materialize(v)?,
                None => Vec::new(),
            })),
            "dict" => {
                let mut d = Value::Dict(Dict::default());
                self.call_method_mut(&mut d, "update", args, kwargs)?;
                Ok(d)
            }
            "range" => {
                let ints: Vec<i64> = args
                    .iter()
                    .map(|a| {
                        as_index(a).ok_or_else(|| {
                            type_err(format!(
                                "'{}' object cannot be interpreted as an integer",
                                a.type_name()
                            ))
                        })
                    })
                    .collect::<R<_>>()?;
                match ints.as_slice() {
                    [b] => Ok(Value::Range(0, *b, 1)),
                    [a, b] => Ok(Value::Range(*a, *b, 1)),
                    [_, _, 0] => Err(value_err("range() arg 3 must not be zero")),
                    [a, b, s] => Ok(Value::Range(*a, *b, *s)),
                    _ => Err(type_err("range expected 1 to 3 arguments")),
                }
            }
            "sum" => {
                let items = materialize(arg(&args, 0, "sum")?)?;
                let mut acc = args
                    .get(1)
                    .or_else(|| kwarg(&kwargs, "start"))
                    .cloned()
                    .unwrap_or(Value::Int(0));
                for v in items {
                    self.tick()?;
                    acc = binop(&acc, BinOp::Add, &v)?;
                }
                Ok(acc)
            }
            "min" | "max" => self.extreme(name, args, &kwargs),
            "sorted" => {
                let items = materialize(arg(&args, 0, "sorted")?)?;
                let key = kwarg(&kwargs, "key").cloned();
                let reverse = kwarg(&kwargs, "reverse").is_some_and(Value::truthy);
                Ok(Value::List(self.sort_values(items, key, reverse)?))
            }
            "reversed" => {
                let mut items = materialize(arg(&args, 0, "reversed")?)?;
                items.reverse();
                Ok(Value::List(items))
            }
            "enumerate" => {
                let items = materialize(arg(&args, 0, "enumerate")?)?;
                let start = args
                    .get(1)
                    .or_else(|| kwarg(&kwargs, "start"))
                    .and_then(as_index)
                    .unwrap_or(0);
                Ok(Value::List(
                    items
                        .into_iter()
                        .enumerate()
                        .map(|(i, v)| Value::Tuple(vec![Value::Int(start + i as i64), v]))
                        .collect(),
                ))
            }
            "zip" => {
                let lists = args.iter().map(materialize).collect::<R<Vec<_>>>()?;
                let n = lists.iter().map(Vec::len).min().unwrap_or(0);
                Ok(Value::List(
                    (0..n)
                        .map(|i| Value::Tuple(lists.iter().map(|l| l[i].clone()).collect()))
                        .collect(),
                ))
            }
            "abs" => match one(&args)? {
                Value::Float(f) => Ok(Value::Float(f.abs())),
                v => match as_index(&v) {
                    Some(i) => checked(i.checked_abs()),
                    None => Err(type_err(format!(
                        "bad operand type for abs(): '{}'",
                        v.type_name()
                    ))),
                },
            },
            "round" => {
                let v = arg(&args, 0, "round")?;
                let digits = args.get(1).or_else(|| kwarg(&kwargs, "ndigits"));
                match (v, digits.filter(|d| **d != Value::None)) {
                    (Value::Float(f), None) => {
                        let r = python_round(*f);
                        if !r.is_finite() {
                            return Err(exc("OverflowError", "cannot convert float infinity to integer"));
                        }
                        Ok(Value::Int(r as i64))
                    }
                    (Value::Float(f), Some(d)) => {
                        let d = as_index(d).ok_or_else(|| type_err("ndigits must be an integer"))?;
                        if d < 0 {
                            let m = 10f64.powi(-d as i32);
                            return Ok(Value::Float(python_round(f / m) * m));
                        }
                        let s = format!("{:.*}", d.min(300) as usize, f);
                        Ok(Value::Float(s.parse().unwrap_or(*f)))
                    }
                    (v, _) if as_index(v).is_some() => Ok(Value::Int(as_index(v).unwrap())),
                    (v, _) => Err(type_err(format!(
                        "type {} doesn't define __round__ method",
                        v.type_name()
                    ))),
                }
            }
            "isinstance" => {
                let v = arg(&args, 0, "isinstance")?;
                let t = arg(&args, 1, "isinstance")?;
                let types = match t {
                    Value::Tuple(ts) => ts.clone(),
                    other => vec![other.clone()],
                };
                let mut hit = false;
                for t in &types {
                    hit |= match t {
                        Value::Builtin(b) => {
                            v.type_name() == *b || (*b == "int" && matches!(v, Value::Bool(_)))
                        }
                        Value::ExcClass(k) => matches!(v, Value::Exc(e) if is_subclass(&e.kind, k)),
                        _ => return Err(type_err("isinstance() arg 2 must be a type or tuple of types")),
                    };
                }
                Ok(Value::Bool(hit))
            }
            "type" => {
                let v = one(&args)?;
                Ok(match &v {
                    Value::Exc(e) => Value::ExcClass(e.kind.clone()),
                    other => builtin_value(other.type_name())
                        .unwrap_or_else(|| Value::str(other.type_name())),
                })
            }
            "any" | "all" => {
                let items = materialize(arg(&args, 0, name)?)?;
                Ok(Value::Bool(if name == "any" {
                    items.iter().any(Value::truthy)
                } else {
                    items.iter().all(Value::truthy)
                }))
            }
            "map" => {
                let f = arg(&args, 0, "map")?.clone();
                let items = materialize(arg(&args, 1, "map")?)?;
                let mut out = Vec::with_capacity(items.len());
                for v in items {
                    out.push(self.call_value(f.clone(), vec![v], Vec::new())?);
                }
                Ok(Value::List(out))
            }
            "filter" => {
                let f = arg(&args, 0, "filter")?.clone();
                let items = materialize(arg(&args, 1, "filter")?)?;
                let mut out = Vec::new();
                for v in items {
                    let keep = if f == Value::None {
                        v.truthy()
                    } else {
                        self.call_value(f.clone(), vec![v.clone()], Vec::new())?.truthy()
                    };
                    if keep {
                        out.push(v);
                    }
                }
                Ok(Value::List(out))
            }
            "format" => {
                let v = arg(&args, 0, "format")?;
                let spec = match args.get(1) {
                    Some(s) => expect_str(s, "format spec")?.to_string(),
                    None => String::new(),
                };
                Ok(Value::str(format_value(v, &spec)?))
            }
            "sleep" | "time.sleep" => {
                let secs = as_f64(arg(&args, 0, "sleep")?)
                    .ok_or_else(|| type_err("sleep() argument must be a number"))?;
                self.sleep(secs)?;
                Ok(Value::None)
            }
            "time.time" => Ok(Value::Float(match self.ctx.clock {
                Clock::Virtual { ops_per_ms } => self.ops as f64 / ops_per_ms.max(1) as f64 / 1000.0,
                Clock::Wall => std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs_f64())
                    .unwrap_or(0.0),
            })),
            "json.dumps" => {
                let v = arg(&args, 0, "dumps")?;
                let indent = kwarg(&kwargs, "indent").and_then(as_index).map(|i| i.max(0) as usize);
                let sort_keys = kwarg(&kwargs, "sort_keys").is_some_and(Value::truthy);
                let ensure_ascii = kwarg(&kwargs, "ensure_ascii").is_none_or(Value::truthy);
                Ok(Value::str(json_dumps(v, indent, sort_keys, ensure_ascii)?))
            }
            "json.loads" => {
                let s = expect_str(arg(&args, 0, "loads")?, "the JSON object")?;
                let parsed: Json = serde_json::from_str(s)
                    .map_err(|e| exc("JSONDecodeError", e.to_string()))?;
                Ok(Value::from_json(&parsed))
            }
            "math.sqrt" | "math.floor" | "math.ceil" | "math.log" | "math.exp" | "math.fabs" => {
                let x = as_f64(arg(&args, 0, name)?)
                    .ok_or_else(|| type_err("must be real number"))?;
                match name {
                    "math.sqrt" if x < 0.0 => Err(value_err("math domain error")),
                    "math.sqrt" => Ok(Value::Float(x.sqrt())),
                    "math.floor" => Ok(Value::Int(x.floor() as i64)),
                    "math.ceil" => Ok(Value::Int(x.ceil() as i64)),
                    "math.log" if x <= 0.0 => Err(value_err("math domain error")),
                    "math.log" => match args.get(1).and_then(as_f64) {
                        Some(base) => Ok(Value::Float(x.ln() / base.ln())),
                        None => Ok(Value::Float(x.ln())),
                    },
                    "math.exp" => Ok(Value::Float(x.exp())),
                    _ => Ok(Value::Float(x.abs())),
                }
            }
            other => Err(exc("NameError", format!("name '{other}' is not defined"))),
        }
    }
}

#[cfg(test)]
#[path = "eval_tests.rs"]
mod tests;
