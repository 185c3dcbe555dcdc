//! String formatting: format specs, `%` interpolation, `str.format` and
//! `json.dumps`.

use std::fmt::Write as _;

use super::value::{float_repr, Value};

/// Failure raised as a Python exception of the given class.
#[derive(Debug, Clone, PartialEq)]
pub struct FmtError {
    pub kind: &'static str,
    pub msg: String,
}

fn value_error(msg: impl Into<String>) -> FmtError {
    FmtError {
        kind: "ValueError",
        msg: msg.into(),
    }
}

fn type_error(msg: impl Into<String>) -> FmtError {
    FmtError {
        kind: "TypeError",
        msg: msg.into(),
    }
}

#[derive(Debug, Default)]
struct Spec {
    fill: Option<char>,
    align: Option<char>,
    sign: Option<char>,
    zero: bool,
    width: usize,
    grouping: Option<char>,
    precision: Option<usize>,
    kind: Option<char>,
}

fn parse_spec(spec: &str) -> Result<Spec, FmtError> {
    let chars: Vec<char> = spec.chars().collect();
    let mut s = Spec::default();
    let mut i = 0;
    let is_align = |c: char| matches!(c, '<' | '>' | '^' | '=');
    if chars.len() >= 2 && is_align(chars[1]) {
        s.fill = Some(chars[0]);
        s.align = Some(chars[1]);
        i = 2;
    } else if !chars.is_empty() && is_align(chars[0]) {
        s.align = Some(chars[0]);
        i = 1;
    }
    if let Some(&c) = chars.get(i) {
        if matches!(c, '+' | '-' | ' ') {
            s.sign = Some(c);
            i += 1;
        }
    }
    if chars.get(i) == Some(&'#') {
        i += 1;
    }
    if chars.get(i) == Some(&'0') {
        s.zero = true;
        i += 1;
    }
    let w0 = i;
    while chars.get(i).is_some_and(|c| c.is_ascii_digit()) {
        i += 1;
    }
    if i > w0 {
        s.width = chars[w0..i].iter().collect::<String>().parse().unwrap_or(0);
    }
    if let Some(&c) = chars.get(i) {
        if c == ',' || c == '_' {
            s.grouping = Some(c);
            i += 1;
        }
    }
    if chars.get(i) == Some(&'.') {
        i += 1;
        let p0 = i;
        while chars.get(i).is_some_and(|c| c.is_ascii_digit()) {
            i += 1;
        }
        if i == p0 {
            return Err(value_error("Format specifier missing precision"));
        }
        s.precision = chars[p0..i].iter().collect::<String>().parse().ok();
    }
    if i < chars.len() {
        s.kind = Some(chars[i]);
        i += 1;
    }
    if i != chars.len() {
        return Err(value_error("Invalid format specifier"));
    }
    Ok(s)
}

fn group_digits(int_part: &str, sep: char) -> String {
    let digits: Vec<char> = int_part.chars().collect();
    let mut out = String::new();
    for (i, c) in digits.iter().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(sep);
        }
        out.push(*c);
    }
    out
}

fn exp_format(x: f64, prec: usize) -> String {
    let s = format!("{x:.prec$e}");
    let (mant, exp) = s.split_once('e').unwrap_or((&s, "0"));
    let exp: i32 = exp.parse().unwrap_or(0);
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mant}e{sign}{:02}", exp.abs())
}

fn general_format(x: f64, prec: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let p = prec.max(1);
    let exp = exp_format(x, p - 1);
    let e: i32 = exp.rsplit_once('e').and_then(|(_, e)| e.parse().ok()).unwrap_or(0);
    let strip = |s: String| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if e >= -4 && e < p as i32 {
        let decimals = (p as i32 - 1 - e).max(0) as usize;
        strip(format!("{x:.decimals$}"))
    } else {
        let (mant, rest) = exp.split_once('e').unwrap();
        format!("{}e{rest}", strip(mant.to_string()))
    }
}

fn number(v: &Value) -> Option<f64> {
    match v {
        Value::Int(i) => Some(*i as f64),
        Value::Bool(b) => Some(f64::from(u8::from(*b))),
        Value::Float(f) => Some(*f),
        _ => None,
    }
}

fn special_float(x: f64) -> Option<String> {
    if x.is_nan() {
        Some("nan".into())
    } else if x.is_infinite() {
        Some("inf".into())
    } else {
        None
    }
}

/// `format(value, spec)`.
pub fn format_value(v: &Value, spec: &str) -> Result<String, FmtError> {
    if spec.is_empty() {
        return Ok(v.to_str());
    }
    let s = parse_spec(spec)?;
    let is_num = matches!(v, Value::Int(_) | Value::Bool(_) | Value::Float(_));
    let mut negative = false;
    let body = match (s.kind, v) {
        (Some('s'), _) | (None, Value::Str(_)) => {
            if is_num && s.kind == Some('s') {
                return Err(value_error(format!(
                    "Unknown format code 's' for object of type '{}'",
                    v.type_name()
                )));
            }
            let text = v.to_str();
            match s.precision {
                Some(p) => text.chars().take(p).collect(),
                None => text,
            }
        }
        (Some('d'), Value::Int(_) | Value::Bool(_)) | (None, Value::Int(_) | Value::Bool(_)) => {
            let i = match v {
                Value::Int(i) => *i,
                Value::Bool(b) => i64::from(*b),
                _ => unreachable!(),
            };
            negative = i < 0;
            let digits = i.unsigned_abs().to_string();
            match s.grouping {
                Some(g) => group_digits(&digits, g),
                None => digits,
            }
        }
        (Some('f' | 'F' | 'e' | 'E' | 'g' | 'G' | '%'), _) | (None, Value::Float(_)) => {
            let k = s.kind;
            let Some(mut x) = number(v) else {
                return Err(value_error(format!(
                    "Unknown format code '{}' for object of type '{}'",
                    k.unwrap_or('f'),
                    v.type_name()
                )));
            };
            if k == Some('%') {
                x *= 100.0;
            }
            negative = x.is_sign_negative() && !x.is_nan() && x != 0.0;
            let a = x.abs();
            let text = if let Some(sp) = special_float(a) {
                sp
            } else {
                match k {
                    Some('f' | 'F' | '%') => format!("{a:.*}", s.precision.unwrap_or(6)),
                    Some('e' | 'E') => exp_format(a, s.precision.unwrap_or(6)),
                    Some('g' | 'G') => general_format(a, s.precision.unwrap_or(6)),
                    _ => match s.precision {
                        Some(p) => general_format(a, p),
                        None => float_repr(a),
                    },
                }
            };
            let text = match s.grouping {
                Some(g) => {
                    let (int_part, frac) = match text.split_once('.') {
                        Some((i, f)) => (i.to_string(), format!(".{f}")),
                        None => (text.clone(), String::new()),
                    };
                    if int_part.chars().all(|c| c.is_ascii_digit()) {
                        format!("{}{frac}", group_digits(&int_part, g))
                    } else {
                        text
                    }
                }
                None => text,
            };
            let text = if matches!(k, Some('E' | 'G' | 'F')) {
                text.to_uppercase()
            } else {
                text
            };
            if k == Some('%') {
                format!("{text}%")
            } else {
                text
            }
        }
        (Some(k), _) => {
            return Err(value_error(format!(
                "Unknown format code '{k}' for object of type '{}'",
                v.type_name()
            )))
        }
        (None, _) => v.to_str(),
    };
    let sign = if negative {
        "-"
    } else if is_num && s.sign == Some('+') {
        "+"
    } else if is_num && s.sign == Some(' ') {
        " "
    } else {
        ""
    };
    let len = sign.chars().count() + body.chars().count();
    if len >= s.width {
        return Ok(format!("{sign}{body}"));
    }
    let pad = s.width - len;
    let (fill, align) = if s.zero && s.align.is_none() && is_num {
        ('0', '=')
    } else {
        (
            s.fill.unwrap_or(' '),
            s.align.unwrap_or(if is_num { '>' } else { '<' }),
        )
    };
    let fill_str = |n: usize| std::iter::repeat_n(fill, n).collect::<String>();
    Ok(match align {
        '<' => format!("{sign}{body}{}", fill_str(pad)),
        '^' => format!("{}{sign}{body}{}", fill_str(pad / 2), fill_str(pad - pad / 2)),
        '=' => format!("{sign}{}{body}", fill_str(pad)),
        _ => format!("{}{sign}{body}", fill_str(pad)),
    })
}

/// `fmt % args`.
pub fn percent_format(fmt: &str, args: &Value) -> Result<String, FmtError> {
    let items: Vec<Value> = match args {
        Value::Tuple(items) => items.clone(),
        other => vec![other.clone()],
    };
    let mut next = items.into_iter();
    let chars: Vec<char> = fmt.chars().collect();
    let mut out = String::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i] != '%' {
            out.push(chars[i]);
            i += 1;
            continue;
        }
        i += 1;
        let mut flags = String::new();
        while let Some(&c) = chars.get(i) {
            if matches!(c, '-' | '+' | ' ' | '0' | '#') {
                flags.push(c);
                i += 1;
            } else {
                break;
            }
        }
        let mut width = String::new();
        while chars.get(i).is_some_and(|c| c.is_ascii_digit()) {
            width.push(chars[i]);
            i += 1;
        }
        let mut precision = String::new();
        if chars.get(i) == Some(&'.') {
            i += 1;
            precision.push('.');
            while chars.get(i).is_some_and(|c| c.is_ascii_digit()) {
                precision.push(chars[i]);
                i += 1;
            }
            if precision == "." {
                precision.push('0');
            }
        }
        let Some(&conv) = chars.get(i) else {
            return Err(value_error("incomplete format"));
        };
        i += 1;
        if conv == '%' {
            out.push('%');
            continue;
        }
        let arg = next
            .next()
            .ok_or_else(|| type_error("not enough arguments for format string"))?;
        let mut spec = String::new();
        if flags.contains('-') {
            spec.push('<');
        } else if matches!(conv, 's' | 'r') {
            spec.push('>');
        }
        if flags.contains('+') {
            spec.push('+');
        } else if flags.contains(' ') {
            spec.push(' ');
        }
        if flags.contains('0') && !flags.contains('-') {
            spec.push('0');
        }
        spec.push_str(&width);
        let piece = match conv {
            's' => format_value(&Value::str(arg.to_str()), &format!("{spec}{precision}"))?,
            'r' => format_value(&Value::str(arg.repr()), &format!("{spec}{precision}"))?,
            'd' | 'i' => {
                let n = match &arg {
                    Value::Float(f) => Value::Int(f.trunc() as i64),
                    Value::Int(_) | Value::Bool(_) => arg.clone(),
                    other => {
                        return Err(type_error(format!(
                            "%d format: a real number is required, not {}",
                            other.type_name()
                        )))
                    }
                };
                format_value(&n, &format!("{spec}d"))?
            }
            'f' | 'F' | 'e' | 'E' | 'g' | 'G' => {
                if number(&arg).is_none() {
                    return Err(type_error(format!(
                        "must be real number, not {}",
                        arg.type_name()
                    )));
                }
                let p = if precision.is_empty() { ".6".to_string() } else { precision.clone() };
                format_value(&arg, &format!("{spec}{p}{conv}"))?
            }
            'x' | 'X' => match arg {
                Value::Int(n) => {
                    let s = if conv == 'x' { format!("{n:x}") } else { format!("{n:X}") };
                    format_value(&Value::str(s), &spec.replacen('0', "0>", 1))?
                }
                other => {
                    return Err(type_error(format!(
                        "%x format: an integer is required, not {}",
                        other.type_name()
                    )))
                }
            },
            other => {
                return Err(value_error(format!(
                    "unsupported format character '{other}'"
                )))
            }
        };
        out.push_str(&piece);
    }
    if next.next().is_some() {
        return Err(type_error(
            "not all arguments converted during string formatting",
        ));
    }
    Ok(out)
}

/// `template.format(*args, **kwargs)`.
pub fn str_format(
    template: &str,
    args: &[Value],
    kwargs: &[(String, Value)],
) -> Result<String, FmtError> {
    let chars: Vec<char> = template.chars().collect();
    let mut out = String::new();
    let mut auto = 0;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '{' && chars.get(i + 1) == Some(&'{') {
            out.push('{');
            i += 2;
            continue;
        }
        if c == '}' && chars.get(i + 1) == Some(&'}') {
            out.push('}');
            i += 2;
            continue;
        }
        if c == '}' {
            return Err(value_error("Single '}' encountered in format string"));
        }
        if c != '{' {
            out.push(c);
            i += 1;
            continue;
        }
        let close = chars[i..]
            .iter()
            .position(|&d| d == '}')
            .map(|p| p + i)
            .ok_or_else(|| value_error("Single '{' encountered in format string"))?;
        let field: String = chars[i + 1..close].iter().collect();
        i = close + 1;
        let (name, spec) = match field.split_once(':') {
            Some((n, s)) => (n.to_string(), s.to_string()),
            None => (field.clone(), String::new()),
        };
        let (name, conv) = match name.split_once('!') {
            Some((n, c)) => (n.to_string(), Some(c.to_string())),
            None => (name, None),
        };
        let value = if name.is_empty() {
            let v = args
                .get(auto)
                .cloned()
                .ok_or_else(|| FmtError {
                    kind: "IndexError",
                    msg: format!("Replacement index {auto} out of range for positional args tuple"),
                })?;
            auto += 1;
            v
        } else if let Ok(idx) = name.parse::<usize>() {
            args.get(idx).cloned().ok_or_else(|| FmtError {
                kind: "IndexError",
                msg: format!("Replacement index {idx} out of range for positional args tuple"),
            })?
        } else {
            kwargs
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| FmtError {
                    kind: "KeyError",
                    msg: Value::str(name.clone()).repr(),
                })?
        };
        let value = match conv.as_deref() {
            Some("r") => Value::str(value.repr()),
            Some("s") => Value::str(value.to_str()),
            _ => value,
        };
        out.push_str(&format_value(&value, &spec)?);
    }
    Ok(out)
}

/// `json.dumps`, preserving dict insertion order unless `sort_keys`.
pub fn json_dumps(
    v: &Value,
    indent: Option<usize>,
    sort_keys: bool,
    ensure_ascii: bool,
) -> Result<String, FmtError> {
    let mut out = String::new();
    dump(v, indent, sort_keys, ensure_ascii, 0, &mut out)?;
    Ok(out)
}

fn json_string(s: &str, ensure_ascii: bool, out: &mut String) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            '\u{8}' => out.push_str("\\b"),
            '\u{c}' => out.push_str("\\f"),
            c if (c as u32) < 0x20 || (ensure_ascii && (c as u32) > 0x7e) => {
                let mut buf = [0u16; 2];
                for unit in c.encode_utf16(&mut buf) {
                    let _ = write!(out, "\\u{unit:04x}");
                }
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

fn dump(
    v: &Value,
    indent: Option<usize>,
    sort_keys: bool,
    ensure_ascii: bool,
    level: usize,
    out: &mut String,
) -> Result<(), FmtError> {
    let newline = |out: &mut String, lvl: usize| {
        if let Some(n) = indent {
            out.push('\n');
            out.push_str(&" ".repeat(n * lvl));
        }
    };
    let item_sep = if indent.is_some() { "," } else { ", " };
    match v {
        Value::None => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Int(i) => {
            let _ = write!(out, "{i}");
        }
        Value::Float(f) if f.is_nan() => out.push_str("NaN"),
        Value::Float(f) if f.is_infinite() => {
            out.push_str(if *f > 0.0 { "Infinity" } else { "-Infinity" })
        }
        Value::Float(f) => out.push_str(&float_repr(*f)),
        Value::Str(s) => json_string(s, ensure_ascii, out),
        Value::List(items) | Value::Tuple(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return Ok(());
            }
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(item_sep);
                }
                newline(out, level + 1);
                dump(item, indent, sort_keys, ensure_ascii, level + 1, out)?;
            }
            newline(out, level);
            out.push(']');
        }
        Value::Dict(d) => {
            if d.is_empty() {
                out.push_str("{}");
                return Ok(());
            }
            let mut entries = Vec::with_capacity(d.len());
            for (k, item) in &d.entries {
                let key = match k {
                    Value::Str(s) => s.to_string(),
                    Value::Bool(true) => "true".into(),
                    Value::Bool(false) => "false".into(),
                    Value::None => "null".into(),
                    Value::Int(i) => i.to_string(),
                    Value::Float(f) => float_repr(*f),
                    other => {
                        return Err(type_error(format!(
                            "keys must be str, int, float, bool or None, not {}",
                            other.type_name()
                        )))
                    }
                };
                entries.push((key, item));
            }
            if sort_keys {
                entries.sort_by(|a, b| a.0.cmp(&b.0));
            }
            out.push('{');
            for (i, (k, item)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push_str(item_sep);
                }
                newline(out, level + 1);
                json_string(&k, ensure_ascii, out);
                out.push_str(": ");
                dump(item, indent, sort_keys, ensure_ascii, level + 1, out)?;
            }
            newline(out, level);
            out.push('}');
        }
        Value::Range(a, b, s) => {
            let items: Vec<Value> = super::value::range_iter(*a, *b, *s).map(Value::Int).collect();
            dump(&Value::List(items), indent, sort_keys, ensure_ascii, level, out)?;
        }
        other => {
            return Err(type_error(format!(
                "Object of type {} is not JSON serializable",
                other.type_name()
            )))
        }
    }
    Ok(())
}
