use std::sync::Mutex;

use serde_json::json;

use super::*;

fn ctx(timeout_ms: u64) -> ExecContext<'static> {
    ExecContext {
        session_id: "s",
        timeout_ms,
        clock: Clock::default(),
        tools: None,
    }
}

fn run(code: &str) -> ExecOutcome {
    Namespace::new().exec(code, &ctx(5_000))
}

fn out(code: &str) -> String {
    let o = run(code);
    assert_eq!(o.status, ExecStatus::Success, "stderr: {}", o.stderr);
    o.stdout
}

fn err_kind(code: &str) -> String {
    let o = run(code);
    assert_eq!(o.status, ExecStatus::RuntimeError, "stdout: {}", o.stdout);
    o.stderr.lines().last().unwrap_or_default().to_string()
}

#[test]
fn arithmetic_follows_python() {
    assert_eq!(out("print(7 // 2, -7 // 2, 7 % -3, -7 % 3, 2 ** 10, 7 / 2)"), "3 -4 -2 2 1024 3.5\n");
    assert_eq!(out("print(1.5 // 1, -1.5 % 1, 2 ** -1, 10 / 4)"), "1.0 0.5 0.5 2.5\n");
    assert_eq!(out("print(True + 1, 3 * 'ab', [0] * 3, (1,) + (2,))"), "2 ababab [0, 0, 0] (1, 2)\n");
    assert_eq!(out("print(round(2.5), round(3.5), round(2.675, 2), abs(-3))"), "2 4 2.67 3\n");
}

#[test]
fn strings_and_formatting() {
    assert_eq!(out("x = 3.14159\nprint(f'{x:.2f}|{x!r}|{\"a\":>3}|{42:05d}')"), "3.14|3.14159|  a|00042\n");
    assert_eq!(out("print('%s-%d-%.1f' % ('a', 2, 3.25))"), "a-2-3.2\n");
    assert_eq!(out("print('{} {b}'.format(1, b=2))"), "1 2\n");
    assert_eq!(out("print(' a,b '.strip().split(','), '-'.join(['x', 'y']))"), "['a', 'b'] x-y\n");
    assert_eq!(out("s = 'Hello'\nprint(s[1:3], s[-1], s.upper(), s.lower(), len(s))"), "el o HELLO hello 5\n");
    assert_eq!(out("print(repr('it\\'s'), str(None), str([1, 'a']))"), "\"it's\" None [1, 'a']\n");
}

#[test]
fn containers_mutate_in_place() {
    let code = "d = {'a': [1]}\nd['a'].append(2)\nd['b'] = {}\nd['b']['c'] = 3\nd['a'][0] += 10\nprint(d)";
    assert_eq!(out(code), "{'a': [11, 2], 'b': {'c': 3}}\n");
    let code = "xs = [3, 1, 2]\nxs.sort()\nxs.reverse()\nxs.insert(0, 9)\nprint(xs, xs.pop(), xs)";
    assert_eq!(out(code), "[9, 3, 2, 1] 1 [9, 3, 2]\n");
    let code = "d = {}\nd.setdefault('k', []).append(1)\nd.update({'z': 0}, y=1)\nprint(d, d.get('q', 5), list(d.items()))";
    assert_eq!(out(code), "{'k': [], 'z': 0, 'y': 1} 5 [('k', []), ('z', 0), ('y', 1)]\n");
}

#[test]
fn control_flow_and_functions() {
    let code = "\
def fib(n):
    if n < 2:
        return n
    return fib(n - 1) + fib(n - 2)
total = 0
for i in range(10):
    if i % 2:
        continue
    if i > 6:
        break
    total += i
n = 0
while True:
    n += 1
    if n == 5:
        break
print(fib(15), total, n)";
    assert_eq!(out(code), "610 12 5\n");
    let code = "def f(a, b=2, *, c=3):\n    return a + b + c\n";
    // keyword-only markers are not part of the subset
    assert_eq!(run(code).status, ExecStatus::RuntimeError);
    let code = "def f(a, b=2, c=3):\n    return a * 100 + b * 10 + c\nprint(f(1), f(1, c=5), f(**{'a': 2, 'b': 0}))";
    assert_eq!(out(code), "123 125 203\n");
}

#[test]
fn comprehensions_lambdas_builtins() {
    assert_eq!(out("print([x * x for x in range(6) if x % 2 == 0])"), "[0, 4, 16]\n");
    assert_eq!(out("print(sorted(['bb', 'a', 'ccc'], key=lambda s: -len(s)))"), "['ccc', 'bb', 'a']\n");
    assert_eq!(out("d = {'a': 3, 'b': 5}\nprint(max(d, key=lambda k: d[k]), min([4, 2, 8]), sum([1.5, 2]))"), "b 2 3.5\n");
    assert_eq!(out("print(list(zip([1, 2], 'ab')), list(enumerate('xy', 1)))"), "[(1, 'a'), (2, 'b')] [(1, 'x'), (2, 'y')]\n");
    assert_eq!(out("print(any([0, 1]), all([]), list(map(str, [1, 2])), list(filter(None, [0, 3])))"), "True True ['1', '2'] [3]\n");
    assert_eq!(out("a, (b, c) = 1, [2, 3]\nprint(a + b + c, isinstance(a, int), type('x').__name__)"), "6 True str\n");
    assert_eq!(out("x = 5\nprint('big' if x > 3 else 'small', 1 < x <= 5, 3 in [1, 3], 'z' not in 'abc')"), "big True True True\n");
}

#[test]
fn closures_see_definition_scope() {
    let code = "\
def make(k):
    def add(x):
        return x + k
    return add
add3 = make(3)
print(add3(4))";
    assert_eq!(out(code), "7\n");
    let code = "count = 0\ndef bump():\n    global count\n    count += 1\nbump()\nbump()\nprint(count)";
    assert_eq!(out(code), "2\n");
}

#[test]
fn exceptions_and_tracebacks() {
    let code = "\
try:
    {}['missing']
except KeyError as e:
    print('caught', repr(str(e)))
finally:
    print('done')";
    assert_eq!(out(code), "caught \"'missing'\"\ndone\n");
    let code = "try:\n    raise ValueError('bad')\nexcept (TypeError, ValueError) as e:\n    print(type(e).__name__, e, e.args)";
    assert_eq!(out(code), "ValueError bad ('bad',)\n");
    let code = "try:\n    int('x')\nexcept Exception:\n    print('generic')\nelse:\n    print('no')";
    assert_eq!(out(code), "generic\n");

    let o = run("x = 1\ny = 0\nprint(x / y)\n");
    assert_eq!(
        o.stderr,
        "Traceback (most recent call last):\n  File \"<step>\", line 3, in <module>\nZeroDivisionError: division by zero\n"
    );
    let o = run("def f():\n    return undefined_name\nf()\n");
    assert!(o.stderr.contains("line 3, in <module>"), "{}", o.stderr);
    assert!(o.stderr.contains("line 2, in f"), "{}", o.stderr);
    assert!(o.stderr.ends_with("NameError: name 'undefined_name' is not defined\n"));
    assert_eq!(err_kind("assert 1 == 2, 'nope'"), "AssertionError: nope");
    assert_eq!(err_kind("import os"), "ModuleNotFoundError: No module named 'os'");
    assert_eq!(err_kind("[1][5]"), "IndexError: list index out of range");
    assert_eq!(err_kind("None.x"), "AttributeError: 'NoneType' object has no attribute 'x'");
    assert_eq!(err_kind("'a' + 1"), "TypeError: can only concatenate str (not \"int\") to str");
}

#[test]
fn reraise_and_nested_handlers() {
    let code = "\
try:
    try:
        1 / 0
    except ZeroDivisionError:
        print('inner')
        raise
except ArithmeticError as e:
    print('outer', e)";
    assert_eq!(out(code), "inner\nouter division by zero\n");
}

#[test]
fn syntax_error_is_reported_with_line() {
    let o = run("x = 1\nif x\n    pass\n");
    assert_eq!(o.status, ExecStatus::RuntimeError);
    assert!(o.stderr.starts_with("  File \"<step>\", line 2\nSyntaxError:"), "{}", o.stderr);
}

#[test]
fn namespace_persists_and_partial_effects_survive() {
    let mut ns = Namespace::new();
    let c = ctx(1_000);
    assert_eq!(ns.exec("x = 41\ndef inc(v):\n    return v + 1", &c).status, ExecStatus::Success);
    let o = ns.exec("y = inc(x)\nraise RuntimeError('boom')", &c);
    assert_eq!(o.status, ExecStatus::RuntimeError);
    assert!(ns.contains("y"));
    assert_eq!(ns.exec("print(y)", &c).stdout, "42\n");
}

#[test]
fn infinite_loop_times_out_deterministically() {
    let mut ns = Namespace::new();
    let o = ns.exec("n = 0\nwhile True:\n    n += 1\n", &ctx(50));
    assert_eq!(o.status, ExecStatus::Timeout);
    assert_eq!(o.wall_time_ms, 50);
    assert_eq!(o.stderr, "TimeoutError: execution exceeded 50 ms\n");
    // the timeout is not catchable
    let o = ns.exec("try:\n    while True:\n        pass\nexcept BaseException:\n    print('caught')\n", &ctx(20));
    assert_eq!(o.status, ExecStatus::Timeout);
    assert_eq!(o.stdout, "");
    let o = ns.exec("import time\ntime.sleep(2)\nprint('late')", &ctx(1_000));
    assert_eq!(o.status, ExecStatus::Timeout);
    let o = ns.exec("sleep(0.5)\nprint('ok')", &ctx(1_000));
    assert_eq!(o.status, ExecStatus::Success);
    assert!(o.wall_time_ms >= 500);
}

#[test]
fn wall_clock_timeout() {
    let c = ExecContext {
        clock: Clock::Wall,
        ..ctx(100)
    };
    let started = Instant::now();
    let o = Namespace::new().exec("while True:\n    pass\n", &c);
    assert_eq!(o.status, ExecStatus::Timeout);
    assert!(started.elapsed() < Duration::from_secs(5));
}

#[test]
fn deep_recursion_and_huge_allocations_fail_cleanly() {
    let o = run("def f(n):\n    return f(n + 1)\nf(0)\n");
    assert!(o.stderr.ends_with("RecursionError: maximum recursion depth exceeded\n"), "{}", o.stderr);
    assert_eq!(err_kind("x = 'a' * (10 ** 12)").split(':').next(), Some("MemoryError"));
    assert_eq!(err_kind("x = list(range(10 ** 12))").split(':').next(), Some("MemoryError"));
    assert_eq!(err_kind("x = 2 ** 64").split(':').next(), Some("OverflowError"));
}

#[test]
fn large_output_is_not_truncated() {
    let o = run("print('x' * 70000)");
    assert_eq!(o.stdout.len(), 70_001);
}

#[test]
fn json_and_math_modules() {
    let code = "import json\nfrom math import sqrt\nimport math as m\nd = json.loads('{\"b\": [1, 2.5], \"a\": null}')\nprint(d['b'][1], d['a'], json.dumps({'k': [1, True]}), sqrt(16), m.floor(2.7))";
    assert_eq!(out(code), "2.5 None {\"k\": [1, true]} 4.0 2\n");
    assert_eq!(err_kind("import json\njson.loads('{bad')").split(':').next(), Some("JSONDecodeError"));
    let code = "import json\ntry:\n    json.loads('')\nexcept json.JSONDecodeError:\n    print('decode')\nexcept ValueError:\n    print('value')";
    assert_eq!(out(code), "decode\n");
}

#[test]
fn final_answer_prints_sentinel() {
    assert_eq!(out("final_answer(42)"), "FINAL ANSWER: 42\n");
}

struct RecordingHost(Mutex<Vec<(String, Json)>>);

impl ToolHost for RecordingHost {
    fn call_tool(&self, _session: &str, tool: &str, params: Json) -> Result<Json, ToolFailure> {
        self.0.lock().unwrap().push((tool.to_string(), params.clone()));
        match tool {
            "echo" => Ok(json!({"echo": params})),
            "broken" => Err(ToolFailure {
                kind: ToolFailureKind::Http,
                message: "HTTP 503".into(),
            }),
            _ => Err(ToolFailure {
                kind: ToolFailureKind::UnknownTool,
                message: format!("unknown tool '{tool}'"),
            }),
        }
    }
}

#[test]
fn tool_calls_reach_the_host() {
    let host = RecordingHost(Mutex::new(Vec::new()));
    let c = ExecContext {
        tools: Some(&host),
        ..ctx(1_000)
    };
    let mut ns = Namespace::new();
    let o = ns.exec("r = call_tool('echo', {'q': 'x'}, n=2)\nprint(r['echo']['n'], r['echo']['q'])", &c);
    assert_eq!(o.stdout, "2 x\n", "{}", o.stderr);
    let o = ns.exec("try:\n    call_tool('broken')\nexcept ToolError as e:\n    print(type(e).__name__, e)", &c);
    assert_eq!(o.stdout, "ToolHTTPError HTTP 503\n");
    let o = ns.exec("call_tool('nope', {})", &c);
    assert!(o.stderr.ends_with("UnknownToolError: unknown tool 'nope'\n"));
    assert_eq!(host.0.lock().unwrap().len(), 3);
    assert_eq!(host.0.lock().unwrap()[0].1, json!({"q": "x", "n": 2}));
}

#[test]
fn tool_access_without_host_raises() {
    assert_eq!(
        err_kind("call_tool('x')"),
        "ToolError: tool access is not available in this session"
    );
}
