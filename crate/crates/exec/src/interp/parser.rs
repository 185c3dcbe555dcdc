//! Recursive-descent parser producing the statement tree.

use std::sync::Arc;

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::value::Value;
use super::SyntaxError;

const KEYWORDS: [&str; 33] = [
    "if", "elif", "else", "while", "for", "in", "not", "and", "or", "def", "return", "try",
    "except", "finally", "raise", "import", "from", "as", "pass", "break", "continue", "lambda",
    "is", "None", "True", "False", "global", "assert", "with", "class", "yield", "del", "async",
];

pub fn parse_program(src: &str) -> Result<Vec<Stmt>, SyntaxError> {
    let tokens = tokenize(src)?;
    let mut p = Parser { tokens, pos: 0 };
    let mut out = Vec::new();
    while !p.at(&Tok::Eof) {
        if p.eat(&Tok::Newline) {
            continue;
        }
        out.extend(p.statement()?);
    }
    Ok(out)
}

pub fn parse_expression(src: &str) -> Result<Expr, SyntaxError> {
    let tokens = tokenize(src)?;
    let mut p = Parser { tokens, pos: 0 };
    let e = p.exprlist()?;
    p.eat(&Tok::Newline);
    if !p.at(&Tok::Eof) {
        return Err(p.err("unexpected trailing tokens in expression"));
    }
    Ok(e)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, off: usize) -> &Tok {
        let i = (self.pos + off).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn line(&self) -> usize {
        self.tokens[self.pos].line
    }

    fn err(&self, msg: impl Into<String>) -> SyntaxError {
        SyntaxError {
            line: self.line(),
            msg: msg.into(),
        }
    }

    fn at(&self, t: &Tok) -> bool {
        self.peek() == t
    }

    fn at_op(&self, op: &str) -> bool {
        matches!(self.peek(), Tok::Op(o) if *o == op)
    }

    fn at_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Name(n) if n == kw)
    }

    fn advance(&mut self) -> Tok {
        let t = self.tokens[self.pos].tok.clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.at(t) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn eat_op(&mut self, op: &str) -> bool {
        if self.at_op(op) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.at_kw(kw) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect_op(&mut self, op: &str) -> Result<(), SyntaxError> {
        if self.eat_op(op) {
            Ok(())
        } else {
            Err(self.err(format!("expected '{op}'")))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), SyntaxError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.err(format!("expected '{kw}'")))
        }
    }

    fn ident(&mut self) -> Result<String, SyntaxError> {
        match self.peek().clone() {
            Tok::Name(n) if !KEYWORDS.contains(&n.as_str()) => {
                self.advance();
                Ok(n)
            }
            other => Err(self.err(format!("expected identifier, found {other:?}"))),
        }
    }

    fn statement(&mut self) -> Result<Vec<Stmt>, SyntaxError> {
        let line = self.line();
        let kind = if self.eat_kw("if") {
            self.if_rest()?
        } else if self.eat_kw("while") {
            let cond = self.expr()?;
            let body = self.block()?;
            StmtKind::While(cond, body)
        } else if self.eat_kw("for") {
            let target = self.target_list()?;
            self.expect_kw("in")?;
            let iter = self.exprlist()?;
            let body = self.block()?;
            StmtKind::For(target, iter, body)
        } else if self.eat_kw("try") {
            self.try_rest()?
        } else if self.eat_kw("def") {
            let name = self.ident()?;
            self.expect_op("(")?;
            let params = self.params(")")?;
            self.expect_op(")")?;
            if self.eat_op("->") {
                self.expr()?;
            }
            let body = self.block()?;
            StmtKind::Def(Arc::new(FuncDef { name, params, body }))
        } else if self.at_kw("with") || self.at_kw("class") || self.at_kw("async") {
            return Err(self.err(format!("unsupported statement: {:?}", self.peek())));
        } else {
            return self.simple_statements();
        };
        Ok(vec![Stmt { line, kind }])
    }

    fn if_rest(&mut self) -> Result<StmtKind, SyntaxError> {
        let mut branches = Vec::new();
        let cond = self.expr()?;
        let body = self.block()?;
        branches.push((cond, body));
        let mut orelse = None;
        loop {
            if self.eat_kw("elif") {
                let c = self.expr()?;
                let b = self.block()?;
                branches.push((c, b));
            } else if self.eat_kw("else") {
                orelse = Some(self.block()?);
                break;
            } else {
                break;
            }
        }
        Ok(StmtKind::If(branches, orelse))
    }

    fn try_rest(&mut self) -> Result<StmtKind, SyntaxError> {
        let body = self.block()?;
        let mut handlers = Vec::new();
        while self.eat_kw("except") {
            let mut types = Vec::new();
            let mut name = None;
            if !self.at_op(":") {
                if self.eat_op("(") {
                    loop {
                        types.push(self.dotted_name()?);
                        if !self.eat_op(",") || self.at_op(")") {
                            break;
                        }
                    }
                    self.expect_op(")")?;
                } else {
                    types.push(self.dotted_name()?);
                }
                if self.eat_kw("as") {
                    name = Some(self.ident()?);
                }
            }
            let hbody = self.block()?;
            handlers.push(Handler {
                types,
                name,
                body: hbody,
            });
        }
        let orelse = if self.eat_kw("else") {
            Some(self.block()?)
        } else {
            None
        };
        let finally = if self.eat_kw("finally") {
            Some(self.block()?)
        } else {
            None
        };
        if handlers.is_empty() && finally.is_none() {
            return Err(self.err("expected 'except' or 'finally' block"));
        }
        Ok(StmtKind::Try {
            body,
            handlers,
            orelse,
            finally,
        })
    }

    fn dotted_name(&mut self) -> Result<String, SyntaxError> {
        let mut name = self.ident()?;
        while self.eat_op(".") {
            name.push('.');
            name.push_str(&self.ident()?);
        }
        Ok(name)
    }

    fn params(&mut self, close: &str) -> Result<Vec<(String, Option<Expr>)>, SyntaxError> {
        let mut params = Vec::new();
        while !self.at_op(close) {
            let name = self.ident()?;
            if close == ")" && self.eat_op(":") {
                self.expr()?;
            }
            let default = if self.eat_op("=") {
                Some(self.expr()?)
            } else {
                None
            };
            params.push((name, default));
            if !self.eat_op(",") {
                break;
            }
        }
        Ok(params)
    }

    fn block(&mut self) -> Result<Vec<Stmt>, SyntaxError> {
        self.expect_op(":")?;
        if self.eat(&Tok::Newline) {
            if !self.eat(&Tok::Indent) {
                return Err(self.err("expected an indented block"));
            }
            let mut body = Vec::new();
            while !self.eat(&Tok::Dedent) {
                if self.at(&Tok::Eof) {
                    break;
                }
                if self.eat(&Tok::Newline) {
                    continue;
                }
                body.extend(self.statement()?);
            }
            Ok(body)
        } else {
            self.simple_statements()
        }
    }

    fn simple_statements(&mut self) -> Result<Vec<Stmt>, SyntaxError> {
        let mut out = vec![self.small_statement()?];
        while self.eat_op(";") {
            if self.at(&Tok::Newline) {
                break;
            }
            out.push(self.small_statement()?);
        }
        if !self.eat(&Tok::Newline) && !self.at(&Tok::Eof) {
            return Err(self.err(format!("invalid syntax near {:?}", self.peek())));
        }
        Ok(out)
    }

    fn small_statement(&mut self) -> Result<Stmt, SyntaxError> {
        let line = self.line();
        let kind = if self.eat_kw("pass") {
            StmtKind::Pass
        } else if self.eat_kw("break") {
            StmtKind::Break
        } else if self.eat_kw("continue") {
            StmtKind::Continue
        } else if self.eat_kw("return") {
            if self.at(&Tok::Newline) || self.at_op(";") || self.at(&Tok::Eof) {
                StmtKind::Return(None)
            } else {
                StmtKind::Return(Some(self.exprlist()?))
            }
        } else if self.eat_kw("raise") {
            if self.at(&Tok::Newline) || self.at(&Tok::Eof) {
                StmtKind::Raise(None)
            } else {
                let e = self.expr()?;
                if self.eat_kw("from") {
                    self.expr()?;
                }
                StmtKind::Raise(Some(e))
            }
        } else if self.eat_kw("import") {
            let mut names = Vec::new();
            loop {
                let module = self.dotted_name()?;
                let alias = if self.eat_kw("as") {
                    self.ident()?
                } else {
                    module.split('.').next().unwrap_or_default().to_string()
                };
                names.push((module, alias));
                if !self.eat_op(",") {
                    break;
                }
            }
            StmtKind::Import(names)
        } else if self.eat_kw("from") {
            let module = self.dotted_name()?;
            self.expect_kw("import")?;
            let paren = self.eat_op("(");
            let mut names = Vec::new();
            loop {
                let item = self.ident()?;
                let alias = if self.eat_kw("as") {
                    self.ident()?
                } else {
                    item.clone()
                };
                names.push((format!("{module}.{item}"), alias));
                if !self.eat_op(",") || (paren && self.at_op(")")) {
                    break;
                }
            }
            if paren {
                self.expect_op(")")?;
            }
            StmtKind::Import(names)
        } else if self.eat_kw("global") {
            let mut names = vec![self.ident()?];
            while self.eat_op(",") {
                names.push(self.ident()?);
            }
            StmtKind::Global(names)
        } else if self.eat_kw("assert") {
            let cond = self.expr()?;
            let msg = if self.eat_op(",") {
                Some(self.expr()?)
            } else {
                None
            };
            StmtKind::Assert(cond, msg)
        } else if self.at_kw("del") {
            return Err(self.err("unsupported statement: del"));
        } else {
            let first = self.exprlist()?;
            let aug = match self.peek() {
                Tok::Op("+=") => Some(BinOp::Add),
                Tok::Op("-=") => Some(BinOp::Sub),
                Tok::Op("*=") => Some(BinOp::Mul),
                Tok::Op("/=") => Some(BinOp::Div),
                Tok::Op("//=") => Some(BinOp::FloorDiv),
                Tok::Op("%=") => Some(BinOp::Mod),
                Tok::Op("**=") => Some(BinOp::Pow),
                _ => None,
            };
            if let Some(op) = aug {
                self.advance();
                let target = self.to_target(first)?;
                let value = self.exprlist()?;
                StmtKind::AugAssign(target, op, value)
            } else if self.at_op("=") {
                let mut exprs = vec![first];
                while self.eat_op("=") {
                    exprs.push(self.exprlist()?);
                }
                let value = exprs.pop().unwrap();
                let targets = exprs
                    .into_iter()
                    .map(|e| self.to_target(e))
                    .collect::<Result<_, _>>()?;
                StmtKind::Assign(targets, value)
            } else if self.at_op(":") {
                // annotated assignment: `x: int = 3`
                self.advance();
                self.expr()?;
                let target = self.to_target(first)?;
                if self.eat_op("=") {
                    StmtKind::Assign(vec![target], self.exprlist()?)
                } else {
                    StmtKind::Pass
                }
            } else {
                StmtKind::Expr(first)
            }
        };
        Ok(Stmt { line, kind })
    }

    fn to_target(&self, e: Expr) -> Result<Target, SyntaxError> {
        match e {
            Expr::Name(n) => Ok(Target::Name(n)),
            Expr::Index(base, key) => Ok(Target::Index(*base, *key)),
            Expr::Tuple(items) | Expr::List(items) => Ok(Target::Tuple(
                items
                    .into_iter()
                    .map(|i| self.to_target(i))
                    .collect::<Result<_, _>>()?,
            )),
            other => Err(self.err(format!("cannot assign to {other:?}"))),
        }
    }

    fn target_list(&mut self) -> Result<Target, SyntaxError> {
        let mut items = vec![self.arith()?];
        let mut tuple = false;
        while self.eat_op(",") {
            tuple = true;
            if self.at_kw("in") {
                break;
            }
            items.push(self.arith()?);
        }
        let e = if tuple {
            Expr::Tuple(items)
        } else {
            items.pop().unwrap()
        };
        self.to_target(e)
    }

    fn exprlist(&mut self) -> Result<Expr, SyntaxError> {
        let first = self.expr()?;
        if !self.at_op(",") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_op(",") {
            if self.ends_exprlist() {
                break;
            }
            items.push(self.expr()?);
        }
        Ok(Expr::Tuple(items))
    }

    fn ends_exprlist(&self) -> bool {
        matches!(
            self.peek(),
            Tok::Newline | Tok::Eof | Tok::Op("=" | ")" | "]" | "}" | ":" | ";")
        )
    }

    fn expr(&mut self) -> Result<Expr, SyntaxError> {
        if self.eat_kw("lambda") {
            let params = self.params(":")?;
            self.expect_op(":")?;
            let body = self.expr()?;
            return Ok(Expr::Lambda(Arc::new(FuncDef {
                name: "<lambda>".into(),
                params,
                body: vec![Stmt {
                    line: self.line(),
                    kind: StmtKind::Return(Some(body)),
                }],
            })));
        }
        let e = self.or_expr()?;
        if self.at_kw("if") && !matches!(self.peek_at(1), Tok::Newline) {
            // ternary; `for ... if` comprehensions stop before calling this
            let save = self.pos;
            self.advance();
            let cond = self.or_expr()?;
            if self.eat_kw("else") {
                let other = self.expr()?;
                return Ok(Expr::IfElse(Box::new(cond), Box::new(e), Box::new(other)));
            }
            self.pos = save;
        }
        Ok(e)
    }

    fn or_expr(&mut self) -> Result<Expr, SyntaxError> {
        let mut e = self.and_expr()?;
        while self.eat_kw("or") {
            let r = self.and_expr()?;
            e = Expr::Or(Box::new(e), Box::new(r));
        }
        Ok(e)
    }

    fn and_expr(&mut self) -> Result<Expr, SyntaxError> {
        let mut e = self.not_expr()?;
        while self.eat_kw("and") {
            let r = self.not_expr()?;
            e = Expr::And(Box::new(e), Box::new(r));
        }
        Ok(e)
    }

    fn not_expr(&mut self) -> Result<Expr, SyntaxError> {
        if self.eat_kw("not") {
            let e = self.not_expr()?;
            return Ok(Expr::Unary(UnOp::Not, Box::new(e)));
        }
        self.comparison()
    }

    fn cmp_op(&mut self) -> Option<CmpOp> {
        let op = match self.peek() {
            Tok::Op("==") => CmpOp::Eq,
            Tok::Op("!=") => CmpOp::Ne,
            Tok::Op("<") => CmpOp::Lt,
            Tok::Op("<=") => CmpOp::Le,
            Tok::Op(">") => CmpOp::Gt,
            Tok::Op(">=") => CmpOp::Ge,
            Tok::Name(n) if n == "in" => CmpOp::In,
            Tok::Name(n) if n == "not" && matches!(self.peek_at(1), Tok::Name(m) if m == "in") => {
                self.advance();
                CmpOp::NotIn
            }
            Tok::Name(n) if n == "is" => {
                if matches!(self.peek_at(1), Tok::Name(m) if m == "not") {
                    self.advance();
                    CmpOp::IsNot
                } else {
                    CmpOp::Is
                }
            }
            _ => return None,
        };
        self.advance();
        Some(op)
    }

    fn comparison(&mut self) -> Result<Expr, SyntaxError> {
        let first = self.arith()?;
        let mut rest = Vec::new();
        while let Some(op) = self.cmp_op() {
            rest.push((op, self.arith()?));
        }
        if rest.is_empty() {
            Ok(first)
        } else {
            Ok(Expr::Compare(Box::new(first), rest))
        }
    }

    fn arith(&mut self) -> Result<Expr, SyntaxError> {
        let mut e = self.term()?;
        loop {
            let op = if self.eat_op("+") {
                BinOp::Add
            } else if self.eat_op("-") {
                BinOp::Sub
            } else {
                break;
            };
            let r = self.term()?;
            e = Expr::Bin(Box::new(e), op, Box::new(r));
        }
        Ok(e)
    }

    fn term(&mut self) -> Result<Expr, SyntaxError> {
        let mut e = self.factor()?;
        loop {
            let op = if self.eat_op("*") {
                BinOp::Mul
            } else if self.eat_op("/") {
                BinOp::Div
            } else if self.eat_op("//") {
                BinOp::FloorDiv
            } else if self.eat_op("%") {
                BinOp::Mod
            } else {
                break;
            };
            let r = self.factor()?;
            e = Expr::Bin(Box::new(e), op, Box::new(r));
        }
        Ok(e)
    }

    fn factor(&mut self) -> Result<Expr, SyntaxError> {
        if self.eat_op("-") {
            return Ok(Expr::Unary(UnOp::Neg, Box::new(self.factor()?)));
        }
        if self.eat_op("+") {
            return Ok(Expr::Unary(UnOp::Pos, Box::new(self.factor()?)));
        }
        let base = self.postfix()?;
        if self.eat_op("**") {
            let exp = self.factor()?;
            return Ok(Expr::Bin(Box::new(base), BinOp::Pow, Box::new(exp)));
        }
        Ok(base)
    }

    fn postfix(&mut self) -> Result<Expr, SyntaxError> {
        let mut e = self.atom()?;
        loop {
            if self.eat_op("(") {
                e = self.call_rest(e)?;
            } else if self.eat_op("[") {
                e = self.subscript_rest(e)?;
            } else if self.eat_op(".") {
                let name = match self.advance() {
                    Tok::Name(n) => n,
                    other => return Err(self.err(format!("expected attribute, found {other:?}"))),
                };
                e = Expr::Attr(Box::new(e), name);
            } else {
                return Ok(e);
            }
        }
    }

    fn call_rest(&mut self, func: Expr) -> Result<Expr, SyntaxError> {
        let mut args = Vec::new();
        let mut kwargs = Vec::new();
        let mut star_kwargs = None;
        while !self.at_op(")") {
            if self.eat_op("**") {
                star_kwargs = Some(Box::new(self.expr()?));
            } else if matches!(self.peek(), Tok::Name(_)) && matches!(self.peek_at(1), Tok::Op("=")) {
                let name = self.ident()?;
                self.advance();
                kwargs.push((name, self.expr()?));
            } else {
                let arg = self.expr()?;
                if self.at_kw("for") {
                    args.push(self.comprehension(arg)?);
                } else {
                    args.push(arg);
                }
            }
            if !self.eat_op(",") {
                break;
            }
        }
        self.expect_op(")")?;
        Ok(Expr::Call {
            func: Box::new(func),
            args,
            kwargs,
            star_kwargs,
        })
    }

    fn subscript_rest(&mut self, base: Expr) -> Result<Expr, SyntaxError> {
        let start = if self.at_op(":") {
            None
        } else {
            Some(self.exprlist()?)
        };
        if self.eat_op(":") {
            let end = if self.at_op("]") {
                None
            } else {
                Some(Box::new(self.expr()?))
            };
            self.expect_op("]")?;
            return Ok(Expr::Slice(Box::new(base), start.map(Box::new), end));
        }
        self.expect_op("]")?;
        let key = start.ok_or_else(|| self.err("empty subscript"))?;
        Ok(Expr::Index(Box::new(base), Box::new(key)))
    }

    fn comprehension(&mut self, elt: Expr) -> Result<Expr, SyntaxError> {
        self.expect_kw("for")?;
        let target = self.target_list()?;
        self.expect_kw("in")?;
        let iter = self.or_expr()?;
        let mut conds = Vec::new();
        while self.eat_kw("if") {
            conds.push(self.or_expr()?);
        }
        if self.at_kw("for") {
            return Err(self.err("nested comprehensions are not supported"));
        }
        Ok(Expr::ListComp {
            elt: Box::new(elt),
            target: Box::new(target),
            iter: Box::new(iter),
            conds,
        })
    }

    fn atom(&mut self) -> Result<Expr, SyntaxError> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.advance();
                Ok(Expr::Const(Value::Int(v)))
            }
            Tok::Float(v) => {
                self.advance();
                Ok(Expr::Const(Value::Float(v)))
            }
            Tok::Str(_) | Tok::FStr(_) => self.strings(),
            Tok::Name(n) => match n.as_str() {
                "True" => {
                    self.advance();
                    Ok(Expr::Const(Value::Bool(true)))
                }
                "False" => {
                    self.advance();
                    Ok(Expr::Const(Value::Bool(false)))
                }
                "None" => {
                    self.advance();
                    Ok(Expr::Const(Value::None))
                }
                _ => Ok(Expr::Name(self.ident()?)),
            },
            Tok::Op("(") => {
                self.advance();
                if self.eat_op(")") {
                    return Ok(Expr::Tuple(Vec::new()));
                }
                let first = self.expr()?;
                if self.at_kw("for") {
                    let c = self.comprehension(first)?;
                    self.expect_op(")")?;
                    return Ok(c);
                }
                if self.eat_op(")") {
                    return Ok(first);
                }
                let mut items = vec![first];
                while self.eat_op(",") {
                    if self.at_op(")") {
                        break;
                    }
                    items.push(self.expr()?);
                }
                self.expect_op(")")?;
                Ok(Expr::Tuple(items))
            }
            Tok::Op("[") => {
                self.advance();
                if self.eat_op("]") {
                    return Ok(Expr::List(Vec::new()));
                }
                let first = self.expr()?;
                if self.at_kw("for") {
                    let c = self.comprehension(first)?;
                    self.expect_op("]")?;
                    return Ok(c);
                }
                let mut items = vec![first];
                while self.eat_op(",") {
                    if self.at_op("]") {
                        break;
                    }
                    items.push(self.expr()?);
                }
                self.expect_op("]")?;
                Ok(Expr::List(items))
            }
            Tok::Op("{") => {
                self.advance();
                let mut pairs = Vec::new();
                while !self.at_op("}") {
                    let k = self.expr()?;
                    self.expect_op(":")?;
                    let v = self.expr()?;
                    pairs.push((k, v));
                    if !self.eat_op(",") {
                        break;
                    }
                }
                self.expect_op("}")?;
                Ok(Expr::Dict(pairs))
            }
            other => Err(self.err(format!("invalid syntax near {other:?}"))),
        }
    }

    /// Adjacent string literals concatenate, f-strings included.
    fn strings(&mut self) -> Result<Expr, SyntaxError> {
        let mut parts: Vec<FPart> = Vec::new();
        let mut any_f = false;
        loop {
            match self.peek().clone() {
                Tok::Str(s) => {
                    self.advance();
                    parts.push(FPart::Lit(s));
                }
                Tok::FStr(body) => {
                    self.advance();
                    any_f = true;
                    parts.extend(parse_fstring(&body, self.line())?);
                }
                _ => break,
            }
        }
        if !any_f {
            let s: String = parts
                .into_iter()
                .map(|p| match p {
                    FPart::Lit(s) => s,
                    FPart::Expr(..) => unreachable!(),
                })
                .collect();
            return Ok(Expr::Const(Value::str(s)));
        }
        Ok(Expr::FStr(parts))
    }
}

fn parse_fstring(body: &str, line: usize) -> Result<Vec<FPart>, SyntaxError> {
    let err = |msg: &str| SyntaxError {
        line,
        msg: format!("f-string: {msg}"),
    };
    let chars: Vec<char> = body.chars().collect();
    let mut parts = Vec::new();
    let mut lit = String::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '{' {
            if chars.get(i + 1) == Some(&'{') {
                lit.push('{');
                i += 2;
                continue;
            }
            if !lit.is_empty() {
                parts.push(FPart::Lit(std::mem::take(&mut lit)));
            }
            let mut depth = 0;
            let mut quote: Option<char> = None;
            let start = i + 1;
            let mut j = start;
            let mut split = None;
            while j < chars.len() {
                let d = chars[j];
                if let Some(q) = quote {
                    if d == q {
                        quote = None;
                    }
                } else {
                    match d {
                        '\'' | '"' => quote = Some(d),
                        '(' | '[' | '{' => depth += 1,
                        ')' | ']' => depth -= 1,
                        '}' if depth == 0 => break,
                        '}' => depth -= 1,
                        ':' | '!' if depth == 0 && split.is_none()
                            && !(d == '!' && chars.get(j + 1) == Some(&'=')) => {
                                split = Some(j);
                            }
                        _ => {}
                    }
                }
                j += 1;
            }
            if j >= chars.len() {
                return Err(err("expecting '}'"));
            }
            let expr_end = split.unwrap_or(j);
            let src: String = chars[start..expr_end].iter().collect();
            let mut spec = split.map(|s| chars[s..j].iter().collect::<String>());
            if let Some(s) = &spec {
                if let Some(rest) = s.strip_prefix("!r") {
                    spec = Some(format!("!r{rest}"));
                }
            }
            let expr = parse_expression(src.trim()).map_err(|e| err(&e.msg))?;
            parts.push(FPart::Expr(expr, spec));
            i = j + 1;
        } else if c == '}' {
            if chars.get(i + 1) == Some(&'}') {
                lit.push('}');
                i += 2;
            } else {
                return Err(err("single '}' is not allowed"));
            }
        } else {
            lit.push(c);
            i += 1;
        }
    }
    if !lit.is_empty() {
        parts.push(FPart::Lit(lit));
    }
    Ok(parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_common_shapes() {
        let src = r#"
import json
weather = {}
for city in ["Paris", "Rome"]:
    r = call_tool("weather", city=city)
    weather[city] = r["temp"]
    print(f"{city}: {r['temp']:.1f}")
best = max(weather, key=lambda c: weather[c]) if weather else None
try:
    x = 1 / 0
except ZeroDivisionError as e:
    print("err", e)
print("FINAL ANSWER:", best)
"#;
        let prog = parse_program(src).unwrap();
        assert_eq!(prog.len(), 6);
    }

    #[test]
    fn syntax_errors_have_lines() {
        let e = parse_program("x = 1\ny = (2\n").unwrap_err();
        assert!(e.msg.contains("expected"), "{e:?}");
        let e = parse_program("x = = 2\n").unwrap_err();
        assert_eq!(e.line, 1);
    }

    #[test]
    fn fstring_parts() {
        let parts = parse_fstring("a {x + 1} {{b}} {y!r} {z:>4}", 1).unwrap();
        assert_eq!(parts.len(), 6);
    }

    #[test]
    fn comprehension_and_slices() {
        parse_program("ys = [x * 2 for x in range(10) if x % 2 == 0]\nprint(ys[1:3], ys[:2], ys[-1])\n").unwrap();
        parse_program("total = sum(v for v in d.values())\n").unwrap();
    }
}
