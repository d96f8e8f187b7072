//! Reader and writer for Cassandra's `.pomdp` text format.
//!
//! Supported: `discount`, `values`, `states`, `actions`, `observations` (counts or
//! names), `start` (vector, `uniform`, a single state, `include`/`exclude` lists),
//! and every `T:`, `O:`, `R:` entry form with `*`, named or numbered identifiers,
//! `uniform` and `identity` shorthands. `R(a, s, s', o)` is reduced to the expected
//! cost g(s, a); when the reward of `(a, s)` is the same for all `(s', o)` that
//! value is used verbatim so numeric tables survive a write/read cycle bit-for-bit.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::{Names, PomdpModel};

const KEYWORDS: [&str; 9] = [
    "discount",
    "values",
    "states",
    "actions",
    "observations",
    "start",
    "T",
    "O",
    "R",
];

#[derive(Debug, Clone)]
struct Token {
    text: String,
    line: usize,
}

fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        for word in line.replace(':', " : ").split_whitespace() {
            out.push(Token {
                text: word.to_string(),
                line: i + 1,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Space {
    States,
    Actions,
    Observations,
}

impl Space {
    fn label(self) -> &'static str {
        match self {
            Space::States => "state",
            Space::Actions => "action",
            Space::Observations => "observation",
        }
    }
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    discount: Option<f64>,
    reward: bool,
    sizes: [Option<usize>; 3],
    names: [Option<Vec<String>>; 3],
    start: Option<Vec<f64>>,
    // [a][s][s']
    t: Vec<f64>,
    // [a][s'][o]
    o: Vec<f64>,
    // [a][s][s'][o]
    r: Vec<f64>,
    tables_ready: bool,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_is(&self, s: &str) -> bool {
        self.peek().is_some_and(|t| t.text == s)
    }

    fn last_line(&self) -> usize {
        self.tokens.last().map_or(0, |t| t.line)
    }

    fn next(&mut self) -> Result<Token> {
        let tok = self.tokens.get(self.pos).cloned().ok_or_else(|| Error::Syntax {
            line: self.last_line(),
            message: "unexpected end of input".into(),
        })?;
        self.pos += 1;
        Ok(tok)
    }

    fn expect_colon(&mut self) -> Result<()> {
        let tok = self.next()?;
        if tok.text != ":" {
            return Err(syntax(tok.line, format!("expected `:`, found `{}`", tok.text)));
        }
        Ok(())
    }

    fn number(&mut self) -> Result<f64> {
        let tok = self.next()?;
        tok.text
            .parse::<f64>()
            .map_err(|_| syntax(tok.line, format!("expected a number, found `{}`", tok.text)))
    }

    fn numbers(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.number()).collect()
    }

    /// True when the token at `pos` starts a new top-level statement.
    fn at_statement(&self) -> bool {
        let Some(tok) = self.peek() else { return true };
        if !KEYWORDS.contains(&tok.text.as_str()) {
            return false;
        }
        match self.tokens.get(self.pos + 1).map(|t| t.text.as_str()) {
            Some(":") => true,
            Some("include") | Some("exclude") => tok.text == "start",
            _ => false,
        }
    }

    fn words_until_statement(&mut self) -> Vec<Token> {
        let mut out = Vec::new();
        while !self.at_statement() {
            out.push(self.tokens[self.pos].clone());
            self.pos += 1;
        }
        out
    }

    fn size(&self, space: Space, line: usize) -> Result<usize> {
        self.sizes[space as usize]
            .ok_or_else(|| syntax(line, format!("{}s must be declared before use", space.label())))
    }

    fn resolve(&self, space: Space, tok: &Token) -> Result<Vec<usize>> {
        let n = self.size(space, tok.line)?;
        if tok.text == "*" {
            return Ok((0..n).collect());
        }
        if let Some(names) = &self.names[space as usize] {
            if let Some(i) = names.iter().position(|s| *s == tok.text) {
                return Ok(vec![i]);
            }
        }
        match tok.text.parse::<usize>() {
            Ok(i) if i < n => Ok(vec![i]),
            _ => Err(Error::UndeclaredIdentifier {
                line: tok.line,
                kind: space.label(),
                name: tok.text.clone(),
            }),
        }
    }

    fn ensure_tables(&mut self, line: usize) -> Result<()> {
        if self.tables_ready {
            return Ok(());
        }
        let s = self.size(Space::States, line)?;
        let a = self.size(Space::Actions, line)?;
        let o = self.size(Space::Observations, line)?;
        self.t = vec![0.0; a * s * s];
        self.o = vec![0.0; a * s * o];
        self.r = vec![0.0; a * s * s * o];
        self.tables_ready = true;
        Ok(())
    }

    fn declare(&mut self, space: Space) -> Result<()> {
        self.expect_colon()?;
        let words = self.words_until_statement();
        let line = words.first().map_or(self.last_line(), |t| t.line);
        match words.as_slice() {
            [] => return Err(syntax(line, format!("empty {} declaration", space.label()))),
            [one] if one.text.parse::<usize>().is_ok() => {
                let n: usize = one.text.parse().unwrap();
                if n == 0 {
                    return Err(syntax(line, format!("{} count must be positive", space.label())));
                }
                self.sizes[space as usize] = Some(n);
            }
            names => {
                self.sizes[space as usize] = Some(names.len());
                self.names[space as usize] = Some(names.iter().map(|t| t.text.clone()).collect());
            }
        }
        Ok(())
    }

    fn start(&mut self) -> Result<()> {
        let line = self.peek().map_or(0, |t| t.line);
        let mode = if self.peek_is("include") || self.peek_is("exclude") {
            Some(self.next()?.text)
        } else {
            None
        };
        self.expect_colon()?;
        let n = self.size(Space::States, line)?;
        let words = self.words_until_statement();
        let dist = match (mode.as_deref(), words.as_slice()) {
            (None, [w]) if w.text == "uniform" => vec![1.0 / n as f64; n],
            (None, ws) if ws.len() == n && ws.iter().all(|w| w.text.parse::<f64>().is_ok()) => {
                ws.iter().map(|w| w.text.parse().unwrap()).collect()
            }
            (None, [w]) => {
                let mut d = vec![0.0; n];
                for i in self.resolve(Space::States, w)? {
                    d[i] = 1.0;
                }
                d
            }
            (Some(m), ws) if !ws.is_empty() => {
                let mut chosen = vec![m == "exclude"; n];
                for w in ws {
                    for i in self.resolve(Space::States, w)? {
                        chosen[i] = m == "include";
                    }
                }
                let k = chosen.iter().filter(|&&c| c).count();
                if k == 0 {
                    return Err(syntax(line, "start distribution selects no state".into()));
                }
                chosen.iter().map(|&c| if c { 1.0 / k as f64 } else { 0.0 }).collect()
            }
            _ => return Err(syntax(line, "malformed start distribution".into())),
        };
        self.start = Some(dist);
        Ok(())
    }

    fn transition_entry(&mut self) -> Result<()> {
        self.expect_colon()?;
        let head = self.next()?;
        self.ensure_tables(head.line)?;
        let s = self.size(Space::States, head.line)?;
        let actions = self.resolve(Space::Actions, &head)?;
        if self.peek_is(":") {
            self.next()?;
            let from = self.next()?;
            let from = self.resolve(Space::States, &from)?;
            if self.peek_is(":") {
                self.next()?;
                let to = self.next()?;
                let to = self.resolve(Space::States, &to)?;
                let p = self.number()?;
                for &a in &actions {
                    for &i in &from {
                        for &j in &to {
                            self.t[(a * s + i) * s + j] = p;
                        }
                    }
                }
            } else {
                let row = if self.peek_is("uniform") {
                    self.next()?;
                    vec![1.0 / s as f64; s]
                } else {
                    self.numbers(s)?
                };
                for &a in &actions {
                    for &i in &from {
                        self.t[(a * s + i) * s..(a * s + i + 1) * s].copy_from_slice(&row);
                    }
                }
            }
        } else {
            let matrix = if self.peek_is("uniform") {
                self.next()?;
                vec![1.0 / s as f64; s * s]
            } else if self.peek_is("identity") {
                self.next()?;
                let mut m = vec![0.0; s * s];
                (0..s).for_each(|i| m[i * s + i] = 1.0);
                m
            } else {
                self.numbers(s * s)?
            };
            for &a in &actions {
                self.t[a * s * s..(a + 1) * s * s].copy_from_slice(&matrix);
            }
        }
        Ok(())
    }

    fn observation_entry(&mut self) -> Result<()> {
        self.expect_colon()?;
        let head = self.next()?;
        self.ensure_tables(head.line)?;
        let s = self.size(Space::States, head.line)?;
        let no = self.size(Space::Observations, head.line)?;
        let actions = self.resolve(Space::Actions, &head)?;
        if self.peek_is(":") {
            self.next()?;
            let to = self.next()?;
            let to = self.resolve(Space::States, &to)?;
            if self.peek_is(":") {
                self.next()?;
                let obs = self.next()?;
                let obs = self.resolve(Space::Observations, &obs)?;
                let p = self.number()?;
                for &a in &actions {
                    for &j in &to {
                        for &y in &obs {
                            self.o[(a * s + j) * no + y] = p;
                        }
                    }
                }
            } else {
                let row = if self.peek_is("uniform") {
                    self.next()?;
                    vec![1.0 / no as f64; no]
                } else {
                    self.numbers(no)?
                };
                for &a in &actions {
                    for &j in &to {
                        self.o[(a * s + j) * no..(a * s + j + 1) * no].copy_from_slice(&row);
                    }
                }
            }
        } else {
            let matrix = if self.peek_is("uniform") {
                self.next()?;
                vec![1.0 / no as f64; s * no]
            } else {
                self.numbers(s * no)?
            };
            for &a in &actions {
                self.o[a * s * no..(a + 1) * s * no].copy_from_slice(&matrix);
            }
        }
        Ok(())
    }

    fn reward_entry(&mut self) -> Result<()> {
        self.expect_colon()?;
        let head = self.next()?;
        self.ensure_tables(head.line)?;
        let s = self.size(Space::States, head.line)?;
        let no = self.size(Space::Observations, head.line)?;
        let actions = self.resolve(Space::Actions, &head)?;
        self.expect_colon()?;
        let from = self.next()?;
        let from = self.resolve(Space::States, &from)?;
        let idx = |a: usize, i: usize, j: usize, y: usize| ((a * s + i) * s + j) * no + y;
        if self.peek_is(":") {
            self.next()?;
            let to = self.next()?;
            let to = self.resolve(Space::States, &to)?;
            if self.peek_is(":") {
                self.next()?;
                let obs = self.next()?;
                let obs = self.resolve(Space::Observations, &obs)?;
                let v = self.number()?;
                for &a in &actions {
                    for &i in &from {
                        for &j in &to {
                            for &y in &obs {
                                self.r[idx(a, i, j, y)] = v;
                            }
                        }
                    }
                }
            } else {
                let row = self.numbers(no)?;
                for &a in &actions {
                    for &i in &from {
                        for &j in &to {
                            for (y, &v) in row.iter().enumerate() {
                                self.r[idx(a, i, j, y)] = v;
                            }
                        }
                    }
                }
            }
        } else {
            let matrix = self.numbers(s * no)?;
            for &a in &actions {
                for &i in &from {
                    for j in 0..s {
                        for y in 0..no {
                            self.r[idx(a, i, j, y)] = matrix[j * no + y];
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn run(&mut self) -> Result<()> {
        while let Some(tok) = self.peek().cloned() {
            if !self.at_statement() {
                return Err(syntax(tok.line, format!("unexpected token `{}`", tok.text)));
            }
            self.pos += 1;
            match tok.text.as_str() {
                "discount" => {
                    self.expect_colon()?;
                    self.discount = Some(self.number()?);
                }
                "values" => {
                    self.expect_colon()?;
                    let v = self.next()?;
                    self.reward = match v.text.as_str() {
                        "reward" => true,
                        "cost" => false,
                        other => return Err(syntax(v.line, format!("unknown values kind `{other}`"))),
                    };
                }
                "states" => self.declare(Space::States)?,
                "actions" => self.declare(Space::Actions)?,
                "observations" => self.declare(Space::Observations)?,
                "start" => self.start()?,
                "T" => self.transition_entry()?,
                "O" => self.observation_entry()?,
                "R" => self.reward_entry()?,
                _ => unreachable!(),
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<PomdpModel> {
        let line = self.last_line();
        self.ensure_tables(line)?;
        let s = self.sizes[0].unwrap();
        let a = self.sizes[1].unwrap();
        let no = self.sizes[2].unwrap();
        let sign = if self.reward { -1.0 } else { 1.0 };
        let mut cost = vec![0.0; s * no * a];
        for x in 0..s {
            for u in 0..a {
                let block = &self.r[(u * s + x) * s * no..(u * s + x + 1) * s * no];
                let g = if block.iter().all(|&v| v == block[0]) {
                    block[0]
                } else {
                    let mut acc = 0.0;
                    for j in 0..s {
                        let pt = self.t[(u * s + x) * s + j];
                        for y in 0..no {
                            acc += pt * self.o[(u * s + j) * no + y] * block[j * no + y];
                        }
                    }
                    acc
                };
                let c = sign * g;
                // avoid writing negative zero
                let c = if c == 0.0 { 0.0 } else { c };
                for y in 0..no {
                    cost[(x * no + y) * a + u] = c;
                }
            }
        }
        let mut model = PomdpModel::from_flat(s, no, a, self.t, self.o, cost, self.start)?;
        model.discount = self.discount;
        let [states, actions, observations] = self.names;
        model.names = Names {
            states,
            actions,
            observations,
        };
        Ok(model)
    }
}

fn syntax(line: usize, message: String) -> Error {
    Error::Syntax { line, message }
}

/// Parses a `.pomdp` description. Rewards are converted to costs.
pub fn parse_pomdp(text: &str) -> Result<PomdpModel> {
    let mut p = Parser {
        tokens: tokenize(text),
        pos: 0,
        discount: None,
        reward: true,
        sizes: [None; 3],
        names: [None, None, None],
        start: None,
        t: Vec::new(),
        o: Vec::new(),
        r: Vec::new(),
        tables_ready: false,
    };
    p.run()?;
    p.finish()
}

/// Writes a model as `.pomdp` text with `values: cost`.
///
/// Fails if the cost depends on the current observation, which the format cannot express.
pub fn write_pomdp(model: &PomdpModel) -> Result<String> {
    if !model.cost_ignores_observation() {
        return Err(Error::Unrepresentable("cost depends on the current observation".into()));
    }
    let (s, no, a) = (model.n_states(), model.n_obs(), model.n_actions());
    let mut out = String::new();
    let decl = |names: &Option<Vec<String>>, n: usize| match names {
        Some(v) => v.join(" "),
        None => n.to_string(),
    };
    let _ = writeln!(out, "discount: {}", model.discount.unwrap_or(1.0));
    let _ = writeln!(out, "values: cost");
    let _ = writeln!(out, "states: {}", decl(&model.names.states, s));
    let _ = writeln!(out, "actions: {}", decl(&model.names.actions, a));
    let _ = writeln!(out, "observations: {}", decl(&model.names.observations, no));
    if let Some(d) = model.initial_dist() {
        let _ = writeln!(out, "start: {}", join(d));
    }
    out.push('\n');
    for u in 0..a {
        for x in 0..s {
            let _ = writeln!(out, "T: {u} : {x}\n{}", join(model.transition_row(x, u)));
        }
    }
    out.push('\n');
    for u in 0..a {
        for x in 0..s {
            let _ = writeln!(out, "O: {u} : {x}\n{}", join(model.observation_row(u, x)));
        }
    }
    out.push('\n');
    for u in 0..a {
        for x in 0..s {
            let _ = writeln!(out, "R: {u} : {x} : * : * {}", model.cost(x, 0, u));
        }
    }
    Ok(out)
}

fn join(v: &[f64]) -> String {
    v.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(" ")
}
