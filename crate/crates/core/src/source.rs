//! Line-addressed program text and the whole-line edit primitives every other
//! module builds on.
//!
//! All line indices are 0-based. Edits never rewrite an existing line: they
//! only insert new lines or delete complete ones.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lexer::{CodeView, Pos};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SourceError {
    #[error("unbalanced braces: block opened on line {0} is never closed")]
    UnbalancedBraces(usize),
    #[error("line {0} is out of bounds")]
    OutOfBounds(usize),
    #[error("assertion records overlap at line {0}")]
    OverlappingRecords(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NewlineStyle {
    Lf,
    CrLf,
}

impl NewlineStyle {
    pub fn as_str(self) -> &'static str {
        match self {
            NewlineStyle::Lf => "\n",
            NewlineStyle::CrLf => "\r\n",
        }
    }
}

/// Verbatim program text split into lines.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceProgram {
    path: String,
    lines: Vec<String>,
    newline: NewlineStyle,
    trailing_newline: bool,
}

impl SourceProgram {
    /// Splits `text` into lines. Mixed line endings are normalized to the
    /// dominant style, which is then used again by [`SourceProgram::to_text`].
    pub fn from_text(path: impl Into<String>, text: &str) -> Self {
        let crlf = text.matches("\r\n").count();
        let lf = text.matches('\n').count() - crlf;
        let newline = if crlf > lf {
            NewlineStyle::CrLf
        } else {
            NewlineStyle::Lf
        };
        let trailing_newline = text.ends_with('\n');
        let body = if trailing_newline {
            &text[..text.len() - 1]
        } else {
            text
        };
        let lines = if text.is_empty() {
            Vec::new()
        } else {
            body.split('\n')
                .map(|l| l.strip_suffix('\r').unwrap_or(l).to_string())
                .collect()
        };
        SourceProgram {
            path: path.into(),
            lines,
            newline,
            trailing_newline,
        }
    }

    pub fn from_lines(path: impl Into<String>, lines: Vec<String>) -> Self {
        SourceProgram {
            path: path.into(),
            lines,
            newline: NewlineStyle::Lf,
            trailing_newline: true,
        }
    }

    pub fn path(&self) -> &str {
        &self.path
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn line(&self, index: usize) -> Option<&str> {
        self.lines.get(index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn newline_style(&self) -> NewlineStyle {
        self.newline
    }

    pub fn with_path(mut self, path: impl Into<String>) -> Self {
        self.path = path.into();
        self
    }

    fn with_lines(&self, lines: Vec<String>) -> Self {
        SourceProgram {
            path: self.path.clone(),
            lines,
            newline: self.newline,
            trailing_newline: self.trailing_newline,
        }
    }

    pub fn to_text(&self) -> String {
        let sep = self.newline.as_str();
        let mut out = self.lines.join(sep);
        if self.trailing_newline && !self.lines.is_empty() {
            out.push_str(sep);
        }
        out
    }

    /// Hex SHA-256 of the whitespace-normalized text: every line is trimmed
    /// and inner whitespace runs collapse to one space, so programs that
    /// differ only in indentation share a digest.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for line in &self.lines {
            let normalized = normalize_ws(line);
            hasher.update(normalized.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }

    pub(crate) fn code_view(&self) -> CodeView {
        CodeView::new(&self.lines)
    }

    pub fn indentation_of(&self, index: usize) -> &str {
        self.lines
            .get(index)
            .map(|l| &l[..l.len() - l.trim_start().len()])
            .unwrap_or("")
    }

    /// Every method, function, lemma and predicate declaration that has a
    /// body spanning at least two lines.
    pub fn method_spans(&self) -> Result<Vec<MethodSpan>, SourceError> {
        parse_method_spans(self)
    }

    /// Closing-brace line of the first block (attributes skipped) that opens
    /// on or after `line`.
    pub fn block_close_after(&self, line: usize) -> Option<usize> {
        let view = self.code_view();
        if line >= view.lines.len() {
            return None;
        }
        view.next_block(Pos::new(line, 0)).map(|(_, close)| close.line)
    }

    pub fn text_of(&self, start: usize, end: usize) -> String {
        self.lines[start..=end].join("\n")
    }
}

impl fmt::Display for SourceProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

pub fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MethodKind {
    Method,
    Function,
    Lemma,
    Predicate,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MethodSpan {
    pub name: String,
    pub kind: MethodKind,
    pub sig_start_line: usize,
    pub body_open_line: usize,
    pub body_close_line: usize,
}

impl MethodSpan {
    /// Lines where a new line may be inserted so that it lands inside the body.
    pub fn accepts_insertion(&self, line: usize) -> bool {
        self.body_open_line < line && line <= self.body_close_line
    }

    pub fn insertion_lines(&self) -> std::ops::RangeInclusive<usize> {
        self.body_open_line + 1..=self.body_close_line
    }

    pub fn contains_line(&self, line: usize) -> bool {
        self.sig_start_line <= line && line <= self.body_close_line
    }

    pub fn line_count(&self) -> usize {
        self.body_close_line - self.sig_start_line + 1
    }

    /// Re-locates this declaration in `program` by name and kind.
    pub fn relocate(&self, program: &SourceProgram) -> Option<MethodSpan> {
        program.method_spans().ok()?.into_iter().find(|s| {
            s.name == self.name && s.kind == self.kind
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssertionRecord {
    pub text: String,
    pub start_line: usize,
    pub end_line: usize,
    pub indentation: String,
    pub enclosing_method: MethodSpan,
}

impl AssertionRecord {
    pub fn line_count(&self) -> usize {
        self.end_line - self.start_line + 1
    }

    pub fn is_multiline(&self) -> bool {
        self.end_line > self.start_line
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PointSource {
    Heuristic,
    Llm,
    GroundTruth,
}

/// Insert a new line so that it becomes line `line`, pushing the old
/// content of that line down.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InsertionPoint {
    pub line: usize,
    pub source: PointSource,
}

impl InsertionPoint {
    pub fn new(line: usize, source: PointSource) -> Self {
        InsertionPoint { line, source }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Indent {
    /// Re-indent the text to the indentation of the target line.
    Inherit,
    /// Insert the text exactly as given.
    Verbatim,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsertEdit {
    pub line: usize,
    pub text: String,
    pub indent: Indent,
}

impl InsertEdit {
    pub fn inherit(line: usize, text: impl Into<String>) -> Self {
        InsertEdit {
            line,
            text: text.into(),
            indent: Indent::Inherit,
        }
    }

    pub fn verbatim(line: usize, text: impl Into<String>) -> Self {
        InsertEdit {
            line,
            text: text.into(),
            indent: Indent::Verbatim,
        }
    }

    pub fn restore(record: &AssertionRecord, line: usize) -> Self {
        InsertEdit::verbatim(line, record.text.clone())
    }
}

/// Old-to-new line index mapping produced by [`remove_assertions`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LineMap(Vec<Option<usize>>);

impl LineMap {
    pub fn get(&self, old: usize) -> Option<usize> {
        self.0.get(old).copied().flatten()
    }

    pub fn as_slice(&self) -> &[Option<usize>] {
        &self.0
    }
}

const DECL_KEYWORDS: &[&str] = &["method", "constructor", "function", "lemma", "predicate"];

const STOP_KEYWORDS: &[&str] = &[
    "method",
    "constructor",
    "function",
    "lemma",
    "predicate",
    "class",
    "datatype",
    "codatatype",
    "module",
    "const",
    "type",
    "trait",
    "iterator",
    "newtype",
    "import",
    "export",
    "ghost",
    "var",
    "static",
    "least",
    "greatest",
    "twostate",
    "abstract",
    "opaque",
];

/// Words after which a `{` starts an expression (set display, map, ...)
/// rather than a declaration body.
const EXPR_WORDS: &[&str] = &["in", "then", "else", "returns", "reads", "modifies"];

fn continues_expression(view: &CodeView, open: Pos) -> bool {
    match view.prev_significant(open) {
        None => false,
        Some((pos, c)) => {
            if "=<,([+-*/%|&!:^~".contains(c) {
                return true;
            }
            view.word_ending_at(pos)
                .is_some_and(|w| EXPR_WORDS.contains(&w.as_str()))
        }
    }
}

pub fn parse_method_spans(program: &SourceProgram) -> Result<Vec<MethodSpan>, SourceError> {
    let view = program.code_view();
    let words = view.words();
    let mut spans = Vec::new();
    let mut resume = Pos::new(0, 0);
    let mut i = 0;
    while i < words.len() {
        let (pos, word) = &words[i];
        i += 1;
        if *pos < resume || !DECL_KEYWORDS.contains(&word.as_str()) {
            continue;
        }
        let kind = match word.as_str() {
            "method" | "constructor" => MethodKind::Method,
            "function" => MethodKind::Function,
            "lemma" => MethodKind::Lemma,
            _ => MethodKind::Predicate,
        };
        // `function method` / `predicate method` are one declaration.
        if matches!(kind, MethodKind::Function | MethodKind::Predicate)
            && words.get(i).is_some_and(|(_, w)| w == "method")
        {
            i += 1;
        }
        let (name, after_name) = match declaration_name(&view, &words, &mut i, word) {
            Some(found) => found,
            None => continue,
        };
        let Some(open) = find_body_open(&view, after_name) else {
            continue;
        };
        let close = view
            .matching_close(open)
            .ok_or(SourceError::UnbalancedBraces(open.line))?;
        resume = close;
        if close.line == open.line {
            continue;
        }
        spans.push(MethodSpan {
            name,
            kind,
            sig_start_line: pos.line,
            body_open_line: open.line,
            body_close_line: close.line,
        });
    }
    Ok(spans)
}

/// Name following a declaration keyword, skipping `{:attribute}` blocks.
/// Anonymous constructors are named after the keyword.
fn declaration_name(
    view: &CodeView,
    words: &[(Pos, String)],
    next_word: &mut usize,
    keyword: &str,
) -> Option<(String, Pos)> {
    let (kw_pos, kw) = &words[*next_word - 1];
    let mut cur = view.advance(Pos::new(kw_pos.line, kw_pos.col + kw.len() - 1))?;
    loop {
        cur = view.skip_ws(cur)?;
        match view.char_at(cur)? {
            '{' if view.is_attribute_open(cur) => {
                cur = view.advance(view.matching_close(cur)?)?;
            }
            '(' | '<' if keyword == "constructor" => return Some((keyword.to_string(), cur)),
            _ => break,
        }
    }
    while *next_word < words.len() && words[*next_word].0 < cur {
        *next_word += 1;
    }
    let (pos, name) = words.get(*next_word)?;
    if *pos != cur {
        return None;
    }
    *next_word += 1;
    Some((name.clone(), Pos::new(pos.line, pos.col + name.chars().count() - 1)))
}

fn find_body_open(view: &CodeView, after: Pos) -> Option<Pos> {
    let mut depth = 0i32;
    let mut cur = view.advance(after)?;
    loop {
        let c = view.char_at(cur)?;
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            // left the enclosing scope without finding a body
            '}' => return None,
            '{' => {
                if view.is_attribute_open(cur) || depth > 0 || continues_expression(view, cur) {
                    cur = view.matching_close(cur)?;
                } else {
                    return Some(cur);
                }
            }
            c if depth == 0
                && crate::lexer::is_ident_char(c)
                && (cur.col == 0 || !crate::lexer::is_ident_char(view.lines[cur.line][cur.col - 1])) =>
            {
                let line = &view.lines[cur.line];
                let end = (cur.col..line.len())
                    .take_while(|&k| crate::lexer::is_ident_char(line[k]))
                    .last()
                    .unwrap_or(cur.col);
                let word: String = line[cur.col..=end].iter().collect();
                if STOP_KEYWORDS.contains(&word.as_str()) {
                    return None;
                }
                cur = Pos::new(cur.line, end);
            }
            _ => {}
        }
        cur = view.advance(cur)?;
    }
}

/// Top-level `assert` statements of a body, in source order. A statement is
/// reported only when it owns its lines: it starts a line and nothing but
/// whitespace or comments follows its terminator. `assert ... by { ... }`
/// blocks are captured up to the closing brace of the proof block, and
/// assertions nested inside such a block belong to the outer record.
pub fn extract_assertions(program: &SourceProgram, span: &MethodSpan) -> Vec<AssertionRecord> {
    let view = program.code_view();
    let Some(open) = body_open_pos(&view, span) else {
        return Vec::new();
    };
    let Some(close) = view.matching_close(open) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let mut resume = open;
    for (pos, word) in view.words() {
        if pos <= resume || pos >= close {
            continue;
        }
        if word != "assert" {
            continue;
        }
        let Some(end) = statement_end(&view, Pos::new(pos.line, pos.col + 5)) else {
            continue;
        };
        resume = end;
        if end >= close || !view.is_first_on_line(pos) || !view.is_rest_blank(end) {
            continue;
        }
        out.push(AssertionRecord {
            text: program.text_of(pos.line, end.line),
            start_line: pos.line,
            end_line: end.line,
            indentation: program.indentation_of(pos.line).to_string(),
            enclosing_method: span.clone(),
        });
    }
    out
}

fn body_open_pos(view: &CodeView, span: &MethodSpan) -> Option<Pos> {
    let line = view.lines.get(span.body_open_line)?;
    // The body brace is the last unattributed `{` on its line whose match
    // lands on the recorded close line.
    (0..line.len()).rev().find_map(|col| {
        let p = Pos::new(span.body_open_line, col);
        (line[col] == '{'
            && !view.is_attribute_open(p)
            && view.matching_close(p).map(|c| c.line) == Some(span.body_close_line))
        .then_some(p)
    })
}

/// End of the statement whose keyword ends at `kw_end`: the `;` at nesting
/// depth zero, or the closing brace of a `by { ... }` proof block.
fn statement_end(view: &CodeView, kw_end: Pos) -> Option<Pos> {
    let mut depth = 0i32;
    let mut cur = view.advance(kw_end)?;
    loop {
        let c = view.char_at(cur)?;
        match c {
            '(' | '[' | '{' => depth += 1,
            ')' | ']' | '}' => {
                depth -= 1;
                if depth < 0 {
                    return None;
                }
            }
            ';' if depth == 0 => return Some(cur),
            'b' if depth == 0 => {
                let line = &view.lines[cur.line];
                let at_word = (cur.col == 0 || !crate::lexer::is_ident_char(line[cur.col - 1]))
                    && line.get(cur.col + 1) == Some(&'y')
                    && line
                        .get(cur.col + 2)
                        .is_none_or(|&c| !crate::lexer::is_ident_char(c));
                if at_word {
                    let (_, block_close) = view.next_block(Pos::new(cur.line, cur.col + 2))?;
                    return Some(block_close);
                }
            }
            _ => {}
        }
        cur = view.advance(cur)?;
    }
}

/// Inserts every edit as whole new lines. Edit indices refer to the lines of
/// `program` as given; edits sharing an index keep their relative order.
pub fn insert_lines(program: &SourceProgram, edits: &[InsertEdit]) -> Result<SourceProgram, SourceError> {
    let n = program.len();
    if let Some(bad) = edits.iter().find(|e| e.line > n) {
        return Err(SourceError::OutOfBounds(bad.line));
    }
    let mut order: Vec<usize> = (0..edits.len()).collect();
    order.sort_by_key(|&k| edits[k].line);
    let extra: usize = edits.iter().map(|e| e.text.split('\n').count()).sum();
    let mut out = Vec::with_capacity(n + extra);
    let mut next = order.into_iter().peekable();
    for index in 0..=n {
        while let Some(&k) = next.peek() {
            if edits[k].line != index {
                break;
            }
            next.next();
            let edit = &edits[k];
            match edit.indent {
                Indent::Verbatim => {
                    out.extend(edit.text.split('\n').map(|l| l.trim_end_matches('\r').to_string()))
                }
                Indent::Inherit => out.extend(reindent(&edit.text, program.indentation_of(index))),
            }
        }
        if index < n {
            out.push(program.lines[index].clone());
        }
    }
    Ok(program.with_lines(out))
}

/// Shifts `text` so its first non-blank line starts at `indent`, keeping the
/// relative indentation of later lines.
pub fn reindent(text: &str, indent: &str) -> Vec<String> {
    let lines: Vec<&str> = text.split('\n').map(|l| l.trim_end_matches('\r')).collect();
    let base = lines
        .iter()
        .find(|l| !l.trim().is_empty())
        .map(|l| &l[..l.len() - l.trim_start().len()])
        .unwrap_or("");
    lines
        .iter()
        .map(|l| {
            if l.trim().is_empty() {
                String::new()
            } else {
                let body = l.strip_prefix(base).unwrap_or_else(|| l.trim_start());
                format!("{indent}{body}")
            }
        })
        .collect()
}

pub fn remove_assertions(
    program: &SourceProgram,
    records: &[AssertionRecord],
) -> Result<(SourceProgram, LineMap), SourceError> {
    let mut sorted: Vec<&AssertionRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.start_line);
    for r in &sorted {
        if r.end_line >= program.len() || r.start_line > r.end_line {
            return Err(SourceError::OutOfBounds(r.end_line));
        }
    }
    for pair in sorted.windows(2) {
        if pair[1].start_line <= pair[0].end_line {
            return Err(SourceError::OverlappingRecords(pair[1].start_line));
        }
    }
    let mut removed = vec![false; program.len()];
    for r in &sorted {
        for flag in &mut removed[r.start_line..=r.end_line] {
            *flag = true;
        }
    }
    let mut map = Vec::with_capacity(program.len());
    let mut lines = Vec::with_capacity(program.len());
    for (i, line) in program.lines.iter().enumerate() {
        if removed[i] {
            map.push(None);
        } else {
            map.push(Some(lines.len()));
            lines.push(line.clone());
        }
    }
    Ok((program.with_lines(lines), LineMap(map)))
}

/// The span's lines prefixed with `N: `, numbered from 0 at the signature.
pub fn number_lines(program: &SourceProgram, span: &MethodSpan) -> String {
    program.lines[span.sig_start_line..=span.body_close_line]
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{i}: {l}"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MAIN: &str = "method Main()
{
  var q := [1,2,2,5,10,10,10,23];
  assert Sorted(q);
  assert 10 in q;
  var i,j := FindRange(q, 10);
  assert i == 4 && j == 7 by {
    assert q[0] <= q[1] <= q[2] <= q[3] < 10;
  }
}
";

    fn prog(text: &str) -> SourceProgram {
        SourceProgram::from_text("t.dfy", text)
    }

    #[test]
    fn round_trips_bytes() {
        for text in ["", "\n", "a", "a\n", "a\r\nb\r\n", "a\n\nb", "x\r\ny"] {
            assert_eq!(prog(text).to_text(), text, "{text:?}");
        }
    }

    #[test]
    fn mixed_newlines_normalize_to_dominant() {
        let p = prog("a\r\nb\r\nc\nd");
        assert_eq!(p.newline_style(), NewlineStyle::CrLf);
        assert_eq!(p.to_text(), "a\r\nb\r\nc\r\nd");
    }

    #[test]
    fn main_is_one_method() {
        let spans = prog(MAIN).method_spans().unwrap();
        assert_eq!(
            spans,
            vec![MethodSpan {
                name: "Main".into(),
                kind: MethodKind::Method,
                sig_start_line: 0,
                body_open_line: 1,
                body_close_line: 9,
            }]
        );
    }

    #[test]
    fn reference_main_layout_parses() {
        let text = "method Main(){\n\tvar q := [1,2,2,5,10,10,10,23];\n\tassert Sorted(q);\n\tassert 10 in q;\n\tvar i,j := FindRange(q, 10);\n\tassert i == 4 && j == 7 by {\n\t\tassert q[0] <= q[1] <= q[2] <= q[3] < 10;\n        }}\n";
        let spans = prog(text).method_spans().unwrap();
        assert_eq!(spans.len(), 1);
        assert_eq!((spans[0].body_open_line, spans[0].body_close_line), (0, 7));
    }

    #[test]
    fn empty_file_has_no_spans() {
        assert!(prog("").method_spans().unwrap().is_empty());
    }

    #[test]
    fn attributes_and_set_displays_are_not_bodies() {
        let text = "method {:verify true} M(s: set<int>) returns (r: int)
  requires s == {1, 2}
  ensures r in {3}
{
  r := 3;
}
function F(x: int): set<int> { {x} }
lemma {:axiom} NoBody(x: int)
  ensures x == x
predicate P(x: int)
{
  x > 0
}
";
        let spans = prog(text).method_spans().unwrap();
        let names: Vec<_> = spans.iter().map(|s| (s.name.as_str(), s.kind)).collect();
        assert_eq!(names, vec![("M", MethodKind::Method), ("P", MethodKind::Predicate)]);
        assert_eq!((spans[0].body_open_line, spans[0].body_close_line), (3, 5));
    }

    #[test]
    fn unbalanced_body_is_an_error() {
        let err = prog("method M()\n{\n  var x := 1;\n").method_spans().unwrap_err();
        assert_eq!(err, SourceError::UnbalancedBraces(1));
    }

    #[test]
    fn function_method_is_one_declaration() {
        let spans = prog("function method Sq(x: int): int\n{\n  x * x\n}\n").method_spans().unwrap();
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].name, "Sq");
        assert_eq!(spans[0].kind, MethodKind::Function);
    }

    #[test]
    fn main_assertions() {
        let p = prog(MAIN);
        let span = &p.method_spans().unwrap()[0];
        let recs = extract_assertions(&p, span);
        let got: Vec<_> = recs.iter().map(|r| (r.start_line, r.end_line)).collect();
        assert_eq!(got, vec![(3, 3), (4, 4), (6, 8)]);
        assert_eq!(recs[0].text, "  assert Sorted(q);");
        assert!(recs[2].text.starts_with("  assert i == 4 && j == 7 by {"));
        assert_eq!(recs[2].indentation, "  ");
    }

    #[test]
    fn no_assertions() {
        let p = prog("method M()\n{\n  var x := 1;\n}\n");
        let span = &p.method_spans().unwrap()[0];
        assert!(extract_assertions(&p, span).is_empty());
    }

    #[test]
    fn shared_line_and_commented_asserts_are_skipped() {
        let p = prog(
            "method M(x: int)\n{\n  if x > 0 { assert x > 0; }\n  // assert false;\n  assert x == x; // ok\n  assert\n    x >= x;\n}\n",
        );
        let span = &p.method_spans().unwrap()[0];
        let got: Vec<_> = extract_assertions(&p, span)
            .iter()
            .map(|r| (r.start_line, r.end_line))
            .collect();
        assert_eq!(got, vec![(4, 4), (5, 6)]);
    }

    #[test]
    fn insert_inherits_indentation_and_shifts() {
        let p = prog(MAIN);
        let out = insert_lines(
            &p,
            &[
                InsertEdit::inherit(7, "assert (j == |q| || q[j] > 10);"),
                InsertEdit::inherit(6, "assert 10 in q[i..j];"),
            ],
        )
        .unwrap();
        assert_eq!(out.line(6), Some("  assert 10 in q[i..j];"));
        assert_eq!(out.line(7), Some("  assert i == 4 && j == 7 by {"));
        assert_eq!(out.line(8), Some("    assert (j == |q| || q[j] > 10);"));
        assert_eq!(out.len(), p.len() + 2);
    }

    #[test]
    fn insert_bounds() {
        let p = prog("a\nb\n");
        assert_eq!(insert_lines(&p, &[]).unwrap(), p);
        assert!(insert_lines(&p, &[InsertEdit::inherit(2, "c")]).is_ok());
        assert_eq!(
            insert_lines(&p, &[InsertEdit::inherit(3, "c")]).unwrap_err(),
            SourceError::OutOfBounds(3)
        );
    }

    #[test]
    fn multi_line_text_keeps_relative_indentation() {
        assert_eq!(
            reindent("assert x by {\n  reveal A;\n}", "    "),
            vec!["    assert x by {", "      reveal A;", "    }"]
        );
    }

    #[test]
    fn remove_then_restore() {
        let p = prog(MAIN);
        let span = &p.method_spans().unwrap()[0];
        let recs = extract_assertions(&p, span);
        let (removed, map) = remove_assertions(&p, &recs[2..]).unwrap();
        assert_eq!(removed.len(), p.len() - 3);
        assert_eq!(map.get(9), Some(6));
        assert_eq!(map.get(7), None);
        let back = insert_lines(&removed, &[InsertEdit::restore(&recs[2], 6)]).unwrap();
        assert_eq!(back.to_text(), MAIN);
        assert_eq!(remove_assertions(&p, &[]).unwrap().0, p);
    }

    #[test]
    fn overlapping_records_rejected() {
        let p = prog(MAIN);
        let span = &p.method_spans().unwrap()[0];
        let mut r = extract_assertions(&p, span)[2].clone();
        let mut inner = r.clone();
        inner.start_line = 7;
        inner.end_line = 7;
        r.end_line = 8;
        assert_eq!(
            remove_assertions(&p, &[r, inner]).unwrap_err(),
            SourceError::OverlappingRecords(7)
        );
    }

    #[test]
    fn numbering() {
        let p = prog("lemma L()\n{\n}\nmethod M() { var x := 1;\n}\n");
        let spans = p.method_spans().unwrap();
        assert_eq!(number_lines(&p, &spans[0]), "0: lemma L()\n1: {\n2: }");
        assert_eq!(number_lines(&p, &spans[1]), "0: method M() { var x := 1;\n1: }");
    }

    #[test]
    fn digest_ignores_indentation() {
        assert_eq!(prog("  a  b\n").digest(), prog("a b\n").digest());
        assert_ne!(prog("a\n").digest(), prog("b\n").digest());
    }

    #[test]
    fn block_close_after_skips_attributes() {
        let p = prog("while i < n\n  invariant {:x} true\n{\n  i := i + 1;\n}\n");
        assert_eq!(p.block_close_after(0), Some(4));
    }
}
