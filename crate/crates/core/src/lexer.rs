//! Comment- and string-aware view of Dafny source lines.
//!
//! [`CodeView`] keeps one `Vec<char>` per line where every character that sits
//! inside a comment, string literal or character literal is replaced by a
//! space. Column positions are preserved, so brace matching and keyword search
//! can run on the masked text and map straight back to the original lines.

pub(crate) fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '\'' || c == '?'
}

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

#[derive(Clone, Debug)]
pub(crate) struct CodeView {
    pub(crate) lines: Vec<Vec<char>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) struct Pos {
    pub(crate) line: usize,
    pub(crate) col: usize,
}

impl Pos {
    pub(crate) fn new(line: usize, col: usize) -> Self {
        Pos { line, col }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum State {
    Code,
    BlockComment(u32),
    VerbatimString,
}

impl CodeView {
    pub(crate) fn new<S: AsRef<str>>(lines: &[S]) -> Self {
        let mut state = State::Code;
        let mut out = Vec::with_capacity(lines.len());
        for line in lines {
            let chars: Vec<char> = line.as_ref().chars().collect();
            let mut masked = chars.clone();
            let mut i = 0;
            while i < chars.len() {
                match state {
                    State::BlockComment(depth) => {
                        if chars[i] == '*' && chars.get(i + 1) == Some(&'/') {
                            masked[i] = ' ';
                            masked[i + 1] = ' ';
                            i += 2;
                            state = if depth == 1 {
                                State::Code
                            } else {
                                State::BlockComment(depth - 1)
                            };
                        } else if chars[i] == '/' && chars.get(i + 1) == Some(&'*') {
                            masked[i] = ' ';
                            masked[i + 1] = ' ';
                            i += 2;
                            state = State::BlockComment(depth + 1);
                        } else {
                            masked[i] = ' ';
                            i += 1;
                        }
                    }
                    State::VerbatimString => {
                        if chars[i] == '"' {
                            if chars.get(i + 1) == Some(&'"') {
                                masked[i] = ' ';
                                masked[i + 1] = ' ';
                                i += 2;
                            } else {
                                i += 1;
                                state = State::Code;
                            }
                        } else {
                            masked[i] = ' ';
                            i += 1;
                        }
                    }
                    State::Code => {
                        let c = chars[i];
                        let next = chars.get(i + 1).copied();
                        if c == '/' && next == Some('/') {
                            for m in masked.iter_mut().skip(i) {
                                *m = ' ';
                            }
                            break;
                        } else if c == '/' && next == Some('*') {
                            masked[i] = ' ';
                            masked[i + 1] = ' ';
                            i += 2;
                            state = State::BlockComment(1);
                        } else if c == '@' && next == Some('"') {
                            i += 2;
                            state = State::VerbatimString;
                        } else if c == '"' {
                            // Regular strings do not span lines; an unterminated
                            // one is closed at the end of the line.
                            i += 1;
                            while i < chars.len() {
                                if chars[i] == '\\' {
                                    masked[i] = ' ';
                                    if i + 1 < chars.len() {
                                        masked[i + 1] = ' ';
                                    }
                                    i += 2;
                                } else if chars[i] == '"' {
                                    i += 1;
                                    break;
                                } else {
                                    masked[i] = ' ';
                                    i += 1;
                                }
                            }
                        } else if c == '\'' && (i == 0 || !is_ident_char(chars[i - 1])) {
                            if let Some(len) = char_literal_len(&chars[i..]) {
                                for m in masked.iter_mut().skip(i + 1).take(len - 2) {
                                    *m = ' ';
                                }
                                i += len;
                            } else {
                                i += 1;
                            }
                        } else {
                            i += 1;
                        }
                    }
                }
            }
            out.push(masked);
        }
        CodeView { lines: out }
    }

    pub(crate) fn char_at(&self, pos: Pos) -> Option<char> {
        self.lines.get(pos.line).and_then(|l| l.get(pos.col)).copied()
    }

    /// Position of the next character after `pos`, crossing line ends.
    pub(crate) fn advance(&self, pos: Pos) -> Option<Pos> {
        let mut line = pos.line;
        let mut col = pos.col + 1;
        while line < self.lines.len() {
            if col < self.lines[line].len() {
                return Some(Pos::new(line, col));
            }
            line += 1;
            col = 0;
        }
        None
    }

    /// First position at or after `pos` holding a non-whitespace character.
    pub(crate) fn skip_ws(&self, pos: Pos) -> Option<Pos> {
        let mut cur = if self.char_at(pos).is_some() {
            pos
        } else {
            self.first_from_line(pos.line + 1)?
        };
        loop {
            match self.char_at(cur) {
                Some(c) if !c.is_whitespace() => return Some(cur),
                _ => cur = self.advance(cur)?,
            }
        }
    }

    fn first_from_line(&self, line: usize) -> Option<Pos> {
        (line..self.lines.len())
            .find(|&l| !self.lines[l].is_empty())
            .map(|l| Pos::new(l, 0))
    }

    /// Last non-whitespace character strictly before `pos`.
    pub(crate) fn prev_significant(&self, pos: Pos) -> Option<(Pos, char)> {
        let mut line = pos.line;
        let mut col = pos.col;
        loop {
            while col > 0 {
                col -= 1;
                let c = self.lines[line][col];
                if !c.is_whitespace() {
                    return Some((Pos::new(line, col), c));
                }
            }
            if line == 0 {
                return None;
            }
            line -= 1;
            col = self.lines[line].len();
        }
    }

    /// Identifier that ends at `end` (inclusive), if any.
    pub(crate) fn word_ending_at(&self, end: Pos) -> Option<String> {
        let line = &self.lines[end.line];
        if !is_ident_char(line[end.col]) {
            return None;
        }
        let mut start = end.col;
        while start > 0 && is_ident_char(line[start - 1]) {
            start -= 1;
        }
        Some(line[start..=end.col].iter().collect())
    }

    /// Matching `}` for the `{` at `open`.
    pub(crate) fn matching_close(&self, open: Pos) -> Option<Pos> {
        debug_assert_eq!(self.char_at(open), Some('{'));
        let mut depth = 0usize;
        let mut cur = open;
        loop {
            match self.char_at(cur) {
                Some('{') => depth += 1,
                Some('}') => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(cur);
                    }
                }
                _ => {}
            }
            cur = self.advance(cur)?;
        }
    }

    /// All identifier tokens in source order.
    pub(crate) fn words(&self) -> Vec<(Pos, String)> {
        let mut out = Vec::new();
        for (l, line) in self.lines.iter().enumerate() {
            let mut i = 0;
            while i < line.len() {
                if is_ident_start(line[i]) && (i == 0 || !is_ident_char(line[i - 1])) {
                    let start = i;
                    while i < line.len() && is_ident_char(line[i]) {
                        i += 1;
                    }
                    out.push((Pos::new(l, start), line[start..i].iter().collect()));
                } else {
                    i += 1;
                }
            }
        }
        out
    }

    pub(crate) fn is_first_on_line(&self, pos: Pos) -> bool {
        self.lines[pos.line][..pos.col].iter().all(|c| c.is_whitespace())
    }

    pub(crate) fn is_rest_blank(&self, pos: Pos) -> bool {
        self.lines[pos.line][pos.col + 1..]
            .iter()
            .all(|c| c.is_whitespace())
    }

    /// First `{` at or after `from` that does not open an attribute, together
    /// with its matching close.
    pub(crate) fn next_block(&self, from: Pos) -> Option<(Pos, Pos)> {
        let mut cur = self.skip_ws(from)?;
        loop {
            if self.char_at(cur) == Some('{') {
                let close = self.matching_close(cur)?;
                if self.is_attribute_open(cur) {
                    cur = self.advance(close)?;
                    continue;
                }
                return Some((cur, close));
            }
            cur = self.advance(cur)?;
        }
    }

    pub(crate) fn is_attribute_open(&self, open: Pos) -> bool {
        self.advance(open)
            .and_then(|p| self.char_at(p))
            .is_some_and(|c| c == ':')
    }
}

/// Length of a character literal such as `'a'`, `'\n'` or `'A'` starting
/// at `chars[0] == '\''`.
fn char_literal_len(chars: &[char]) -> Option<usize> {
    match chars.get(1)? {
        '\\' => {
            if chars.get(2) == Some(&'u') {
                let close = chars.iter().skip(3).position(|&c| c == '\'')? + 3;
                Some(close + 1)
            } else if chars.get(3) == Some(&'\'') {
                Some(4)
            } else {
                None
            }
        }
        '\'' => None,
        _ => (chars.get(2) == Some(&'\'')).then_some(3),
    }
}
