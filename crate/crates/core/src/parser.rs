//! Line-oriented feeder description format.
//!
//! One element per logical line: `<kind> <id> key=value ...`. A trailing
//! backslash continues the line, `#` starts a comment, bracketed values hold
//! vectors and row-major matrices with `|` between rows, and complex numbers
//! are written like `0.3+0.6j`. Inside brackets a sign atom glues its two
//! neighbours together, so `0.3 + 0.6j` and `0.3+0.6j` are the same entry.
//!
//! Parsing and serialization are exact inverses on the value level: numbers
//! are emitted with the shortest decimal digits that re-parse to the same
//! bits, and the kilovolt field is shifted between units by moving the
//! decimal point in the digit string rather than by multiplying.

use std::fmt;

use num_complex::Complex64;
use thiserror::Error;

use crate::model::{
    Bus, CapacitorBank, ComplexMatrix, Connection, DGUnit, LineSegment, Load, LoadModel,
    NetworkBuilder, Phase, PhaseSet, PhasedNetwork, Regulator, Transformer, Violation,
    DEFAULT_V_MAX_PU, DEFAULT_V_MIN_PU,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ElementKind {
    Network,
    Bus,
    Line,
    Transformer,
    Load,
    Capacitor,
    Regulator,
    Dg,
}

impl ElementKind {
    pub fn keyword(self) -> &'static str {
        match self {
            ElementKind::Network => "network",
            ElementKind::Bus => "bus",
            ElementKind::Line => "line",
            ElementKind::Transformer => "transformer",
            ElementKind::Load => "load",
            ElementKind::Capacitor => "capacitor",
            ElementKind::Regulator => "regulator",
            ElementKind::Dg => "dg",
        }
    }

    fn from_keyword(word: &str) -> Option<Self> {
        Some(match word {
            "network" => ElementKind::Network,
            "bus" => ElementKind::Bus,
            "line" => ElementKind::Line,
            "transformer" => ElementKind::Transformer,
            "load" => ElementKind::Load,
            "capacitor" => ElementKind::Capacitor,
            "regulator" => ElementKind::Regulator,
            "dg" => ElementKind::Dg,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TypedValue {
    Real(f64),
    Complex(Complex64),
    Bool(bool),
    Word(String),
    Phases(PhaseSet),
    RealVector(Vec<f64>),
    Matrix { rows: usize, cols: usize, entries: Vec<Complex64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Property {
    pub key: String,
    pub value: TypedValue,
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Declaration {
    pub kind: ElementKind,
    pub id: String,
    pub line: usize,
    pub col: usize,
    pub properties: Vec<Property>,
}

impl Declaration {
    pub fn property(&self, key: &str) -> Option<&Property> {
        self.properties.iter().find(|p| p.key == key)
    }
}

/// Parsed feeder file: declarations in source order, values typed and shape
/// checked, references not yet resolved.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeederDocument {
    pub declarations: Vec<Declaration>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseErrorKind {
    #[error("{0}")]
    Syntax(String),
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: String },
    #[error("unknown element kind {0}")]
    UnknownKind(String),
    #[error("unknown key {key} for {kind}")]
    UnknownKey { kind: &'static str, key: String },
    #[error("{0}")]
    MatrixShapeMismatch(String),
}

/// Parse failure at an exact source position; `col` counts bytes from 1.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub kind: ParseErrorKind,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BuildError {
    #[error("{decl}: {key} references {target} which is not declared")]
    UnresolvedReference { decl: String, key: &'static str, target: String },
    #[error("{decl}: required key {key} is missing")]
    MissingKey { decl: String, key: &'static str },
    #[error("{decl}: key {key} holds the wrong kind of value")]
    TypeMismatch { decl: String, key: &'static str },
    #[error("more than one network declaration ({second})")]
    MultipleNetworks { second: String },
    #[error("network failed validation with {} problem(s)", .0.len())]
    ValidationFailed(Vec<Violation>),
}

// ---------------------------------------------------------------------------
// Lexing

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Pos {
    line: usize,
    col: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Word { text: String, pos: Pos },
    Open(Pos),
    Entry { text: String, pos: Pos },
    RowSep(Pos),
    Close(Pos),
}

impl Token {
    fn pos(&self) -> Pos {
        match self {
            Token::Word { pos, .. }
            | Token::Entry { pos, .. }
            | Token::Open(pos)
            | Token::RowSep(pos)
            | Token::Close(pos) => *pos,
        }
    }
}

fn err(pos: Pos, kind: ParseErrorKind) -> ParseError {
    ParseError { line: pos.line, col: pos.col, kind }
}

fn syntax(pos: Pos, message: impl Into<String>) -> ParseError {
    err(pos, ParseErrorKind::Syntax(message.into()))
}

/// Splits the text into logical declarations. Comments run from `#` to the
/// end of the physical line; a `\` after trimming trailing whitespace glues
/// the next physical line on. Bracket state survives continuations.
fn lex(text: &str) -> Result<Vec<Vec<Token>>, ParseError> {
    let mut declarations = Vec::new();
    let mut current: Vec<Token> = Vec::new();
    let mut in_matrix = false;

    for (line_index, raw_line) in text.lines().enumerate() {
        let line_no = line_index + 1;
        let uncommented = match raw_line.find('#') {
            Some(i) => &raw_line[..i],
            None => raw_line,
        };
        let trimmed = uncommented.trim_end();
        let (content, continues) = match trimmed.strip_suffix('\\') {
            Some(head) => (head, true),
            None => (trimmed, false),
        };

        lex_segment(content, line_no, in_matrix, &mut current)?;
        in_matrix = matches!(
            current.last(),
            Some(Token::Open(_) | Token::Entry { .. } | Token::RowSep(_))
        ) && open_bracket_pending(&current);

        if !continues {
            if in_matrix {
                let pos = last_open_pos(&current).expect("open bracket tracked");
                return Err(syntax(pos, "unclosed [ at end of declaration"));
            }
            if !current.is_empty() {
                declarations.push(std::mem::take(&mut current));
            }
        }
    }
    if in_matrix {
        let pos = last_open_pos(&current).expect("open bracket tracked");
        return Err(syntax(pos, "unclosed [ at end of input"));
    }
    if !current.is_empty() {
        declarations.push(current);
    }
    Ok(declarations)
}

fn open_bracket_pending(tokens: &[Token]) -> bool {
    let mut open = 0usize;
    for t in tokens {
        match t {
            Token::Open(_) => open += 1,
            Token::Close(_) => open -= 1,
            _ => {}
        }
    }
    open > 0
}

fn last_open_pos(tokens: &[Token]) -> Option<Pos> {
    tokens.iter().rev().find_map(|t| match t {
        Token::Open(pos) => Some(*pos),
        _ => None,
    })
}

fn lex_segment(
    content: &str,
    line_no: usize,
    starts_in_matrix: bool,
    out: &mut Vec<Token>,
) -> Result<(), ParseError> {
    let bytes = content.as_bytes();
    let mut i = 0;
    let mut in_matrix = starts_in_matrix;
    let pos_at = |i: usize| Pos { line: line_no, col: i + 1 };

    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if in_matrix {
            match c {
                '|' => {
                    out.push(Token::RowSep(pos_at(i)));
                    i += 1;
                }
                ']' => {
                    out.push(Token::Close(pos_at(i)));
                    in_matrix = false;
                    i += 1;
                }
                '[' => return Err(syntax(pos_at(i), "unexpected [ inside a matrix")),
                _ => {
                    let start = i;
                    while i < bytes.len() {
                        let ch = bytes[i] as char;
                        if ch.is_whitespace() || matches!(ch, '|' | ']' | '[') {
                            break;
                        }
                        i += 1;
                    }
                    out.push(Token::Entry {
                        text: content[start..i].to_string(),
                        pos: pos_at(start),
                    });
                }
            }
        } else {
            if c == '[' {
                return Err(syntax(pos_at(i), "unexpected [ outside a key=value"));
            }
            if matches!(c, ']' | '|') {
                return Err(syntax(pos_at(i), format!("unexpected {c}")));
            }
            let start = i;
            while i < bytes.len() {
                let ch = bytes[i] as char;
                if ch.is_whitespace() || matches!(ch, ']' | '|') {
                    break;
                }
                if ch == '[' {
                    break;
                }
                i += 1;
            }
            out.push(Token::Word {
                text: content[start..i].to_string(),
                pos: pos_at(start),
            });
            if i < bytes.len() && bytes[i] as char == '[' {
                // A bracket can only introduce the value of the word just
                // emitted, which therefore has to end with '='.
                if !content[start..i].ends_with('=') {
                    return Err(syntax(pos_at(i), "unexpected [ outside a key=value"));
                }
                out.push(Token::Open(pos_at(i)));
                in_matrix = true;
                i += 1;
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Number atoms

/// Finite real literal; anything mentioning `j` or not finite is rejected.
fn parse_real_atom(text: &str) -> Option<f64> {
    if text.contains(['j', 'J']) {
        return None;
    }
    let value: f64 = text.parse().ok()?;
    value.is_finite().then_some(value)
}

/// `a`, `bj`, or `a+bj` with optional signs; exponents allowed in both parts.
fn parse_complex_atom(text: &str) -> Option<Complex64> {
    let body = match text.strip_suffix(['j', 'J']) {
        None => return parse_real_atom(text).map(|re| Complex64::new(re, 0.0)),
        Some(body) => body,
    };
    if body.is_empty() || body.contains(['j', 'J']) {
        return None;
    }
    let bytes = body.as_bytes();
    let mut split = None;
    for i in 1..bytes.len() {
        if matches!(bytes[i], b'+' | b'-') && !matches!(bytes[i - 1], b'e' | b'E') {
            split = Some(i);
        }
    }
    let (re_text, im_text) = match split {
        Some(i) => (&body[..i], &body[i..]),
        None => ("0", body),
    };
    let re: f64 = re_text.parse().ok()?;
    let im: f64 = im_text.parse().ok()?;
    (re.is_finite() && im.is_finite()).then(|| Complex64::new(re, im))
}

fn is_plain_real(text: &str) -> bool {
    parse_real_atom(text).is_some()
}

/// Glue split complex entries back together: a lone sign joins both
/// neighbours, a sign-led atom extends a preceding bare real, and an atom
/// ending in a sign absorbs the next atom.
fn merge_entry_atoms(atoms: Vec<(String, Pos)>) -> Vec<(String, Pos)> {
    let mut merged: Vec<(String, Pos)> = Vec::with_capacity(atoms.len());
    let mut i = 0;
    while i < atoms.len() {
        let (text, pos) = &atoms[i];
        if (text == "+" || text == "-") && !merged.is_empty() && i + 1 < atoms.len() {
            let (prev, prev_pos) = merged.pop().unwrap();
            merged.push((format!("{prev}{text}{}", atoms[i + 1].0), prev_pos));
            i += 2;
            continue;
        }
        if text.len() > 1
            && (text.starts_with('+') || text.starts_with('-'))
            && merged.last().is_some_and(|(prev, _)| is_plain_real(prev))
        {
            let (prev, prev_pos) = merged.pop().unwrap();
            merged.push((format!("{prev}{text}"), prev_pos));
            i += 1;
            continue;
        }
        if (text.ends_with('+') || text.ends_with('-')) && text.len() > 1 && i + 1 < atoms.len() {
            merged.push((format!("{text}{}", atoms[i + 1].0), *pos));
            i += 2;
            continue;
        }
        merged.push((text.clone(), *pos));
        i += 1;
    }
    merged
}

// ---------------------------------------------------------------------------
// Decimal point shifting (exact unit changes on the digit string)

/// Moves the decimal point of a plain or exponent-form literal. The digits
/// are untouched, so parsing the result never introduces rounding beyond the
/// one rounding step any literal gets.
pub fn shift_decimal(text: &str, shift: i32) -> Option<String> {
    let (sign, body) = match text.as_bytes().first()? {
        b'+' => ("", &text[1..]),
        b'-' => ("-", &text[1..]),
        _ => ("", text),
    };
    if let Some(e_at) = body.find(['e', 'E']) {
        let (mantissa, exp_text) = (&body[..e_at], &body[e_at + 1..]);
        if !mantissa_is_numeric(mantissa) {
            return None;
        }
        let exp: i32 = exp_text.parse().ok()?;
        return Some(format!("{sign}{mantissa}e{}", exp.checked_add(shift)?));
    }
    if !mantissa_is_numeric(body) {
        return None;
    }
    let (int_part, frac_part) = match body.find('.') {
        Some(dot) => (&body[..dot], &body[dot + 1..]),
        None => (body, ""),
    };
    let mut digits: Vec<u8> = int_part.bytes().chain(frac_part.bytes()).collect();
    // Point position counted in digits from the left.
    let mut point = int_part.len() as i32 + shift;
    while point > digits.len() as i32 {
        digits.push(b'0');
    }
    while point < 1 {
        digits.insert(0, b'0');
        point += 1;
    }
    let (int_digits, frac_digits) = digits.split_at(point as usize);
    let int_text = std::str::from_utf8(int_digits).unwrap();
    let int_trimmed = match int_text.trim_start_matches('0') {
        "" => "0",
        rest => rest,
    };
    let mut out = String::from(sign);
    out.push_str(int_trimmed);
    let frac_trimmed = std::str::from_utf8(frac_digits)
        .unwrap()
        .trim_end_matches('0');
    if !frac_trimmed.is_empty() {
        out.push('.');
        out.push_str(frac_trimmed);
    }
    Some(out)
}

fn mantissa_is_numeric(text: &str) -> bool {
    let mut digits = 0;
    let mut dots = 0;
    for c in text.chars() {
        match c {
            '0'..='9' => digits += 1,
            '.' => dots += 1,
            _ => return false,
        }
    }
    digits > 0 && dots <= 1
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ValueSchema {
    /// Finite real number.
    Real,
    /// Kilovolt literal stored in volts via a decimal point shift.
    KvToVolts,
    /// Single complex (or real) literal.
    ComplexScalar,
    /// `true` or `false`.
    Bool,
    /// Phase letters from {a, b, c}, no repeats.
    Phases,
    /// One word out of a fixed list.
    Choice(&'static [&'static str]),
    /// Identifier of another element.
    Reference,
    /// Real scalar (broadcast later) or a one-row bracket vector of reals.
    RealsOrScalar,
    /// Square complex matrix over the element's phases.
    SquareMatrix,
}

fn schema_for(kind: ElementKind) -> &'static [(&'static str, ValueSchema)] {
    use ValueSchema as V;
    match kind {
        ElementKind::Network => &[("v_min_pu", V::Real), ("v_max_pu", V::Real)],
        ElementKind::Bus => &[
            ("phases", V::Phases),
            ("kv_ln", V::KvToVolts),
            ("source", V::Bool),
        ],
        ElementKind::Line => &[
            ("from", V::Reference),
            ("to", V::Reference),
            ("phases", V::Phases),
            ("z", V::SquareMatrix),
            ("amps", V::Real),
            ("length_m", V::Real),
        ],
        ElementKind::Transformer => &[
            ("from", V::Reference),
            ("to", V::Reference),
            ("phases", V::Phases),
            ("kva", V::Real),
            ("z_pu", V::ComplexScalar),
            ("tap", V::Real),
        ],
        ElementKind::Load => &[
            ("bus", V::Reference),
            ("phases", V::Phases),
            ("conn", V::Choice(&["wye", "delta"])),
            ("model", V::Choice(&["pq", "z", "i"])),
            ("kw", V::RealsOrScalar),
            ("kvar", V::RealsOrScalar),
        ],
        ElementKind::Capacitor => &[
            ("bus", V::Reference),
            ("phases", V::Phases),
            ("kvar", V::RealsOrScalar),
            ("enabled", V::Bool),
        ],
        ElementKind::Regulator => &[("segment", V::Reference), ("taps", V::RealsOrScalar)],
        ElementKind::Dg => &[
            ("bus", V::Reference),
            ("phases", V::Phases),
            ("p_min_kw", V::Real),
            ("p_max_kw", V::Real),
            ("capacity_kw", V::Real),
        ],
    }
}

/// Parse feeder text into a typed document. The first problem found is
/// reported with its exact line and byte column.
pub fn parse(text: &str) -> Result<FeederDocument, ParseError> {
    let mut declarations = Vec::new();
    let mut seen_ids: std::collections::BTreeSet<(ElementKind, String)> =
        std::collections::BTreeSet::new();

    for tokens in lex(text)? {
        let declaration = parse_declaration(&tokens)?;
        let key = (declaration.kind, declaration.id.clone());
        if !seen_ids.insert(key) {
            return Err(err(
                Pos { line: declaration.line, col: declaration.col },
                ParseErrorKind::DuplicateId {
                    kind: declaration.kind.keyword(),
                    id: declaration.id,
                },
            ));
        }
        declarations.push(declaration);
    }
    Ok(FeederDocument { declarations })
}

fn parse_declaration(tokens: &[Token]) -> Result<Declaration, ParseError> {
    let mut iter = tokens.iter().peekable();

    let (kind_text, kind_pos) = expect_word(&mut iter, tokens, "element kind")?;
    if kind_text.contains('=') {
        return Err(syntax(kind_pos, "expected an element kind, found key=value"));
    }
    let kind = ElementKind::from_keyword(&kind_text)
        .ok_or_else(|| err(kind_pos, ParseErrorKind::UnknownKind(kind_text.clone())))?;

    let (id, id_pos) = expect_word(&mut iter, tokens, "identifier")?;
    if id.contains('=') {
        return Err(syntax(id_pos, "expected an identifier, found key=value"));
    }

    let schema = schema_for(kind);
    let mut properties: Vec<Property> = Vec::new();
    while let Some(token) = iter.next() {
        let (word, word_pos) = match token {
            Token::Word { text, pos } => (text.clone(), *pos),
            other => return Err(syntax(other.pos(), "expected key=value")),
        };
        let eq = word
            .find('=')
            .ok_or_else(|| syntax(word_pos, "expected key=value"))?;
        if eq == 0 {
            return Err(syntax(word_pos, "key is empty"));
        }
        let key = word[..eq].to_ascii_lowercase();
        let inline = &word[eq + 1..];
        let value_pos = Pos { line: word_pos.line, col: word_pos.col + eq + 1 };

        let value_schema = schema
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, s)| *s)
            .ok_or_else(|| {
                err(word_pos, ParseErrorKind::UnknownKey { kind: kind.keyword(), key: key.clone() })
            })?;
        if properties.iter().any(|p| p.key == key) {
            return Err(syntax(word_pos, format!("duplicate key {key}")));
        }

        let value = if inline.is_empty() {
            match iter.peek() {
                Some(Token::Open(open_pos)) => {
                    let open_pos = *open_pos;
                    iter.next();
                    let rows = collect_matrix_rows(&mut iter)?;
                    typed_bracket_value(value_schema, rows, open_pos, &key)?
                }
                _ => return Err(syntax(value_pos, format!("missing value for key {key}"))),
            }
        } else {
            typed_inline_value(value_schema, inline, value_pos, &key)?
        };

        properties.push(Property { key, value, line: word_pos.line, col: word_pos.col });
    }

    let declaration = Declaration {
        kind,
        id,
        line: kind_pos.line,
        col: kind_pos.col,
        properties,
    };
    check_declared_shapes(&declaration)?;
    Ok(declaration)
}

fn expect_word<'a, I>(
    iter: &mut std::iter::Peekable<I>,
    tokens: &[Token],
    what: &str,
) -> Result<(String, Pos), ParseError>
where
    I: Iterator<Item = &'a Token>,
{
    match iter.next() {
        Some(Token::Word { text, pos }) => Ok((text.clone(), *pos)),
        Some(other) => Err(syntax(other.pos(), format!("expected {what}"))),
        None => {
            let pos = tokens.last().map(Token::pos).unwrap_or(Pos { line: 1, col: 1 });
            Err(syntax(pos, format!("expected {what}")))
        }
    }
}

fn collect_matrix_rows<'a, I>(
    iter: &mut std::iter::Peekable<I>,
) -> Result<Vec<Vec<(String, Pos)>>, ParseError>
where
    I: Iterator<Item = &'a Token>,
{
    let mut rows: Vec<Vec<(String, Pos)>> = vec![Vec::new()];
    loop {
        match iter.next() {
            Some(Token::Entry { text, pos }) => {
                rows.last_mut().unwrap().push((text.clone(), *pos));
            }
            Some(Token::RowSep(_)) => rows.push(Vec::new()),
            Some(Token::Close(_)) => break,
            Some(other) => return Err(syntax(other.pos(), "unexpected token inside [ ]")),
            None => unreachable!("lexer rejects unclosed brackets"),
        }
    }
    Ok(rows.into_iter().map(merge_entry_atoms).collect())
}

fn typed_inline_value(
    schema: ValueSchema,
    text: &str,
    pos: Pos,
    key: &str,
) -> Result<TypedValue, ParseError> {
    let bad_number = || syntax(pos, format!("invalid number {text} for key {key}"));
    match schema {
        ValueSchema::Real | ValueSchema::RealsOrScalar => {
            Ok(TypedValue::Real(parse_real_atom(text).ok_or_else(bad_number)?))
        }
        ValueSchema::KvToVolts => {
            let shifted = shift_decimal(text, 3).ok_or_else(bad_number)?;
            let volts = parse_real_atom(&shifted).ok_or_else(bad_number)?;
            Ok(TypedValue::Real(volts))
        }
        ValueSchema::ComplexScalar => {
            Ok(TypedValue::Complex(parse_complex_atom(text).ok_or_else(bad_number)?))
        }
        ValueSchema::Bool => match text {
            "true" => Ok(TypedValue::Bool(true)),
            "false" => Ok(TypedValue::Bool(false)),
            _ => Err(syntax(pos, format!("expected true or false for key {key}"))),
        },
        ValueSchema::Phases => parse_phase_set(text, pos).map(TypedValue::Phases),
        ValueSchema::Choice(options) => {
            let lower = text.to_ascii_lowercase();
            if options.contains(&lower.as_str()) {
                Ok(TypedValue::Word(lower))
            } else {
                Err(syntax(
                    pos,
                    format!("expected one of {} for key {key}", options.join("/")),
                ))
            }
        }
        ValueSchema::Reference => Ok(TypedValue::Word(text.to_string())),
        ValueSchema::SquareMatrix => {
            let entry = parse_complex_atom(text).ok_or_else(bad_number)?;
            Ok(TypedValue::Matrix { rows: 1, cols: 1, entries: vec![entry] })
        }
    }
}

fn typed_bracket_value(
    schema: ValueSchema,
    rows: Vec<Vec<(String, Pos)>>,
    open_pos: Pos,
    key: &str,
) -> Result<TypedValue, ParseError> {
    match schema {
        ValueSchema::RealsOrScalar => {
            if rows.len() != 1 {
                return Err(err(
                    open_pos,
                    ParseErrorKind::MatrixShapeMismatch(format!(
                        "key {key} takes a single row, found {} rows",
                        rows.len()
                    )),
                ));
            }
            let mut values = Vec::with_capacity(rows[0].len());
            for (text, pos) in &rows[0] {
                let v = parse_real_atom(text)
                    .ok_or_else(|| syntax(*pos, format!("invalid number {text} for key {key}")))?;
                values.push(v);
            }
            if values.is_empty() {
                return Err(syntax(open_pos, format!("empty value for key {key}")));
            }
            Ok(TypedValue::RealVector(values))
        }
        ValueSchema::SquareMatrix => {
            let cols = rows.first().map(Vec::len).unwrap_or(0);
            if cols == 0 {
                return Err(syntax(open_pos, format!("empty value for key {key}")));
            }
            let mut entries = Vec::with_capacity(rows.len() * cols);
            for row in &rows {
                if row.len() != cols {
                    return Err(err(
                        open_pos,
                        ParseErrorKind::MatrixShapeMismatch(format!(
                            "key {key} has ragged rows ({} vs {cols} entries)",
                            row.len()
                        )),
                    ));
                }
                for (text, pos) in row {
                    let v = parse_complex_atom(text).ok_or_else(|| {
                        syntax(*pos, format!("invalid number {text} for key {key}"))
                    })?;
                    entries.push(v);
                }
            }
            Ok(TypedValue::Matrix { rows: rows.len(), cols, entries })
        }
        _ => Err(syntax(open_pos, format!("key {key} takes a single value, not [ ]"))),
    }
}

fn parse_phase_set(text: &str, pos: Pos) -> Result<PhaseSet, ParseError> {
    let mut set = PhaseSet::EMPTY;
    for c in text.chars() {
        let phase = match c.to_ascii_lowercase() {
            'a' => Phase::A,
            'b' => Phase::B,
            'c' => Phase::C,
            other => return Err(syntax(pos, format!("invalid phase letter {other}"))),
        };
        if set.contains(phase) {
            return Err(syntax(pos, format!("phase {c} repeated")));
        }
        set = set.with(phase);
    }
    if set.is_empty() {
        return Err(syntax(pos, "empty phase set"));
    }
    Ok(set)
}

/// Shape checks that need the declaration's own phase count.
fn check_declared_shapes(declaration: &Declaration) -> Result<(), ParseError> {
    let Some(phases_prop) = declaration.property("phases") else {
        return Ok(());
    };
    let TypedValue::Phases(phases) = phases_prop.value else {
        return Ok(());
    };
    let n = phases.len();
    for prop in &declaration.properties {
        let pos = Pos { line: prop.line, col: prop.col };
        match (&prop.key[..], &prop.value) {
            ("z", TypedValue::Matrix { rows, cols, .. }) => {
                if *rows != n || *cols != n {
                    return Err(err(
                        pos,
                        ParseErrorKind::MatrixShapeMismatch(format!(
                            "z is {rows}x{cols} but the element carries {n} phase(s)"
                        )),
                    ));
                }
            }
            ("kw" | "kvar", TypedValue::RealVector(v))
                if v.len() != n => {
                    return Err(err(
                        pos,
                        ParseErrorKind::MatrixShapeMismatch(format!(
                            "{} has {} entries but the element carries {n} phase(s)",
                            prop.key,
                            v.len()
                        )),
                    ));
                }
            _ => {}
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Building a network out of a document

struct DeclReader<'a> {
    decl: &'a Declaration,
}

impl<'a> DeclReader<'a> {
    fn id(&self) -> String {
        self.decl.id.clone()
    }

    fn missing(&self, key: &'static str) -> BuildError {
        BuildError::MissingKey { decl: self.id(), key }
    }

    fn mismatch(&self, key: &'static str) -> BuildError {
        BuildError::TypeMismatch { decl: self.id(), key }
    }

    fn real(&self, key: &'static str) -> Result<f64, BuildError> {
        match self.decl.property(key).map(|p| &p.value) {
            Some(TypedValue::Real(v)) => Ok(*v),
            Some(_) => Err(self.mismatch(key)),
            None => Err(self.missing(key)),
        }
    }

    fn real_or(&self, key: &'static str, default: f64) -> Result<f64, BuildError> {
        match self.decl.property(key).map(|p| &p.value) {
            Some(TypedValue::Real(v)) => Ok(*v),
            Some(_) => Err(self.mismatch(key)),
            None => Ok(default),
        }
    }

    fn optional_real(&self, key: &'static str) -> Result<Option<f64>, BuildError> {
        match self.decl.property(key).map(|p| &p.value) {
            Some(TypedValue::Real(v)) => Ok(Some(*v)),
            Some(_) => Err(self.mismatch(key)),
            None => Ok(None),
        }
    }

    fn complex(&self, key: &'static str) -> Result<Complex64, BuildError> {
        match self.decl.property(key).map(|p| &p.value) {
            Some(TypedValue::Complex(v)) => Ok(*v),
            Some(TypedValue::Real(v)) => Ok(Complex64::new(*v, 0.0)),
            Some(_) => Err(self.mismatch(key)),
            None => Err(self.missing(key)),
        }
    }

    fn bool_or(&self, key: &'static str, default: bool) -> Result<bool, BuildError> {
        match self.decl.property(key).map(|p| &p.value) {
            Some(TypedValue::Bool(v)) => Ok(*v),
            Some(_) => Err(self.mismatch(key)),
            None => Ok(default),
        }
    }

    fn phases(&self) -> Result<PhaseSet, BuildError> {
        match self.decl.property("phases").map(|p| &p.value) {
            Some(TypedValue::Phases(v)) => Ok(*v),
            Some(_) => Err(self.mismatch("phases")),
            None => Err(self.missing("phases")),
        }
    }

    fn word(&self, key: &'static str) -> Result<String, BuildError> {
        match self.decl.property(key).map(|p| &p.value) {
            Some(TypedValue::Word(v)) => Ok(v.clone()),
            Some(_) => Err(self.mismatch(key)),
            None => Err(self.missing(key)),
        }
    }

    fn word_or(&self, key: &'static str, default: &str) -> Result<String, BuildError> {
        match self.decl.property(key).map(|p| &p.value) {
            Some(TypedValue::Word(v)) => Ok(v.clone()),
            Some(_) => Err(self.mismatch(key)),
            None => Ok(default.to_string()),
        }
    }

    /// Scalar values broadcast to `count` entries.
    fn reals(&self, key: &'static str, count: usize) -> Result<Option<Vec<f64>>, BuildError> {
        match self.decl.property(key).map(|p| &p.value) {
            Some(TypedValue::Real(v)) => Ok(Some(vec![*v; count])),
            Some(TypedValue::RealVector(v)) => Ok(Some(v.clone())),
            Some(_) => Err(self.mismatch(key)),
            None => Ok(None),
        }
    }

    fn matrix(&self, key: &'static str) -> Result<ComplexMatrix, BuildError> {
        match self.decl.property(key).map(|p| &p.value) {
            Some(TypedValue::Matrix { rows, entries, .. }) => {
                ComplexMatrix::new(*rows, entries.clone()).map_err(|_| self.mismatch(key))
            }
            Some(_) => Err(self.mismatch(key)),
            None => Err(self.missing(key)),
        }
    }
}

/// Resolve a document into a validated network. References are checked here;
/// every structural rule the model enforces is checked by `validate` and
/// reported together.
pub fn build(document: &FeederDocument) -> Result<PhasedNetwork, BuildError> {
    let mut builder = NetworkBuilder::new();
    let mut network_seen = false;

    let declared_buses: std::collections::BTreeSet<&str> = document
        .declarations
        .iter()
        .filter(|d| d.kind == ElementKind::Bus)
        .map(|d| d.id.as_str())
        .collect();
    let declared_segments: std::collections::BTreeSet<&str> = document
        .declarations
        .iter()
        .filter(|d| d.kind == ElementKind::Line)
        .map(|d| d.id.as_str())
        .collect();

    let check_bus = |reader: &DeclReader, key: &'static str, id: &str| -> Result<(), BuildError> {
        if declared_buses.contains(id) {
            Ok(())
        } else {
            Err(BuildError::UnresolvedReference {
                decl: reader.id(),
                key,
                target: id.to_string(),
            })
        }
    };

    for decl in &document.declarations {
        let reader = DeclReader { decl };
        match decl.kind {
            ElementKind::Network => {
                if network_seen {
                    return Err(BuildError::MultipleNetworks { second: decl.id.clone() });
                }
                network_seen = true;
                builder = builder.voltage_band(
                    reader.real_or("v_min_pu", DEFAULT_V_MIN_PU)?,
                    reader.real_or("v_max_pu", DEFAULT_V_MAX_PU)?,
                );
            }
            ElementKind::Bus => {
                builder = builder.bus(Bus {
                    id: reader.id(),
                    phases: reader.phases()?,
                    nominal_voltage: reader.real("kv_ln")?,
                    is_source: reader.bool_or("source", false)?,
                });
            }
            ElementKind::Line => {
                let from = reader.word("from")?;
                let to = reader.word("to")?;
                check_bus(&reader, "from", &from)?;
                check_bus(&reader, "to", &to)?;
                builder = builder.segment(LineSegment {
                    id: reader.id(),
                    from_bus: from,
                    to_bus: to,
                    phases: reader.phases()?,
                    z_matrix: reader.matrix("z")?,
                    ampacity: reader.real("amps")?,
                    length_m: reader.optional_real("length_m")?,
                });
            }
            ElementKind::Transformer => {
                let from = reader.word("from")?;
                let to = reader.word("to")?;
                check_bus(&reader, "from", &from)?;
                check_bus(&reader, "to", &to)?;
                builder = builder.transformer(Transformer {
                    id: reader.id(),
                    from_bus: from,
                    to_bus: to,
                    phases: reader.phases()?,
                    rating_kva: reader.real("kva")?,
                    series_impedance_pu: reader.complex("z_pu")?,
                    tap: reader.real_or("tap", 1.0)?,
                });
            }
            ElementKind::Load => {
                let bus = reader.word("bus")?;
                check_bus(&reader, "bus", &bus)?;
                let phases = reader.phases()?;
                let n = phases.len();
                let connection = match reader.word_or("conn", "wye")?.as_str() {
                    "delta" => Connection::Delta,
                    _ => Connection::Wye,
                };
                let model = match reader.word_or("model", "pq")?.as_str() {
                    "z" => LoadModel::ConstantZ,
                    "i" => LoadModel::ConstantI,
                    _ => LoadModel::ConstantPq,
                };
                let kw = reader.reals("kw", n)?.ok_or_else(|| reader.missing("kw"))?;
                let kvar = reader.reals("kvar", n)?.unwrap_or_else(|| vec![0.0; n]);
                builder = builder.load(Load {
                    id: reader.id(),
                    bus,
                    phases,
                    connection,
                    model,
                    per_phase_kw: kw,
                    per_phase_kvar: kvar,
                });
            }
            ElementKind::Capacitor => {
                let bus = reader.word("bus")?;
                check_bus(&reader, "bus", &bus)?;
                let phases = reader.phases()?;
                let kvar = reader
                    .reals("kvar", phases.len())?
                    .ok_or_else(|| reader.missing("kvar"))?;
                builder = builder.capacitor(CapacitorBank {
                    id: reader.id(),
                    bus,
                    phases,
                    per_phase_kvar: kvar,
                    enabled: reader.bool_or("enabled", true)?,
                });
            }
            ElementKind::Regulator => {
                let segment = reader.word("segment")?;
                if !declared_segments.contains(segment.as_str()) {
                    return Err(BuildError::UnresolvedReference {
                        decl: reader.id(),
                        key: "segment",
                        target: segment,
                    });
                }
                let segment_phase_count = document
                    .declarations
                    .iter()
                    .find(|d| d.kind == ElementKind::Line && d.id == segment)
                    .and_then(|d| match d.property("phases").map(|p| &p.value) {
                        Some(TypedValue::Phases(p)) => Some(p.len()),
                        _ => None,
                    })
                    .unwrap_or(1);
                let taps = reader
                    .reals("taps", segment_phase_count)?
                    .ok_or_else(|| reader.missing("taps"))?;
                builder = builder.regulator(Regulator {
                    id: reader.id(),
                    on_segment: segment,
                    per_phase_tap: taps,
                });
            }
            ElementKind::Dg => {
                let bus = reader.word("bus")?;
                check_bus(&reader, "bus", &bus)?;
                let p_min_kw = reader.real_or("p_min_kw", 0.0)?;
                let p_max_kw = reader.real("p_max_kw")?;
                builder = builder.dg_unit(DGUnit {
                    id: reader.id(),
                    bus,
                    phases: reader.phases()?,
                    p_min_kw,
                    p_max_kw,
                    capacity_kw: reader.real_or("capacity_kw", p_min_kw)?,
                });
            }
        }
    }

    let network = builder.build();
    let report = crate::model::validate(&network);
    if report.is_empty() {
        Ok(network)
    } else {
        Err(BuildError::ValidationFailed(report))
    }
}

// ---------------------------------------------------------------------------
// Serialization

/// Shortest decimal digits that re-parse to exactly the same value.
fn fmt_f64(value: f64) -> String {
    format!("{value}")
}

fn fmt_complex(value: Complex64) -> String {
    if value.im < 0.0 {
        format!("{}-{}j", fmt_f64(value.re), fmt_f64(-value.im))
    } else {
        format!("{}+{}j", fmt_f64(value.re), fmt_f64(value.im))
    }
}

fn fmt_real_vector(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| fmt_f64(*v)).collect();
    format!("[{}]", parts.join(" "))
}

fn fmt_matrix(matrix: &ComplexMatrix) -> String {
    let mut rows = Vec::with_capacity(matrix.dim());
    for r in 0..matrix.dim() {
        let row: Vec<String> = (0..matrix.dim())
            .map(|c| fmt_complex(matrix.get(r, c)))
            .collect();
        rows.push(row.join(" "));
    }
    format!("[{}]", rows.join(" | "))
}

fn fmt_kv(volts: f64) -> String {
    shift_decimal(&fmt_f64(volts), -3).expect("finite voltage has a plain decimal form")
}

/// Canonical text for a network: one line per element, kinds in a fixed
/// order, ids sorted within each kind, keys in schema order. Parsing the
/// result and building it reproduces the network exactly, field by field.
pub fn serialize(network: &PhasedNetwork) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "network net v_min_pu={} v_max_pu={}\n",
        fmt_f64(network.v_min_pu()),
        fmt_f64(network.v_max_pu()),
    ));
    for bus in network.buses() {
        out.push_str(&format!(
            "bus {} phases={} kv_ln={}",
            bus.id,
            bus.phases,
            fmt_kv(bus.nominal_voltage)
        ));
        if bus.is_source {
            out.push_str(" source=true");
        }
        out.push('\n');
    }
    for segment in network.segments() {
        out.push_str(&format!(
            "line {} from={} to={} phases={} z={} amps={}",
            segment.id,
            segment.from_bus,
            segment.to_bus,
            segment.phases,
            fmt_matrix(&segment.z_matrix),
            fmt_f64(segment.ampacity),
        ));
        if let Some(len) = segment.length_m {
            out.push_str(&format!(" length_m={}", fmt_f64(len)));
        }
        out.push('\n');
    }
    for t in network.transformers() {
        out.push_str(&format!(
            "transformer {} from={} to={} phases={} kva={} z_pu={} tap={}\n",
            t.id,
            t.from_bus,
            t.to_bus,
            t.phases,
            fmt_f64(t.rating_kva),
            fmt_complex(t.series_impedance_pu),
            fmt_f64(t.tap),
        ));
    }
    for load in network.loads() {
        let conn = match load.connection {
            Connection::Wye => "wye",
            Connection::Delta => "delta",
        };
        let model = match load.model {
            LoadModel::ConstantPq => "pq",
            LoadModel::ConstantZ => "z",
            LoadModel::ConstantI => "i",
        };
        out.push_str(&format!(
            "load {} bus={} phases={} conn={conn} model={model} kw={} kvar={}\n",
            load.id,
            load.bus,
            load.phases,
            fmt_real_vector(&load.per_phase_kw),
            fmt_real_vector(&load.per_phase_kvar),
        ));
    }
    for cap in network.capacitors() {
        out.push_str(&format!(
            "capacitor {} bus={} phases={} kvar={} enabled={}\n",
            cap.id,
            cap.bus,
            cap.phases,
            fmt_real_vector(&cap.per_phase_kvar),
            cap.enabled,
        ));
    }
    for reg in network.regulators() {
        out.push_str(&format!(
            "regulator {} segment={} taps={}\n",
            reg.id,
            reg.on_segment,
            fmt_real_vector(&reg.per_phase_tap),
        ));
    }
    for dg in network.dg_units() {
        out.push_str(&format!(
            "dg {} bus={} phases={} p_min_kw={} p_max_kw={} capacity_kw={}\n",
            dg.id,
            dg.bus,
            dg.phases,
            fmt_f64(dg.p_min_kw),
            fmt_f64(dg.p_max_kw),
            fmt_f64(dg.capacity_kw),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    const SMALL: &str = "\
# two bus feeder
network net v_min_pu=0.94 v_max_pu=1.06
bus b1 phases=a kv_ln=7.2 source=true
bus b2 phases=a kv_ln=7.2
line l1 from=b1 to=b2 phases=a z=[0.3+0.6j] amps=230
load ld1 bus=b2 phases=a kw=100 kvar=50
";

    #[test]
    fn parses_a_small_feeder() {
        let doc = parse(SMALL).unwrap();
        assert_eq!(doc.declarations.len(), 5);
        let bus = doc.declarations.iter().find(|d| d.id == "b1").unwrap();
        assert_eq!(bus.kind, ElementKind::Bus);
        match &bus.property("kv_ln").unwrap().value {
            TypedValue::Real(v) => assert_eq!(*v, 7200.0),
            other => panic!("kv_ln parsed as {other:?}"),
        }
        let net = build(&doc).unwrap();
        assert_eq!(net.buses().len(), 2);
        assert_eq!(net.loads()[0].per_phase_kw, vec![100.0]);
        assert_eq!(net.loads()[0].per_phase_kvar, vec![50.0]);
    }

    #[test]
    fn kv_shift_is_exact_for_awkward_decimals() {
        // 7.2 * 1000.0 in floats is 7200.0000000000009...; the string shift
        // must land on exactly 7200.
        assert_eq!(shift_decimal("7.2", 3).unwrap(), "7200");
        assert_eq!(shift_decimal("0.0072", 3).unwrap(), "7.2");
        assert_eq!(shift_decimal(".5", 3).unwrap(), "500");
        assert_eq!(shift_decimal("12", 3).unwrap(), "12000");
        assert_eq!(shift_decimal("-3.3", 3).unwrap(), "-3300");
        assert_eq!(shift_decimal("1.2345e2", 3).unwrap(), "1.2345e5");
        assert_eq!(shift_decimal("7200", -3).unwrap(), "7.2");
        assert_eq!(shift_decimal("120", -3).unwrap(), "0.12");
        assert_eq!(shift_decimal("0.5", -3).unwrap(), "0.0005");
        assert_eq!(shift_decimal("nan", 3), None);
        assert_eq!(shift_decimal("1.2.3", 3), None);
    }

    #[test]
    fn continuation_and_comments_combine() {
        let text = "\
bus b1 phases=abc \\
    kv_ln=7.2 \\
    source=true # the feed point
bus b2 phases=abc kv_ln=7.2
";
        let doc = parse(text).unwrap();
        assert_eq!(doc.declarations.len(), 2);
        assert_eq!(doc.declarations[0].properties.len(), 3);
        // Position of a continued property points at its physical line.
        let source = doc.declarations[0].property("source").unwrap();
        assert_eq!((source.line, source.col), (3, 5));
    }

    #[test]
    fn matrix_spans_continued_lines() {
        let text = "\
bus b1 phases=ab kv_ln=2.4 source=true
bus b2 phases=ab kv_ln=2.4
line l1 from=b1 to=b2 phases=ab amps=100 z=[0.3+0.6j 0.1+0.2j | \\
    0.1+0.2j 0.3+0.6j]
";
        let doc = parse(text).unwrap();
        let line = doc.declarations.iter().find(|d| d.id == "l1").unwrap();
        match &line.property("z").unwrap().value {
            TypedValue::Matrix { rows: 2, cols: 2, entries } => {
                assert_eq!(entries[1], c(0.1, 0.2));
                assert_eq!(entries[2], c(0.1, 0.2));
            }
            other => panic!("z parsed as {other:?}"),
        }
    }

    #[test]
    fn spaced_complex_atoms_merge() {
        let forms = [
            "z=[0.3+0.6j]",
            "z=[0.3 +0.6j]",
            "z=[0.3 + 0.6j]",
            "z=[0.3+ 0.6j]",
        ];
        for form in forms {
            let text = format!(
                "bus b1 phases=a kv_ln=7.2 source=true\nbus b2 phases=a kv_ln=7.2\nline l1 from=b1 to=b2 phases=a amps=100 {form}\n"
            );
            let doc = parse(&text).unwrap();
            let line = doc.declarations.iter().find(|d| d.id == "l1").unwrap();
            match &line.property("z").unwrap().value {
                TypedValue::Matrix { entries, .. } => {
                    assert_eq!(entries[0], c(0.3, 0.6), "form {form}");
                }
                other => panic!("z parsed as {other:?}"),
            }
        }
    }

    #[test]
    fn separate_real_entries_do_not_merge() {
        let text = "bus b1 phases=a kv_ln=7.2 source=true\nregulator r1 segment=l1 taps=[1.05 1.02]\n";
        let doc = parse(text).unwrap();
        let reg = doc.declarations.iter().find(|d| d.id == "r1").unwrap();
        match &reg.property("taps").unwrap().value {
            TypedValue::RealVector(v) => assert_eq!(v, &vec![1.05, 1.02]),
            other => panic!("taps parsed as {other:?}"),
        }
    }

    #[test]
    fn complex_literal_forms() {
        assert_eq!(parse_complex_atom("0.3+0.6j"), Some(c(0.3, 0.6)));
        assert_eq!(parse_complex_atom("0.3-0.6j"), Some(c(0.3, -0.6)));
        assert_eq!(parse_complex_atom("-1.5e-2-2e-3j"), Some(c(-0.015, -0.002)));
        assert_eq!(parse_complex_atom("0.6j"), Some(c(0.0, 0.6)));
        assert_eq!(parse_complex_atom("-0.6j"), Some(c(0.0, -0.6)));
        assert_eq!(parse_complex_atom("5"), Some(c(5.0, 0.0)));
        assert_eq!(parse_complex_atom("j"), None);
        assert_eq!(parse_complex_atom("1+j"), None);
        assert_eq!(parse_complex_atom("1+2+3j"), None);
        assert_eq!(parse_complex_atom("infj"), None);
    }

    #[test]
    fn error_positions_are_exact() {
        let e = parse("bus b1 phases=a kv_ln=7.2\nbogus x1 key=1\n").unwrap_err();
        assert_eq!((e.line, e.col), (2, 1));
        assert!(matches!(e.kind, ParseErrorKind::UnknownKind(ref k) if k == "bogus"));

        let e = parse("bus b1 phases=a kv_ln=7.2 amps=3\n").unwrap_err();
        assert_eq!((e.line, e.col), (1, 27));
        assert!(matches!(e.kind, ParseErrorKind::UnknownKey { .. }));

        let e = parse("bus b1 phases=a kv_ln=7.2\nbus b1 phases=a kv_ln=7.2\n").unwrap_err();
        assert_eq!((e.line, e.col), (2, 1));
        assert!(matches!(e.kind, ParseErrorKind::DuplicateId { .. }));

        let e = parse("bus b1 phases=a kv_ln=abc\n").unwrap_err();
        assert_eq!((e.line, e.col), (1, 23));

        let e = parse("line l1 from=a to=b phases=ab amps=1 z=[1j 2j | 3j]\n").unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::MatrixShapeMismatch(_)));
        assert_eq!((e.line, e.col), (1, 40), "points at the opening bracket");
    }

    #[test]
    fn shape_mismatch_against_phases_is_caught() {
        let e = parse("line l1 from=a to=b phases=abc amps=1 z=[1j]\n").unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::MatrixShapeMismatch(_)));
        let e = parse("load d1 bus=b phases=ab kw=[1 2 3]\n").unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::MatrixShapeMismatch(_)));
    }

    #[test]
    fn rejects_malformed_input() {
        for (text, expect) in [
            ("bus\n", "expected identifier"),
            ("bus b1 phases\n", "expected key=value"),
            ("bus b1 =5\n", "key is empty"),
            ("bus b1 phases=\n", "missing value"),
            ("bus b1 phases=a phases=a\n", "duplicate key"),
            ("bus b1 phases=ax\n", "invalid phase"),
            ("bus b1 phases=aa\n", "repeated"),
            ("bus b1 source=yes\n", "true or false"),
            ("load d1 bus=b phases=a kw=[1\n", "unclosed ["),
            ("load d1 bus=b phases=a kw=[]\n", "empty value"),
            ("load d1 bus=b phases=a kw=[1 [2]\n", "unexpected ["),
            ("bus b1 kv_ln=inf phases=a\n", "invalid number"),
            ("bus b1 kv_ln=nan phases=a\n", "invalid number"),
        ] {
            let e = parse(text).unwrap_err();
            let msg = e.to_string();
            assert!(msg.contains(expect), "for {text:?} got {msg:?}");
        }
    }

    #[test]
    fn unresolved_references_fail_at_build() {
        let doc = parse("bus b1 phases=a kv_ln=7.2 source=true\nload ld bus=nosuch phases=a kw=5\n")
            .unwrap();
        match build(&doc) {
            Err(BuildError::UnresolvedReference { decl, target, .. }) => {
                assert_eq!(decl, "ld");
                assert_eq!(target, "nosuch");
            }
            other => panic!("expected unresolved reference, got {other:?}"),
        }
    }

    #[test]
    fn validation_failures_surface_from_build() {
        // Phase b load on a phase-a bus: parses, fails validation.
        let doc = parse(
            "bus b1 phases=a kv_ln=7.2 source=true\nbus b2 phases=a kv_ln=7.2\nline l1 from=b1 to=b2 phases=a z=[1+1j] amps=10\nload ld bus=b2 phases=b kw=5\n",
        )
        .unwrap();
        assert!(matches!(build(&doc), Err(BuildError::ValidationFailed(_))));
    }

    #[test]
    fn scalar_broadcasts_and_defaults_apply() {
        let text = "\
bus b1 phases=abc kv_ln=7.2 source=true
bus b2 phases=abc kv_ln=7.2
line l1 from=b1 to=b2 phases=abc amps=100 z=[1+1j 0+0j 0+0j | 0+0j 1+1j 0+0j | 0+0j 0+0j 1+1j]
load ld bus=b2 phases=abc kw=50
regulator r1 segment=l1 taps=1.05
dg g1 bus=b2 phases=abc p_min_kw=10 p_max_kw=3000
";
        let net = build(&parse(text).unwrap()).unwrap();
        assert_eq!(net.loads()[0].per_phase_kw, vec![50.0, 50.0, 50.0]);
        assert_eq!(net.loads()[0].per_phase_kvar, vec![0.0, 0.0, 0.0]);
        assert_eq!(net.regulators()[0].per_phase_tap, vec![1.05, 1.05, 1.05]);
        let dg = &net.dg_units()[0];
        assert_eq!(dg.capacity_kw, 10.0);
        assert_eq!(net.transformers().len(), 0);
    }

    #[test]
    fn serialize_then_rebuild_is_identity() {
        let net = build(&parse(SMALL).unwrap()).unwrap();
        let text = serialize(&net);
        let again = build(&parse(&text).unwrap()).unwrap();
        assert_eq!(net, again);
        // And a second round emits byte-identical text.
        assert_eq!(text, serialize(&again));
    }

    #[test]
    fn serialize_orders_kinds_and_ids() {
        let text = serialize(&build(&parse(SMALL).unwrap()).unwrap());
        let kinds: Vec<&str> = text
            .lines()
            .map(|l| l.split_whitespace().next().unwrap())
            .collect();
        assert_eq!(kinds, vec!["network", "bus", "bus", "line", "load"]);
    }

    #[test]
    fn multiple_network_declarations_are_rejected() {
        let doc = parse("network n1\nnetwork n2\nbus b1 phases=a kv_ln=7.2 source=true\n").unwrap();
        assert!(matches!(build(&doc), Err(BuildError::MultipleNetworks { .. })));
    }

    #[test]
    fn awkward_voltage_survives_round_trip_exactly() {
        // 8.165 * 1000.0 rounds to 8164.999999999999; the digit shift lands
        // on 8165 exactly and survives serialize -> parse unchanged.
        let doc = parse("bus b1 phases=a kv_ln=8.165 source=true\n").unwrap();
        match &doc.declarations[0].property("kv_ln").unwrap().value {
            TypedValue::Real(v) => {
                assert_eq!(*v, 8165.0);
                assert_ne!(*v, 8.165 * 1000.0);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(fmt_kv(8165.0), "8.165");
        assert_eq!(fmt_kv(8164.999999999999), "8.164999999999999");
    }
}
